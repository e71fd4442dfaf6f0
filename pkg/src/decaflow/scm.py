"""Fully specified confounded SCMs with stored exogenous noise.

Simulation keeps every draw of the hidden confounders and of the observed
noise, so interventional and counterfactual ground truth can be recomputed
exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import CausalGraph, ablation_graph, load_graph

Array = np.ndarray


class SimulationError(RuntimeError):
    pass


# -- mechanisms ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Mechanism:
    """Structural equation of one node.

    Reads only ``parents`` from the value map and only ``noise_sources`` from
    the noise map (by default the node's own channel).
    """

    node: str
    parents: tuple[str, ...]
    noise_sources: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.noise_sources:
            object.__setattr__(self, "noise_sources", (self.node,))

    def __call__(self, values: Mapping[str, Array], noise: Mapping[str, Array]) -> Array:
        raise NotImplementedError

    @property
    def additive(self) -> bool:
        return False

    def params(self) -> dict:
        return {}

    def __eq__(self, other):
        if type(self) is not type(other):
            return NotImplemented
        if (self.node, self.parents, self.noise_sources) != (other.node, other.parents, other.noise_sources):
            return False
        a, b = self.params(), other.params()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class LinearMechanism(Mechanism):
    """``x = sum_p coef_p * p + noise_scale * u``."""

    coefs: tuple[float, ...] = ()
    noise_scale: float = 1.0

    def __call__(self, values, noise):
        out = self.noise_scale * noise[self.node]
        for p, c in zip(self.parents, self.coefs):
            out = out + c * values[p]
        return out

    @property
    def additive(self) -> bool:
        return True

    def noise_gain(self) -> float:
        return self.noise_scale

    def params(self):
        return {"coefs": np.asarray(self.coefs), "noise_scale": np.asarray(self.noise_scale)}


@dataclass(frozen=True, eq=False)
class FunctionMechanism(Mechanism):
    """Arbitrary closed-form equation ``fn(values, noise)``."""

    fn: Callable | None = None

    def __call__(self, values, noise):
        return self.fn(values, noise)

    def params(self):
        return {"fn": np.asarray(id(self.fn))}


@dataclass(frozen=True, eq=False)
class RandomFeatureMechanism(Mechanism):
    """``x = (a * (tanh(W p + b) . v - offset) + c * m(p) * u) / scale``.

    ``m(p) = 1`` in additive mode and ``1 + 0.3 * tanh(p_0)`` otherwise.
    """

    weight: Array = field(default_factory=lambda: np.zeros((0, 0)))
    bias: Array = field(default_factory=lambda: np.zeros(0))
    readout: Array = field(default_factory=lambda: np.zeros(0))
    offset: float = 0.0
    signal: float = 1.0
    noise_gain_: float = 1.0
    scale: float = 1.0
    mode: str = "additive"

    def feature(self, values: Mapping[str, Array]) -> Array:
        p = np.stack([values[q] for q in self.parents], axis=-1)
        return np.tanh(p @ self.weight.T + self.bias) @ self.readout - self.offset

    def modulation(self, values: Mapping[str, Array]) -> Array | float:
        if self.mode == "additive":
            return 1.0
        return 1.0 + 0.3 * np.tanh(values[self.parents[0]])

    def __call__(self, values, noise):
        u = noise[self.node]
        return (self.signal * self.feature(values) + self.noise_gain_ * self.modulation(values) * u) / self.scale

    @property
    def additive(self) -> bool:
        return self.mode == "additive"

    def noise_gain(self) -> float:
        return self.noise_gain_ / self.scale

    def params(self):
        return {
            "weight": self.weight, "bias": self.bias, "readout": self.readout,
            "offset": np.asarray(self.offset), "signal": np.asarray(self.signal),
            "noise_gain": np.asarray(self.noise_gain_), "scale": np.asarray(self.scale),
            "mode": np.asarray(self.mode),
        }


def abduct_additive(mech: Mechanism, values: Mapping[str, Array], x: Array) -> Array:
    """Recover the own noise of an additive-noise mechanism from its output."""
    if not mech.additive:
        raise ValueError(f"mechanism of {mech.node!r} is not additive")
    zero = {mech.node: np.zeros_like(np.asarray(x, dtype=float))}
    return (x - mech(values, zero)) / mech.noise_gain()


# -- SCM -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSCM:
    """Executable SCM over a causal graph.

    ``equations`` covers every observed node and every hidden node that has
    parents; hidden roots are drawn from ``hidden_specs``. Hidden values are
    never affected by interventions on observed nodes.
    """

    graph: CausalGraph
    equations: Mapping[str, Mechanism]
    noise_specs: Mapping[str, str] = field(default_factory=dict)
    hidden_specs: Mapping[str, str] = field(default_factory=dict)
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        g = self.graph
        for v in g.nodes:
            needs = not g.is_hidden(v) or bool(g.parents(v))
            if needs and v not in self.equations:
                raise ValueError(f"missing structural equation for {v!r}")
            if v in self.equations and set(self.equations[v].parents) != set(g.parents(v)):
                raise ValueError(
                    f"equation of {v!r} reads {sorted(self.equations[v].parents)}, "
                    f"graph parents are {sorted(g.parents(v))}"
                )
        for v in g.observed:
            if self.noise_specs.get(v, "normal") != "normal":
                raise ValueError("only standard-normal noise is supported")

    def draw(self, n: int, seed: int | np.random.Generator) -> tuple[Array, Array]:
        """Draw hidden exogenous inputs ``(n, H)`` and observed noise ``(n, D)``."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        e = rng.standard_normal((n, len(self.graph.hidden)))
        u = rng.standard_normal((n, len(self.graph.observed)))
        return e, u

    def hidden_values(self, e: Array) -> Array:
        g = self.graph
        vals = {}
        for v in g.hidden_order:
            col = e[:, g.hidden.index(v)]
            if g.parents(v):
                vals[v] = self.equations[v](vals, {v: col})
            else:
                vals[v] = col
        return np.stack([vals[v] for v in g.hidden], axis=1) if g.hidden else np.zeros((len(e), 0))

    def evaluate(self, z: Array, u: Array, interventions: Mapping[str, float] | None = None) -> Array:
        """Observed values from hidden values ``z`` and noise ``u`` (columns in declaration order)."""
        g = self.graph
        interventions = dict(interventions or {})
        z = np.atleast_2d(np.asarray(z, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        vals = {h: z[:, k] for k, h in enumerate(g.hidden)}
        noise = {v: u[:, i] for i, v in enumerate(g.observed)}
        for v in g.observed_order:
            if v in interventions:
                x = np.full(len(u), float(interventions[v]))
            else:
                mech = self.equations[v]
                x = mech(vals, {s: noise[s] for s in mech.noise_sources})
                x = np.broadcast_to(np.asarray(x, dtype=float), (len(u),)).copy()
            if not np.all(np.isfinite(x)):
                raise SimulationError(f"non-finite value produced at node {v!r}")
            vals[v] = x
        return np.stack([vals[v] for v in g.observed], axis=1)


# -- datasets ------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruthSample:
    x: Array
    z: Array
    u: Array


@dataclass
class GroundTruth:
    """Batched factual triples; row ``i`` is a :class:`GroundTruthSample`."""

    z: Array
    u: Array
    x: Array
    hidden_names: tuple[str, ...] = ()

    def __len__(self):
        return len(self.x)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return GroundTruthSample(self.x[i], self.z[i], self.u[i])
        return GroundTruth(self.z[i], self.u[i], self.x[i], self.hidden_names)


@dataclass
class Dataset:
    values: Array
    columns: tuple[str, ...]
    ground_truth: GroundTruth | None = None
    standardization: tuple[Array, Array] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.columns = tuple(self.columns)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ValueError("values must be an N x D matrix matching columns")

    def __len__(self):
        return len(self.values)

    def column(self, name: str) -> Array:
        return self.values[:, self.columns.index(name)]

    def subset(self, idx) -> "Dataset":
        gt = self.ground_truth[idx] if self.ground_truth is not None else None
        return Dataset(self.values[idx], self.columns, gt, self.standardization)

    def split(self, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int | None = None) -> tuple["Dataset", ...]:
        """Row split; contiguous when ``seed`` is None, shuffled otherwise."""
        n = len(self)
        idx = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
        bounds = np.floor(np.cumsum(fractions) * n + 1e-9).astype(int)
        bounds[-1] = n
        parts, lo = [], 0
        for hi in bounds:
            parts.append(self.subset(idx[lo:hi]))
            lo = hi
        return tuple(parts)

    def to_csv(self, path: str | Path, ground_truth_path: str | Path | None = None) -> None:
        _write_csv(path, self.columns, self.values)
        if ground_truth_path is not None and self.ground_truth is not None:
            gt = self.ground_truth
            hidden_cols = gt.hidden_names or tuple(str(i) for i in range(gt.z.shape[1]))
            cols = tuple(f"z.{h}" for h in hidden_cols) + tuple(f"u.{c}" for c in self.columns)
            _write_csv(ground_truth_path, cols, np.hstack([gt.z, gt.u]))

    @classmethod
    def from_csv(cls, path: str | Path, ground_truth_path: str | Path | None = None) -> "Dataset":
        cols, vals = _read_csv(path)
        gt = None
        if ground_truth_path is not None:
            gcols, gvals = _read_csv(ground_truth_path)
            zmask = np.array([c.startswith("z.") for c in gcols], dtype=bool)
            hidden = tuple(c[2:] for c, m in zip(gcols, zmask) if m)
            gt = GroundTruth(gvals[:, zmask], gvals[:, ~zmask], vals, hidden)
        return cls(vals, cols, gt)


def _write_csv(path, columns, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in values:
            w.writerow([repr(float(v)) for v in row])


def _read_csv(path) -> tuple[tuple[str, ...], Array]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    vals = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    return tuple(rows[0]), vals


# -- simulation and oracles ----------------------------------------------


def _dataset(scm: SyntheticSCM, z, u, x) -> Dataset:
    return Dataset(x, scm.graph.observed, GroundTruth(z, u, x, scm.graph.hidden))


def simulate(scm: SyntheticSCM, n: int, seed: int) -> Dataset:
    """Draw ``n`` i.i.d. rows; ground truth attached."""
    if n < 1:
        raise ValueError("n must be >= 1")
    e, u = scm.draw(n, seed)
    z = scm.hidden_values(e)
    return _dataset(scm, z, u, scm.evaluate(z, u))


def oracle_intervene(scm: SyntheticSCM, t: str, alpha: float, n: int, seed: int) -> Dataset:
    """Sample ``p(x | do(t = alpha))`` with the same draws :func:`simulate` would use."""
    if scm.graph.is_hidden(t):
        raise ValueError(f"cannot intervene on hidden node {t!r}")
    e, u = scm.draw(n, seed)
    z = scm.hidden_values(e)
    return _dataset(scm, z, u, scm.evaluate(z, u, {t: alpha}))


def oracle_counterfactual(scm: SyntheticSCM, sample: GroundTruthSample | GroundTruth, t: str, alpha: float) -> Array:
    """Abduction is exact here: replay the stored ``(u, z)`` with ``t`` clamped."""
    x = scm.evaluate(sample.z, sample.u, {t: alpha})
    return x[0] if isinstance(sample, GroundTruthSample) else x


def oracle_ate(
    scm: SyntheticSCM, t: str, alpha1: float, alpha2: float, y: str, n: int, seed: int, sd: float | None = None
) -> float:
    """``E[y | do(t=alpha2)] - E[y | do(t=alpha1)]`` with shared draws, divided by ``sd`` if given."""
    j = scm.graph.observed.index(y)
    lo = oracle_intervene(scm, t, alpha1, n, seed).values[:, j]
    hi = oracle_intervene(scm, t, alpha2, n, seed).values[:, j]
    ate = float(np.mean(hi) - np.mean(lo))
    return ate / sd if sd is not None else ate


# -- SCM families --------------------------------------------------------

_LINEAR = {
    # node: (coef z1, coef z2, noise scale)
    "n1": (-0.5, 0.3, 0.5),
    "n2": (0.75, -0.4, 0.4),
    "n3": (-0.85, 0.6, 0.6),
    "n4": (0.6, 0.6, 0.55),
    "n5": (-0.8, 0.4, 0.4),
    "n6": (0.9, -0.7, 0.6),
    "n7": (-0.72, 0.5, 0.56),
    "n8": (0.78, 0.4, 0.58),
    "n9": (-0.55, 0.7, 0.6),
    "n10": (0.88, 0.3, 0.4),
}


def _relu(a):
    return np.maximum(0.0, a)


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


_NONLINEAR_PROXIES = {
    "n1": lambda z1, z2, u: 0.6 * z1**2 + (z2 / 4) ** 3 + 0.3 * np.sin(z2 / 2) + 0.5 * u,
    "n2": lambda z1, z2, u: np.sin(z1 / 2) + np.cos(z2 / 3) + 0.4 * u,
    "n3": lambda z1, z2, u: np.cos(z1 / 2) - np.tanh(z2 / 3) + 0.6 * u,
    "n4": lambda z1, z2, u: np.tanh(z1 / 2) + _sigmoid(z2 / 2) + 0.55 * u,
    "n5": lambda z1, z2, u: _sigmoid(z1 / 2) + _relu(-z2) + 0.4 * u,
    "n6": lambda z1, z2, u: _relu(z1) - 0.5 * _relu(z2) + 0.6 * u,
    "n7": lambda z1, z2, u: _relu(-z1) + 0.3 * _relu(-z2) + 0.5 * z1 * u,
    "n8": lambda z1, z2, u: 0.8 * _relu(z1) + 0.3 * _relu(z2) + 0.58 * u,
    "n9": lambda z1, z2, u: 0.75 * _relu(-z1) + 0.5 * _relu(z2) + 0.6 * u,
    "n10": lambda z1, z2, u: 0.3 * z1**3 + 0.5 * np.abs(z2) + 0.4 * u,
}


def _nl_t(v, e):
    z1, z2 = v["z1"], v["z2"]
    return z1**2 / 4 * np.sin(z2 / 2) + z1 + 0.6 * e["t"]


def _nl_y(v, e):
    z1, z2, t = v["z1"], v["z2"], v["t"]
    out = z1 * t / 4 + 0.8 * z2 + 0.5 * t + 0.2 * e["y"]
    if "n2" in e:
        # cross-noise term: reads the noise channel of n2
        out = out + t * e["n2"] * 0.3
    return out


def _nl_proxy(name):
    f = _NONLINEAR_PROXIES[name]

    def fn(v, e):
        return f(v["z1"], v["z2"], e[name])

    fn.__name__ = f"nonlinear_{name}"
    return fn


_NL_PROXY_FNS = {k: _nl_proxy(k) for k in _NONLINEAR_PROXIES}


def build_ablation_scm(kind: str = "linear", num_proxies: int = 2) -> SyntheticSCM:
    """Two-confounder ``t -> y`` benchmark with ``num_proxies`` null proxies."""
    if kind not in ("linear", "nonlinear"):
        raise ValueError(f"kind must be 'linear' or 'nonlinear', got {kind!r}")
    if not 0 <= num_proxies <= 10:
        raise ValueError(f"num_proxies must be in [0, 10], got {num_proxies}")
    g = ablation_graph(num_proxies)
    zz = ("z1", "z2")
    eq: dict[str, Mechanism] = {}
    if kind == "linear":
        eq["t"] = LinearMechanism("t", zz, coefs=(1.5, 0.5), noise_scale=0.4)
        eq["y"] = LinearMechanism("y", zz + ("t",), coefs=(-0.75, 0.6, 0.9), noise_scale=0.3)
        for i in range(1, num_proxies + 1):
            a, b, s = _LINEAR[f"n{i}"]
            eq[f"n{i}"] = LinearMechanism(f"n{i}", zz, coefs=(a, b), noise_scale=s)
    else:
        eq["t"] = FunctionMechanism("t", zz, fn=_nl_t)
        sources = ("y", "n2") if num_proxies >= 2 else ("y",)
        eq["y"] = FunctionMechanism("y", zz + ("t",), noise_sources=sources, fn=_nl_y)
        for i in range(1, num_proxies + 1):
            eq[f"n{i}"] = FunctionMechanism(f"n{i}", zz, fn=_NL_PROXY_FNS[f"n{i}"])
    return SyntheticSCM(
        g, eq,
        noise_specs={v: "normal" for v in g.observed},
        hidden_specs={h: "normal" for h in g.hidden},
        meta={"family": "ablation", "kind": kind, "S": num_proxies},
    )


def build_random_mechanism_scm(
    g: CausalGraph, mode: str = "additive", seed: int = 0, width: int = 8, pilot: int = 20000
) -> SyntheticSCM:
    """Random smooth nonlinear mechanisms inducing exactly the graph ``g``.

    Every non-root node gets a one-hidden-layer tanh feature map of its
    parents; weights are rescaled on a pilot sample so that each node has
    roughly zero mean and unit variance. Roots are standard normal.
    """
    if mode not in ("additive", "nonadditive"):
        raise ValueError(f"mode must be 'additive' or 'nonadditive', got {mode!r}")
    ss = np.random.SeedSequence(seed)
    param_rng, pilot_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    vals: dict[str, Array] = {}
    eq: dict[str, Mechanism] = {}
    for v in g.topological_order:
        eps = pilot_rng.standard_normal(pilot)
        pa = g.parents(v)
        if not pa:
            if not g.is_hidden(v):
                eq[v] = LinearMechanism(v, (), coefs=(), noise_scale=1.0)
            vals[v] = eps
            continue
        w = param_rng.standard_normal((width, len(pa))) * 1.5 / np.sqrt(len(pa))
        b = param_rng.normal(0.0, 0.5, width)
        r = param_rng.standard_normal(width)
        frac = param_rng.uniform(0.5, 0.9)
        p = np.stack([vals[q] for q in pa], axis=-1)
        feat = np.tanh(p @ w.T + b) @ r
        r = r / feat.std()
        offset = float(np.mean(feat) / feat.std())
        proto = RandomFeatureMechanism(
            v, tuple(pa), weight=w, bias=b, readout=r, offset=offset,
            signal=float(np.sqrt(frac)), noise_gain_=float(np.sqrt(1 - frac)), scale=1.0, mode=mode,
        )
        x = proto(vals, {v: eps})
        mech = RandomFeatureMechanism(
            v, tuple(pa), weight=w, bias=b, readout=r, offset=offset + float(np.mean(x)) / proto.signal,
            signal=proto.signal, noise_gain_=proto.noise_gain_, scale=float(np.std(x)), mode=mode,
        )
        eq[v] = mech
        vals[v] = mech(vals, {v: eps})
    return SyntheticSCM(
        g, eq,
        noise_specs={v: "normal" for v in g.observed},
        hidden_specs={h: "normal" for h in g.hidden if not g.parents(h)},
        meta={"family": "random", "mode": mode, "seed": seed, "width": width, "pilot": pilot},
    )


def percentiles(values: Array, qs: Sequence[float] = (25, 50, 75)) -> list[float]:
    return [float(np.percentile(values, q)) for q in qs]


def save_scm_spec(scm: SyntheticSCM, path: str | Path, seed: int | None = None) -> None:
    """Persist what is needed to rebuild ``scm``: builder arguments, not weights."""
    family = scm.meta.get("family")
    if family == "ablation":
        spec = {"kind": scm.meta["kind"], "S": scm.meta["S"], "seed": seed}
    elif family == "random":
        spec = {"family": "random", "graph": scm.graph.to_dict(), "seed": seed,
                **{k: scm.meta[k] for k in ("mode", "width", "pilot")}, "mechanism_seed": scm.meta["seed"]}
    else:
        raise ValueError("only ablation and random-mechanism SCM specs are serializable")
    Path(path).write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")


def load_scm_spec(path: str | Path) -> tuple[SyntheticSCM, int | None]:
    """Inverse of :func:`save_scm_spec`; returns ``(scm, data seed)``."""
    spec = json.loads(Path(path).read_text())
    if spec.get("family") == "random":
        scm = build_random_mechanism_scm(load_graph(spec["graph"]), spec["mode"], int(spec["mechanism_seed"]),
                                         width=int(spec["width"]), pilot=int(spec["pilot"]))
        return scm, spec.get("seed")
    return build_ablation_scm(spec["kind"], int(spec["S"])), spec.get("seed")
