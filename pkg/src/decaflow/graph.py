"""Causal graphs with hidden confounders.

Covers graph validation, d-separation, the structural masks used by the
generative and deconfounding flows, and proxy-based identifiability checks.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

COMPLETENESS_CAVEAT = (
    "completeness of the proxies with respect to the confounders is assumed, "
    "not checked; it cannot be decided from the graph alone"
)


class GraphError(ValueError):
    """Invalid graph document or graph structure."""


class CycleError(GraphError):
    """The graph contains a directed cycle."""

    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


@dataclass(frozen=True)
class CausalGraph:
    """DAG over observed and hidden nodes.

    Hidden nodes may only have hidden parents. Instances are immutable and
    validated on construction.
    """

    observed: tuple[str, ...]
    hidden: tuple[str, ...] = ()
    edges: tuple[tuple[str, str], ...] = ()
    _parents: dict = field(init=False, repr=False, compare=False, hash=False)
    _children: dict = field(init=False, repr=False, compare=False, hash=False)
    _order: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(self.observed))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "edges", tuple((str(a), str(b)) for a, b in self.edges))

        names = self.observed + self.hidden
        seen = set()
        for name in names:
            if name in seen:
                raise GraphError(f"duplicate node name {name!r}")
            seen.add(name)
        hidden = set(self.hidden)
        parents = {v: [] for v in names}
        children = {v: [] for v in names}
        for a, b in self.edges:
            for v in (a, b):
                if v not in seen:
                    raise GraphError(f"edge ({a!r}, {b!r}) references unknown node {v!r}")
            if a == b:
                raise CycleError([a, a])
            if b in hidden and a not in hidden:
                raise GraphError(f"edge ({a!r}, {b!r}) points from an observed node into a hidden node")
            if a in parents[b]:
                raise GraphError(f"duplicate edge ({a!r}, {b!r})")
            parents[b].append(a)
            children[a].append(b)
        object.__setattr__(self, "_parents", {k: tuple(v) for k, v in parents.items()})
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})
        object.__setattr__(self, "_order", self._toposort())

    def _toposort(self) -> tuple[str, ...]:
        # Kahn's algorithm; ties broken by declaration order.
        names = self.observed + self.hidden
        rank = {v: i for i, v in enumerate(names)}
        indeg = {v: len(self._parents[v]) for v in names}
        ready = sorted((v for v in names if indeg[v] == 0), key=rank.__getitem__)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in self._children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    ready.sort(key=rank.__getitem__)
        if len(order) != len(names):
            raise CycleError(self._find_cycle(set(names) - set(order)))
        return tuple(order)

    def _find_cycle(self, remaining: set[str]) -> list[str]:
        # Every node left after Kahn has a parent that is also left, so walking
        # parents must revisit a node.
        start = min(remaining)
        path, pos = [], {}
        v = start
        while v not in pos:
            pos[v] = len(path)
            path.append(v)
            v = next(p for p in self._parents[v] if p in remaining)
        cycle = path[pos[v]:]
        cycle.reverse()
        return cycle + [cycle[0]]

    # -- basic queries ---------------------------------------------------

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.observed + self.hidden

    @property
    def topological_order(self) -> tuple[str, ...]:
        return self._order

    @property
    def observed_order(self) -> tuple[str, ...]:
        """Observed nodes in topological order."""
        obs = set(self.observed)
        return tuple(v for v in self._order if v in obs)

    @property
    def hidden_order(self) -> tuple[str, ...]:
        """Hidden nodes in topological order, ties broken by declaration order."""
        hid = set(self.hidden)
        return tuple(v for v in self._order if v in hid)

    def is_hidden(self, v: str) -> bool:
        self._check(v)
        return v in self.hidden

    def parents(self, v: str) -> tuple[str, ...]:
        self._check(v)
        return self._parents[v]

    def children(self, v: str) -> tuple[str, ...]:
        self._check(v)
        return self._children[v]

    def ancestors(self, nodes: str | Iterable[str]) -> set[str]:
        """Proper ancestors of ``nodes`` (excluding the nodes themselves)."""
        return self._reach(nodes, self._parents)

    def descendants(self, nodes: str | Iterable[str]) -> set[str]:
        """Proper descendants of ``nodes``."""
        return self._reach(nodes, self._children)

    def _reach(self, nodes, nbrs) -> set[str]:
        start = [nodes] if isinstance(nodes, str) else list(nodes)
        for v in start:
            self._check(v)
        out: set[str] = set()
        stack = list(start)
        while stack:
            v = stack.pop()
            for w in nbrs[v]:
                if w not in out:
                    out.add(w)
                    stack.append(w)
        return out

    def _check(self, v: str) -> None:
        if v not in self._parents:
            raise KeyError(f"unknown node {v!r}")

    def adjacency(self, nodes: Sequence[str] | None = None) -> np.ndarray:
        """Boolean matrix ``A[i, j]`` true iff ``nodes[j] -> nodes[i]``."""
        nodes = list(self.nodes if nodes is None else nodes)
        idx = {v: i for i, v in enumerate(nodes)}
        a = np.zeros((len(nodes), len(nodes)), dtype=bool)
        for p, c in self.edges:
            if p in idx and c in idx:
                a[idx[c], idx[p]] = True
        return a

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "observed": list(self.observed),
            "hidden": list(self.hidden),
            "edges": [list(e) for e in self.edges],
        }

    def digest(self) -> str:
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_graph(document: Mapping | str | Path) -> CausalGraph:
    """Build a validated graph from a mapping, a JSON string, or a JSON file path."""
    if isinstance(document, Path) or (isinstance(document, str) and not document.lstrip().startswith("{")):
        document = json.loads(Path(document).read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, Mapping):
        raise GraphError("graph document must be a JSON object")
    unknown = set(document) - {"observed", "hidden", "edges"}
    if unknown:
        raise GraphError(f"unknown keys in graph document: {sorted(unknown)}")
    observed = document.get("observed")
    if not isinstance(observed, list) or not all(isinstance(v, str) for v in observed):
        raise GraphError("'observed' must be an array of strings")
    hidden = document.get("hidden", [])
    if not isinstance(hidden, list) or not all(isinstance(v, str) for v in hidden):
        raise GraphError("'hidden' must be an array of strings")
    edges = document.get("edges", [])
    if not isinstance(edges, list) or not all(
        isinstance(e, (list, tuple)) and len(e) == 2 and all(isinstance(v, str) for v in e) for e in edges
    ):
        raise GraphError("'edges' must be an array of [parent, child] string pairs")
    return CausalGraph(tuple(observed), tuple(hidden), tuple(tuple(e) for e in edges))


# -- d-separation --------------------------------------------------------


def d_separated(g: CausalGraph, A: Iterable[str], B: Iterable[str], C: Iterable[str] = ()) -> bool:
    """True iff every path between ``A`` and ``B`` is blocked by ``C``.

    Reachability over (node, direction) states, in the style of Bayes-ball.
    """
    A, B, C = set(A), set(B), set(C)
    for v in A | B | C:
        g._check(v)
    if A & B:
        return False
    # Nodes that are in C or have a descendant in C; colliders there are open.
    an_c = set(C) | g.ancestors(C)

    # direction "up": arrived from a child (moving against edges);
    # direction "down": arrived from a parent.
    visited = set()
    queue = deque((a, "up") for a in A)
    while queue:
        v, d = queue.popleft()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in C and v in B:
            return False
        if d == "up" and v not in C:
            for p in g._parents[v]:
                queue.append((p, "up"))
            for c in g._children[v]:
                queue.append((c, "down"))
        elif d == "down":
            if v not in C:
                for c in g._children[v]:
                    queue.append((c, "down"))
            if v in an_c:
                for p in g._parents[v]:
                    queue.append((p, "up"))
    return True


# -- flow masks ----------------------------------------------------------


@dataclass(frozen=True)
class FlowMask:
    """Dependency masks of a conditional autoregressive transform.

    ``input_mask[i, j]``: output ``i`` may read input ``j`` (the diagonal marks
    each coordinate's own noise channel). ``context_mask[i, k]``: output ``i``
    may read context coordinate ``k``. Rows and columns follow ``ordering``;
    for the encoder, ``ordering`` lists latent coordinates and
    ``context_names`` lists the observed context columns.
    """

    input_mask: np.ndarray
    context_mask: np.ndarray
    ordering: tuple[str, ...]
    context_names: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.input_mask.shape[0]

    @property
    def context_dim(self) -> int:
        return self.context_mask.shape[1]

    def conditioner_mask(self) -> np.ndarray:
        """Strict part of ``input_mask``: what a coordinate's parameters may read."""
        return self.input_mask & ~np.eye(self.dim, dtype=bool)

    def is_acyclic(self) -> bool:
        m = self.conditioner_mask()
        return bool(np.all(np.triu(m) == 0))

    def expand(self, input_sizes: Sequence[int], context_sizes: Sequence[int], within_block: bool = True) -> "FlowMask":
        """Expand node-level masks into coordinate-level masks.

        Blocks of size ``input_sizes[i]`` replace each row/column of
        ``input_mask``. Inside a block, coordinates are autoregressive when
        ``within_block`` is set, otherwise independent.
        """
        rows = np.repeat(np.arange(self.dim), input_sizes)
        inp = self.input_mask[np.ix_(rows, rows)].copy()
        same = rows[:, None] == rows[None, :]
        inp[same] = False
        if within_block:
            n = len(rows)
            lower = np.tril(np.ones((n, n), dtype=bool))
            inp |= same & lower
        else:
            inp |= np.eye(len(rows), dtype=bool)
        cols = np.repeat(np.arange(self.context_dim), context_sizes)
        ctx = self.context_mask[np.ix_(rows, cols)]
        names = tuple(f"{self.ordering[r]}[{i}]" for r, i in _block_index(rows))
        cnames = tuple(f"{self.context_names[c]}[{i}]" for c, i in _block_index(cols)) if self.context_names else ()
        return FlowMask(inp, ctx, names, cnames)


def _block_index(rows: np.ndarray):
    counts: dict[int, int] = {}
    for r in rows:
        r = int(r)
        yield r, counts.get(r, 0)
        counts[r] = counts.get(r, 0) + 1


def build_decoder_mask(g: CausalGraph) -> FlowMask:
    """Mask of the generative flow: ``x_i`` reads its observed and hidden parents."""
    order = g.observed_order
    idx = {v: i for i, v in enumerate(order)}
    hid = g.hidden_order
    hidx = {v: k for k, v in enumerate(hid)}
    inp = np.eye(len(order), dtype=bool)
    ctx = np.zeros((len(order), len(hid)), dtype=bool)
    for v in order:
        for p in g.parents(v):
            if p in idx:
                inp[idx[v], idx[p]] = True
            else:
                ctx[idx[v], hidx[p]] = True
    return FlowMask(inp, ctx, order, hid)


def encoder_conditioning_sets(g: CausalGraph) -> dict[str, tuple[set[str], set[str]]]:
    """Per hidden node: (earlier hidden nodes, observed nodes) it conditions on.

    ``z_k`` conditions on ``pa(z_k)``, ``ch(z_k)`` and the other parents of its
    children, excluding hidden nodes that come later in ``g.hidden_order``.
    """
    order = g.hidden_order
    rank = {v: i for i, v in enumerate(order)}
    out = {}
    for z in order:
        cond = set(g.parents(z)) | set(g.children(z))
        for c in g.children(z):
            cond |= set(g.parents(c))
        cond.discard(z)
        hidden = {v for v in cond if v in rank and rank[v] < rank[z]}
        observed = {v for v in cond if v not in rank}
        out[z] = (hidden, observed)
    return out


def build_encoder_mask(g: CausalGraph) -> FlowMask:
    """Mask of the deconfounding flow over hidden nodes, with observed context."""
    order = g.hidden_order
    idx = {v: i for i, v in enumerate(order)}
    obs = g.observed_order
    oidx = {v: i for i, v in enumerate(obs)}
    inp = np.eye(len(order), dtype=bool)
    ctx = np.zeros((len(order), len(obs)), dtype=bool)
    for z, (hidden, observed) in encoder_conditioning_sets(g).items():
        for h in hidden:
            inp[idx[z], idx[h]] = True
        for o in observed:
            ctx[idx[z], oidx[o]] = True
    return FlowMask(inp, ctx, order, obs)


# -- identifiability -----------------------------------------------------


@dataclass(frozen=True)
class QuerySpec:
    treatment: str
    outcome: str
    covariates: frozenset[str] = frozenset()
    intervention_values: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", frozenset(self.covariates))
        object.__setattr__(self, "intervention_values", tuple(float(a) for a in self.intervention_values))
        if self.treatment == self.outcome:
            raise GraphError("treatment and outcome must differ")
        if {self.treatment, self.outcome} & self.covariates:
            raise GraphError("covariates must exclude treatment and outcome")


@dataclass
class ConfounderVerdict:
    deconfounded: bool
    n_witness: str | None = None
    w_witness: str | None = None


@dataclass
class IdentifiabilityReport:
    identifiable: bool
    per_confounder: dict[str, ConfounderVerdict]
    reason: str

    def to_dict(self) -> dict:
        return {
            "identifiable": self.identifiable,
            "per_confounder": {
                k: {"deconfounded": v.deconfounded, "n_witness": v.n_witness, "w_witness": v.w_witness}
                for k, v in self.per_confounder.items()
            },
            "reason": self.reason,
        }


def _validate_query(g: CausalGraph, q: QuerySpec) -> None:
    for v in (q.treatment, q.outcome, *sorted(q.covariates)):
        g._check(v)
        if g.is_hidden(v):
            raise GraphError(f"query node {v!r} is hidden")


def check_query_identifiable(g: CausalGraph, q: QuerySpec) -> IdentifiabilityReport:
    """Proxy-based identifiability of the effect of ``q.treatment`` on ``q.outcome``.

    For every hidden common parent ``z_k`` of treatment and outcome, look for
    two distinct children of ``z_k`` that act as witnesses:

    - an outcome proxy ``w`` with ``w`` d-separated from the treatment given (z, c);
    - a null proxy ``n`` with ``n`` d-separated from the outcome given (t, z, c);
    - ``n`` d-separated from ``w`` given (z, c).

    ``z`` is the whole hidden set and ``c`` the covariates. The
    lexicographically first ``(n, w)`` pair is reported.
    """
    _validate_query(g, q)
    t, y, c = q.treatment, q.outcome, set(q.covariates)
    confounders = [z for z in g.hidden_order if z in g.parents(t) and z in g.parents(y)]
    if not confounders:
        return IdentifiabilityReport(True, {}, "unconfounded: no hidden common parent of treatment and outcome")

    zc = set(g.hidden) | c
    verdicts = {}
    for zk in confounders:
        cands = sorted(v for v in g.children(zk) if not g.is_hidden(v) and v not in (t, y) and v not in c)
        w_proxies = [v for v in cands if d_separated(g, {v}, {t}, zc)]
        n_proxies = [v for v in cands if d_separated(g, {v}, {y}, zc | {t})]
        verdict = ConfounderVerdict(False)
        for n in n_proxies:
            for w in w_proxies:
                if n != w and d_separated(g, {n}, {w}, zc):
                    verdict = ConfounderVerdict(True, n, w)
                    break
            if verdict.deconfounded:
                break
        verdicts[zk] = verdict

    ok = all(v.deconfounded for v in verdicts.values())
    if ok:
        reason = "every hidden confounder has a (null proxy, proxy) witness pair; " + COMPLETENESS_CAVEAT
    else:
        missing = [k for k, v in verdicts.items() if not v.deconfounded]
        reason = "no witness pair of distinct proxies for: " + ", ".join(missing)
    return IdentifiabilityReport(ok, verdicts, reason)


def check_intervention_identifiable(g: CausalGraph, t: str) -> tuple[bool, dict[str, IdentifiabilityReport]]:
    """Identifiability of ``p(x | do(t))``, one report per observed descendant.

    Returns ``(joint_identifiable, reports)``.
    """
    g._check(t)
    if g.is_hidden(t):
        raise GraphError(f"intervention node {t!r} is hidden")
    desc = g.descendants(t)
    reports = {
        v: check_query_identifiable(g, QuerySpec(t, v)) for v in g.observed_order if v in desc
    }
    return all(r.identifiable for r in reports.values()), reports


UNCONFOUNDED = "unconfounded"
PROXY_IDENTIFIABLE = "proxy_identifiable"
UNIDENTIFIABLE = "unidentifiable"


def classify_edges(g: CausalGraph) -> dict[tuple[str, str], str]:
    """Three-way label for every observed -> observed edge."""
    out = {}
    for a, b in g.edges:
        if g.is_hidden(a) or g.is_hidden(b):
            continue
        shared = {p for p in g.parents(a) if g.is_hidden(p)} & {p for p in g.parents(b) if g.is_hidden(p)}
        if not shared:
            out[(a, b)] = UNCONFOUNDED
        elif check_query_identifiable(g, QuerySpec(a, b)).identifiable:
            out[(a, b)] = PROXY_IDENTIFIABLE
        else:
            out[(a, b)] = UNIDENTIFIABLE
    return out


# -- reference graphs ----------------------------------------------------


def two_proxy_graph() -> CausalGraph:
    """Single confounder with a null proxy ``n`` and an outcome proxy ``w``."""
    return CausalGraph(
        observed=("n", "t", "w", "y"),
        hidden=("z",),
        edges=(("z", "n"), ("z", "t"), ("z", "w"), ("z", "y"), ("n", "t"), ("t", "y"), ("w", "y")),
    )


def ablation_graph(num_proxies: int) -> CausalGraph:
    """Two confounders of ``t -> y`` plus ``num_proxies`` null proxies ``n1..nS``."""
    if not 0 <= num_proxies <= 10:
        raise ValueError(f"num_proxies must be in [0, 10], got {num_proxies}")
    proxies = tuple(f"n{i}" for i in range(1, num_proxies + 1))
    observed = ("t", "y") + proxies
    edges = [("t", "y")]
    for z in ("z1", "z2"):
        edges += [(z, v) for v in observed]
    return CausalGraph(observed, ("z1", "z2"), tuple(edges))


def sachs_graph() -> CausalGraph:
    """Acyclic protein-signalling network with PKA and PKC hidden."""
    edges = (
        ("Plcg", "PIP3"), ("Plcg", "PIP2"), ("PIP3", "PIP2"),
        ("PKC", "PKA"), ("PKC", "Raf"), ("PKA", "Raf"),
        ("PKC", "Jnk"), ("PKA", "Jnk"), ("PKC", "P38"), ("PKA", "P38"),
        ("PKC", "Mek"), ("PKA", "Mek"), ("Raf", "Mek"),
        ("Mek", "Erk"), ("PKA", "Erk"), ("Erk", "Akt"), ("PKA", "Akt"),
    )
    observed = ("Raf", "Mek", "Plcg", "PIP2", "PIP3", "Erk", "Akt", "P38", "Jnk")
    return CausalGraph(observed, ("PKC", "PKA"), edges)
