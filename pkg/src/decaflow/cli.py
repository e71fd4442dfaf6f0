"""Command-line entry points.

Usage:
  decaflow generate --scm ablation-linear --proxies 4 --n 25000 --seed 1 --out data/
  decaflow identify --graph data/graph.json --treatment t --outcome y --out ident/
  decaflow train --data data/data.csv --graph data/graph.json --latent-dim 2 --out run/
  decaflow query --model run/model.zip --do t=1.2 --outcome y --mode ate --against t=0.3 --out q/
  decaflow eval --model run/model.zip --scm data/scm.json --data data/data.csv \\
      --ground-truth data/ground_truth.csv --out eval/
  decaflow plot --ablation ablation.csv --metrics eval/metrics.json --out figs/

Every command writes ``manifest.json`` next to its outputs. Exit codes: 0 on
success, 2 on invalid input, 3 when a causal query is refused as
unidentifiable (``--force`` overrides and is recorded).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .graph import (
    PROXY_IDENTIFIABLE,
    UNCONFOUNDED,
    UNIDENTIFIABLE,
    CausalGraph,
    GraphError,
    QuerySpec,
    check_intervention_identifiable,
    check_query_identifiable,
    classify_edges,
    load_graph,
    sachs_graph,
)
from .metrics import MetricReport, cf_error, mmd
from .model import IntegrityError, TrainConfig, TrainingError, load_model, save_model, split_dataset, train
from .scm import (
    Dataset,
    SimulationError,
    build_ablation_scm,
    build_random_mechanism_scm,
    load_scm_spec,
    oracle_counterfactual,
    oracle_intervene,
    percentiles,
    save_scm_spec,
    simulate,
)

log = logging.getLogger("decaflow")

EXIT_OK, EXIT_INVALID, EXIT_REFUSED = 0, 2, 3
SPLIT = (0.8, 0.1, 0.1)
SCM_CHOICES = ("ablation-linear", "ablation-nonlinear", "sachs-additive", "sachs-nonadditive")


class Refused(Exception):
    def __init__(self, report: dict):
        super().__init__("query refused: effect is not identifiable from the graph")
        self.report = report


# -- manifest helpers ------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _software() -> dict:
    import matplotlib
    import torch

    return {"decaflow": __version__, "numpy": np.__version__, "torch": torch.__version__,
            "matplotlib": matplotlib.__version__}


def write_manifest(out: Path, command: str, args: argparse.Namespace, inputs: Sequence[Path],
                   outputs: Sequence[Path], seeds: dict, extra: dict | None = None) -> Path:
    """Record inputs (with hashes), seeds, flags, software versions and output hashes."""
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    manifest = {
        "command": command,
        "parameters": json.loads(json.dumps(params, default=str)),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "seeds": seeds,
        "software": _software(),
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _outdir(p: str) -> Path:
    out = Path(p)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_assignment(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise ValueError(f"expected NODE=VALUE, got {text!r}")
    node, value = text.split("=", 1)
    return node.strip(), float(value)


# -- generate --------------------------------------------------------------


def _build_scm(args):
    if args.scm.startswith("ablation"):
        return build_ablation_scm(args.scm.split("-", 1)[1], args.proxies)
    return build_random_mechanism_scm(sachs_graph(), args.scm.split("-", 1)[1], seed=args.mechanism_seed)


def cmd_generate(args) -> int:
    if not 0 <= args.proxies <= 10:
        raise ValueError(f"--proxies must be in [0, 10], got {args.proxies}")
    if args.n < 1:
        raise ValueError("--n must be positive")
    out = _outdir(args.out)
    scm = _build_scm(args)
    ds = simulate(scm, args.n, args.seed)
    data, gt = out / "data.csv", out / "ground_truth.csv"
    ds.to_csv(data, gt)
    save_scm_spec(scm, out / "scm.json", seed=args.seed)
    _write_json(out / "graph.json", scm.graph.to_dict())
    sizes = [len(p) for p in ds.split(SPLIT)]
    bounds = np.cumsum([0] + sizes).tolist()
    split = {name: [bounds[i], bounds[i + 1]] for i, name in enumerate(("train", "validation", "test"))}
    _write_json(out / "split.json", {"fractions": list(SPLIT), "rows": split, "contiguous": True})
    outputs = [data, gt, out / "scm.json", out / "graph.json", out / "split.json"]
    write_manifest(out, "generate", args, [], outputs, {"data": args.seed, "mechanism": args.mechanism_seed})
    print(f"wrote {args.n} rows to {data}")
    return EXIT_OK


# -- identify --------------------------------------------------------------

_EDGE_COLORS = {UNCONFOUNDED: "tab:green", PROXY_IDENTIFIABLE: "tab:orange", UNIDENTIFIABLE: "tab:red"}


def _layout(g: CausalGraph) -> dict[str, tuple[float, float]]:
    depth: dict[str, int] = {}
    for v in g.topological_order:
        depth[v] = 1 + max((depth[p] for p in g.parents(v)), default=-1)
    rows: dict[int, list[str]] = {}
    for v in g.topological_order:
        rows.setdefault(depth[v], []).append(v)
    pos = {}
    for d, vs in rows.items():
        for i, v in enumerate(vs):
            pos[v] = (i - (len(vs) - 1) / 2, -float(d))
    return pos


def render_graph(g: CausalGraph, labels: dict, path: Path, title: str = "") -> Path:
    """Static rendering: hidden nodes dashed, observed edges colored by label."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    pos = _layout(g)
    fig, ax = plt.subplots(figsize=(7, 5))
    for a, b in g.edges:
        color = _EDGE_COLORS.get(labels.get((a, b)), "0.6")
        style = "--" if g.is_hidden(a) else "-"
        ax.annotate("", xy=pos[b], xytext=pos[a],
                    arrowprops=dict(arrowstyle="-|>", color=color, linestyle=style, shrinkA=14, shrinkB=14))
    for v, (x, y) in pos.items():
        hidden = g.is_hidden(v)
        ax.scatter([x], [y], s=900, facecolor="white", edgecolor="0.3", linestyle="--" if hidden else "-", zorder=3)
        ax.text(x, y, v, ha="center", va="center", fontsize=8, zorder=4)
    for label, color in _EDGE_COLORS.items():
        ax.plot([], [], color=color, label=label)
    ax.legend(loc="lower right", fontsize=8, frameon=False)
    ax.set_title(title)
    ax.axis("off")
    ax.margins(0.15)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def cmd_identify(args) -> int:
    g = load_graph(Path(args.graph))
    out = _outdir(args.out)
    labels = classify_edges(g)
    doc: dict = {"edges": [{"source": a, "target": b, "label": lab} for (a, b), lab in sorted(labels.items())]}
    if args.treatment or args.outcome:
        if not (args.treatment and args.outcome):
            raise ValueError("--treatment and --outcome go together")
        q = QuerySpec(args.treatment, args.outcome, frozenset(args.covariates or ()))
        report = check_query_identifiable(g, q)
        doc["query"] = {"treatment": q.treatment, "outcome": q.outcome, "covariates": sorted(q.covariates)}
        doc.update(report.to_dict())
        print(f"identifiable: {str(report.identifiable).lower()}")
    else:
        for e in doc["edges"]:
            print(f"{e['source']} -> {e['target']}: {e['label']}")
    report_path = _write_json(out / "report.json", doc)
    png = render_graph(g, labels, out / "graph.png", title=Path(args.graph).stem)
    write_manifest(out, "identify", args, [Path(args.graph)], [report_path, png], {})
    return EXIT_OK


# -- train -----------------------------------------------------------------


def _load_data(path: str, graph: CausalGraph, ground_truth: str | None = None) -> Dataset:
    ds = Dataset.from_csv(path, ground_truth)
    if set(ds.columns) != set(graph.observed):
        raise ValueError(f"{path}: columns {ds.columns} do not match graph nodes {graph.observed}")
    if ds.columns != graph.observed:
        idx = [ds.columns.index(v) for v in graph.observed]
        ds = Dataset(ds.values[:, idx], graph.observed, ds.ground_truth)
    return ds


def cmd_train(args) -> int:
    g = load_graph(Path(args.graph))
    ds = _load_data(args.data, g)
    cfg = TrainConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("epochs", "seed") if getattr(args, k) is not None}
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        if "epochs" in overrides:
            d["warmup_epochs"] = min(d["warmup_epochs"], d["epochs"])
        cfg = TrainConfig.from_dict(d)
    out = _outdir(args.out)
    model, report = train(g, ds, cfg, latent_dims=args.latent_dim)
    archive = out / "model.zip"
    save_model(model, archive)
    rep = _write_json(out / "train_report.json", report.to_dict())
    inputs = [Path(args.graph), Path(args.data)] + ([Path(args.config)] if args.config else [])
    write_manifest(out, "train", args, inputs, [archive, rep], {"train": cfg.seed},
                   {"config": cfg.to_dict(), "latent_dims": model.latent_dims})
    last = report.val_mmd[-1] if report.val_mmd else float("nan")
    print(f"trained {report.stopping_epoch + 1 if report.elbo else 0} epochs; validation MMD {last:.3g}")
    return EXIT_OK


# -- query -----------------------------------------------------------------


def gate(g: CausalGraph, t: str, outcome: str | None) -> tuple[bool, dict]:
    """Consult the identifiability checker for ``do(t)`` (optionally restricted to one outcome)."""
    if outcome is not None:
        r = check_query_identifiable(g, QuerySpec(t, outcome))
        return r.identifiable, {outcome: r.to_dict()}
    ok, reports = check_intervention_identifiable(g, t)
    return ok, {k: v.to_dict() for k, v in reports.items()}


def cmd_query(args) -> int:
    model = load_model(args.model)
    g = model.graph
    t, alpha = _parse_assignment(args.do)
    if args.mode == "ate":
        if args.outcome is None or args.against is None:
            raise ValueError("--mode ate needs --outcome and --against")
        t2, alpha_ref = _parse_assignment(args.against)
        if t2 != t:
            raise ValueError(f"--against must intervene on {t!r}, got {t2!r}")
    if args.outcome is not None and args.outcome not in g.observed:
        raise ValueError(f"unknown outcome {args.outcome!r}")
    ok, reports = gate(g, t, args.outcome)
    out = _outdir(args.out)
    gate_doc = {"identifiable": ok, "reports": reports, "forced": bool(args.force and not ok)}
    inputs = [Path(args.model)]
    if not ok and not args.force:
        refusal = _write_json(out / "refusal.json", gate_doc)
        write_manifest(out, "query", args, inputs, [refusal], {"query": args.seed}, {"gate": gate_doc})
        raise Refused(gate_doc)

    outputs = []
    if args.mode == "ate":
        value = model.ate(t, alpha_ref, alpha, args.outcome, n=args.n, seed=args.seed)
        outputs.append(_write_json(out / "answer.json", {
            "mode": "ate", "treatment": t, "value": alpha, "against": alpha_ref, "outcome": args.outcome,
            "ate_standardized": value, "n": args.n}))
        print(repr(value))
    elif args.mode == "intervene":
        ds = model.intervene_sample(t, alpha, args.n, seed=args.seed)
        ds.to_csv(out / "samples.csv")
        outputs.append(out / "samples.csv")
        print(f"wrote {args.n} interventional samples to {out / 'samples.csv'}")
    else:
        if not args.factual:
            raise ValueError("--mode counterfactual needs --factual")
        fact = _load_data(args.factual, g)
        if args.rows:
            lo, hi = (int(v) for v in args.rows.split(":"))
            fact = fact.subset(slice(lo, hi))
        cf = model.counterfactual(fact.values, t, alpha, seed=args.seed)
        Dataset(cf, g.observed).to_csv(out / "counterfactuals.csv")
        outputs.append(out / "counterfactuals.csv")
        inputs.append(Path(args.factual))
        print(f"wrote {len(cf)} counterfactual rows to {out / 'counterfactuals.csv'}")
    write_manifest(out, "query", args, inputs, outputs, {"query": args.seed}, {"gate": gate_doc})
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def _key(t, alpha, y=None, against=None) -> str:
    s = f"do({t}={alpha:.6g})"
    if against is not None:
        s = f"do({t}={alpha:.6g})-do({t}={against:.6g})"
    return s if y is None else f"{s}:{y}"


def model_answers(model, scm, data: Dataset, args) -> tuple[dict, dict]:
    """Model estimates and oracle truths for the standard query battery.

    Interventions at the 25th/50th/75th training percentiles of the
    treatment; ATE of p75 against p25; counterfactuals on the first test rows.
    Samples are stored standardized with the training-split moments.
    """
    train_ds, _, test_ds = split_dataset(data)
    t, y = args.treatment, args.outcome
    mean, sd = train_ds.values.mean(axis=0), train_ds.values.std(axis=0)
    std = lambda v: ((v - mean) / sd).tolist()  # noqa: E731
    jy = data.columns.index(y)
    qs = percentiles(train_ds.column(t))
    est: dict = {"sd": {y: float(sd[jy])}, "samples": {}, "ate": {}, "counterfactual": {}}
    tru: dict = {"sd": {y: float(sd[jy])}, "samples": {}, "ate": {}, "counterfactual": {}}
    n = args.n
    test = test_ds.values[:n]
    est["samples"]["obs"] = std(model.sample_observational(n, seed=args.seed).values)
    tru["samples"]["obs"] = std(test)
    for a in qs:
        k = _key(t, a)
        est["samples"][k] = std(model.intervene_sample(t, a, n, seed=args.seed).values)
        tru["samples"][k] = std(oracle_intervene(scm, t, a, n, seed=args.seed + 1).values)
    k = _key(t, qs[2], y, against=qs[0])
    est["ate"][k] = model.ate(t, qs[0], qs[2], y, n=args.ate_samples, seed=args.seed)
    lo = oracle_intervene(scm, t, qs[0], args.ate_samples, args.seed + 2).column(y)
    hi = oracle_intervene(scm, t, qs[2], args.ate_samples, args.seed + 2).column(y)
    tru["ate"][k] = float(np.mean(hi) - np.mean(lo)) / float(sd[jy])
    rows = test_ds.subset(slice(0, args.cf_rows))
    for a in qs:
        k = _key(t, a, y)
        est["counterfactual"][k] = model.counterfactual(rows.values, t, a, seed=args.seed)[:, jy].tolist()
        tru["counterfactual"][k] = oracle_counterfactual(scm, rows.ground_truth, t, a)[:, jy].tolist()
    return est, tru


def score(est: dict, tru: dict) -> MetricReport:
    """Compare an answers document against an oracle document of the same layout."""
    rep = MetricReport()
    samples = tru.get("samples", {})
    if "obs" in samples:
        rep.mmd_obs = mmd(np.asarray(est["samples"]["obs"]), np.asarray(samples["obs"]))
    for k, v in samples.items():
        if k != "obs":
            rep.mmd_int[k] = mmd(np.asarray(est["samples"][k]), np.asarray(v))
    for k, v in tru.get("ate", {}).items():
        rep.ate_abs_error[k] = abs(float(est["ate"][k]) - float(v))
    for k, v in tru.get("counterfactual", {}).items():
        y = k.rsplit(":", 1)[1]
        rep.cf_abs_error[k] = float(cf_error(est["counterfactual"][k], v, tru["sd"][y])[0])
    rep.validate()
    return rep


def write_metrics(out: Path, rep: MetricReport) -> list[Path]:
    js = out / "metrics.json"
    js.write_text(rep.to_json() + "\n")
    rows = [("mmd_obs", "obs", rep.mmd_obs)] if rep.mmd_obs is not None else []
    rows += [("mmd_int", k, v) for k, v in sorted(rep.mmd_int.items())]
    rows += [("ate_abs_error", k, v) for k, v in sorted(rep.ate_abs_error.items())]
    rows += [("cf_abs_error", k, v) for k, v in sorted(rep.cf_abs_error.items())]
    path = out / "metrics.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "query", "value"])
        for r in rows:
            w.writerow([r[0], r[1], repr(float(r[2]))])
    return [js, path]


def cmd_eval(args) -> int:
    out = _outdir(args.out)
    if args.estimates or args.oracle:
        if not (args.estimates and args.oracle):
            raise ValueError("--estimates and --oracle go together")
        est = json.loads(Path(args.estimates).read_text())
        tru = json.loads(Path(args.oracle).read_text())
        inputs = [Path(args.estimates), Path(args.oracle)]
        produced = []
    else:
        missing = [f for f in ("model", "scm", "data", "ground_truth") if not getattr(args, f)]
        if missing:
            raise ValueError(f"missing arguments: {', '.join('--' + m.replace('_', '-') for m in missing)}")
        model = load_model(args.model)
        scm, _ = load_scm_spec(args.scm)
        if scm.graph != model.graph:
            raise ValueError("the SCM's graph differs from the model's graph")
        data = _load_data(args.data, model.graph, args.ground_truth)
        est, tru = model_answers(model, scm, data, args)
        produced = [_write_json(out / "estimates.json", est), _write_json(out / "oracle.json", tru)]
        inputs = [Path(p) for p in (args.model, args.scm, args.data, args.ground_truth)]
    rep = score(est, tru)
    outputs = produced + write_metrics(out, rep)
    write_manifest(out, "eval", args, inputs, outputs, {"eval": args.seed})
    for k, v in rep.ate_abs_error.items():
        print(f"|ATE error| {k}: {v:.4f}")
    if rep.cf_abs_error:
        print(f"mean |CF error|: {np.mean(list(rep.cf_abs_error.values())):.4f}")
    return EXIT_OK


# -- plot ------------------------------------------------------------------


def _read_ablation(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    need = {"factor", "level", "seed", "ate_error", "cf_error"}
    if not rows or not need <= set(rows[0]):
        raise ValueError(f"{path}: expected columns {sorted(need)}")
    return rows


def plot_ablation(rows: list[dict], out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    written = []
    for factor in sorted({r["factor"] for r in rows}):
        sub = [r for r in rows if r["factor"] == factor]
        levels = sorted({float(r["level"]) for r in sub})
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for metric, marker in (("ate_error", "o"), ("cf_error", "s")):
            per = [[float(r[metric]) for r in sub if float(r["level"]) == lv] for lv in levels]
            means = [np.mean(p) for p in per]
            for lv, p in zip(levels, per):
                ax.scatter([lv] * len(p), p, s=12, alpha=0.4, marker=marker)
            ax.plot(levels, means, marker=marker, label=metric.replace("_", " "))
        ax.set_xlabel(factor)
        ax.set_ylabel("standardized |error|")
        ax.legend(frameon=False)
        fig.tight_layout()
        path = out / f"ablation_{factor}.png"
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written


def plot_errors(reports: dict[str, dict], out: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = list(reports)
    data = [list(r.get("cf_abs_error", {}).values()) + list(r.get("ate_abs_error", {}).values()) for r in reports.values()]
    ax.boxplot(data, labels=names)
    ax.set_ylabel("standardized |error|")
    fig.tight_layout()
    path = out / "errors.png"
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def cmd_plot(args) -> int:
    if not (args.ablation or args.metrics):
        raise ValueError("nothing to plot: pass --ablation and/or --metrics")
    out = _outdir(args.out)
    outputs, inputs = [], []
    if args.ablation:
        outputs += plot_ablation(_read_ablation(Path(args.ablation)), out)
        inputs.append(Path(args.ablation))
    if args.metrics:
        reports = {Path(p).parent.name or Path(p).stem: json.loads(Path(p).read_text()) for p in args.metrics}
        outputs.append(plot_errors(reports, out))
        inputs += [Path(p) for p in args.metrics]
    write_manifest(out, "plot", args, inputs, outputs, {})
    for p in outputs:
        print(p)
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decaflow", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate", help="simulate a benchmark SCM")
    s.add_argument("--scm", choices=SCM_CHOICES, default="ablation-linear")
    s.add_argument("--proxies", type=int, default=4, help="number of null proxies for the ablation SCM (0-10)")
    s.add_argument("--n", type=int, default=25000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mechanism-seed", type=int, default=0, help="weights of the random mechanisms")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("identify", help="check identifiability and classify edges")
    s.add_argument("--graph", required=True)
    s.add_argument("--treatment")
    s.add_argument("--outcome")
    s.add_argument("--covariates", nargs="*")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("train", help="fit a model and archive it")
    s.add_argument("--graph", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="TrainConfig JSON")
    s.add_argument("--latent-dim", type=int, help="total latent dimension (default: one per hidden node)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("query", help="interventional, counterfactual or ATE query")
    s.add_argument("--model", required=True)
    s.add_argument("--do", required=True, metavar="NODE=VALUE")
    s.add_argument("--mode", choices=("intervene", "counterfactual", "ate"), default="intervene")
    s.add_argument("--outcome")
    s.add_argument("--against", metavar="NODE=VALUE", help="reference intervention for --mode ate")
    s.add_argument("--factual", help="CSV of factual rows for --mode counterfactual")
    s.add_argument("--rows", help="row range LO:HI of --factual")
    s.add_argument("--n", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true", help="answer even if the query is not identifiable")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("eval", help="score a model (or an answers file) against oracles")
    s.add_argument("--model")
    s.add_argument("--scm")
    s.add_argument("--data")
    s.add_argument("--ground-truth")
    s.add_argument("--estimates")
    s.add_argument("--oracle")
    s.add_argument("--treatment", default="t")
    s.add_argument("--outcome", default="y")
    s.add_argument("--n", type=int, default=1000, help="samples per distribution for MMD")
    s.add_argument("--ate-samples", type=int, default=20000)
    s.add_argument("--cf-rows", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("plot", help="static figures from ablation tables and metric reports")
    s.add_argument("--ablation", help="CSV with columns factor,level,seed,ate_error,cf_error")
    s.add_argument("--metrics", nargs="*", help="metrics.json files")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Refused as r:
        print(f"error: {r}", file=sys.stderr)
        print(json.dumps(r.report, indent=2, sort_keys=True), file=sys.stderr)
        return EXIT_REFUSED
    except (GraphError, ValueError, KeyError, IntegrityError, SimulationError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
