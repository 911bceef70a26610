"""Command-line front end.

Commands read an optional JSON config file mirroring :class:`ExperimentSpec`;
explicit flags override file values.  Artifact-producing commands are
deterministic for a fixed seed on one host, which is why per-epoch timing
columns are stripped from emitted CSVs.  Failures leave through a
machine-readable JSON body on stderr with exit code 1; ``identify`` exits 0
when the verdict is Identified and 2 when it is not.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import __version__
from . import train as tr
from .bench import (GRID_QUERIES, estimation_sweep_sizes, grid_bench,
                    runtime_bench, sample_ground_truth, trailing_mean)
from .fixtures import (NAMED_GRAPHS, casino_scm, drug_trial_scm, hiring_scm,
                       named_graph, textbook_scm)
from .graph import DiagramError, format_diagram, parse_diagram
from .identify import (BACKENDS, IdentifyConfig, IdentifyError, config_digest,
                       estimate_query, estimate_query_mle, neural_id)
from .ncm import NcmError, build_gncm, build_mle_ncm
from .query import QueryError, format_query, parse_query
from .scm import (DatasetCollection, PositivityError, ScmError,
                  ZeroProbabilityError, enumerate_query, load_dataset,
                  save_dataset, scm_from_json, scm_to_json)
from .svg import line_plot

__all__ = ["main", "ExperimentSpec"]

_FIXTURE_SCMS = {
    "casino": casino_scm,
    "textbook": textbook_scm,
    "drug-trial": drug_trial_scm,
    "hiring": hiring_scm,
}

# Two-sided 95% Student-t multipliers by degrees of freedom (for the small
# trial counts of the benchmark commands; larger counts fall back to normal).
_T95 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571,
        6: 2.447, 7: 2.365, 8: 2.306, 9: 2.262, 10: 2.228}


@dataclass
class ExperimentSpec:
    """One experiment: where the inputs come from and how to run them.

    ``data`` lists dataset manifests; when empty, a synthetic ground truth
    is sampled on the graph and datasets are drawn under ``interventions``.
    ``epochs``/``lr``/``batch`` left as None take the backend's defaults.
    """

    graph: Optional[str] = None
    query: Optional[str] = None
    data: tuple = ()
    interventions: tuple = ({},)
    n: int = 10_000
    d: int = 1
    r: int = 2
    positivity: bool = True
    backend: str = "gan"
    tau: float = 0.05
    reruns: int = 4
    eval_m: int = 1_000_000
    epochs: Optional[int] = None
    lr: Optional[float] = None
    batch: Optional[int] = None
    trials: int = 1
    seed: int = 0
    out: str = "."

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def parse_intervention(text: str) -> dict:
    """Parse 'X=1' / 'X=1,Z=0' (or 'obs' / '' for no intervention)."""
    text = text.strip()
    if text in ("", "obs", "{}"):
        return {}
    out = {}
    for piece in text.split(","):
        name, eq, value = piece.partition("=")
        name = name.strip()
        if not eq or not name:
            raise ValueError(f"bad intervention {piece!r}; expected 'X=1'")
        out[name] = int(value)
    return out


def _load_spec(config_path, **cli) -> ExperimentSpec:
    values = {}
    if config_path is not None:
        with open(config_path) as fh:
            doc = json.load(fh)
        allowed = {f.name for f in fields(ExperimentSpec)}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise click.UsageError(
                f"unknown config keys: {', '.join(unknown)}")
        values.update(doc)
    for key, val in cli.items():
        if val is None or (key in ("data", "interventions") and val == ()):
            continue  # flag not given; keep the file value
        values[key] = val
    if "interventions" in values:
        values["interventions"] = tuple(
            parse_intervention(iv) if isinstance(iv, str) else dict(iv)
            for iv in values["interventions"])
    if "data" in values:
        values["data"] = tuple(values["data"])
    return ExperimentSpec(**values)


def _spec_digest(spec: ExperimentSpec) -> str:
    payload = asdict(spec)
    del payload["out"]  # the destination is not part of the experiment
    payload["interventions"] = [sorted(iv.items())
                                for iv in spec.interventions]
    return config_digest(payload)


def _resolve_graph(spec: ExperimentSpec):
    if spec.graph is None:
        raise click.UsageError("--graph (or a config file entry) is required")
    if spec.graph in NAMED_GRAPHS:
        return named_graph(spec.graph, spec.d)
    path = Path(spec.graph)
    if path.exists():
        return parse_diagram(path.read_text())
    raise click.UsageError(
        f"{spec.graph!r} is neither a named diagram nor a file; "
        f"named diagrams: {', '.join(NAMED_GRAPHS)}")


def _resolve_query(spec: ExperimentSpec):
    if spec.query is None:
        raise click.UsageError("--query (or a config file entry) is required")
    return parse_query(spec.query)


def _resolve_data(spec: ExperimentSpec, g):
    """Load manifests, or sample a ground truth and draw from it.

    Returns ``(DatasetCollection, ground_truth_or_None)``.
    """
    if spec.data:
        return DatasetCollection(tuple(load_dataset(p) for p in spec.data)), None
    scm, data = sample_ground_truth(g, spec.r, spec.n, spec.interventions,
                                    spec.seed, spec.positivity)
    return data, scm


def _train_cfg(spec: ExperimentSpec, purpose: str) -> tr.TrainConfig:
    if spec.backend == "gan":
        base = tr.TrainConfig() if purpose == "identify" else tr.ESTIMATE_DEFAULTS
    else:
        base = tr.MLE_DEFAULTS if purpose == "identify" \
            else tr.MLE_ESTIMATE_DEFAULTS
    updates = {"seed": spec.seed}
    for name in ("epochs", "lr", "batch"):
        if getattr(spec, name) is not None:
            updates[name] = getattr(spec, name)
    return replace(base, **updates)


def _ensure_out(spec: ExperimentSpec) -> Path:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt_cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _write_csv(path, rows, digest, drop=("wall_ms",)) -> None:
    """Rows to CSV with a config-digest comment line; floats via repr."""
    rows = [{k: v for k, v in row.items() if k not in drop} for row in rows]
    names = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        fh.write(f"# config {digest}\n")
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt_cell(v) for k, v in row.items()})


def _intervention_tag(iv: dict) -> str:
    if not iv:
        return "obs"
    return "do_" + "_".join(f"{v}{x}" for v, x in sorted(iv.items()))


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


_FAILURES = (ScmError, QueryError, NcmError, DiagramError, IdentifyError,
             tr.TrainingDiverged, OSError, ValueError, KeyError)


def _report_errors(fn):
    """Convert failures into a JSON body on stderr and exit code 1."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except _FAILURES as e:
            click.echo(json.dumps({"error": type(e).__name__,
                                   "message": str(e)}), err=True)
            sys.exit(1)
    return wrapper


def _shared_options(fn):
    opts = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False),
                     default=None,
                     help="JSON experiment spec; flags override its values."),
        click.option("--graph", default=None,
                     help="Named diagram or a diagram file."),
        click.option("--query", default=None,
                     help="Query text, e.g. 'P(Y[X=1]=1)' or 'ate(X,Y)'."),
        click.option("--data", multiple=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Dataset manifest JSON (repeatable)."),
        click.option("--intervention", "interventions", multiple=True,
                     help="Regime for generated data when --data is absent, "
                          "e.g. 'X=1'; 'obs' for none (repeatable)."),
        click.option("-n", "--n", type=int, default=None,
                     help="Rows per generated dataset."),
        click.option("--d", type=int, default=None,
                     help="Z dimension for named diagrams."),
        click.option("--r", type=int, default=None,
                     help="Noise regions per axis in the sampled ground truth."),
        click.option("--positivity/--no-positivity", "positivity",
                     default=None,
                     help="Require generated data to cover its state space."),
        click.option("--backend", type=click.Choice(list(BACKENDS)),
                     default=None),
        click.option("--epochs", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--batch", type=int, default=None),
        click.option("--eval-m", "eval_m", type=int, default=None,
                     help="Monte Carlo samples for final estimates."),
        click.option("--seed", type=int, default=None),
        click.option("--out", default=None, help="Output directory."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__)
def main():
    """Counterfactual identification and estimation from arbitrary data."""


# -- generate -----------------------------------------------------------------


@main.command()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--graph", default=None)
@click.option("--intervention", "interventions", multiple=True,
              help="Dataset regime, e.g. 'X=1'; 'obs' for none (repeatable).")
@click.option("-n", "--n", type=int, default=None)
@click.option("--d", type=int, default=None)
@click.option("--r", type=int, default=None)
@click.option("--positivity/--no-positivity", "positivity", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", default=None)
@_report_errors
def generate(config, **cli):
    """Sample a synthetic ground truth and draw datasets from it."""
    spec = _load_spec(config, **cli)
    g = _resolve_graph(spec)
    scm, data = sample_ground_truth(g, spec.r, spec.n, spec.interventions,
                                    spec.seed, spec.positivity)
    out = _ensure_out(spec)
    digest = _spec_digest(spec)
    (out / "scm.json").write_text(scm_to_json(scm) + "\n")
    entries = []
    for ds in data.datasets:
        tag = _intervention_tag(dict(ds.intervention))
        save_dataset(ds, out / f"data_{tag}.csv", out / f"data_{tag}.json")
        entries.append(f"data_{tag}.json")
        click.echo(f"wrote data_{tag}.csv ({ds.n} rows)")
    manifest = {"graph": format_diagram(g), "scm": "scm.json",
                "datasets": entries, "seed": spec.seed,
                "config_digest": digest}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    click.echo(f"wrote scm.json and manifest.json to {out}")


# -- identify -----------------------------------------------------------------


def _gap_series(logs: dict) -> list[list[float]]:
    """Per-rerun |max-estimate - min-estimate| per epoch from training logs."""
    series = []
    for rerun in sorted({r for r, _ in logs}):
        hi = logs.get((rerun, "maximize"))
        lo = logs.get((rerun, "minimize"))
        if hi is None or lo is None:
            continue
        series.append([abs(a["query_estimate"] - b["query_estimate"])
                       for a, b in zip(hi, lo)])
    return series


def _gap_plot(path, logs: dict, tau: float) -> None:
    series = _gap_series(logs)
    if not series:
        return
    epochs = max(len(s) for s in series)
    plotted = []
    for p in (10, 50, 90):
        ys = []
        for t in range(epochs):
            vals = [s[t] for s in series if t < len(s) and math.isfinite(s[t])]
            ys.append(float(np.percentile(vals, p)) if vals else float("nan"))
        plotted.append((f"p{p}", list(range(epochs)), ys))
    plotted.append(("tau", [0, max(epochs - 1, 1)], [tau, tau]))
    line_plot(path, plotted, title="max-min query gap",
              xlabel="epoch", ylabel="gap")


def _write_truth(out: Path, scm, q) -> Optional[float]:
    (out / "scm.json").write_text(scm_to_json(scm) + "\n")
    try:
        truth = enumerate_query(scm, q)
    except ZeroProbabilityError:
        truth = None
    (out / "ground_truth.json").write_text(
        json.dumps({"query": format_query(q), "value": truth},
                   sort_keys=True) + "\n")
    return truth


@main.command()
@_shared_options
@click.option("--tau", type=float, default=None,
              help="Identification gap threshold.")
@click.option("--reruns", type=int, default=None)
@_report_errors
def identify(config, **cli):
    """Decide whether the query is identifiable from the given data.

    Exit code 0 means Identified, 2 NotIdentified, 1 failure.
    """
    spec = _load_spec(config, **cli)
    g = _resolve_graph(spec)
    q = _resolve_query(spec)
    data, scm = _resolve_data(spec, g)
    cfg = IdentifyConfig(tau=spec.tau, reruns=spec.reruns,
                         eval_m=spec.eval_m, backend=spec.backend,
                         train=_train_cfg(spec, "identify"))
    out = _ensure_out(spec)
    digest = _spec_digest(spec)
    logs: dict = {}
    verdict = neural_id(
        g, data, q, cfg, seed=spec.seed,
        log_sink=lambda rerun, direction, rows:
            logs.__setitem__((rerun, direction), rows))
    (out / "verdict.json").write_text(verdict.to_json() + "\n")
    for (rerun, direction), rows in sorted(logs.items()):
        _write_csv(out / f"train_r{rerun}_{direction}.csv", rows, digest)
    _gap_plot(out / "gaps.svg", logs, cfg.tau)
    if scm is not None:
        _write_truth(out, scm, q)
    line = f"{verdict.status}: gap={verdict.gap:.4f} tau={verdict.tau:g}"
    if verdict.estimate is not None:
        line += f" estimate={verdict.estimate:.4f} (stderr {verdict.stderr:.4f})"
    click.echo(line)
    click.echo(f"artifacts in {out}")
    sys.exit(0 if verdict.identified else 2)


# -- estimate -----------------------------------------------------------------


def _fit_one(spec, g, q, data, cfg, run_seed):
    """Train one fit-only model and return (value, stderr, log rows)."""
    init_ss, train_ss, eval_ss = np.random.SeedSequence(run_seed).spawn(3)
    cfg = replace(cfg, seed=_seed_int(train_ss))
    if spec.backend == "gan":
        model = build_gncm(g, seed=_seed_int(init_ss))
        model, rows = tr.train_gan_ncm(model, data, None, cfg)
        value, stderr = estimate_query(model, q, spec.eval_m,
                                       _seed_int(eval_ss))
    else:
        model = build_mle_ncm(g, seed=_seed_int(init_ss))
        model, rows = tr.train_mle_ncm(model, data, None, cfg)
        value, stderr = estimate_query_mle(model, q, spec.eval_m,
                                           _seed_int(eval_ss))
    return value, stderr, rows


def _fit_plot(path, rows, backend) -> None:
    prefix = "dp_" if backend == "gan" else "nll_"
    keys = [k for k in rows[0] if k.startswith(prefix)]
    xs = [row["epoch"] for row in rows]
    series = [(k, xs, [row[k] for row in rows]) for k in keys]
    label = "critic distance" if backend == "gan" else "negative log-likelihood"
    line_plot(path, series, title="training fit", xlabel="epoch", ylabel=label)


def _mean_ci(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, float("nan")
    half = _T95.get(len(values) - 1, 1.96) * statistics.stdev(values) \
        / math.sqrt(len(values))
    return mean, half


@main.command()
@_shared_options
@click.option("--trials", type=int, default=None,
              help="Independent ground truths per setting (sweep mode).")
@click.option("--sweep", is_flag=True, default=False,
              help="Error-vs-n sweep over exponentially spaced sample sizes "
                  "(requires generated data).")
@_report_errors
def estimate(config, sweep, **cli):
    """Fit the data (no query loss) and report a Monte Carlo estimate."""
    spec = _load_spec(config, **cli)
    g = _resolve_graph(spec)
    q = _resolve_query(spec)
    cfg = _train_cfg(spec, "estimate")
    out = _ensure_out(spec)
    digest = _spec_digest(spec)

    if sweep:
        if spec.data:
            raise click.UsageError("--sweep generates its own data; "
                                   "drop --data")
        _estimate_sweep(spec, g, q, cfg, out, digest)
        return

    data, scm = _resolve_data(spec, g)
    value, stderr, rows = _fit_one(spec, g, q, data, cfg, spec.seed)
    _write_csv(out / "train_log.csv", rows, digest)
    _fit_plot(out / "fit.svg", rows, spec.backend)
    payload = {"backend": spec.backend, "value": value, "stderr": stderr,
               "eval_m": spec.eval_m, "epochs": cfg.epochs,
               "query": format_query(q), "seed": spec.seed,
               "config_digest": digest}
    if scm is not None:
        truth = _write_truth(out, scm, q)
        payload["oracle"] = truth
        if truth is not None:
            payload["abs_error"] = abs(value - truth)
    (out / "estimate.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    click.echo(f"{format_query(q)} = {value:.6f} (stderr {stderr:.6f})")
    click.echo(f"artifacts in {out}")


def _estimate_sweep(spec, g, q, cfg, out: Path, digest: str) -> None:
    """Mean |estimate - truth| at exponentially spaced n, fresh ground
    truth per trial."""
    rows = []
    for n in estimation_sweep_sizes():
        for trial in range(spec.trials):
            run_seed = spec.seed * 100_003 + n * 13 + trial
            scm, data = sample_ground_truth(
                g, spec.r, n, spec.interventions, run_seed, spec.positivity)
            try:
                truth = enumerate_query(scm, q)
            except ZeroProbabilityError:
                rows.append({"n": n, "trial": trial, "truth": float("nan"),
                             "estimate": float("nan"), "stderr": float("nan"),
                             "abs_error": float("nan")})
                continue
            value, stderr, _ = _fit_one(spec, g, q, data, cfg, run_seed)
            rows.append({"n": n, "trial": trial, "truth": truth,
                         "estimate": value, "stderr": stderr,
                         "abs_error": abs(value - truth)})
            click.echo(f"n={n} trial {trial}: |err|={abs(value - truth):.4f}")
    _write_csv(out / "sweep.csv", rows, digest)
    summary = []
    for n in estimation_sweep_sizes():
        errs = [row["abs_error"] for row in rows
                if row["n"] == n and math.isfinite(row["abs_error"])]
        mean, half = _mean_ci(errs) if errs else (float("nan"), float("nan"))
        summary.append({"n": n, "mean_abs_error": mean, "ci95": half,
                        "trials": len(errs)})
    _write_csv(out / "sweep_summary.csv", summary, digest)
    line_plot(out / "sweep.svg",
              [("mean |error|", [s["n"] for s in summary],
                [s["mean_abs_error"] for s in summary])],
              title="estimation error vs sample size", xlabel="n",
              ylabel="mean |error|", logx=True)
    click.echo(f"wrote sweep.csv, sweep_summary.csv, sweep.svg to {out}")


# -- oracle -------------------------------------------------------------------


@main.command()
@click.option("--scm", "scm_ref", required=True,
              help="Ground-truth SCM JSON file, or one of: "
                   + ", ".join(sorted(_FIXTURE_SCMS)))
@click.option("--query", required=True)
@_report_errors
def oracle(scm_ref, query):
    """Evaluate a query exactly on a tabular model by enumeration."""
    if scm_ref in _FIXTURE_SCMS:
        m = _FIXTURE_SCMS[scm_ref]()
    elif Path(scm_ref).exists():
        m = scm_from_json(Path(scm_ref).read_text())
    else:
        raise click.UsageError(
            f"{scm_ref!r} is neither a built-in model nor a file")
    value = enumerate_query(m, parse_query(query))
    click.echo(f"{value:.12g}")


# -- benchmarks ---------------------------------------------------------------


@main.command("bench-runtime")
@click.option("--graph", default="grid-backdoor")
@click.option("--dims", default="1,2,3,4,5,6,7",
              help="Comma-separated Z dimensions.")
@click.option("--backends", default="gan,mle")
@click.option("--trials", type=int, default=4)
@click.option("--epochs", type=int, default=100)
@click.option("-n", "--n", type=int, default=10_000)
@click.option("--batch", type=int, default=1000)
@click.option("--mle-mc-samples", type=int, default=200,
              help="Noise draws per likelihood evaluation.")
@click.option("--seed", type=int, default=0)
@click.option("--out", default=".")
@_report_errors
def bench_runtime(graph, dims, backends, trials, epochs, n, batch,
                  mle_mc_samples, seed, out):
    """Wall time of the first training epochs as Z's dimension grows.

    Runs strictly serially so the timings mean something.  Timing values
    naturally differ between runs; everything else is seed-determined.
    """
    dims_t = tuple(int(x) for x in dims.split(","))
    backends_t = tuple(b.strip() for b in backends.split(","))
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    digest = config_digest({"graph": graph, "dims": dims_t,
                            "backends": backends_t, "trials": trials,
                            "epochs": epochs, "n": n, "batch": batch,
                            "mle_mc_samples": mle_mc_samples, "seed": seed})
    rows = runtime_bench(
        graph, dims_t, backends_t, trials, epochs, n, seed=seed, batch=batch,
        mle_mc_samples=mle_mc_samples,
        progress=lambda row: click.echo(
            f"{row['backend']} d={row['d']} trial {row['trial']}: "
            f"{row['seconds']:.2f}s"))
    _write_csv(outdir / "runtime.csv", rows, digest)
    summary = []
    for backend in backends_t:
        for d in dims_t:
            times = [row["seconds"] for row in rows
                     if row["backend"] == backend and row["d"] == d]
            mean, half = _mean_ci(times)
            summary.append({"backend": backend, "d": d, "mean_s": mean,
                            "ci95": half, "trials": len(times)})
    _write_csv(outdir / "runtime_summary.csv", summary, digest)
    line_plot(outdir / "runtime.svg",
              [(b, [s["d"] for s in summary if s["backend"] == b],
                [s["mean_s"] for s in summary if s["backend"] == b])
               for b in backends_t],
              title=f"{epochs}-epoch training time", xlabel="dim(Z)",
              ylabel="seconds", logy=True)
    click.echo(f"wrote runtime.csv, runtime_summary.csv, runtime.svg "
               f"to {outdir}")


@main.command("bench-grid")
@click.option("--graphs", default=None,
              help="Comma-separated subset of the benchmark diagrams.")
@click.option("--queries", default=None,
              help=f"Comma-separated subset of {'/'.join(GRID_QUERIES)}.")
@click.option("--backend", type=click.Choice(list(BACKENDS)), default="gan")
@click.option("--tau", type=float, default=0.05)
@click.option("--reruns", type=int, default=4)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("-n", "--n", type=int, default=10_000)
@click.option("--d", type=int, default=1)
@click.option("--r", type=int, default=2)
@click.option("--eval-m", "eval_m", type=int, default=1_000_000)
@click.option("--seed", type=int, default=0)
@click.option("--out", default=".")
@_report_errors
def bench_grid(graphs, queries, backend, tau, reruns, epochs, lr, n, d, r,
               eval_m, seed, out):
    """The identifiability grid: diagrams x queries x data regimes.

    Each cell samples its own ground truth, runs the full identification
    procedure, and is scored against exact enumeration.  Per-cell training
    logs land under logs/ with raw per-epoch gaps and a 100-epoch trailing
    mean.
    """
    train = tr.TrainConfig() if backend == "gan" else tr.MLE_DEFAULTS
    updates = {}
    if epochs is not None:
        updates["epochs"] = epochs
    if lr is not None:
        updates["lr"] = lr
    if updates:
        train = replace(train, **updates)
    cfg = IdentifyConfig(tau=tau, reruns=reruns, eval_m=eval_m,
                         backend=backend, train=train)
    graph_list = tuple(graphs.split(",")) if graphs else None
    query_list = tuple(queries.split(",")) if queries else None
    outdir = Path(out)
    (outdir / "logs").mkdir(parents=True, exist_ok=True)
    digest = config_digest({"backend": backend, "tau": tau, "reruns": reruns,
                            "epochs": train.epochs, "lr": train.lr, "n": n,
                            "d": d, "r": r, "eval_m": eval_m, "seed": seed,
                            "graphs": graph_list, "queries": query_list})
    cell_logs: dict = {}
    kwargs = {}
    if graph_list is not None:
        kwargs["graphs"] = graph_list
    if query_list is not None:
        kwargs["queries"] = query_list
    rows = grid_bench(
        cfg, n=n, d=d, r=r, seed=seed,
        log_sink=lambda tag, rerun, direction, log_rows:
            cell_logs.setdefault(tag, {}).__setitem__(
                (rerun, direction), log_rows),
        progress=lambda row: click.echo(
            f"{row['graph']} {row['query']} {row['regime']}: {row['status']}"
            + (f" (gap {row['gap']:.4f})"
               if isinstance(row["gap"], float) else "")),
        **kwargs)
    _write_csv(outdir / "grid.csv", rows, digest)
    matrix = {}
    for row in rows:
        matrix.setdefault((row["graph"], row["regime"]), {})[row["query"]] = \
            row["status"]
    matrix_rows = [{"graph": graph, "regime": regime, **cells}
                   for (graph, regime), cells in sorted(matrix.items())]
    _write_csv(outdir / "grid_matrix.csv", matrix_rows, digest)
    for tag, logs in sorted(cell_logs.items()):
        _write_csv(outdir / "logs" / (tag.replace("/", "_") + ".csv"),
                   _cell_gap_rows(logs), digest)
    click.echo(f"wrote grid.csv, grid_matrix.csv and logs/ to {outdir}")


def _cell_gap_rows(logs: dict) -> list[dict]:
    series = _gap_series(logs)
    if not series:
        return []
    epochs = max(len(s) for s in series)
    rows = []
    means = []
    for t in range(epochs):
        row = {"epoch": t}
        finite = []
        for i, s in enumerate(series):
            v = s[t] if t < len(s) else float("nan")
            row[f"gap_r{i}"] = v
            if math.isfinite(v):
                finite.append(v)
        mean_t = sum(finite) / len(finite) if finite else float("nan")
        means.append(mean_t)
        row["gap_mean"] = mean_t
        rows.append(row)
    for row, smoothed in zip(rows, trailing_mean(means, 100)):
        row["gap_trail100"] = smoothed
    return rows


if __name__ == "__main__":
    main()
