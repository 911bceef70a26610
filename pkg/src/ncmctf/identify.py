"""Deciding identifiability by training opposing models.

A query is declared identified when models trained to maximize and to
minimize it, under the constraint of fitting every input dataset, still
agree: the reported gap is the median of ``|q_max - q_min|`` across
independent reruns, compared against a threshold ``tau``.  When the verdict
is Identified, the estimate comes from the minimizing model of the
representative rerun (the one whose gap sits closest to the median).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from . import train as tr
from .graph import CausalDiagram, format_diagram
from .ncm import build_gncm, build_mle_ncm, part_counts
from .query import CounterfactualQuery, format_query, unnest_cut
from .scm import DatasetCollection, ZeroProbabilityError

__all__ = [
    "IdentifyConfig",
    "IdentificationVerdict",
    "IdentifyError",
    "neural_id",
    "gap_test",
    "estimate_query",
    "estimate_query_mle",
    "config_digest",
    "worker_count",
]

BACKENDS = ("gan", "mle")


class IdentifyError(RuntimeError):
    """A rerun failed; the message names the rerun, direction, and cause."""


@dataclass(frozen=True)
class IdentifyConfig:
    tau: float = 0.05
    reruns: int = 4
    eval_m: int = 1_000_000
    backend: str = "gan"
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    critic: tr.CriticConfig = field(default_factory=tr.CriticConfig)

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")
        if self.reruns < 1:
            raise ValueError("reruns must be >= 1")
        if self.eval_m < 1:
            raise ValueError("eval_m must be >= 1")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")


@dataclass(frozen=True)
class IdentificationVerdict:
    status: str  # "Identified" | "NotIdentified"
    q_min: float
    q_max: float
    gap: float
    tau: float
    estimate: Optional[float]  # present iff Identified
    stderr: Optional[float]
    reruns: tuple[dict, ...]  # {"seed": int, "gap": float, "q_min", "q_max"}
    config_digest: str

    @property
    def identified(self) -> bool:
        return self.status == "Identified"

    def to_json(self) -> str:
        payload = {
            "status": self.status,
            "q_min": self.q_min,
            "q_max": self.q_max,
            "gap": self.gap,
            "tau": self.tau,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "reruns": [dict(r) for r in self.reruns],
            "config_digest": self.config_digest,
        }
        return json.dumps(payload, sort_keys=True, indent=2)


def gap_test(q_min: float, q_max: float, tau: float) -> bool:
    """True iff the two optimized query values agree: |q_max - q_min| < tau."""
    return abs(q_max - q_min) < tau


def config_digest(payload) -> str:
    """Short stable digest of a JSON-serializable configuration."""
    raw = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(raw).hexdigest()[:12]


def worker_count(tasks: int) -> int:
    """Pool size: capped by NCMCTF_THREADS (default 1, timing-safe)."""
    cap = os.environ.get("NCMCTF_THREADS")
    limit = int(cap) if cap else 1
    return max(1, min(tasks, limit))


def estimate_query(
    ncm,
    q: CounterfactualQuery,
    m_samples: int = 1_000_000,
    seed: Union[int, np.random.Generator] = 0,
) -> tuple[float, float]:
    """Monte Carlo query value with a delta-method standard error.

    Each part is a ratio of acceptance counts over ``m_samples`` hard-mode
    draws (fresh draws per part, so parts are independent); the variance of
    a part is ``p(1-p)/den`` and part variances add.
    """
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(np.random.SeedSequence(seed))
    total = 0.0
    var = 0.0
    for part in q.parts:
        num, den = part_counts(ncm, part, m_samples, rng)
        if den == 0:
            raise ZeroProbabilityError(
                f"conditioning event of part {part!r} was never hit in "
                f"{m_samples} samples")
        p = num / den
        total += part.sign * p
        var += p * (1.0 - p) / den
    return total, math.sqrt(var)


def estimate_query_mle(model, q: CounterfactualQuery, m_samples: int,
                  seed: int, chunk: int = 1 << 12) -> tuple[float, float]:
    """Likelihood-model query value by averaging per-draw probabilities.

    Parts use disjoint noise chunks, so the per-part ratio variances (delta
    method over the draw-level numerator/denominator moments) add.
    """
    q = unnest_cut(q, model.diagram)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    total = 0.0
    var = 0.0
    for part in q.parts:
        sums = np.zeros(5)  # n, den, num, den^2, num^2 (+cross below)
        cross = 0.0
        left = m_samples
        while left > 0:
            n = min(chunk, left)
            left -= n
            noise = model.draw_noise(rng, n)
            noise_t = {k: ad.Tensor(v) for k, v in noise.items()}
            num_t, den_t = tr.mle_part_draws(model, part, noise_t, n, {})
            num = num_t.data.reshape(-1).astype(np.float64)
            den = den_t.data.reshape(-1).astype(np.float64) \
                if den_t is not None else np.ones(n)
            sums += (n, den.sum(), num.sum(), (den * den).sum(),
                     (num * num).sum())
            cross += (num * den).sum()
        m, dsum, nsum, d2, n2 = sums
        if dsum <= 0:
            raise ZeroProbabilityError(
                f"conditioning event of part {part!r} has zero probability "
                "under the model")
        nbar, dbar = nsum / m, dsum / m
        p = nbar / dbar
        vn = n2 / m - nbar ** 2
        vd = d2 / m - dbar ** 2
        cnd = cross / m - nbar * dbar
        var += max(0.0, (vn - 2 * p * cnd + p * p * vd) / (dbar ** 2 * m))
        total += part.sign * p
    return total, math.sqrt(var)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def _run_direction(g, data, q, cfg: IdentifyConfig, direction: str,
                   rerun: int, task_ss: np.random.SeedSequence, log_sink):
    init_ss, train_ss, eval_ss = task_ss.spawn(3)
    train_cfg = tr.TrainConfig(**{**asdict(cfg.train),
                                  "direction": direction,
                                  "seed": _int_seed(train_ss)})
    try:
        if cfg.backend == "gan":
            model = build_gncm(g, seed=_int_seed(init_ss))
            _, log = tr.train_gan_ncm(model, data, q, train_cfg, cfg.critic)
            result = estimate_query(model, q, cfg.eval_m, _int_seed(eval_ss))
        else:
            model = build_mle_ncm(g, seed=_int_seed(init_ss))
            _, log = tr.train_mle_ncm(model, data, q, train_cfg)
            result = estimate_query_mle(model, q, cfg.eval_m, _int_seed(eval_ss))
    except (tr.TrainingDiverged, ZeroProbabilityError) as e:
        raise IdentifyError(
            f"rerun {rerun}, direction {direction}: {e}") from e
    if log_sink is not None:
        log_sink(rerun, direction, log)
    return result


def neural_id(
    g: CausalDiagram,
    data: DatasetCollection,
    q: CounterfactualQuery,
    cfg: IdentifyConfig = IdentifyConfig(),
    seed: int = 0,
    *,
    log_sink=None,
) -> IdentificationVerdict:
    """Train opposing models per rerun and apply the gap test.

    Reruns (and the two directions within each) are independent tasks with
    their own seed streams; they may run on a worker pool without changing
    the result.  The verdict aggregates per-rerun gaps by median.
    ``log_sink(rerun, direction, rows)`` receives each task's training log;
    call order follows task completion, so sinks must not care about order.
    """
    for ds in data.datasets:
        for v in ds.intervention_dict():
            if v not in g:
                raise ValueError(f"dataset intervenes on unknown vertex {v!r}")
    master = np.random.SeedSequence(seed)
    rerun_seeds = master.spawn(cfg.reruns)
    tasks = []
    for r, rss in enumerate(rerun_seeds):
        max_ss, min_ss = rss.spawn(2)
        tasks.append((r, "maximize", max_ss))
        tasks.append((r, "minimize", min_ss))

    def run(task):
        r, direction, task_ss = task
        return _run_direction(g, data, q, cfg, direction, r, task_ss, log_sink)

    workers = worker_count(len(tasks))
    if workers == 1:
        outcomes = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, tasks))

    records = []
    for r in range(cfg.reruns):
        (qmax, _), (qmin, se_min) = outcomes[2 * r], outcomes[2 * r + 1]
        records.append({
            "seed": _int_seed(rerun_seeds[r]),
            "gap": abs(qmax - qmin),
            "q_min": qmin,
            "q_max": qmax,
            "stderr_min": se_min,
        })
    median_gap = statistics.median(rec["gap"] for rec in records)
    identified = median_gap < cfg.tau
    rep = min(range(cfg.reruns),
              key=lambda r: (abs(records[r]["gap"] - median_gap), r))
    chosen = records[rep]
    digest = config_digest({
        "graph": format_diagram(g),
        "query": format_query(q),
        "interventions": [ds.intervention_dict() for ds in data.datasets],
        "config": asdict(cfg),
        "seed": seed,
    })
    return IdentificationVerdict(
        status="Identified" if identified else "NotIdentified",
        q_min=chosen["q_min"],
        q_max=chosen["q_max"],
        gap=chosen["gap"],
        tau=cfg.tau,
        estimate=chosen["q_min"] if identified else None,
        stderr=chosen["stderr_min"] if identified else None,
        reruns=tuple({"seed": rec["seed"], "gap": rec["gap"],
                      "q_min": rec["q_min"], "q_max": rec["q_max"]}
                     for rec in records),
        config_digest=digest,
    )
