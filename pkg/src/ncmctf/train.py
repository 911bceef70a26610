"""Training loops: the adversarial critic game and the likelihood variant.

The adversarial loop alternates, per epoch and per dataset, one critic update
(data batch vs generated batch, one-sided gradient penalty: only gradient
norms above the Lipschitz target ``c`` are penalized) with one generator
update on the summed critic scores plus ``lambda(t)`` times the query loss.  The query loss follows the log-loss
table: when minimizing, positive query parts contribute ``-log(1 - p)`` and
negative parts ``-log(p)`` per accepted Monte Carlo sample; maximizing swaps
the roles.  ``lambda`` decays exponentially and is scaled by the squared
number of datasets.

The likelihood loop trains softmax-head models full batch on the exact
per-dataset negative log-likelihood (noise-averaged), with the query entering
as ``-lambda log q`` (maximize) or ``-lambda log(1-q)`` (minimize).
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .graph import CausalDiagram
from .ncm import MleNcm, NcmError, NeuralCausalModel, _glorot
from .query import CounterfactualQuery, PotentialValue, QueryPart, unnest_cut
from .scm import DatasetCollection, values_to_bits

__all__ = [
    "TrainConfig",
    "CriticConfig",
    "Critic",
    "Adam",
    "TrainingDiverged",
    "build_critic",
    "critic_loss",
    "query_loss",
    "part_event_probabilities",
    "lam_value",
    "train_gan_ncm",
    "train_mle_ncm",
    "mle_row_likelihood",
    "mle_part_draws",
    "mle_query_prob",
    "MLE_DEFAULTS",
    "ESTIMATE_DEFAULTS",
    "MLE_ESTIMATE_DEFAULTS",
]

_EPS = 1e-7
_MAX_NESTING = 32

DIRECTIONS = ("minimize", "maximize", "fit-only")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings shared by both training loops.

    ``mc_samples`` is the number of accepted Monte Carlo samples used per
    query part per epoch (adversarial loop) or the number of noise draws in
    the likelihood average.  The lambda endpoints are pre-scaling; the loop
    multiplies them by the squared dataset count.
    """

    lr: float = 2e-5
    epochs: int = 1000
    batch: int = 256
    mc_samples: int = 10_000
    lam_start: float = 1e-4
    lam_end: float = 1e-5
    direction: str = "fit-only"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1 or self.mc_samples < 1:
            raise ValueError("batch and mc_samples must be >= 1")
        if not (self.lam_start >= self.lam_end >= 0):
            raise ValueError("need lam_start >= lam_end >= 0")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")


# Defaults for the likelihood backend.
MLE_DEFAULTS = TrainConfig(lr=4e-3, lam_start=1.0, lam_end=1e-3)

# Defaults for estimation runs (fit the datasets, no query loss, larger
# batches, longer horizon).  The adversarial learning rate is raised from
# the identification default: with a fixed epoch budget in place of early
# stopping, 2e-5 leaves the fit visibly short of convergence on the
# benchmark graphs while 1e-4 reaches it well inside 3000 epochs.
ESTIMATE_DEFAULTS = TrainConfig(lr=1e-4, epochs=3000, batch=1000,
                                direction="fit-only")
MLE_ESTIMATE_DEFAULTS = TrainConfig(lr=4e-3, epochs=3000, lam_start=1.0,
                                    lam_end=1e-3, direction="fit-only")


@dataclass(frozen=True)
class CriticConfig:
    """Critic network and gradient-penalty settings."""

    lam_gp: float = 10.0
    lipschitz_c: float = 0.01
    width_per_vertex: int = 64
    hidden_layers: int = 2

    def __post_init__(self):
        if self.lam_gp < 0:
            raise ValueError("lam_gp must be >= 0")
        if self.lipschitz_c <= 0:
            raise ValueError("lipschitz_c must be positive")
        if self.width_per_vertex < 1 or self.hidden_layers < 1:
            raise ValueError("critic sizes must be positive")


class TrainingDiverged(RuntimeError):
    """Raised when a loss becomes non-finite; message carries diagnostics."""


def lam_value(cfg: TrainConfig, n_datasets: int, t: int) -> float:
    """Query-loss weight at epoch ``t``: exponential decay times |Z| squared."""
    scale = float(n_datasets) ** 2
    start, end, T = cfg.lam_start, cfg.lam_end, cfg.epochs
    if T == 1 or start == end:
        return start * scale
    if start == 0.0:
        return 0.0
    frac = t / (T - 1)
    if end > 0.0:
        return start * (end / start) ** frac * scale
    return start * (1.0 - frac) * scale  # no geometric path to exactly zero


class Adam:
    """Adaptive-moment updates over a fixed parameter list, in place."""

    def __init__(self, params: Sequence[ad.Tensor], cfg: TrainConfig):
        self.params = list(params)
        self.lr = cfg.lr
        self.beta1, self.beta2, self.eps = cfg.beta1, cfg.beta2, cfg.adam_eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


class Critic:
    """Shared critic over concatenated vertex bits plus a one-hot dataset tag."""

    def __init__(self, layers: list):
        self.layers = layers

    def parameters(self) -> list[ad.Tensor]:
        out = []
        for layer in self.layers:
            out.extend(t for t in layer[1:] if isinstance(t, ad.Tensor))
        return out

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        for layer in self.layers:
            kind = layer[0]
            if kind == "linear":
                x = ad.linear(x, layer[1], layer[2])
            elif kind == "layernorm":
                x = ad.layer_norm(x, layer[1], layer[2])
            else:
                x = ad.relu(x)
        return x


def build_critic(g: CausalDiagram, n_datasets: int, cfg: CriticConfig,
                 seed, dtype=np.float32) -> Critic:
    rng = np.random.default_rng(seed)
    in_dim = sum(g.dim(v) for v in g.vertices) + n_datasets
    width = cfg.width_per_vertex * len(g.vertices)
    layers: list = []
    prev = in_dim
    for _ in range(cfg.hidden_layers):
        layers.append(("linear",
                       ad.Tensor(_glorot(rng, prev, width, dtype), requires_grad=True),
                       ad.Tensor(np.zeros(width, dtype=dtype), requires_grad=True)))
        layers.append(("layernorm",
                       ad.Tensor(np.ones(width, dtype=dtype), requires_grad=True),
                       ad.Tensor(np.zeros(width, dtype=dtype), requires_grad=True)))
        layers.append(("relu",))
        prev = width
    layers.append(("linear",
                   ad.Tensor(_glorot(rng, prev, 1, dtype), requires_grad=True),
                   ad.Tensor(np.zeros(1, dtype=dtype), requires_grad=True)))
    return Critic(layers)


def critic_loss(critic: Critic, real: ad.Tensor, fake: ad.Tensor,
                interpolates: ad.Tensor, cfg: CriticConfig) -> tuple[ad.Tensor, float]:
    """Critic objective; also returns the plain Wasserstein part as a float.

    The penalty is one-sided: interpolate rows whose input-gradient norm
    stays at or below the Lipschitz target contribute nothing, rows above
    it pay the squared excess.  (Clamping gradient components elementwise
    instead biases the critic toward the all-zeros corner and reliably
    collapses the generator there; see the penalty tests.)
    """
    wass = ad.mean(critic.forward(fake)) - ad.mean(critic.forward(real))
    if cfg.lam_gp == 0.0:
        return wass, float(wass.data)
    scores = critic.forward(interpolates)
    (gin,) = ad.grad(ad.reduce_sum(scores), [interpolates], create_graph=True)
    pen = ad.mean(ad.relu(ad.l2norm(gin, axis=1) - cfg.lipschitz_c) ** 2)
    return wass + pen * cfg.lam_gp, float(wass.data)


def _soft_world(ncm: NeuralCausalModel, noise: dict, n: int, ivs: tuple,
                memo: dict, depth: int = 0) -> dict[str, ad.Tensor]:
    """Soft counterfactual world on the tape, nested values fed as soft bits."""
    if depth > _MAX_NESTING:
        raise NcmError("cyclic nesting specification")
    if ivs in memo:
        return memo[ivs]
    resolved: dict = {}
    for target, value in ivs:
        if isinstance(value, PotentialValue):
            inner = _soft_world(ncm, noise, n, value.interventions, memo, depth + 1)
            value = inner[value.var]
        resolved[target] = value
    world = ncm.forward_tensors(noise, n, resolved)
    memo[ivs] = world
    return world


def part_event_probabilities(ncm: NeuralCausalModel, part: QueryPart,
                             noise: dict[str, np.ndarray]) -> ad.Tensor:
    """Per-draw soft probability of the part's outcome event.

    ``noise`` holds draws already conditioned (rejection happens upstream);
    the result multiplies, over outcome terms and bits, the sigmoid
    probability that each bit takes its target value.
    """
    n = next(iter(noise.values())).shape[0]
    noise_t = {k: ad.Tensor(v) for k, v in noise.items()}
    memo: dict = {}
    prob: Optional[ad.Tensor] = None
    for term in part.outcomes:
        world = _soft_world(ncm, noise_t, n, term.interventions, memo)
        bits = world[term.var]
        dim = ncm.diagram.dim(term.var)
        target = values_to_bits(np.asarray([term.value]), dim)[0]
        for j in range(dim):
            col = bits[:, j:j + 1]
            factor = col if target[j] else 1.0 - col
            prob = factor if prob is None else prob * factor
    if prob is None:
        raise NcmError("query part has no outcome terms")
    return ad.reshape(prob, (n,))


def query_loss(samples: Sequence[Optional[ad.Tensor]], q: CounterfactualQuery,
               direction: str) -> ad.Tensor:
    """Log-loss pushing the query value down (minimize) or up (maximize).

    ``samples[i]`` holds the soft event probabilities for part ``i`` (None
    when that part's conditioning event had no accepted draws; such parts
    contribute nothing).  Per-sample terms are summed, not averaged.
    """
    if direction not in ("minimize", "maximize"):
        raise ValueError("query_loss direction must be minimize or maximize")
    total: Optional[ad.Tensor] = None
    for part, p in zip(q.parts, samples):
        if p is None:
            continue
        clamped = ad.clip(p, _EPS, 1.0 - _EPS)
        push_down = (direction == "minimize") == (part.sign > 0)
        term = -ad.log(1.0 - clamped) if push_down else -ad.log(clamped)
        s = ad.reduce_sum(term)
        total = s if total is None else total + s
    if total is None:
        return ad.Tensor(np.zeros((), dtype=np.float32))
    return total


def _rows_in_order(ds, g: CausalDiagram) -> np.ndarray:
    """Dataset rows with columns permuted into diagram declaration order."""
    if set(ds.variables) != set(g.vertices):
        raise ValueError(
            f"dataset variables {ds.variables} do not match diagram vertices")
    if ds.variables == g.vertices:
        return ds.rows
    return ds.rows[:, [ds.variables.index(v) for v in g.vertices]]


def _real_bit_matrix(ds, g: CausalDiagram, dtype) -> np.ndarray:
    rows = _rows_in_order(ds, g)
    chunks = [values_to_bits(rows[:, i], g.dim(v))
              for i, v in enumerate(g.vertices)]
    return np.concatenate(chunks, axis=1).astype(dtype)


def _critic_input_np(bit_cols: dict[str, np.ndarray], g: CausalDiagram,
                     onehot: np.ndarray) -> np.ndarray:
    cols = [bit_cols[v] for v in g.vertices]
    cols.append(onehot)
    return np.concatenate(cols, axis=1)


def _critic_input_t(bit_cols: dict[str, ad.Tensor], g: CausalDiagram,
                    onehot: np.ndarray) -> ad.Tensor:
    cols = [bit_cols[v] for v in g.vertices]
    cols.append(ad.Tensor(onehot))
    return ad.concat(cols, axis=1)


def train_gan_ncm(
    ncm: NeuralCausalModel,
    data: DatasetCollection,
    query: Optional[CounterfactualQuery],
    cfg: TrainConfig,
    critic_cfg: CriticConfig = CriticConfig(),
    on_epoch=None,
) -> tuple[NeuralCausalModel, list[dict]]:
    """Adversarial training; mutates ``ncm`` in place and returns the log.

    One log row per epoch: ``epoch``, per-dataset Wasserstein estimates
    ``dp_<k>``, query loss ``dq``, ``lam``, the Monte Carlo ``query_estimate``
    from the soft samples (NaN when some part had no accepted draws),
    ``mc_accepted``, and ``wall_ms``.  ``on_epoch(epoch, ncm)``, when given,
    runs after each update; it must not touch the training RNG.
    """
    if len(data.datasets) == 0:
        raise ValueError("need at least one dataset")
    if cfg.direction != "fit-only" and query is None:
        raise ValueError(f"direction {cfg.direction!r} requires a query")
    g = ncm.diagram
    dtype = ncm.dtype
    ell = len(data.datasets)
    ss = np.random.SeedSequence(cfg.seed)
    critic_seed, loop_seed = ss.spawn(2)
    critic = build_critic(g, ell, critic_cfg, critic_seed, dtype)
    rng = np.random.default_rng(loop_seed)

    opt_gen = Adam(ncm.parameters(), cfg)
    opt_critic = Adam(critic.parameters(), cfg)

    real_bits = [_real_bit_matrix(ds, g, dtype) for ds in data.datasets]
    onehots = [np.zeros((cfg.batch, ell), dtype=dtype) for _ in range(ell)]
    for k, oh in enumerate(onehots):
        oh[:, k] = 1.0
    interventions = [ds.intervention_dict() for ds in data.datasets]

    use_query = query is not None and cfg.direction != "fit-only"
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lam = lam_value(cfg, ell, epoch)
        dp = []
        # critic updates, one per dataset
        for k, ds in enumerate(data.datasets):
            idx = rng.integers(0, ds.n, size=cfg.batch)
            real = np.concatenate([real_bits[k][idx], onehots[k]], axis=1)
            noise = ncm.draw_noise(rng, cfg.batch)
            fake_cols = ncm.forward_bits(noise, cfg.batch, interventions[k],
                                         mode="soft")
            fake = _critic_input_np(fake_cols, g, onehots[k])
            eps = rng.uniform(size=(cfg.batch, 1)).astype(dtype)
            interp = eps * real + (1.0 - eps) * fake
            loss, wass = critic_loss(critic, ad.Tensor(real), ad.Tensor(fake),
                                     ad.Tensor(interp, requires_grad=True),
                                     critic_cfg)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"critic loss non-finite at epoch {epoch}, dataset {k}, "
                    f"lam={lam:.3g}")
            grads = ad.grad(loss, critic.parameters())
            opt_critic.step(grads)
            dp.append(-wass)  # E[D(real)] - E[D(fake)] after the update batch

        # generator update on fresh batches
        gen_loss: Optional[ad.Tensor] = None
        for k, ds in enumerate(data.datasets):
            noise = ncm.draw_noise(rng, cfg.batch)
            noise_t = {name: ad.Tensor(v) for name, v in noise.items()}
            cols = ncm.forward_tensors(noise_t, cfg.batch, interventions[k])
            scores = critic.forward(_critic_input_t(cols, g, onehots[k]))
            term = -ad.mean(scores)
            gen_loss = term if gen_loss is None else gen_loss + term

        dq = 0.0
        accepted_total = 0
        estimate = float("nan")
        if use_query:
            samples: list[Optional[ad.Tensor]] = []
            part_means = []
            for part in query.parts:
                pnoise, acc, _ = ncm.ctf_noise(part.conditions, cfg.mc_samples,
                                               rng, allow_short=True)
                accepted_total += acc
                if acc == 0:
                    samples.append(None)
                    part_means.append(None)
                    continue
                probs = part_event_probabilities(ncm, part, pnoise)
                samples.append(probs)
                part_means.append(float(probs.data.mean()))
            ql = query_loss(samples, query, cfg.direction)
            dq = float(ql.data)
            gen_loss = gen_loss + ql * lam
            if all(pm is not None for pm in part_means):
                estimate = math.fsum(
                    part.sign * pm for part, pm in zip(query.parts, part_means))

        if not np.isfinite(gen_loss.data):
            raise TrainingDiverged(
                f"generator loss non-finite at epoch {epoch}, lam={lam:.3g}, "
                f"dq={dq:.3g}")
        grads = ad.grad(gen_loss, ncm.parameters())
        opt_gen.step(grads)

        row = {"epoch": epoch}
        for k in range(ell):
            row[f"dp_{k}"] = dp[k]
        row.update(dq=dq, lam=lam, query_estimate=estimate,
                   mc_accepted=accepted_total,
                   wall_ms=(time.perf_counter() - t0) * 1e3)
        log.append(row)
        if on_epoch is not None:
            on_epoch(epoch, ncm)
    return ncm, log


# -- likelihood training ------------------------------------------------------


def _dedup(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return uniq, counts / counts.sum()


def _mle_prob_table(model: MleNcm, v: str, parent_vals: tuple[int, ...],
                    noise_t: dict[str, ad.Tensor], n: int) -> ad.Tensor:
    """Softmax outputs for one parent configuration across all noise draws."""
    g = model.diagram
    parts = []
    for p, val in zip(g.parents(v), parent_vals):
        bits = values_to_bits(np.asarray([val]), g.dim(p)).astype(model.dtype)
        parts.append(ad.Tensor(np.broadcast_to(bits, (n, g.dim(p))).copy()))
    parts += [noise_t[name] for name in model._vertex_noises[v]]
    return model.prob_tensors(v, parts)


def mle_row_likelihood(model: MleNcm, rows: np.ndarray, intervention: dict,
                       noise: dict[str, np.ndarray]) -> ad.Tensor:
    """Noise-averaged likelihood of each row under ``do(intervention)``.

    Per draw, the joint is the product over non-intervened vertices of the
    softmax probability of the row's value given the row's parent values.
    """
    g = model.diagram
    n = next(iter(noise.values())).shape[0]
    noise_t = {k: ad.Tensor(v) for k, v in noise.items()}
    vorder = list(g.vertices)
    cache: dict = {}
    total: Optional[ad.Tensor] = None
    for r in range(rows.shape[0]):
        vals = {v: int(rows[r, i]) for i, v in enumerate(vorder)}
        rowp: Optional[ad.Tensor] = None
        for v in vorder:
            if v in intervention:
                continue
            pv = tuple(vals[p] for p in g.parents(v))
            key = (v, pv)
            if key not in cache:
                cache[key] = _mle_prob_table(model, v, pv, noise_t, n)
            col = cache[key][:, vals[v]:vals[v] + 1]
            rowp = col if rowp is None else rowp * col
        if rowp is None:  # every vertex intervened: probability one
            rowp = ad.Tensor(np.ones((n, 1), dtype=model.dtype))
        avg = ad.reshape(ad.mean(rowp), (1,))
        total = avg if total is None else ad.concat([total, avg], axis=0)
    return total


def _mle_world_assignments(g: CausalDiagram, ivs: dict[str, int]):
    """All full assignments consistent with constant interventions."""
    axes = []
    for v in g.vertices:
        axes.append((ivs[v],) if v in ivs else tuple(range(2 ** g.dim(v))))
    return [dict(zip(g.vertices, combo)) for combo in itertools.product(*axes)]


def mle_part_draws(model: MleNcm, part: QueryPart,
                   noise_t: dict[str, ad.Tensor], n: int,
                   cache: dict) -> tuple[ad.Tensor, Optional[ad.Tensor]]:
    """Per-draw part event probabilities, enumerating world assignments.

    Returns ``(num, den)`` of shape (n, 1): the probability of the outcome
    event jointly with the conditioning event, and of the conditioning
    event alone (None when the part is unconditional).  The part value is
    ``mean(num) / mean(den)``.  ``cache`` memoizes per-vertex softmax tables
    keyed by parent configuration and may be shared across parts that use
    the same noise draws.
    """
    g = model.diagram

    def factors(assign: dict[str, int], ivs: dict[str, int]) -> ad.Tensor:
        prod: Optional[ad.Tensor] = None
        for v in g.vertices:
            if v in ivs:
                continue
            pv = tuple(assign[p] for p in g.parents(v))
            key = (v, pv)
            if key not in cache:
                cache[key] = _mle_prob_table(model, v, pv, noise_t, n)
            col = cache[key][:, assign[v]:assign[v] + 1]
            prod = col if prod is None else prod * col
        if prod is None:
            prod = ad.Tensor(np.ones((n, 1), dtype=model.dtype))
        return prod

    def event_prob(terms) -> ad.Tensor:
        worlds: dict[tuple, list] = {}
        for t in terms:
            worlds.setdefault(t.interventions, []).append(t)
        world_specs = []
        for ivs, tlist in worlds.items():
            const = {tgt: val for tgt, val in ivs}
            if any(isinstance(v, PotentialValue) for v in const.values()):
                raise NcmError("likelihood query evaluation requires "
                               "unnested interventions")
            opts = [a for a in _mle_world_assignments(g, const)
                    if all(a[t.var] == t.value for t in tlist)]
            world_specs.append((const, opts))
        total: Optional[ad.Tensor] = None
        for combo in itertools.product(*[opts for _, opts in world_specs]):
            prod: Optional[ad.Tensor] = None
            for (const, _), assign in zip(world_specs, combo):
                f = factors(assign, const)
                prod = f if prod is None else prod * f
            total = prod if total is None else total + prod
        if total is None:
            total = ad.Tensor(np.zeros((n, 1), dtype=model.dtype))
        return total

    num = event_prob(part.outcomes + part.conditions)
    den = event_prob(part.conditions) if part.conditions else None
    return num, den


def mle_query_prob(model: MleNcm, q: CounterfactualQuery,
                   noise: dict[str, np.ndarray]) -> ad.Tensor:
    """Signed query value from the likelihood model (nesting removed first)."""
    q = unnest_cut(q, model.diagram)
    n = next(iter(noise.values())).shape[0]
    noise_t = {k: ad.Tensor(v) for k, v in noise.items()}
    cache: dict = {}
    total: Optional[ad.Tensor] = None
    for part in q.parts:
        num, den = mle_part_draws(model, part, noise_t, n, cache)
        p = ad.mean(num)
        if den is not None:
            p = p / ad.clip(ad.mean(den), _EPS, 1.0)
        signed = p if part.sign > 0 else -p
        total = signed if total is None else total + signed
    return total


def train_mle_ncm(
    model: MleNcm,
    data: DatasetCollection,
    query: Optional[CounterfactualQuery],
    cfg: TrainConfig = MLE_DEFAULTS,
) -> tuple[MleNcm, list[dict]]:
    """Full-batch likelihood training; returns the model and per-epoch log.

    Rows are deduplicated and weighted, so each epoch costs one pass over
    the distinct configurations rather than the raw sample size.
    """
    if len(data.datasets) == 0:
        raise ValueError("need at least one dataset")
    if cfg.direction != "fit-only" and query is None:
        raise ValueError(f"direction {cfg.direction!r} requires a query")
    ell = len(data.datasets)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    opt = Adam(model.parameters(), cfg)
    prepared = []
    for ds in data.datasets:
        uniq, weights = _dedup(_rows_in_order(ds, model.diagram))
        prepared.append((uniq, weights.astype(model.dtype),
                         ds.intervention_dict()))

    use_query = query is not None and cfg.direction != "fit-only"
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lam = lam_value(cfg, ell, epoch)
        noise = model.draw_noise(rng, cfg.mc_samples)
        loss: Optional[ad.Tensor] = None
        nlls = []
        for uniq, weights, ivs in prepared:
            probs = mle_row_likelihood(model, uniq, ivs, noise)
            w = ad.Tensor(weights)
            nll = -ad.reduce_sum(w * ad.log(ad.clip(probs, _EPS, 1.0)))
            nlls.append(float(nll.data))
            loss = nll if loss is None else loss + nll

        dq = 0.0
        estimate = float("nan")
        if use_query:
            qhat = mle_query_prob(model, query, noise)
            estimate = float(qhat.data)
            clamped = ad.clip(qhat, _EPS, 1.0 - _EPS)
            term = -ad.log(clamped) if cfg.direction == "maximize" \
                else -ad.log(1.0 - clamped)
            dq = float(term.data)
            loss = loss + term * lam

        if not np.isfinite(loss.data):
            raise TrainingDiverged(
                f"likelihood loss non-finite at epoch {epoch}, lam={lam:.3g}")
        opt.step(ad.grad(loss, model.parameters()))

        row = {"epoch": epoch}
        for k in range(ell):
            row[f"nll_{k}"] = nlls[k]
        row.update(dq=dq, lam=lam, query_estimate=estimate,
                   wall_ms=(time.perf_counter() - t0) * 1e3)
        log.append(row)
    return model, log
