"""Neural causal models constrained by a causal diagram.

A :class:`NeuralCausalModel` assigns one uniform noise source to each maximal
bidirected clique and one feedforward net to each vertex; a vertex's net sees
exactly its parents' values and the noises of the cliques containing it, so
the wiring itself encodes the diagram.  Outputs pass through a sigmoid; hard
evaluation rounds at 0.5, training feeds the soft values to children.

Also here:

* :func:`compile_tabular` -- an exact compiler from a finite tabular SCM to a
  step-activation network (inverse-CDF thresholds on the noise followed by a
  table lookup), used to validate expressiveness without any training.
* :class:`MleNcm` -- the likelihood-based variant whose nets output a
  categorical distribution per vertex, sampled with the Gumbel-max trick.
* checkpoint save/load (JSON header + raw little-endian float64 weights).
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import struct
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from . import autodiff as ad
from .graph import CausalDiagram, CliqueSet, format_diagram, maximal_bidirected_cliques
from .query import PotentialValue, QueryPart, Term
from .scm import ScmError, TabularSCM, bits_to_values, values_to_bits

__all__ = [
    "NcmError",
    "LowAcceptanceError",
    "NeuralCausalModel",
    "MleNcm",
    "build_gncm",
    "build_mle_ncm",
    "compile_tabular",
    "enumerate_query_compiled",
    "part_counts",
    "ncm_noise_name",
    "save_ncm",
    "load_ncm",
]

_MAX_NESTING = 32


class NcmError(ValueError):
    """Invalid model structure or evaluation input."""


class LowAcceptanceError(NcmError):
    """Rejection sampling could not collect enough conditioned samples."""

    def __init__(self, accepted: int, wanted: int, drawn: int):
        self.accepted = accepted
        self.wanted = wanted
        self.drawn = drawn
        self.rate = accepted / drawn if drawn else 0.0
        super().__init__(
            f"accepted {accepted}/{wanted} samples after {drawn} draws "
            f"(acceptance rate {self.rate:.2e})")


def ncm_noise_name(clique: tuple[str, ...]) -> str:
    return "U_" + "_".join(clique)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _run_layers_np(layers, x: np.ndarray) -> np.ndarray:
    for layer in layers:
        kind = layer[0]
        if kind == "linear":
            x = x @ layer[1].data + layer[2].data
        elif kind == "layernorm":
            mu = x.mean(axis=1, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
            x = (x - mu) / np.sqrt(var + 1e-5) * layer[1].data + layer[2].data
        elif kind == "relu":
            x = np.maximum(x, 0)
        elif kind == "sigmoid":
            x = _stable_sigmoid(x)
        elif kind == "step":
            x = (x >= 0).astype(x.dtype)
        elif kind == "softmax":
            z = x - x.max(axis=1, keepdims=True)
            e = np.exp(z)
            x = e / e.sum(axis=1, keepdims=True)
        else:
            raise NcmError(f"unknown layer kind {kind!r}")
    return x


def _run_layers_tensor(layers, x: ad.Tensor) -> ad.Tensor:
    for layer in layers:
        kind = layer[0]
        if kind == "linear":
            x = ad.linear(x, layer[1], layer[2])
        elif kind == "layernorm":
            x = ad.layer_norm(x, layer[1], layer[2])
        elif kind == "relu":
            x = ad.relu(x)
        elif kind == "sigmoid":
            x = ad.sigmoid(x)
        elif kind == "softmax":
            x = ad.softmax(x, axis=1)
        elif kind == "step":
            raise NcmError("step layers are not differentiable; "
                           "compiled models cannot be trained")
        else:
            raise NcmError(f"unknown layer kind {kind!r}")
    return x


class _BaseNcm:
    """Wiring, parameters and noise handling shared by both model kinds."""

    def __init__(self, diagram: CausalDiagram, noise_dims: Mapping[str, int],
                 nets: Mapping[str, list], dtype=np.float32):
        self.diagram = diagram
        self.cliques = maximal_bidirected_cliques(diagram)
        self.noise_dims = dict(noise_dims)
        self.nets = dict(nets)
        self.dtype = np.dtype(dtype)
        expected = [ncm_noise_name(c) for c in self.cliques]
        if sorted(self.noise_dims) != sorted(expected):
            raise NcmError("noise spec does not match the diagram's cliques")
        self._vertex_noises = {
            v: tuple(ncm_noise_name(c) for c in self.cliques.containing(v))
            for v in diagram.vertices
        }
        for v in diagram.vertices:
            first = self.nets[v][0]
            if first[0] != "linear":
                raise NcmError(f"net for {v!r} must start with a linear layer")
            if first[1].data.shape[0] != self.input_width(v):
                raise NcmError(
                    f"net for {v!r} takes {first[1].data.shape[0]} inputs, "
                    f"wiring requires {self.input_width(v)}")

    # -- wiring ------------------------------------------------------------

    def input_labels(self, v: str) -> tuple[str, ...]:
        """Human-readable input wiring of vertex ``v``'s net, in order."""
        labels = []
        for p in self.diagram.parents(v):
            labels.extend(f"{p}:{j}" for j in range(self.diagram.dim(p)))
        for name in self._vertex_noises[v]:
            labels.extend(f"{name}:{j}" for j in range(self.noise_dims[name]))
        return tuple(labels)

    def input_width(self, v: str) -> int:
        return len(self.input_labels(v))

    def parameters(self) -> list[ad.Tensor]:
        out = []
        for v in self.diagram.vertices:
            for layer in self.nets[v]:
                out.extend(t for t in layer[1:] if isinstance(t, ad.Tensor))
        return out

    def draw_noise(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        """One Unif(0,1)^k draw per clique, keyed by noise name."""
        return {ncm_noise_name(c): rng.uniform(size=(n, self.noise_dims[ncm_noise_name(c)]))
                    .astype(self.dtype)
                for c in self.cliques}

    def domain(self, v: str) -> range:
        return range(2 ** self.diagram.dim(v))

    def _assemble_input(self, v: str, n: int, bit_cols: Mapping[str, np.ndarray],
                        noise: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = [bit_cols[p] for p in self.diagram.parents(v)]
        parts += [np.asarray(noise[name], dtype=self.dtype).reshape(n, -1)
                  for name in self._vertex_noises[v]]
        if not parts:
            return np.zeros((n, 0), dtype=self.dtype)
        return np.concatenate(parts, axis=1, dtype=self.dtype)


def _intervention_bits(value, v: str, dim: int, n: int, dtype) -> np.ndarray:
    """Normalize an intervention value to an (n, dim) bit array."""
    if np.isscalar(value):
        iv = int(value)
        if not 0 <= iv < 2 ** dim:
            raise ScmError(f"value {iv} outside domain of {v!r}")
        return np.broadcast_to(
            values_to_bits(np.asarray([iv]), dim).astype(dtype), (n, dim))
    arr = np.asarray(value)
    if arr.ndim == 1:  # integer values per row
        return values_to_bits(arr, dim).astype(dtype)
    return arr.astype(dtype)  # already bit columns (soft feeds)


class NeuralCausalModel(_BaseNcm):
    """The sigmoid-output model trained adversarially (and the compiled kind).

    ``compiled_noise`` is set by :func:`compile_tabular`: per noise name, the
    exact cell probabilities and a representative point inside each cell,
    enabling exact integration instead of sampling.
    """

    kind = "gan"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.compiled_noise: dict[str, tuple[np.ndarray, np.ndarray]] | None = None

    # -- evaluation --------------------------------------------------------

    def forward_bits(
        self,
        noise: Mapping[str, np.ndarray],
        n: int,
        interventions: Mapping[str, Union[int, np.ndarray]] | None = None,
        mode: str = "hard",
    ) -> dict[str, np.ndarray]:
        """Evaluate all mechanisms; returns per-vertex bit columns.

        ``mode="soft"`` keeps sigmoid outputs and feeds them to children;
        ``mode="hard"`` rounds at 0.5 before feeding children.  Intervention
        values may be ints, per-row int arrays, or explicit bit arrays.
        """
        if mode not in ("soft", "hard"):
            raise NcmError(f"unknown mode {mode!r}")
        interventions = interventions or {}
        bit_cols: dict[str, np.ndarray] = {}
        for v in self.diagram._topo:
            dim = self.diagram.dim(v)
            if v in interventions:
                bit_cols[v] = _intervention_bits(interventions[v], v, dim, n, self.dtype)
                continue
            x = self._assemble_input(v, n, bit_cols, noise)
            out = _run_layers_np(self.nets[v], x)
            bit_cols[v] = (out >= 0.5).astype(self.dtype) if mode == "hard" else out
        return bit_cols

    def forward_columns(
        self,
        noise: Mapping[str, np.ndarray],
        n: int,
        interventions: Mapping[str, Union[int, np.ndarray]] | None = None,
    ) -> dict[str, np.ndarray]:
        """Hard forward returning integer value columns (oracle interface)."""
        bits = self.forward_bits(noise, n, interventions, mode="hard")
        return {v: bits_to_values(b.astype(np.int64)) for v, b in bits.items()}

    def forward_tensors(
        self,
        noise: Mapping[str, ad.Tensor],
        n: int,
        interventions: Mapping[str, Union[int, ad.Tensor]] | None = None,
    ) -> dict[str, ad.Tensor]:
        """Soft forward on the autodiff tape (training path)."""
        interventions = interventions or {}
        cols: dict[str, ad.Tensor] = {}
        for v in self.diagram._topo:
            dim = self.diagram.dim(v)
            if v in interventions:
                iv = interventions[v]
                if isinstance(iv, ad.Tensor):
                    cols[v] = iv
                else:
                    cols[v] = ad.Tensor(_intervention_bits(iv, v, dim, n, self.dtype))
                continue
            parts = [cols[p] for p in self.diagram.parents(v)]
            parts += [noise[name] for name in self._vertex_noises[v]]
            if len(parts) == 1:
                x = parts[0]
            else:
                x = ad.concat(parts, axis=1)
            cols[v] = _run_layers_tensor(self.nets[v], x)
        return cols

    def mechanism(self, v: str, values: Mapping[str, int], u: Mapping[str, np.ndarray]) -> int:
        """Scalar hard evaluation of one mechanism (oracle protocol)."""
        bit_cols = {p: values_to_bits(np.asarray([values[p]]), self.diagram.dim(p))
                    .astype(self.dtype) for p in self.diagram.parents(v)}
        noise = {name: np.asarray(u[name], dtype=self.dtype).reshape(1, -1)
                 for name in self._vertex_noises[v]}
        x = self._assemble_input(v, 1, bit_cols, noise)
        out = _run_layers_np(self.nets[v], x)
        return int(bits_to_values((out >= 0.5).astype(np.int64))[0])

    # -- counterfactual sampling -------------------------------------------

    def ctf_noise(
        self,
        conditions: Sequence[Term],
        m_samples: int,
        rng: np.random.Generator,
        max_draws: int | None = None,
        allow_short: bool = False,
    ) -> tuple[dict[str, np.ndarray], int, int]:
        """Collect up to ``m_samples`` noise draws satisfying ``conditions``.

        Conditions are evaluated in hard mode (with nested interventions
        resolved under the same draw).  Returns ``(noise, accepted, drawn)``;
        raises :class:`LowAcceptanceError` when the ``max_draws`` budget
        (default ``100 * m_samples``) runs out, unless ``allow_short``.
        """
        if m_samples < 1:
            raise NcmError("m_samples must be >= 1")
        if max_draws is None:
            max_draws = 100 * m_samples
        kept: list[dict[str, np.ndarray]] = []
        accepted = 0
        drawn = 0
        while accepted < m_samples and drawn < max_draws:
            chunk = min(max(m_samples, 4096), max_draws - drawn)
            noise = self.draw_noise(rng, chunk)
            drawn += chunk
            if conditions:
                memo: dict = {}
                ok = np.ones(chunk, dtype=bool)
                for t in conditions:
                    world = _world_for(self, noise, chunk, t.interventions, memo)
                    ok &= world[t.var] == t.value
                idx = np.nonzero(ok)[0][:m_samples - accepted]
            else:
                idx = np.arange(min(chunk, m_samples - accepted))
            if idx.size:
                kept.append({k: v[idx] for k, v in noise.items()})
                accepted += idx.size
        if accepted < m_samples and not allow_short:
            raise LowAcceptanceError(accepted, m_samples, drawn)
        if not kept:
            return {k: v[:0] for k, v in self.draw_noise(rng, 1).items()}, 0, drawn
        merged = {k: np.concatenate([c[k] for c in kept], axis=0) for k in kept[0]}
        return merged, accepted, drawn


    def ctf_sample(
        self,
        outcomes: Sequence[tuple[str, tuple]],
        conditions: Sequence[Term],
        m_samples: int,
        seed_or_rng,
        max_draws: int | None = None,
    ) -> dict[str, np.ndarray]:
        """Hard samples of potential responses under rejection conditioning.

        ``outcomes`` is a sequence of ``(variable, interventions)`` pairs;
        the returned dict maps ``"var[ivs-index]"`` positionally to value
        arrays of length ``m_samples``.
        """
        rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
               else np.random.default_rng(seed_or_rng))
        noise, accepted, _ = self.ctf_noise(tuple(conditions), m_samples, rng, max_draws)
        memo: dict = {}
        out: dict[str, np.ndarray] = {}
        for i, (var, ivs) in enumerate(outcomes):
            world = _world_for(self, noise, accepted, tuple(ivs), memo)
            out[f"{i}:{var}"] = world[var]
        return out


def _world_for(model, noise, n, ivs: tuple, memo: dict, depth: int = 0) -> dict:
    """Evaluate (once per draw batch) the world under a syntactic spec.

    Keyed by the intervention spec itself so that a world referenced several
    times in a query is computed exactly once; for the Gumbel-sampled MLE
    model this is what makes repeated references consistent, not just fast.
    """
    if depth > _MAX_NESTING:
        raise NcmError("cyclic nesting specification")
    if ivs in memo:
        return memo[ivs]
    resolved = {}
    for target, value in ivs:
        if isinstance(value, PotentialValue):
            inner = _world_for(model, noise, n, value.interventions, memo, depth + 1)
            value = inner[value.var]
        resolved[target] = value
    world = model.forward_columns(noise, n, resolved)
    memo[ivs] = world
    return world


def part_counts(
    model,
    part: QueryPart,
    m_total: int,
    rng: np.random.Generator,
    chunk: int = 1 << 16,
) -> tuple[int, int]:
    """Counts for the ratio estimator over ``m_total`` hard draws.

    Returns ``(numerator, denominator)`` where the numerator counts draws
    satisfying outcomes and conditions jointly and the denominator counts
    draws satisfying the conditions (= ``m_total`` when unconditional).
    """
    num = 0
    den = 0
    remaining = m_total
    while remaining > 0:
        n = min(chunk, remaining)
        remaining -= n
        noise = model.draw_noise(rng, n)
        memo: dict = {}
        ok_cond = np.ones(n, dtype=bool)
        for t in part.conditions:
            world = _world_for(model, noise, n, t.interventions, memo)
            ok_cond &= world[t.var] == t.value
        ok_out = np.ones(n, dtype=bool)
        for t in part.outcomes:
            world = _world_for(model, noise, n, t.interventions, memo)
            ok_out &= world[t.var] == t.value
        num += int((ok_out & ok_cond).sum())
        den += int(ok_cond.sum()) if part.conditions else n
    return num, den


# -- construction -------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def _build_mlp(rng, in_dim: int, hidden: Sequence[int], out_dim: int,
               final: str, dtype) -> list:
    layers: list = []
    prev = in_dim
    for width in hidden:
        layers.append(("linear",
                       ad.Tensor(_glorot(rng, prev, width, dtype), requires_grad=True),
                       ad.Tensor(np.zeros(width, dtype=dtype), requires_grad=True)))
        layers.append(("layernorm",
                       ad.Tensor(np.ones(width, dtype=dtype), requires_grad=True),
                       ad.Tensor(np.zeros(width, dtype=dtype), requires_grad=True)))
        layers.append(("relu",))
        prev = width
    layers.append(("linear",
                   ad.Tensor(_glorot(rng, prev, out_dim, dtype), requires_grad=True),
                   ad.Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)))
    layers.append((final,))
    return layers


def build_gncm(
    g: CausalDiagram,
    hidden: Sequence[int] = (64, 64),
    noise_dim: int = 2,
    seed: int = 0,
    dtype=np.float32,
) -> NeuralCausalModel:
    """Build a Glorot-initialized model for diagram ``g``.

    Each vertex net takes its parents' bits (parents sorted by name, bits
    least significant first) followed by the noise vectors of the cliques
    containing it (canonical clique order, ``noise_dim`` uniforms each).
    """
    if any(h < 1 for h in hidden) or noise_dim < 1:
        raise NcmError("architecture sizes must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cliques = maximal_bidirected_cliques(g)
    noise_dims = {ncm_noise_name(c): noise_dim for c in cliques}
    nets = {}
    for v in g.vertices:
        in_dim = sum(g.dim(p) for p in g.parents(v))
        in_dim += noise_dim * len(cliques.containing(v))
        nets[v] = _build_mlp(rng, in_dim, hidden, g.dim(v), "sigmoid", dtype)
    return NeuralCausalModel(g, noise_dims, nets, dtype)


class MleNcm(_BaseNcm):
    """Likelihood variant: nets output a categorical over each vertex's values.

    Sampling uses the Gumbel-max trick with fresh Gumbel draws per
    counterfactual world; the clique noises are shared across worlds.
    """

    kind = "mle"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._session_rng: np.random.Generator | None = None

    def prob_columns_np(self, v: str, n: int, bit_cols, noise) -> np.ndarray:
        x = self._assemble_input(v, n, bit_cols, noise)
        return _run_layers_np(self.nets[v], x)

    def prob_tensors(self, v: str, parts: list[ad.Tensor]) -> ad.Tensor:
        x = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
        return _run_layers_tensor(self.nets[v], x)

    def forward_columns(
        self,
        noise: Mapping[str, np.ndarray],
        n: int,
        interventions: Mapping[str, Union[int, np.ndarray]] | None = None,
        rng: np.random.Generator | None = None,
    ) -> dict[str, np.ndarray]:
        """Gumbel-max hard sampling of all mechanisms (one world).

        Needs a Gumbel source: pass ``rng`` or set ``_session_rng`` (the
        counterfactual helpers do the latter so that distinct worlds get
        fresh Gumbels while sharing the clique noises).
        """
        rng = rng or self._session_rng
        if rng is None:
            raise NcmError("MleNcm.forward_columns needs an rng for Gumbel draws")
        interventions = interventions or {}
        values: dict[str, np.ndarray] = {}
        bit_cols: dict[str, np.ndarray] = {}
        for v in self.diagram._topo:
            dim = self.diagram.dim(v)
            if v in interventions:
                iv = interventions[v]
                if np.isscalar(iv):
                    if not 0 <= int(iv) < 2 ** dim:
                        raise ScmError(f"value {iv} outside domain of {v!r}")
                    col = np.full(n, int(iv), dtype=np.int64)
                else:
                    col = np.asarray(iv, dtype=np.int64)
            else:
                probs = self.prob_columns_np(v, n, bit_cols, noise)
                gumbel = rng.gumbel(size=probs.shape)
                col = np.argmax(np.log(np.maximum(probs, 1e-30)) + gumbel, axis=1)
            values[v] = col
            bit_cols[v] = values_to_bits(col, dim).astype(self.dtype)
        return values

    def draw_noise(self, rng, n):
        # Also remember the rng so nested world evaluations draw their
        # Gumbels from the same stream.
        self._session_rng = rng
        return super().draw_noise(rng, n)


def build_mle_ncm(
    g: CausalDiagram,
    hidden: Sequence[int] = (64, 64),
    noise_dim: int = 2,
    seed: int = 0,
    dtype=np.float32,
) -> MleNcm:
    """Like :func:`build_gncm` but with softmax heads over value domains."""
    if any(h < 1 for h in hidden) or noise_dim < 1:
        raise NcmError("architecture sizes must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cliques = maximal_bidirected_cliques(g)
    noise_dims = {ncm_noise_name(c): noise_dim for c in cliques}
    nets = {}
    for v in g.vertices:
        in_dim = sum(g.dim(p) for p in g.parents(v))
        in_dim += noise_dim * len(cliques.containing(v))
        nets[v] = _build_mlp(rng, in_dim, hidden, 2 ** g.dim(v), "softmax", dtype)
    return MleNcm(g, noise_dims, nets, dtype)


# -- exact compilation of tabular SCMs ---------------------------------------


def _assign_exo_to_cliques(m: TabularSCM) -> dict[str, list]:
    cliques = maximal_bidirected_cliques(m.diagram)
    users: dict[str, set[str]] = {ev.name: set() for ev in m.exo_vars}
    for v in m.diagram.vertices:
        for e in m.exo_assignment[v]:
            users[e].add(v)
    by_clique: dict[str, list] = {ncm_noise_name(c): [] for c in cliques}
    for ev in m.exo_vars:
        for c in cliques:  # canonical order, so first hit is lexicographic
            if users[ev.name] <= set(c):
                by_clique[ncm_noise_name(c)].append(ev)
                break
        else:
            raise ScmError(
                f"exo var {ev.name!r} spans vertices outside any single clique")
    return by_clique


def compile_tabular(m: TabularSCM) -> NeuralCausalModel:
    """Compile a tabular SCM into an equivalent step-activation network.

    Per clique, the joint exogenous distribution becomes one Unif(0,1) noise:
    thresholds at the cumulative probabilities recover the joint exo value by
    inverse transform.  Each vertex net is four affine+step layers: noise
    thresholds and parent-bit passthrough, cell one-hots, (parent pattern x
    cell) conjunctions, and a disjunction per output bit reading off the
    function table.  Cell probabilities and representative points are kept on
    the model so queries can be integrated exactly instead of sampled.
    """
    g = m.diagram
    by_clique = _assign_exo_to_cliques(m)
    cliques = maximal_bidirected_cliques(g)

    # Per noise axis: value combos, their probabilities, thresholds, reps.
    combos: dict[str, list[tuple[int, ...]]] = {}
    cell_probs: dict[str, np.ndarray] = {}
    cell_reps: dict[str, np.ndarray] = {}
    thresholds: dict[str, np.ndarray] = {}
    exo_pos: dict[str, tuple[str, int]] = {}  # exo name -> (noise name, slot)
    for c in cliques:
        name = ncm_noise_name(c)
        evs = by_clique[name]
        for slot, ev in enumerate(evs):
            exo_pos[ev.name] = (name, slot)
        combos[name] = list(itertools.product(*(ev.domain for ev in evs)))
        probs = np.array([math.prod(p) for p in
                          itertools.product(*(ev.pmf for ev in evs))], dtype=np.float64)
        cell_probs[name] = probs
        cum = np.concatenate([[0.0], np.cumsum(probs)])
        cum[-1] = 1.0
        thresholds[name] = cum[1:-1]
        cell_reps[name] = (cum[:-1] + cum[1:]) / 2.0

    nets: dict[str, list] = {}
    for v in g.vertices:
        parents = g.parents(v)
        pdims = [g.dim(p) for p in parents]
        pbits = sum(pdims)
        axes = [ncm_noise_name(c) for c in cliques.containing(v)]
        n_cells = [len(combos[a]) for a in axes]
        in_dim = pbits + len(axes)

        # L1: per-axis unary threshold code + parent-bit passthrough.
        w1_cols = []
        b1 = []
        for ai, a in enumerate(axes):
            for t in thresholds[a]:
                col = np.zeros(in_dim)
                col[pbits + ai] = 1.0
                w1_cols.append(col)
                b1.append(-t)
        for j in range(pbits):
            col = np.zeros(in_dim)
            col[j] = 1.0
            w1_cols.append(col)
            b1.append(-0.5)
        w1 = np.array(w1_cols).T if w1_cols else np.zeros((in_dim, 0))
        l1_axis_off = np.concatenate([[0], np.cumsum([len(thresholds[a]) for a in axes])])
        l1_pbit_off = int(l1_axis_off[-1])
        l1_width = l1_pbit_off + pbits

        # L2: per-axis cell one-hot + parent-bit passthrough.
        w2_cols = []
        b2 = []
        for ai, a in enumerate(axes):
            base = int(l1_axis_off[ai])
            for j in range(n_cells[ai]):
                col = np.zeros(l1_width)
                bias = -0.5
                if j > 0:
                    col[base + j - 1] += 1.0
                else:
                    bias += 1.0
                if j < n_cells[ai] - 1:
                    col[base + j] -= 1.0
                w2_cols.append(col)
                b2.append(bias)
        for j in range(pbits):
            col = np.zeros(l1_width)
            col[l1_pbit_off + j] = 1.0
            w2_cols.append(col)
            b2.append(-0.5)
        w2 = np.array(w2_cols).T if w2_cols else np.zeros((l1_width, 0))
        l2_cell_off = np.concatenate([[0], np.cumsum(n_cells)])
        l2_pbit_off = int(l2_cell_off[-1])
        l2_width = l2_pbit_off + pbits

        # L3: conjunction of one parent-bit pattern and one cell per axis.
        patterns = list(itertools.product(*[range(2 ** d) for d in pdims]))
        cellsets = list(itertools.product(*[range(k) for k in n_cells]))
        w3_cols = []
        b3 = []
        outputs = []
        for pat in patterns:
            pat_bits = np.concatenate(
                [values_to_bits(np.asarray([val]), d)[0] for val, d in zip(pat, pdims)]
            ) if parents else np.zeros(0, dtype=np.int64)
            pvals = list(pat)
            in_domain = all(val in m.domains[p] for val, p in zip(pvals, parents))
            for cs in cellsets:
                col = np.zeros(l2_width)
                need = 0
                for j, bit in enumerate(pat_bits):
                    if bit:
                        col[l2_pbit_off + j] = 1.0
                        need += 1
                    else:
                        col[l2_pbit_off + j] = -1.0
                for ai, ci in enumerate(cs):
                    col[int(l2_cell_off[ai]) + ci] = 1.0
                    need += 1
                w3_cols.append(col)
                b3.append(-(need - 0.5))
                if in_domain:
                    exo_vals = {}
                    for ai, a in enumerate(axes):
                        combo = combos[a][cs[ai]]
                        for ev in by_clique[a]:
                            _, slot = exo_pos[ev.name]
                            exo_vals[ev.name] = combo[slot]
                    key = tuple(pvals) + tuple(exo_vals[e] for e in m.exo_assignment[v])
                    outputs.append(m.tables[v][key])
                else:
                    outputs.append(0)  # unreachable parent pattern
        w3 = np.array(w3_cols).T if w3_cols else np.zeros((l2_width, 0))
        l3_width = len(w3_cols)

        # L4: disjunction per output bit.
        dim = g.dim(v)
        w4 = np.zeros((l3_width, dim))
        out_bits = values_to_bits(np.asarray(outputs), dim)
        for j in range(l3_width):
            w4[j] = out_bits[j]
        b4 = np.full(dim, -0.5)

        nets[v] = [
            ("linear", ad.Tensor(w1), ad.Tensor(np.asarray(b1, dtype=np.float64))),
            ("step",),
            ("linear", ad.Tensor(w2), ad.Tensor(np.asarray(b2, dtype=np.float64))),
            ("step",),
            ("linear", ad.Tensor(w3), ad.Tensor(np.asarray(b3, dtype=np.float64))),
            ("step",),
            ("linear", ad.Tensor(w4), ad.Tensor(b4)),
            ("step",),
        ]

    noise_dims = {ncm_noise_name(c): 1 for c in cliques}
    out = NeuralCausalModel(g, noise_dims, nets, dtype=np.float64)
    out.kind = "compiled"
    out.compiled_noise = {name: (cell_probs[name], cell_reps[name])
                          for name in cell_probs}
    # Cell index -> joint exo values, for tests that check per-state equality.
    out.compiled_exo = {name: tuple(ev.name for ev in by_clique[name])
                        for name in combos}
    out.compiled_combos = dict(combos)
    return out


def enumerate_query_compiled(ncm: NeuralCausalModel, q) -> float:
    """Exact query value for a compiled model by noise-cell integration.

    Enumerates the product of noise cells (using each cell's representative
    point), evaluates the network in hard mode, and sums cell probabilities
    where the event holds.  Mirrors :func:`ncmctf.scm.enumerate_query` but
    exercises the network instead of the source tables.
    """
    from .scm import ZeroProbabilityError  # local to avoid import clutter

    if ncm.compiled_noise is None:
        raise NcmError("model was not produced by compile_tabular")
    names = list(ncm.compiled_noise)
    sizes = [len(ncm.compiled_noise[name][0]) for name in names]
    total = int(np.prod(sizes)) if sizes else 1
    noise: dict[str, np.ndarray] = {}
    prob = np.ones(total, dtype=np.float64)
    repeat = total
    for name, size in zip(names, sizes):
        repeat //= size
        tile = total // (repeat * size)
        idx = np.tile(np.repeat(np.arange(size), repeat), tile)
        noise[name] = ncm.compiled_noise[name][1][idx].reshape(total, 1)
        prob *= ncm.compiled_noise[name][0][idx]

    totals = []
    for part in q.parts:
        memo: dict = {}

        def indicator(terms):
            ok = np.ones(total, dtype=bool)
            for t in terms:
                world = _world_for(ncm, noise, total, t.interventions, memo)
                ok &= world[t.var] == t.value
            return ok

        num = indicator(part.outcomes + part.conditions)
        if part.conditions:
            den_p = math.fsum(prob[indicator(part.conditions)].tolist())
            if den_p <= 0.0:
                raise ZeroProbabilityError("conditioning event has probability zero")
            value = math.fsum(prob[num].tolist()) / den_p
        else:
            value = math.fsum(prob[num].tolist())
        totals.append(part.sign * value)
    return math.fsum(totals)


# -- checkpoints --------------------------------------------------------------

_MAGIC = b"NCMCKPT1"


def save_ncm(model: _BaseNcm, path) -> None:
    """Write a checkpoint: JSON header + little-endian float64 weight blob."""
    header: dict = {
        "kind": model.kind,
        "diagram_sha256": hashlib.sha256(
            format_diagram(model.diagram).encode()).hexdigest(),
        "diagram": format_diagram(model.diagram),
        "noise_dims": model.noise_dims,
        "dtype": model.dtype.name,
        "layers": {},
    }
    blobs: list[bytes] = []
    for v in model.diagram.vertices:
        spec = []
        for layer in model.nets[v]:
            entry = [layer[0]]
            for t in layer[1:]:
                entry.append(list(t.data.shape))
                blobs.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
            spec.append(entry)
        header["layers"][v] = spec
    if getattr(model, "compiled_noise", None):
        header["compiled_noise"] = {
            name: {"probs": probs.tolist(), "reps": reps.tolist()}
            for name, (probs, reps) in model.compiled_noise.items()
        }
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_ncm(path) -> _BaseNcm:
    """Inverse of :func:`save_ncm`."""
    from .graph import parse_diagram

    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise NcmError("not an NCM checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        diagram = parse_diagram(header["diagram"])
        if hashlib.sha256(format_diagram(diagram).encode()).hexdigest() \
                != header["diagram_sha256"]:
            raise NcmError("checkpoint diagram hash mismatch")
        dtype = np.dtype(header["dtype"])
        nets: dict[str, list] = {}
        for v in diagram.vertices:
            layers = []
            for entry in header["layers"][v]:
                kind = entry[0]
                tensors = []
                for shape in entry[1:]:
                    size = int(np.prod(shape)) if shape else 1
                    data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
                    tensors.append(ad.Tensor(data.astype(dtype), requires_grad=True))
                layers.append((kind, *tensors))
            nets[v] = layers
    kind = header["kind"]
    cls = MleNcm if kind == "mle" else NeuralCausalModel
    model = cls(diagram, header["noise_dims"], nets, dtype)
    model.kind = kind
    if "compiled_noise" in header:
        model.compiled_noise = {
            name: (np.asarray(d["probs"]), np.asarray(d["reps"]))
            for name, d in header["compiled_noise"].items()
        }
    return model
