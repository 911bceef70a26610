"""Ground-truth structural causal models with exact enumeration.

A :class:`TabularSCM` has finitely many exogenous variables, each with an
explicit pmf, and total function tables for every endogenous vertex.  Because
everything is finite, any counterfactual query can be answered exactly by
summing ``P(u)`` over the joint exogenous domain; :func:`enumerate_query` is
the oracle the rest of the package is tested against.

Datasets (observational or interventional) are drawn from a model with
:func:`draw_dataset` and serialize to CSV (one column per variable bit) plus
a JSON manifest.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .graph import CausalDiagram, parse_diagram, format_diagram
from .query import CounterfactualQuery, PotentialValue, Term, QueryError

__all__ = [
    "ScmError",
    "ZeroProbabilityError",
    "PositivityError",
    "ExoVar",
    "TabularSCM",
    "Dataset",
    "DatasetCollection",
    "potential_response",
    "counterfactual_joint",
    "enumerate_query",
    "enumerate_distribution",
    "draw_dataset",
    "scm_to_json",
    "scm_from_json",
    "save_dataset",
    "load_dataset",
    "values_to_bits",
    "bits_to_values",
]

PMF_TOL = 1e-12
_MAX_NESTING = 32


class ScmError(ValueError):
    """Invalid model structure or evaluation input."""


class ZeroProbabilityError(ScmError):
    """A conditional query's conditioning event has probability zero."""


class PositivityError(ScmError):
    """A positivity-constrained dataset draw ran out of retries."""


def values_to_bits(values: np.ndarray, dim: int) -> np.ndarray:
    """Split integer values into ``dim`` binary columns, least significant first."""
    values = np.asarray(values)
    return np.stack([(values >> j) & 1 for j in range(dim)], axis=-1)


def bits_to_values(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`values_to_bits` along the last axis."""
    bits = np.asarray(bits)
    weights = 1 << np.arange(bits.shape[-1])
    return (bits * weights).sum(axis=-1)


@dataclass(frozen=True)
class ExoVar:
    """A finite exogenous variable: value domain plus a pmf over it."""

    name: str
    domain: tuple[int, ...]
    pmf: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(int(v) for v in self.domain))
        object.__setattr__(self, "pmf", tuple(float(p) for p in self.pmf))
        if not self.domain:
            raise ScmError(f"exo var {self.name!r}: empty domain")
        if list(self.domain) != sorted(set(self.domain)):
            raise ScmError(f"exo var {self.name!r}: domain must be strictly increasing")
        if len(self.pmf) != len(self.domain):
            raise ScmError(f"exo var {self.name!r}: pmf length != domain length")
        if any(p < 0 for p in self.pmf):
            raise ScmError(f"exo var {self.name!r}: negative probability")
        total = math.fsum(self.pmf)
        if abs(total - 1.0) > PMF_TOL:
            raise ScmError(f"exo var {self.name!r}: pmf sums to {total!r}, not 1")


class TabularSCM:
    """A discrete SCM given by explicit function tables.

    Args:
        diagram: the causal diagram the model must induce.
        exo_vars: :class:`ExoVar` instances (or ``(name, domain, pmf)`` tuples).
        exo_assignment: map vertex -> exogenous variable names feeding its
            mechanism.  Two vertices sharing an exo var must be joined by a
            bidirected edge, and vice versa; this is checked exactly.
        tables: map vertex -> function table.  Table keys are tuples of the
            parents' values (parents sorted by name) followed by the assigned
            exo values (in declaration order of ``exo_vars``); table values
            are the vertex's output.  Tables must be total.
        domains: optional map vertex -> value domain, defaulting to
            ``range(2**dim)``.  Values must fit in the vertex's bit-width.
        check_functional: when True (default), require that every declared
            directed edge is functional, i.e. the child's table output varies
            with the parent in some context.  Generated models (regional
            canonical models) disable this: a randomly drawn table may ignore
            a parent, which still induces a subgraph of the diagram.
    """

    def __init__(
        self,
        diagram: CausalDiagram,
        exo_vars: Iterable[ExoVar | tuple],
        exo_assignment: Mapping[str, Iterable[str]],
        tables: Mapping[str, Mapping[tuple, int]],
        domains: Mapping[str, Sequence[int]] | None = None,
        check_functional: bool = True,
    ):
        self.diagram = diagram
        self.exo_vars = tuple(
            ev if isinstance(ev, ExoVar) else ExoVar(*ev) for ev in exo_vars)
        exo_order = {ev.name: i for i, ev in enumerate(self.exo_vars)}
        if len(exo_order) != len(self.exo_vars):
            raise ScmError("duplicate exogenous variable name")
        self._exo_by_name = {ev.name: ev for ev in self.exo_vars}

        self.exo_assignment: dict[str, tuple[str, ...]] = {}
        for v in diagram.vertices:
            names = tuple(exo_assignment.get(v, ()))
            for name in names:
                if name not in exo_order:
                    raise ScmError(f"vertex {v!r} references unknown exo var {name!r}")
            self.exo_assignment[v] = tuple(sorted(set(names), key=exo_order.__getitem__))
        for v in exo_assignment:
            if v not in diagram:
                raise ScmError(f"exo assignment mentions unknown vertex {v!r}")

        self.domains: dict[str, tuple[int, ...]] = {}
        domains = domains or {}
        for v in diagram.vertices:
            dom = tuple(int(x) for x in domains.get(v, range(2 ** diagram.dim(v))))
            if list(dom) != sorted(set(dom)):
                raise ScmError(f"vertex {v!r}: domain must be strictly increasing")
            if not dom or dom[0] < 0 or dom[-1] >= 2 ** diagram.dim(v):
                raise ScmError(f"vertex {v!r}: domain exceeds its {diagram.dim(v)}-bit width")
            self.domains[v] = dom

        self.tables: dict[str, dict[tuple[int, ...], int]] = {}
        for v in diagram.vertices:
            if v not in tables:
                raise ScmError(f"missing function table for {v!r}")
            self.tables[v] = {tuple(int(x) for x in k): int(out)
                              for k, out in tables[v].items()}
        for v in tables:
            if v not in diagram:
                raise ScmError(f"table for unknown vertex {v!r}")

        self._check_tables()
        self._check_induced_diagram(check_functional)
        self._build_arrays()

    # -- construction checks ----------------------------------------------

    def _input_domains(self, v: str) -> list[tuple[int, ...]]:
        doms = [self.domains[p] for p in self.diagram.parents(v)]
        doms += [self._exo_by_name[e].domain for e in self.exo_assignment[v]]
        return doms

    def _check_tables(self) -> None:
        for v in self.diagram.vertices:
            table = self.tables[v]
            expected = set(itertools.product(*self._input_domains(v)))
            got = set(table)
            if got != expected:
                missing = sorted(expected - got)[:3]
                extra = sorted(got - expected)[:3]
                raise ScmError(
                    f"table for {v!r} is not total over its input domain "
                    f"(missing {missing}, unexpected {extra})")
            for key, out in table.items():
                if out not in self.domains[v]:
                    raise ScmError(f"table for {v!r}: output {out} at {key} "
                                   "is outside the vertex domain")

    def _check_induced_diagram(self, check_functional: bool) -> None:
        induced_bi = set()
        users: dict[str, list[str]] = {ev.name: [] for ev in self.exo_vars}
        for v in self.diagram.vertices:
            for e in self.exo_assignment[v]:
                users[e].append(v)
        for vs in users.values():
            for a, b in itertools.combinations(sorted(vs), 2):
                induced_bi.add((a, b))
        declared_bi = {tuple(sorted(p)) for p in self.diagram.bidirected}
        if induced_bi != declared_bi:
            raise ScmError(
                f"exo sharing induces bidirected edges {sorted(induced_bi)} "
                f"but the diagram declares {sorted(declared_bi)}")

        if not check_functional:
            return
        for v in self.diagram.vertices:
            parents = self.diagram.parents(v)
            table = self.tables[v]
            for i, p in enumerate(parents):
                varies = False
                base = self.domains[p][0]
                for key, out in table.items():
                    ref = key[:i] + (base,) + key[i + 1:]
                    if out != table[ref]:
                        varies = True
                        break
                if not varies:
                    raise ScmError(
                        f"edge {p!r} -> {v!r} is declared but {v!r}'s table "
                        f"never varies with {p!r}")

    def _build_arrays(self) -> None:
        # Flat int arrays per vertex for vectorized evaluation: index is the
        # mixed-radix combination of (parent value indices, exo value indices).
        self._dom_arr = {v: np.asarray(d, dtype=np.int64) for v, d in self.domains.items()}
        self._flat: dict[str, np.ndarray] = {}
        for v in self.diagram.vertices:
            doms = self._input_domains(v)
            sizes = [len(d) for d in doms]
            flat = np.empty(int(np.prod(sizes)) if sizes else 1, dtype=np.int64)
            for idx, key in enumerate(itertools.product(*doms)):
                flat[idx] = self.tables[v][key]
            self._flat[v] = flat

    # -- scalar evaluation protocol ----------------------------------------

    def domain(self, v: str) -> tuple[int, ...]:
        return self.domains[v]

    def mechanism(self, v: str, values: Mapping[str, int], u: Mapping[str, int]) -> int:
        """Evaluate ``v``'s function table given parent ``values`` and exo ``u``."""
        key = tuple(values[p] for p in self.diagram.parents(v))
        key += tuple(u[e] for e in self.exo_assignment[v])
        return self.tables[v][key]

    def exo_states(self):
        """Iterate ``(u_dict, probability)`` over the joint exogenous domain."""
        names = [ev.name for ev in self.exo_vars]
        for combo in itertools.product(*(zip(ev.domain, ev.pmf) for ev in self.exo_vars)):
            u = {name: vp[0] for name, vp in zip(names, combo)}
            prob = math.prod(vp[1] for vp in combo)
            yield u, prob

    @property
    def num_exo_states(self) -> int:
        return math.prod(len(ev.domain) for ev in self.exo_vars)

    # -- vectorized evaluation ---------------------------------------------

    def _sample_exo_indices(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        out = {}
        for ev in self.exo_vars:
            p = np.asarray(ev.pmf, dtype=np.float64)
            out[ev.name] = rng.choice(len(ev.domain), size=n, p=p / p.sum())
        return out

    def _exo_index_grid(self) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """All joint exo states as index columns, plus their probabilities."""
        sizes = [len(ev.domain) for ev in self.exo_vars]
        total = int(np.prod(sizes)) if sizes else 1
        cols: dict[str, np.ndarray] = {}
        prob = np.ones(total, dtype=np.float64)
        repeat = total
        for ev, size in zip(self.exo_vars, sizes):
            repeat //= size
            tile = total // (repeat * size)
            col = np.tile(np.repeat(np.arange(size), repeat), tile)
            cols[ev.name] = col
            prob *= np.asarray(ev.pmf, dtype=np.float64)[col]
        return cols, prob

    def forward_columns(
        self,
        exo_idx: Mapping[str, np.ndarray],
        n: int,
        interventions: Mapping[str, Union[int, np.ndarray]] | None = None,
    ) -> dict[str, np.ndarray]:
        """Evaluate all mechanisms on ``n`` parallel exo draws.

        ``exo_idx`` maps exo names to index-into-domain columns.
        ``interventions`` values may be scalars or per-row arrays.  Returns a
        map vertex -> value column.
        """
        interventions = interventions or {}
        values: dict[str, np.ndarray] = {}
        indices: dict[str, np.ndarray] = {}
        for v in self.diagram._topo:
            if v in interventions:
                iv = interventions[v]
                if np.isscalar(iv):
                    if iv not in self.domains[v]:
                        raise ScmError(f"value {iv} outside domain of {v!r}")
                    col = np.full(n, int(iv), dtype=np.int64)
                else:
                    col = np.asarray(iv, dtype=np.int64)
            else:
                flat_idx = np.zeros(n, dtype=np.int64)
                for p in self.diagram.parents(v):
                    flat_idx = flat_idx * len(self.domains[p]) + indices[p]
                for e in self.exo_assignment[v]:
                    flat_idx = flat_idx * len(self._exo_by_name[e].domain) + exo_idx[e]
                col = self._flat[v][flat_idx]
            values[v] = col
            indices[v] = np.searchsorted(self._dom_arr[v], col)
        return values

    def sample_rows(
        self,
        rng: np.random.Generator,
        n: int,
        interventions: Mapping[str, int] | None = None,
    ) -> np.ndarray:
        """Draw ``n`` i.i.d. rows (columns in vertex declaration order)."""
        cols = self.forward_columns(self._sample_exo_indices(rng, n), n, interventions)
        return np.column_stack([cols[v] for v in self.diagram.vertices])


# -- scalar counterfactual evaluation ----------------------------------------


def potential_response(
    m,
    u: Mapping,
    interventions: Mapping[str, int],
    targets: Iterable[str],
) -> tuple[int, ...]:
    """Evaluate target values under ``do(interventions)`` for one exo draw ``u``.

    Mechanisms are evaluated in topological order with intervened vertices
    replaced by their constants.  Works for any model exposing ``diagram``,
    ``domain`` and ``mechanism`` (tabular SCMs, regional canonical models,
    compiled networks).
    """
    g = m.diagram
    values: dict[str, int] = {}
    for v in g._topo:
        if v in interventions:
            val = interventions[v]
            if val not in m.domain(v):
                raise ScmError(f"value {val} outside domain of {v!r}")
            values[v] = val
        else:
            values[v] = m.mechanism(v, values, u)
    out = []
    for t in targets:
        if t not in values:
            raise ScmError(f"unknown target {t!r}")
        out.append(values[t])
    return tuple(out)


def _resolve_interventions(m, u, ivs, depth: int = 0) -> dict[str, int]:
    if depth > _MAX_NESTING:
        raise ScmError("cyclic nesting specification")
    out: dict[str, int] = {}
    items = ivs.items() if isinstance(ivs, Mapping) else ivs
    for target, value in items:
        if isinstance(value, PotentialValue):
            inner = _resolve_interventions(m, u, value.interventions, depth + 1)
            value = potential_response(m, u, inner, (value.var,))[0]
        out[target] = value
    return out


def counterfactual_joint(m, u: Mapping, terms) -> tuple[tuple[int, ...], ...]:
    """Evaluate several potential responses under one shared exo draw.

    ``terms`` is a sequence of ``(targets, interventions)`` pairs; an
    intervention value may be a :class:`~ncmctf.query.PotentialValue`, which
    is evaluated first (under the same ``u``) and substituted as a constant.
    """
    out = []
    for targets, ivs in terms:
        const = _resolve_interventions(m, u, ivs)
        out.append(potential_response(m, u, const, tuple(targets)))
    return tuple(out)


# -- exact enumeration --------------------------------------------------------


def _resolve_columns(m: TabularSCM, exo_idx, n, ivs, memo, depth: int = 0):
    if depth > _MAX_NESTING:
        raise ScmError("cyclic nesting specification")
    out = {}
    has_array = False
    for target, value in ivs:
        if isinstance(value, PotentialValue):
            inner, _ = _resolve_columns(m, exo_idx, n, value.interventions, memo, depth + 1)
            world = _world_columns(m, exo_idx, n, inner, memo)
            value = world[value.var]
            has_array = True
        out[target] = value
    return out, has_array


def _world_columns(m: TabularSCM, exo_idx, n, ivs: dict, memo):
    key = None
    if all(np.isscalar(v) for v in ivs.values()):
        key = tuple(sorted(ivs.items()))
        if key in memo:
            return memo[key]
    world = m.forward_columns(exo_idx, n, ivs)
    if key is not None:
        memo[key] = world
    return world


def _event_indicator(m: TabularSCM, exo_idx, n, terms: Sequence[Term], memo) -> np.ndarray:
    ind = np.ones(n, dtype=bool)
    for t in terms:
        cols, _ = _resolve_columns(m, exo_idx, n, t.interventions, memo)
        world = _world_columns(m, exo_idx, n, cols, memo)
        if t.var not in world:
            raise ScmError(f"unknown variable {t.var!r} in query")
        ind &= world[t.var] == t.value
    return ind


def _exact_sum(prob: np.ndarray, mask: np.ndarray) -> float:
    return math.fsum(prob[mask].tolist())


def enumerate_query(m: TabularSCM, q: CounterfactualQuery) -> float:
    """Exact probability (or signed sum) of ``q`` by exogenous enumeration.

    Sums ``P(u)`` over every joint exogenous state where the query's event
    holds; conditional parts are ratios of two such sums.

    Raises:
        ZeroProbabilityError: if a conditioning event has probability zero.
    """
    exo_idx, prob = m._exo_index_grid()
    n = len(prob)
    total = []
    for part in q.parts:
        memo: dict = {}
        num = _event_indicator(m, exo_idx, n, part.outcomes + part.conditions, memo)
        if part.conditions:
            den = _event_indicator(m, exo_idx, n, part.conditions, memo)
            den_p = _exact_sum(prob, den)
            if den_p <= 0.0:
                raise ZeroProbabilityError(
                    "conditioning event has probability zero")
            value = _exact_sum(prob, num) / den_p
        else:
            value = _exact_sum(prob, num)
        total.append(part.sign * value)
    return math.fsum(total)


def enumerate_distribution(
    m: TabularSCM,
    interventions: Mapping[str, int] | None = None,
) -> dict[tuple[int, ...], float]:
    """Exact joint distribution over V (declaration order) under an intervention."""
    exo_idx, prob = m._exo_index_grid()
    n = len(prob)
    world = m.forward_columns(exo_idx, n, dict(interventions or {}))
    rows = np.column_stack([world[v] for v in m.diagram.vertices])
    out: dict[tuple[int, ...], float] = {}
    order = np.lexsort(rows.T[::-1])
    rows = rows[order]
    p = prob[order]
    start = 0
    for i in range(1, n + 1):
        if i == n or not np.array_equal(rows[i], rows[start]):
            key = tuple(int(x) for x in rows[start])
            out[key] = math.fsum(p[start:i].tolist())
            start = i
    return out


# -- datasets -----------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Rows drawn from one (possibly mutilated) model.

    ``rows`` holds variable values (not bits), one column per variable in
    ``variables`` order.  ``intervention`` is empty for observational data.
    """

    variables: tuple[str, ...]
    dims: tuple[int, ...]
    intervention: tuple[tuple[str, int], ...]
    rows: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "intervention",
                           tuple(sorted((v, int(x)) for v, x in dict(self.intervention).items())))
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[1] != len(self.variables):
            raise ScmError("rows must be (n, num_variables)")
        if len(self.dims) != len(self.variables):
            raise ScmError("dims and variables must align")
        col = {v: i for i, v in enumerate(self.variables)}
        for v, x in self.intervention:
            if v not in col:
                raise ScmError(f"intervention on unknown variable {v!r}")
            if rows.size and not np.all(rows[:, col[v]] == x):
                raise ScmError(f"intervened column {v!r} is not constant {x}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def bit_matrix(self) -> np.ndarray:
        """Rows as concatenated bit columns (LSB first per variable), float64."""
        chunks = [values_to_bits(self.rows[:, i], d)
                  for i, d in enumerate(self.dims)]
        return np.concatenate(chunks, axis=1).astype(np.float64)

    def intervention_dict(self) -> dict[str, int]:
        return dict(self.intervention)


@dataclass(frozen=True)
class DatasetCollection:
    """The input collection Z: at most one dataset per distinct intervention."""

    datasets: tuple[Dataset, ...]

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        seen = set()
        for ds in self.datasets:
            if ds.intervention in seen:
                raise ScmError(
                    f"duplicate dataset for intervention {dict(ds.intervention)}")
            seen.add(ds.intervention)

    def __iter__(self):
        return iter(self.datasets)

    def __len__(self) -> int:
        return len(self.datasets)


def draw_dataset(
    m,
    intervention: Mapping[str, int] | None,
    n: int,
    seed: int,
    require_positivity: bool = False,
    max_retries: int = 20,
) -> Dataset:
    """Draw ``n`` i.i.d. rows from ``m`` under ``intervention``.

    With ``require_positivity``, redraws (bounded by ``max_retries``) until
    every joint configuration of the non-intervened variables has at least
    one row, and raises :class:`PositivityError` if that never happens --
    callers generating random ground-truth models catch this and sample a
    fresh model.
    """
    if n < 1:
        raise ScmError("n must be >= 1")
    g = m.diagram
    intervention = dict(intervention or {})
    for v in intervention:
        if v not in g:
            raise ScmError(f"intervention on unknown vertex {v!r}")
    ss = np.random.SeedSequence(seed)
    free = [v for v in g.vertices if v not in intervention]
    n_cells = math.prod(len(m.domain(v)) for v in free)
    for _ in range(max_retries):
        rng = np.random.default_rng(ss.spawn(1)[0])
        rows = m.sample_rows(rng, n, intervention)
        if not require_positivity:
            break
        idx = [g.vertices.index(v) for v in free]
        if len({tuple(r) for r in rows[:, idx]}) == n_cells:
            break
    else:
        raise PositivityError(
            f"no draw of size {n} covered all {n_cells} configurations "
            f"after {max_retries} retries")
    dims = tuple(g.dim(v) for v in g.vertices)
    return Dataset(g.vertices, dims, tuple(intervention.items()), rows, seed=seed)


# -- serialization ------------------------------------------------------------


def scm_to_json(m: TabularSCM) -> str:
    """Serialize a tabular SCM.  Pmf entries are decimal strings that
    round-trip to the exact same floats."""
    doc = {
        "diagram": format_diagram(m.diagram),
        "domains": {v: list(m.domains[v]) for v in m.diagram.vertices},
        "exo_vars": [
            {"name": ev.name, "domain": list(ev.domain),
             "pmf": [repr(p) for p in ev.pmf]}
            for ev in m.exo_vars
        ],
        "exo_assignment": {v: list(m.exo_assignment[v]) for v in m.diagram.vertices},
        "tables": {
            v: [m.tables[v][key]
                for key in itertools.product(*m._input_domains(v))]
            for v in m.diagram.vertices
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def scm_from_json(text: str) -> TabularSCM:
    """Inverse of :func:`scm_to_json`."""
    doc = json.loads(text)
    diagram = parse_diagram(doc["diagram"])
    exo_vars = [ExoVar(d["name"], tuple(d["domain"]), tuple(float(p) for p in d["pmf"]))
                for d in doc["exo_vars"]]
    exo_by_name = {ev.name: ev for ev in exo_vars}
    assignment = {v: tuple(names) for v, names in doc["exo_assignment"].items()}
    domains = {v: tuple(d) for v, d in doc["domains"].items()}
    tables: dict[str, dict[tuple, int]] = {}
    for v in diagram.vertices:
        doms = [domains[p] for p in diagram.parents(v)]
        doms += [exo_by_name[e].domain for e in assignment.get(v, ())]
        flat = doc["tables"][v]
        keys = list(itertools.product(*doms))
        if len(flat) != len(keys):
            raise ScmError(f"table for {v!r} has {len(flat)} entries, expected {len(keys)}")
        tables[v] = dict(zip(keys, flat))
    return TabularSCM(diagram, exo_vars, assignment, tables, domains,
                      check_functional=False)


def _bit_columns(variables: Sequence[str], dims: Sequence[int]) -> list[str]:
    cols = []
    for v, d in zip(variables, dims):
        cols.extend([v] if d == 1 else [f"{v}_{j}" for j in range(d)])
    return cols


def save_dataset(ds: Dataset, csv_path, manifest_path=None) -> None:
    """Write rows as bit columns to CSV, optionally with a JSON manifest."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_bit_columns(ds.variables, ds.dims))
        bits = ds.bit_matrix().astype(np.int64)
        writer.writerows(bits.tolist())
    if manifest_path is not None:
        manifest = {
            "intervention": {v: x for v, x in ds.intervention},
            "n": ds.n,
            "csv_path": csv_path.name,
            "seed": ds.seed,
        }
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from its JSON manifest (CSV path resolved relative to it)."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    csv_path = Path(manifest["csv_path"])
    if not csv_path.is_absolute():
        csv_path = manifest_path.parent / csv_path
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.asarray([[int(x) for x in row] for row in reader], dtype=np.int64)
    variables: list[str] = []
    dims: list[int] = []
    for col in header:
        base, _, suffix = col.rpartition("_")
        if base and suffix.isdigit():
            if variables and variables[-1] == base and int(suffix) == dims[-1]:
                dims[-1] += 1
                continue
            if int(suffix) == 0:
                variables.append(base)
                dims.append(1)
                continue
        variables.append(col)
        dims.append(1)
    values = []
    offset = 0
    for d in dims:
        values.append(bits_to_values(data[:, offset:offset + d]) if data.size
                      else np.zeros((0,), dtype=np.int64))
        offset += d
    rows = (np.column_stack(values) if values else
            np.zeros((data.shape[0], 0), dtype=np.int64))
    if data.size == 0:
        rows = np.zeros((0, len(variables)), dtype=np.int64)
    intervention = tuple(manifest.get("intervention", {}).items())
    return Dataset(tuple(variables), tuple(dims), intervention, rows,
                   seed=manifest.get("seed"))
