"""Regional canonical models: random ground-truth SCMs with exact pmfs.

Each maximal bidirected clique C gets one latent noise R_C ~ Unif(0,1).  A
vertex V belonging to cliques C_1..C_k carries ``r`` numbered regions, each a
box (one interval per incident noise axis) plus a lookup table from parent
configurations to output values; a default table applies when the latent
vector falls in no region.  The mechanism picks the highest-numbered region
containing the latent vector, so later regions "paint over" earlier ones.

Because mechanisms are piecewise constant in the latent vector, the model
converts exactly to a :class:`~ncmctf.scm.TabularSCM` by cutting every noise
axis at the union of interval endpoints; cell probabilities are the cell
widths.  That conversion is what makes these models usable as enumeration
oracles for randomly generated test settings.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .graph import CausalDiagram, CliqueSet, maximal_bidirected_cliques
from .scm import ExoVar, ScmError, TabularSCM

__all__ = [
    "Region",
    "RegionalCanonicalModel",
    "sample_rcm",
    "rcm_to_tabular",
    "clique_noise_name",
]


def clique_noise_name(clique: tuple[str, ...]) -> str:
    return "R_" + "_".join(clique)


@dataclass(frozen=True)
class Region:
    """One region: a closed box over the incident noise axes plus a table.

    ``intervals`` pairs each incident clique-noise name with its [a, b]
    bounds; ``table`` is flat over parent configurations in lexicographic
    order (parents sorted by name, each over its full bit-width domain).
    """

    intervals: tuple[tuple[str, tuple[float, float]], ...]
    table: tuple[int, ...]


@dataclass(eq=True)
class RegionalCanonicalModel:
    diagram: CausalDiagram
    r: int
    cliques: CliqueSet
    regions: dict[str, tuple[Region, ...]]
    defaults: dict[str, tuple[int, ...]]

    def __post_init__(self):
        names = [clique_noise_name(c) for c in self.cliques]
        if len(set(names)) != len(names):
            raise ScmError("clique noise names collide; rename vertices")
        self.noise_names = tuple(names)
        self._incident = {
            v: tuple(clique_noise_name(c) for c in self.cliques.containing(v))
            for v in self.diagram.vertices
        }

    # -- scalar evaluation protocol (shared with TabularSCM) ---------------

    def domain(self, v: str) -> tuple[int, ...]:
        return tuple(range(2 ** self.diagram.dim(v)))

    def _parent_index(self, v: str, values: Mapping[str, int]) -> int:
        idx = 0
        for p in self.diagram.parents(v):
            idx = idx * 2 ** self.diagram.dim(p) + values[p]
        return idx

    def mechanism(self, v: str, values: Mapping[str, int], u: Mapping[str, float]) -> int:
        pidx = self._parent_index(v, values)
        for region in reversed(self.regions[v]):
            if all(a <= u[name] <= b for name, (a, b) in region.intervals):
                return region.table[pidx]
        return self.defaults[v][pidx]

    # -- vectorized sampling ------------------------------------------------

    def sample_noise(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        return {name: rng.uniform(size=n) for name in self.noise_names}

    def forward_columns(
        self,
        noise: Mapping[str, np.ndarray],
        n: int,
        interventions: Mapping[str, int] | None = None,
    ) -> dict[str, np.ndarray]:
        interventions = interventions or {}
        values: dict[str, np.ndarray] = {}
        for v in self.diagram._topo:
            if v in interventions:
                iv = int(interventions[v])
                if iv not in self.domain(v):
                    raise ScmError(f"value {iv} outside domain of {v!r}")
                values[v] = np.full(n, iv, dtype=np.int64)
                continue
            sel = np.full(n, self.r, dtype=np.int64)  # r = default sentinel
            for i, region in enumerate(self.regions[v]):
                inside = np.ones(n, dtype=bool)
                for name, (a, b) in region.intervals:
                    inside &= (noise[name] >= a) & (noise[name] <= b)
                sel[inside] = i
            tables = np.asarray([reg.table for reg in self.regions[v]]
                                + [self.defaults[v]], dtype=np.int64)
            pidx = np.zeros(n, dtype=np.int64)
            for p in self.diagram.parents(v):
                pidx = pidx * 2 ** self.diagram.dim(p) + values[p]
            values[v] = tables[sel, pidx]
        return values

    def sample_rows(
        self,
        rng: np.random.Generator,
        n: int,
        interventions: Mapping[str, int] | None = None,
    ) -> np.ndarray:
        cols = self.forward_columns(self.sample_noise(rng, n), n, interventions)
        return np.column_stack([cols[v] for v in self.diagram.vertices])


def _sample_table(rng: np.random.Generator, n_configs: int, dim: int) -> tuple[int, ...]:
    bits = rng.integers(0, 2, size=(n_configs, dim))
    return tuple(int(x) for x in (bits << np.arange(dim)).sum(axis=1))


def sample_rcm(g: CausalDiagram, r: int, seed: int) -> RegionalCanonicalModel:
    """Draw a random regional canonical model on diagram ``g``.

    Every interval is two Unif(0,1) draws sorted; every table entry is an
    independent Bernoulli(0.5) bit per output bit.  The draw order (vertices
    in declaration order, regions in index order, incident cliques in
    canonical order, then the default table) is fixed, so a seed fully
    determines the model.
    """
    if r < 1:
        raise ScmError("region count r must be >= 1")
    rng = np.random.default_rng(seed)
    cliques = maximal_bidirected_cliques(g)
    regions: dict[str, tuple[Region, ...]] = {}
    defaults: dict[str, tuple[int, ...]] = {}
    for v in g.vertices:
        incident = [clique_noise_name(c) for c in cliques.containing(v)]
        n_configs = int(np.prod([2 ** g.dim(p) for p in g.parents(v)])) if g.parents(v) else 1
        vr = []
        for _ in range(r):
            intervals = []
            for name in incident:
                a, b = np.sort(rng.uniform(size=2))
                intervals.append((name, (float(a), float(b))))
            vr.append(Region(tuple(intervals), _sample_table(rng, n_configs, g.dim(v))))
        regions[v] = tuple(vr)
        defaults[v] = _sample_table(rng, n_configs, g.dim(v))
    return RegionalCanonicalModel(g, r, cliques, regions, defaults)


def rcm_to_tabular(m: RegionalCanonicalModel) -> TabularSCM:
    """Convert to an exactly equivalent tabular SCM.

    Each noise axis is cut at the union of its interval endpoints into
    half-open cells [lo, hi); a cell's probability is its width, and region
    membership is constant on cells, so the conversion changes the model only
    on a measure-zero set of latent values.
    """
    g = m.diagram
    cells: dict[str, list[tuple[float, float]]] = {}
    exo_vars = []
    for clique in m.cliques:
        name = clique_noise_name(clique)
        endpoints = {0.0, 1.0}
        for v in clique:
            for region in m.regions[v]:
                bounds = dict(region.intervals)[name]
                endpoints.update(bounds)
        pts = sorted(endpoints)
        cell_list = list(zip(pts, pts[1:]))
        cells[name] = cell_list
        exo_vars.append(ExoVar(name, tuple(range(len(cell_list))),
                               tuple(hi - lo for lo, hi in cell_list)))

    assignment = {v: list(m._incident[v]) for v in g.vertices}
    tables: dict[str, dict[tuple, int]] = {}
    for v in g.vertices:
        parents = g.parents(v)
        pdoms = [range(2 ** g.dim(p)) for p in parents]
        edoms = [range(len(cells[name])) for name in m._incident[v]]
        table: dict[tuple, int] = {}
        for key in itertools.product(*pdoms, *edoms):
            pvals = key[:len(parents)]
            cidx = key[len(parents):]
            pidx = 0
            for p, val in zip(parents, pvals):
                pidx = pidx * 2 ** g.dim(p) + val
            out = m.defaults[v][pidx]
            for region in reversed(m.regions[v]):
                ok = True
                for (name, (a, b)), ci in zip(region.intervals, cidx):
                    lo, hi = cells[name][ci]
                    if not (a <= lo and hi <= b):
                        ok = False
                        break
                if ok:
                    out = region.table[pidx]
                    break
            table[key] = out
        tables[v] = table
    return TabularSCM(g, exo_vars, assignment, tables, check_functional=False)
