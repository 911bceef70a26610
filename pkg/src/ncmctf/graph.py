"""Causal diagrams: parsing, validation, cliques, topological order, mutilation.

A diagram is a set of named vertices (each with a bit-width ``dim``), a set of
directed edges forming a DAG, and a set of bidirected edges representing
unobserved confounding.  Diagrams are immutable; all derived structure
(parents, topological order, cliques) is computed on demand and cached.

The text format, one statement per line::

    # comment
    node Z dim=4
    Z -> X
    X -> Y
    X <-> Y

Vertices may be declared implicitly by their first mention in an edge, in
which case they get dim=1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "CausalDiagram",
    "CliqueSet",
    "DiagramError",
    "parse_diagram",
    "format_diagram",
    "maximal_bidirected_cliques",
    "topological_order",
    "mutilate",
]

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class DiagramError(ValueError):
    """Malformed diagram text or a structurally invalid diagram."""


def _as_pair(edge: Sequence[str]) -> tuple[str, str]:
    a, b = edge
    return (a, b) if a <= b else (b, a)


class CausalDiagram:
    """An immutable causal diagram.

    Args:
        vertices: iterable of vertex names, or of ``(name, dim)`` pairs.
            Order is preserved and used to break topological-order ties.
        directed: iterable of ``(parent, child)`` pairs.
        bidirected: iterable of unordered vertex pairs; stored deduplicated
            with each pair sorted by name.

    Raises:
        DiagramError: on duplicate or invalid names, self-loops, edges with
            undeclared endpoints, or a directed cycle.
    """

    __slots__ = ("_vertices", "_dims", "_directed", "_bidirected", "_topo", "_hash")

    def __init__(
        self,
        vertices: Iterable[str | tuple[str, int]],
        directed: Iterable[tuple[str, str]] = (),
        bidirected: Iterable[tuple[str, str]] = (),
    ):
        names: list[str] = []
        dims: dict[str, int] = {}
        for spec in vertices:
            name, dim = (spec, 1) if isinstance(spec, str) else spec
            if not _IDENT.match(name):
                raise DiagramError(f"invalid vertex name {name!r}")
            if name in dims:
                raise DiagramError(f"duplicate vertex {name!r}")
            if not isinstance(dim, int) or dim < 1:
                raise DiagramError(f"vertex {name!r}: dim must be a positive integer")
            names.append(name)
            dims[name] = dim

        de = set()
        for a, b in directed:
            for end in (a, b):
                if end not in dims:
                    raise DiagramError(f"edge endpoint {end!r} is not a declared vertex")
            if a == b:
                raise DiagramError(f"self-loop on {a!r}")
            de.add((a, b))

        be = set()
        for pair in bidirected:
            a, b = _as_pair(pair)
            for end in (a, b):
                if end not in dims:
                    raise DiagramError(f"edge endpoint {end!r} is not a declared vertex")
            if a == b:
                raise DiagramError(f"self-loop on {a!r}")
            be.add((a, b))

        self._vertices = tuple(names)
        self._dims = dims
        self._directed = frozenset(de)
        self._bidirected = frozenset(be)
        self._topo = self._toposort()
        self._hash = hash((self._vertices, tuple(sorted(dims.items())),
                           self._directed, self._bidirected))

    # -- basic accessors ---------------------------------------------------

    @property
    def vertices(self) -> tuple[str, ...]:
        """Vertex names in declaration order."""
        return self._vertices

    @property
    def directed(self) -> frozenset[tuple[str, str]]:
        return self._directed

    @property
    def bidirected(self) -> frozenset[tuple[str, str]]:
        return self._bidirected

    def dim(self, v: str) -> int:
        """Bit-width of vertex ``v``'s domain (domain size is ``2**dim``)."""
        return self._dims[v]

    def parents(self, v: str) -> tuple[str, ...]:
        """Parents of ``v``, sorted by name."""
        return tuple(sorted(a for a, b in self._directed if b == v))

    def children(self, v: str) -> tuple[str, ...]:
        return tuple(sorted(b for a, b in self._directed if a == v))

    def siblings(self, v: str) -> tuple[str, ...]:
        """Vertices joined to ``v`` by a bidirected edge, sorted by name."""
        out = set()
        for a, b in self._bidirected:
            if a == v:
                out.add(b)
            elif b == v:
                out.add(a)
        return tuple(sorted(out))

    def __contains__(self, v: str) -> bool:
        return v in self._dims

    def __len__(self) -> int:
        return len(self._vertices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CausalDiagram):
            return NotImplemented
        return (self._vertices == other._vertices
                and self._dims == other._dims
                and self._directed == other._directed
                and self._bidirected == other._bidirected)

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return (f"CausalDiagram({len(self._vertices)} vertices, "
                f"{len(self._directed)} directed, {len(self._bidirected)} bidirected)")

    # -- internals ---------------------------------------------------------

    def _toposort(self) -> tuple[str, ...]:
        order_of = {v: i for i, v in enumerate(self._vertices)}
        indeg = {v: 0 for v in self._vertices}
        for _, b in self._directed:
            indeg[b] += 1
        ready = sorted((v for v in self._vertices if indeg[v] == 0),
                       key=order_of.__getitem__)
        out: list[str] = []
        while ready:
            v = ready.pop(0)
            out.append(v)
            changed = False
            for a, b in self._directed:
                if a == v:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        ready.append(b)
                        changed = True
            if changed:
                ready.sort(key=order_of.__getitem__)
        if len(out) < len(self._vertices):
            raise DiagramError(f"cycle detected through vertex {self._cycle_vertex(indeg)!r}")
        return tuple(out)

    def _cycle_vertex(self, indeg: dict[str, int]) -> str:
        # Walk backwards within the unremoved subgraph until a vertex repeats;
        # that vertex necessarily lies on a directed cycle.
        stuck = {v for v in self._vertices if indeg[v] > 0}
        v = min(stuck)
        seen = []
        while v not in seen:
            seen.append(v)
            v = next(a for a, b in self._directed if b == v and a in stuck)
        return v


@dataclass(frozen=True)
class CliqueSet:
    """Maximal cliques of the bidirected part of a diagram.

    ``cliques`` is canonically ordered: each clique's members are sorted by
    name, and cliques are sorted lexicographically.  Every vertex of the
    source diagram appears in at least one clique (unconfounded vertices form
    singletons).
    """

    cliques: tuple[tuple[str, ...], ...]

    def __iter__(self):
        return iter(self.cliques)

    def __len__(self) -> int:
        return len(self.cliques)

    def containing(self, v: str) -> tuple[tuple[str, ...], ...]:
        """All cliques that include vertex ``v``, in canonical order."""
        return tuple(c for c in self.cliques if v in c)


def maximal_bidirected_cliques(g: CausalDiagram) -> CliqueSet:
    """Enumerate the maximal cliques of ``g``'s bidirected-edge graph.

    Uses Bron-Kerbosch with pivoting; diagrams here are small enough that the
    exponential worst case never bites.
    """
    adj: dict[str, set[str]] = {v: set() for v in g.vertices}
    for a, b in g.bidirected:
        adj[a].add(b)
        adj[b].add(a)

    found: list[frozenset[str]] = []

    def expand(r: set[str], p: set[str], x: set[str]) -> None:
        if not p and not x:
            found.append(frozenset(r))
            return
        pivot = max(p | x, key=lambda v: len(adj[v] & p))
        for v in sorted(p - adj[pivot]):
            expand(r | {v}, p & adj[v], x & adj[v])
            p.discard(v)
            x.add(v)

    expand(set(), set(g.vertices), set())
    return CliqueSet(tuple(sorted(tuple(sorted(c)) for c in found)))


def topological_order(g: CausalDiagram) -> tuple[str, ...]:
    """A topological order of ``g``, with ties broken by declaration order."""
    return g._topo


def mutilate(g: CausalDiagram, x_vars: Iterable[str]) -> CausalDiagram:
    """The diagram after intervening on ``x_vars``.

    Removes every directed edge into an intervened vertex and every
    bidirected edge touching one; vertices and remaining edges are unchanged.
    Idempotent.
    """
    xs = set(x_vars)
    for v in xs:
        if v not in g:
            raise DiagramError(f"unknown vertex {v!r}")
    directed = [(a, b) for a, b in g.directed if b not in xs]
    bidirected = [(a, b) for a, b in g.bidirected if a not in xs and b not in xs]
    return CausalDiagram([(v, g.dim(v)) for v in g.vertices], directed, bidirected)


def parse_diagram(text: str) -> CausalDiagram:
    """Parse diagram text into a :class:`CausalDiagram`.

    See the module docstring for the format.  Raises :class:`DiagramError`
    with a line number on syntax problems, and a cycle error naming an
    offending vertex if the directed part is cyclic.
    """
    names: list[str] = []
    dims: dict[str, int] = {}
    explicit: set[str] = set()
    directed: list[tuple[str, str]] = []
    bidirected: list[tuple[str, str]] = []

    def declare(name: str, lineno: int, dim: int | None = None) -> None:
        if dim is not None:  # explicit `node` statement
            if name in explicit:
                raise DiagramError(f"line {lineno}: duplicate declaration of {name!r}")
            if name in dims:
                raise DiagramError(
                    f"line {lineno}: {name!r} already used in an edge; "
                    "declare nodes before their edges")
            explicit.add(name)
        if name not in dims:
            names.append(name)
            dims[name] = 1 if dim is None else dim

    def ident(tok: str, lineno: int) -> str:
        if not _IDENT.match(tok):
            raise DiagramError(f"line {lineno}: invalid identifier {tok!r}")
        return tok

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node":
            if len(parts) == 2:
                declare(ident(parts[1], lineno), lineno, dim=1)
            elif len(parts) == 3 and parts[2].startswith("dim="):
                value = parts[2][4:]
                if not value.isdigit() or int(value) < 1:
                    raise DiagramError(f"line {lineno}: dim must be a positive integer")
                declare(ident(parts[1], lineno), lineno, dim=int(value))
            else:
                raise DiagramError(f"line {lineno}: expected `node NAME [dim=K]`")
        elif len(parts) == 3 and parts[1] in ("->", "<->"):
            a, b = ident(parts[0], lineno), ident(parts[2], lineno)
            declare(a, lineno)
            declare(b, lineno)
            if a == b:
                raise DiagramError(f"line {lineno}: self-loop on {a!r}")
            if parts[1] == "->":
                directed.append((a, b))
            else:
                bidirected.append((a, b))
        else:
            raise DiagramError(f"line {lineno}: cannot parse {line!r}")

    return CausalDiagram([(n, dims[n]) for n in names], directed, bidirected)


def format_diagram(g: CausalDiagram) -> str:
    """Render ``g`` in the text format; ``parse_diagram`` inverts this exactly."""
    lines = []
    for v in g.vertices:
        d = g.dim(v)
        lines.append(f"node {v}" if d == 1 else f"node {v} dim={d}")
    for a, b in sorted(g.directed):
        lines.append(f"{a} -> {b}")
    for a, b in sorted(g.bidirected):
        lines.append(f"{a} <-> {b}")
    return "\n".join(lines) + "\n"
