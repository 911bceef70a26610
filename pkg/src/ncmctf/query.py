"""Counterfactual query ASTs, the four named effect builders, and unnesting.

A query is a signed sum of probability parts.  Each part is a conjunction of
outcome terms, optionally conditioned on further terms.  A term fixes one
variable to a value under a list of interventions, and an intervention value
may itself be a potential response (``W[X=0]``), giving nested counterfactuals
such as ``P(Y[X=1, W=W[X=0]]=1)``.

Text form examples::

    P(Y[X=0]=1 | X=2)
    P(Y[X=1]=1) - P(Y[X=0]=1)
    nde(X,Y;W)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Union

__all__ = [
    "QueryError",
    "PotentialValue",
    "Term",
    "QueryPart",
    "CounterfactualQuery",
    "build_named_query",
    "parse_query",
    "format_query",
    "unnest_cut",
    "query_variables",
]

NAMED_KINDS = ("ate", "ett", "nde", "ctfde")

_MAX_NESTING = 32


class QueryError(ValueError):
    """Malformed query text or an invalid query structure."""


Value = Union[int, "PotentialValue"]


def _check_interventions(owner: str, ivs: tuple[tuple[str, Value], ...], depth: int) -> None:
    if depth > _MAX_NESTING:
        raise QueryError("nesting specification too deep (cyclic?)")
    # ``owner`` may itself be an intervention target: by the consistency
    # axiom the term then reads off the pinned value (an exact indicator).
    seen = set()
    for target, value in ivs:
        if target in seen:
            raise QueryError(f"duplicate intervention target {target!r}")
        seen.add(target)
        if isinstance(value, PotentialValue):
            _check_interventions(value.var, value.interventions, depth + 1)
        elif not isinstance(value, int) or value < 0:
            raise QueryError(f"intervention value for {target!r} must be a non-negative int")


def _sorted_ivs(ivs: Iterable[tuple[str, Value]]) -> tuple[tuple[str, Value], ...]:
    return tuple(sorted(ivs, key=lambda tv: tv[0]))


@dataclass(frozen=True)
class PotentialValue:
    """A potential response ``var`` under ``interventions``, used as a value."""

    var: str
    interventions: tuple[tuple[str, Value], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "interventions", _sorted_ivs(self.interventions))
        _check_interventions(self.var, self.interventions, 0)


@dataclass(frozen=True)
class Term:
    """One conjunct: ``var`` equals ``value`` under ``interventions``."""

    var: str
    value: int
    interventions: tuple[tuple[str, Value], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "interventions", _sorted_ivs(self.interventions))
        if not isinstance(self.value, int) or self.value < 0:
            raise QueryError(f"value of {self.var!r} must be a non-negative int")
        _check_interventions(self.var, self.interventions, 0)

    @property
    def nested(self) -> bool:
        return any(isinstance(v, PotentialValue) for _, v in self.interventions)


@dataclass(frozen=True)
class QueryPart:
    """A signed conditional probability ``sign * P(outcomes | conditions)``."""

    sign: int
    outcomes: tuple[Term, ...]
    conditions: tuple[Term, ...] = ()

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise QueryError("sign must be +1 or -1")


@dataclass(frozen=True)
class CounterfactualQuery:
    """A signed sum of probability parts.  A single +1 part is a plain probability."""

    parts: tuple[QueryPart, ...]

    def __post_init__(self):
        if not self.parts:
            raise QueryError("query needs at least one part")

    @classmethod
    def probability(cls, outcomes: Iterable[Term],
                    conditions: Iterable[Term] = ()) -> "CounterfactualQuery":
        return cls((QueryPart(1, tuple(outcomes), tuple(conditions)),))

    @property
    def kind(self) -> str:
        """``"probability"`` for a single positive part, else ``"difference"``."""
        if len(self.parts) == 1 and self.parts[0].sign == 1:
            return "probability"
        return "difference"

    @property
    def nested(self) -> bool:
        return any(t.nested for p in self.parts for t in p.outcomes + p.conditions)


def build_named_query(kind: str, x: str, y: str, w: str | None = None) -> CounterfactualQuery:
    """Build one of the four named effect queries.

    Args:
        kind: one of ``ate``, ``ett``, ``nde``, ``ctfde`` (case-insensitive).
        x: treatment variable.
        y: outcome variable.
        w: mediator variable; required for ``nde`` and ``ctfde``.

    Returns:
        ATE   = P(Y[X=1]=1) - P(Y[X=0]=1)
        ETT   = P(Y[X=1]=1 | X=1) - P(Y[X=0]=1 | X=1)
        NDE   = P(Y[X=1, W=W[X=0]]=1) - P(Y[X=0]=1)
        CtfDE = P(Y[X=1, W=W[X=0]]=1 | X=1) - P(Y[X=0]=1 | X=1)
    """
    k = kind.lower()
    if k not in NAMED_KINDS:
        raise QueryError(f"unknown named query {kind!r}")
    if k in ("nde", "ctfde"):
        if w is None:
            raise QueryError(f"{k} requires a mediator variable")
        first = Term(y, 1, ((x, 1), (w, PotentialValue(w, ((x, 0),)))))
    else:
        first = Term(y, 1, ((x, 1),))
    second = Term(y, 1, ((x, 0),))
    cond = (Term(x, 1),) if k in ("ett", "ctfde") else ()
    return CounterfactualQuery((
        QueryPart(1, (first,), cond),
        QueryPart(-1, (second,), cond),
    ))


def query_variables(q: CounterfactualQuery) -> set[str]:
    """All variable names mentioned anywhere in ``q``."""
    out: set[str] = set()

    def visit_ivs(ivs):
        for target, value in ivs:
            out.add(target)
            if isinstance(value, PotentialValue):
                out.add(value.var)
                visit_ivs(value.interventions)

    for part in q.parts:
        for term in part.outcomes + part.conditions:
            out.add(term.var)
            visit_ivs(term.interventions)
    return out


# -- unnesting ---------------------------------------------------------------


def unnest_cut(q: CounterfactualQuery, g) -> CounterfactualQuery:
    """Rewrite nested potential responses into an unnested signed sum.

    Applies, recursively, the expansion

        P(Y[Z..., W=W[S...]] = y)  =  sum_w P(Y[Z..., W=w] = y, W[S...] = w)

    where the sum runs over the ``2**dim`` values of the nested variable.
    Already-atomic queries are returned unchanged.

    Args:
        q: the query to rewrite.
        g: the :class:`~ncmctf.graph.CausalDiagram` supplying variable domains.

    Raises:
        QueryError: if a nested value appears inside a condition term (the
            expansion does not distribute over the conditioning ratio), or if
            a nested value's variable differs from its intervention target.
    """
    parts: list[QueryPart] = []
    for part in q.parts:
        parts.extend(_unnest_part(part, g))
    return CounterfactualQuery(tuple(parts))


def _unnest_part(part: QueryPart, g) -> list[QueryPart]:
    for term in part.conditions:
        if term.nested:
            raise QueryError("cannot unnest a potential response inside a condition")
    for ti, term in enumerate(part.outcomes):
        for target, value in term.interventions:
            if isinstance(value, PotentialValue):
                return _expand(part, ti, target, value, g)
    return [part]


def _expand(part: QueryPart, ti: int, target: str, pv: PotentialValue, g) -> list[QueryPart]:
    if pv.var != target:
        raise QueryError(
            f"nested value {pv.var!r} must match its intervention target {target!r}")
    term = part.outcomes[ti]
    out: list[QueryPart] = []
    for w in range(2 ** g.dim(target)):
        ivs = tuple((t, w if t == target else v) for t, v in term.interventions)
        replaced = Term(term.var, term.value, ivs)
        witness = Term(pv.var, w, pv.interventions)
        outcomes = part.outcomes[:ti] + (replaced,) + part.outcomes[ti + 1:] + (witness,)
        out.extend(_unnest_part(QueryPart(part.sign, outcomes, part.conditions), g))
    return out


# -- text form ---------------------------------------------------------------


def format_query(q: CounterfactualQuery) -> str:
    """Render ``q`` in the text form; ``parse_query`` inverts this exactly."""
    chunks = []
    for i, part in enumerate(q.parts):
        if i == 0:
            prefix = "" if part.sign == 1 else "-"
        else:
            prefix = " + " if part.sign == 1 else " - "
        chunks.append(prefix + _format_part(part))
    return "".join(chunks)


def _format_part(part: QueryPart) -> str:
    inner = ", ".join(_format_term(t) for t in part.outcomes)
    if part.conditions:
        inner += " | " + ", ".join(_format_term(t) for t in part.conditions)
    return f"P({inner})"


def _format_term(t: Term) -> str:
    return f"{_format_ref(t.var, t.interventions)}={t.value}"


def _format_ref(var: str, ivs: tuple[tuple[str, Value], ...]) -> str:
    if not ivs:
        return var
    body = ", ".join(
        f"{target}={_format_ref(v.var, v.interventions) if isinstance(v, PotentialValue) else v}"
        for target, v in ivs)
    return f"{var}[{body}]"


_TOKEN = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<int>\d+)|(?P<sym>[()\[\],|=;+-]))")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                break
            kind = m.lastgroup
            assert kind is not None
            self.tokens.append((kind, m.group(kind), m.start(kind)))
            pos = m.end()
        rest = text[pos:]
        if rest.strip():
            bad = pos + (len(rest) - len(rest.lstrip()))
            raise QueryError(f"position {bad}: unexpected character {text[bad]!r}")
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("eof", "", len(self.text))

    def take(self) -> tuple[str, str, int]:
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, got, pos = self.take()
        if got != value:
            shown = got if kind != "eof" else "end of input"
            raise QueryError(f"position {pos}: expected {value!r}, got {shown!r}")

    def at(self, value: str) -> bool:
        return self.peek()[1] == value


def parse_query(text: str) -> CounterfactualQuery:
    """Parse the query text form.  Raises :class:`QueryError` with a position."""
    p = _Parser(text)
    parts: list[QueryPart] = []
    sign = 1
    if p.at("-"):
        p.take()
        sign = -1
    elif p.at("+"):
        p.take()
    parts.extend(_parse_group(p, sign))
    while p.peek()[1] in ("+", "-"):
        sign = 1 if p.take()[1] == "+" else -1
        parts.extend(_parse_group(p, sign))
    kind, value, pos = p.peek()
    if kind != "eof":
        raise QueryError(f"position {pos}: unexpected {value!r}")
    return CounterfactualQuery(tuple(parts))


def _parse_group(p: _Parser, sign: int) -> list[QueryPart]:
    kind, value, pos = p.take()
    if kind != "ident":
        raise QueryError(f"position {pos}: expected 'P' or a named query")
    if value == "P":
        return [_apply_sign(_parse_prob(p), sign)]
    if value.lower() in NAMED_KINDS:
        return [_apply_sign(part, sign)
                for part in _parse_named(p, value.lower()).parts]
    raise QueryError(f"position {pos}: unknown query form {value!r}")


def _apply_sign(part: QueryPart, sign: int) -> QueryPart:
    return QueryPart(part.sign * sign, part.outcomes, part.conditions)


def _parse_named(p: _Parser, kind: str) -> CounterfactualQuery:
    p.expect("(")
    x = _parse_ident(p)
    p.expect(",")
    y = _parse_ident(p)
    w = None
    if p.at(";"):
        p.take()
        w = _parse_ident(p)
    p.expect(")")
    return build_named_query(kind, x, y, w)


def _parse_ident(p: _Parser) -> str:
    kind, value, pos = p.take()
    if kind != "ident":
        raise QueryError(f"position {pos}: expected a variable name")
    return value


def _parse_prob(p: _Parser) -> QueryPart:
    p.expect("(")
    outcomes: list[Term] = []
    conditions: list[Term] = []
    if not p.at(")") and not p.at("|"):
        outcomes.append(_parse_term(p))
        while p.at(","):
            p.take()
            outcomes.append(_parse_term(p))
    if p.at("|"):
        p.take()
        conditions.append(_parse_term(p))
        while p.at(","):
            p.take()
            conditions.append(_parse_term(p))
    p.expect(")")
    return QueryPart(1, tuple(outcomes), tuple(conditions))


def _parse_term(p: _Parser) -> Term:
    var, ivs = _parse_ref(p)
    p.expect("=")
    kind, value, pos = p.take()
    if kind != "int":
        raise QueryError(f"position {pos}: expected an integer value")
    return Term(var, int(value), ivs)


def _parse_ref(p: _Parser) -> tuple[str, tuple[tuple[str, Value], ...]]:
    var = _parse_ident(p)
    ivs: list[tuple[str, Value]] = []
    if p.at("["):
        p.take()
        while True:
            target = _parse_ident(p)
            p.expect("=")
            kind, value, pos = p.peek()
            if kind == "int":
                p.take()
                ivs.append((target, int(value)))
            elif kind == "ident":
                inner_var, inner_ivs = _parse_ref(p)
                ivs.append((target, PotentialValue(inner_var, inner_ivs)))
            else:
                raise QueryError(f"position {pos}: expected a value")
            if p.at(","):
                p.take()
                continue
            break
        p.expect("]")
    return var, tuple(ivs)
