"""Small worked-example models and named diagrams used by tests and the CLI.

Each SCM here is a hand-specified ground truth with known exact query values
(collected in the tests).  The diagrams double as the benchmark settings for
the identification experiments.
"""

from __future__ import annotations

import itertools

from .graph import CausalDiagram, parse_diagram
from .scm import ExoVar, TabularSCM

__all__ = [
    "NAMED_GRAPHS",
    "GRID_GRAPHS",
    "named_graph",
    "casino_scm",
    "textbook_scm",
    "drug_trial_scm",
    "drug_trial_bound_models",
    "hiring_scm",
    "bow_pair",
]

# The grid graphs marked (d) give Z dimension d; the rest ignore d.
_GRAPH_TEXT = {
    "backdoor": "node Z dim={d}\nZ -> X\nZ -> Y\nX -> Y\n",
    "bow": "X -> Y\nX <-> Y\n",
    "bdm": "node Z dim={d}\nZ -> X\nZ -> Y\nX -> Y\nX <-> Z\nZ <-> Y\n",
    "mediation": "X -> W\nX -> Y\nW -> Y\nX <-> W\n",
    "direct": "X -> Y\n",
    "grid-backdoor": "node Z dim={d}\nZ -> X\nZ -> Y\nX -> W\nW -> Y\nX -> Y\n",
    "grid-bdm": ("node Z dim={d}\nZ -> X\nZ -> Y\nX -> W\nW -> Y\nX -> Y\n"
                 "X <-> Z\nZ <-> Y\n"),
    "grid-fairness": ("node Z dim={d}\nX -> W\nX -> Y\nW -> Y\nZ -> W\nZ -> Y\n"
                      "X <-> Z\n"),
}

NAMED_GRAPHS = tuple(sorted(_GRAPH_TEXT) + ["grid-mediation"])

# The four-graph benchmark grid.  The source figure for these is pictorial,
# so they are best-effort transcriptions: standard structures from the
# mediation and fairness literature with X the treatment, Y the outcome,
# W a mediator, and Z observed features of adjustable dimension.
GRID_GRAPHS = ("grid-backdoor", "grid-mediation", "grid-bdm", "grid-fairness")


def named_graph(name: str, d: int = 1) -> CausalDiagram:
    """Look up a benchmark diagram by name; ``d`` sets Z's dimension."""
    if name == "grid-mediation":
        name = "mediation"
    if name not in _GRAPH_TEXT:
        raise KeyError(f"unknown graph {name!r}; known: {', '.join(NAMED_GRAPHS)}")
    if d < 1:
        raise ValueError("d must be >= 1")
    return parse_diagram(_GRAPH_TEXT[name].format(d=d))


def _tabulate(g: CausalDiagram, domains, exo_vars, assignment, fns):
    """Build full function tables by evaluating plain python functions.

    ``fns[v]`` receives parent values (parents sorted by name) followed by
    that vertex's exogenous values in assignment order.
    """
    by_name = {ev.name: ev for ev in exo_vars}
    tables = {}
    for v in g.vertices:
        key_doms = [domains.get(p, (0, 1)) for p in g.parents(v)]
        key_doms += [by_name[e].domain for e in assignment[v]]
        tables[v] = {key: fns[v](*key) for key in itertools.product(*key_doms)}
    return tables


def casino_scm() -> TabularSCM:
    """Three slot machines with a tricky payout scheme.

    X in {0,1,2} is the machine a customer picks (they favor machine U_M);
    Y is a win.  The machine one step above the favorite pays out with
    probability 0.6, the favorite with 0.4, and one step below with 0.2, so
    observed and interventional win rates coincide: P(Y_{X=0}=1) = 0.4 while
    P(Y_{X=0}=1 | X=2) = 0.6.
    """
    g = parse_diagram("node X dim=2\nnode Y\nX -> Y\nX <-> Y\n")
    third = 1.0 / 3.0
    exo = [
        ExoVar("U_M", (0, 1, 2), (third, third, third)),
        ExoVar("U_plus", (0, 1), (0.4, 0.6)),
        ExoVar("U_eq", (0, 1), (0.6, 0.4)),
        ExoVar("U_minus", (0, 1), (0.8, 0.2)),
    ]
    assignment = {"X": ("U_M",), "Y": ("U_M", "U_plus", "U_eq", "U_minus")}

    def f_y(x, u_m, u_plus, u_eq, u_minus):
        if x == u_m:
            return u_eq
        if x == (u_m - 1) % 3:
            return u_minus
        return u_plus

    domains = {"X": (0, 1, 2), "Y": (0, 1)}
    tables = _tabulate(g, domains, exo, assignment,
                       {"X": lambda u_m: u_m, "Y": f_y})
    return TabularSCM(g, exo, assignment, tables, domains=domains)


def textbook_scm() -> TabularSCM:
    """Confounded textbook adoption vs school performance.

    Observationally the new textbook (X=1) looks helpful, but intervening
    shows the opposite: P(Y_{X=0}=1) = 0.32 vs P(Y_{X=1}=1) = 0.16.
    """
    g = parse_diagram("X -> Y\nX <-> Y\n")
    exo = [
        ExoVar("U_XY", (0, 1), (0.8, 0.2)),
        ExoVar("U_Y1", (0, 1), (0.8, 0.2)),
        ExoVar("U_Y2", (0, 1), (0.5, 0.5)),
        ExoVar("U_Y3", (0, 1), (0.4, 0.6)),
    ]
    assignment = {"X": ("U_XY",), "Y": ("U_XY", "U_Y1", "U_Y2", "U_Y3")}

    def f_y(x, u_xy, u_y1, u_y2, u_y3):
        if u_xy == 0:
            return (1 - x) & u_y1
        return (x ^ u_y2) | u_y3

    tables = _tabulate(g, {}, exo, assignment,
                       {"X": lambda u_xy: u_xy, "Y": f_y})
    return TabularSCM(g, exo, assignment, tables)


def drug_trial_scm() -> TabularSCM:
    """Drug with zero average effect but a real individual-level effect.

    All of layer 1 and layer 2 is uniform noise (every P(X,Y) cell is 1/4 and
    P(Y_x=y) = 1/2), yet the probability of sufficiency
    P(Y_{X=1}=1 | X=0, Y=0) is 1/2 -- and not recoverable from the data, as
    the two models from :func:`drug_trial_bound_models` show.
    """
    g = parse_diagram("X -> Y\n")
    exo = [
        ExoVar("U_X", (0, 1), (0.5, 0.5)),
        ExoVar("U_Y1", (0, 1), (0.5, 0.5)),
        ExoVar("U_Y2", (0, 1), (0.5, 0.5)),
    ]
    assignment = {"X": ("U_X",), "Y": ("U_Y1", "U_Y2")}

    def f_y(x, u_y1, u_y2):
        return (x ^ u_y1) if u_y2 == 0 else u_y1

    tables = _tabulate(g, {}, exo, assignment,
                       {"X": lambda u_x: u_x, "Y": f_y})
    return TabularSCM(g, exo, assignment, tables)


def drug_trial_bound_models() -> tuple[TabularSCM, TabularSCM]:
    """Two models matching :func:`drug_trial_scm` on layers 1 and 2.

    The first treats Y as independent noise and puts the sufficiency query
    at 0; the second flips Y with the drug and puts it at 1.
    """
    g = parse_diagram("X -> Y\n")
    exo = [ExoVar("U_X", (0, 1), (0.5, 0.5)), ExoVar("U_Y", (0, 1), (0.5, 0.5))]
    assignment = {"X": ("U_X",), "Y": ("U_Y",)}
    fns_const = {"X": lambda u_x: u_x, "Y": lambda x, u_y: u_y}
    fns_flip = {"X": lambda u_x: u_x, "Y": lambda x, u_y: x ^ u_y}
    lo = TabularSCM(g, exo, assignment, _tabulate(g, {}, exo, assignment, fns_const),
                    check_functional=False)
    hi = TabularSCM(g, exo, assignment, _tabulate(g, {}, exo, assignment, fns_flip))
    return lo, hi


def hiring_scm() -> TabularSCM:
    """Race (R), education (E) and job offers (J) with R-E confounding.

    The diagram is R -> E, R -> J, E -> J with R <-> E.  Direct
    discrimination is measured by the natural direct effect
    P(J_{R=1, E_{R=0}}=1) - P(J_{R=0}=1) = 0.5 - 0.75 = -0.25, while the
    total effect (ATE) is -0.375.
    """
    g = parse_diagram("R -> E\nR -> J\nE -> J\nR <-> E\n")
    exo = [
        ExoVar("U_RE", (0, 1), (0.5, 0.5)),
        ExoVar("U_E", (0, 1), (0.75, 0.25)),
        ExoVar("U_J", (0, 1), (0.75, 0.25)),
    ]
    assignment = {"R": ("U_RE",), "E": ("U_RE", "U_E"), "J": ("U_J",)}

    def f_e(r, u_re, u_e):
        return ((1 - u_re) & (1 - r)) ^ u_e

    def f_j(e, r, u_j):  # parents of J sorted by name: E before R
        return ((1 - r) | e) ^ u_j

    tables = _tabulate(g, {}, exo, assignment,
                       {"R": lambda u_re: u_re, "E": f_e, "J": f_j})
    return TabularSCM(g, exo, assignment, tables)


def bow_pair() -> tuple[TabularSCM, TabularSCM]:
    """A confounded model and a Markovian impostor that agree on layer 1.

    Both give P(Y=1) = 0.5 and P(Y=1 | X=1) = 0.9.  In the confounded model
    (on the bow graph) X has no real effect, so P(Y_{X=1}=1) = 0.5; the
    Markovian model on the plain X -> Y graph puts it at 0.9.
    """
    g_bow = parse_diagram("X -> Y\nX <-> Y\n")
    exo_bow = [ExoVar("U_XY", (0, 1), (0.5, 0.5)), ExoVar("U_Y", (0, 1), (0.9, 0.1))]
    asg_bow = {"X": ("U_XY",), "Y": ("U_XY", "U_Y")}
    fns_bow = {"X": lambda u_xy: u_xy, "Y": lambda x, u_xy, u_y: u_xy ^ u_y}
    confounded = TabularSCM(
        g_bow, exo_bow, asg_bow, _tabulate(g_bow, {}, exo_bow, asg_bow, fns_bow),
        check_functional=False)

    g_markov = parse_diagram("X -> Y\n")
    exo_m = [ExoVar("U_X", (0, 1), (0.5, 0.5)), ExoVar("U_Y", (0, 1), (0.9, 0.1))]
    asg_m = {"X": ("U_X",), "Y": ("U_Y",)}
    fns_m = {"X": lambda u_x: u_x, "Y": lambda x, u_y: x ^ u_y}
    markovian = TabularSCM(
        g_markov, exo_m, asg_m, _tabulate(g_markov, {}, exo_m, asg_m, fns_m))
    return confounded, markovian
