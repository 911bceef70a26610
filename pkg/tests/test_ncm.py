"""Network wiring, exact compilation of tabular models, and checkpoints."""

import numpy as np
import pytest

from ncmctf.fixtures import casino_scm, hiring_scm, named_graph, textbook_scm
from ncmctf.graph import maximal_bidirected_cliques, parse_diagram
from ncmctf.ncm import (
    LowAcceptanceError,
    NcmError,
    build_gncm,
    build_mle_ncm,
    compile_tabular,
    enumerate_query_compiled,
    load_ncm,
    ncm_noise_name,
    part_counts,
    save_ncm,
)
from ncmctf.query import QueryPart, Term, build_named_query, parse_query
from ncmctf.rcm import rcm_to_tabular, sample_rcm
from ncmctf.scm import ScmError, enumerate_distribution, enumerate_query

CHAIN = parse_diagram("""
node X
node Z
node Y
X -> Z
Z -> Y
""")


# -- wiring -------------------------------------------------------------------


def test_one_noise_source_per_maximal_clique():
    g = named_graph("bdm")
    m = build_gncm(g, noise_dim=3, seed=0)
    cliques = maximal_bidirected_cliques(g)
    assert sorted(m.noise_dims) == sorted(ncm_noise_name(c) for c in cliques)
    assert set(m.noise_dims.values()) == {3}
    noise = m.draw_noise(np.random.default_rng(0), 5)
    for arr in noise.values():
        assert arr.shape == (5, 3)
        assert ((0 <= arr) & (arr <= 1)).all()


def test_confounded_pair_shares_a_noise_input():
    m = build_gncm(named_graph("bow"), noise_dim=2, seed=1)
    shared = ncm_noise_name(("X", "Y"))
    assert f"{shared}:0" in m.input_labels("X")
    assert f"{shared}:0" in m.input_labels("Y")
    # Y also sees its parent's bit, before any noise
    assert m.input_labels("Y")[0] == "X:0"


def test_input_width_matches_first_layer():
    m = build_gncm(named_graph("grid-backdoor", d=2), seed=0)
    for v in m.diagram.vertices:
        assert m.nets[v][0][1].data.shape[0] == m.input_width(v)


def test_build_is_seeded():
    g = named_graph("mediation")
    a = build_gncm(g, seed=4)
    b = build_gncm(g, seed=4)
    c = build_gncm(g, seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)
    assert any((pa.data != pc.data).any()
               for pa, pc in zip(a.parameters(), c.parameters()))


def test_parameter_count():
    m = build_gncm(CHAIN, hidden=(64, 64), seed=0)
    # per vertex: 2 x (linear W,b + layernorm g,b) + output linear W,b
    assert len(m.parameters()) == 3 * 10


def test_bad_architecture_rejected():
    with pytest.raises(NcmError):
        build_gncm(CHAIN, hidden=(0,))
    with pytest.raises(NcmError):
        build_mle_ncm(CHAIN, noise_dim=0)


# -- forward evaluation -------------------------------------------------------


def test_hard_forward_is_deterministic_binary():
    m = build_gncm(named_graph("backdoor"), seed=2)
    noise = m.draw_noise(np.random.default_rng(0), 64)
    a = m.forward_bits(noise, 64)
    b = m.forward_bits(noise, 64)
    for v in m.diagram.vertices:
        np.testing.assert_array_equal(a[v], b[v])
        assert set(np.unique(a[v])) <= {0.0, 1.0}


def test_soft_forward_stays_in_unit_interval():
    m = build_gncm(named_graph("backdoor"), seed=2)
    noise = m.draw_noise(np.random.default_rng(0), 32)
    out = m.forward_bits(noise, 32, mode="soft")
    for v in m.diagram.vertices:
        assert ((0 < out[v]) & (out[v] < 1)).all()
    with pytest.raises(NcmError):
        m.forward_bits(noise, 32, mode="warm")


def test_interventions_pin_values():
    m = build_gncm(named_graph("backdoor"), seed=3)
    noise = m.draw_noise(np.random.default_rng(1), 16)
    cols = m.forward_columns(noise, 16, {"X": 1})
    assert (cols["X"] == 1).all()
    per_row = np.arange(16) % 2
    cols = m.forward_columns(noise, 16, {"X": per_row})
    np.testing.assert_array_equal(cols["X"], per_row)
    with pytest.raises(ScmError):
        m.forward_columns(noise, 16, {"X": 2})


def test_mle_forward_needs_gumbel_source():
    m = build_mle_ncm(CHAIN, seed=0)
    noise = {name: np.random.default_rng(0).uniform(size=(8, d))
             for name, d in m.noise_dims.items()}
    with pytest.raises(NcmError):
        m.forward_columns(noise, 8)
    rng = np.random.default_rng(2)
    cols = m.forward_columns(noise, 8, rng=rng)
    assert set(cols) == {"X", "Z", "Y"}
    # draw_noise remembers the stream, so the helpers can run worlds
    noise = m.draw_noise(rng, 8)
    cols = m.forward_columns(noise, 8)
    assert all(c.shape == (8,) for c in cols.values())


# -- exact compilation --------------------------------------------------------


@pytest.mark.parametrize("make,queries", [
    (casino_scm, ["P(Y[X=0]=1)", "P(Y[X=0]=1 | X=2)", "P(Y=1 | X=1)"]),
    (textbook_scm, ["P(Y[X=1]=0)", "P(Y[X=1]=0 | X=0, Y=0)"]),
    (hiring_scm, ["P(J[E=E[R=0], R=1]=1) - P(J[R=0]=1)"]),
])
def test_compiled_matches_enumeration_on_fixtures(make, queries):
    scm = make()
    net = compile_tabular(scm)
    for text in queries:
        q = parse_query(text)
        assert enumerate_query_compiled(net, q) == pytest.approx(
            enumerate_query(scm, q), abs=1e-12)


@pytest.mark.parametrize("graph,seed,kinds", [
    ("backdoor", 0, ("ate", "ett")),
    ("bdm", 4, ("ate", "ett")),
    ("mediation", 2, ("ate", "ett", "nde", "ctfde")),
])
def test_compiled_matches_enumeration_on_random_models(graph, seed, kinds):
    scm = rcm_to_tabular(sample_rcm(named_graph(graph), r=2, seed=seed))
    net = compile_tabular(scm)
    for kind in kinds:
        q = build_named_query(kind, "X", "Y", "W")
        assert enumerate_query_compiled(net, q) == pytest.approx(
            enumerate_query(scm, q), abs=1e-10)


def test_compiled_sampling_recovers_distribution():
    """Uniform noise through the thresholds must reproduce the exact pmf,
    which checks the inverse-CDF layer, not just the cell representatives."""
    scm = casino_scm()
    net = compile_tabular(scm)
    n = 200_000
    rows = np.column_stack(list(net.forward_columns(
        net.draw_noise(np.random.default_rng(0), n), n).values()))
    dist = enumerate_distribution(scm)
    for key, p in dist.items():
        freq = float((rows == np.asarray(key)).all(axis=1).mean())
        assert abs(freq - p) < 4 * (p * (1 - p) / n) ** 0.5 + 1e-4


def test_compiled_model_cannot_be_trained():
    import ncmctf.autodiff as ad

    net = compile_tabular(casino_scm())
    noise = {name: ad.Tensor(np.zeros((1, 1))) for name in net.noise_dims}
    with pytest.raises(NcmError, match="not differentiable"):
        net.forward_tensors(noise, 1)
    with pytest.raises(NcmError):
        enumerate_query_compiled(build_gncm(CHAIN), parse_query("P(X=1)"))


def test_chain_outcome_ignores_upstream_given_intervention():
    """With independent noises, Y under do(Z=z) is independent of X, so
    conditioning the counterfactual on X must not move it."""
    scm = rcm_to_tabular(sample_rcm(CHAIN, r=2, seed=3))
    net = compile_tabular(scm)
    base = enumerate_query_compiled(net, parse_query("P(Y[Z=1]=1)"))
    for x in (0, 1):
        got = enumerate_query_compiled(
            net, parse_query(f"P(Y[Z=1]=1 | Z=1, X={x})"))
        assert got == pytest.approx(base, abs=1e-12)


# -- counterfactual sampling --------------------------------------------------


def test_part_counts_tracks_exact_value():
    net = compile_tabular(casino_scm())
    rng = np.random.default_rng(7)
    m = 200_000
    part = parse_query("P(Y[X=0]=1 | X=2)").parts[0]
    num, den = part_counts(net, part, m, rng)
    want = 0.6  # exact conditional value of this model
    assert den < m  # conditioning actually rejected something
    assert abs(num / den - want) < 4 * (want * (1 - want) / den) ** 0.5


def test_part_counts_unconditional_denominator():
    net = build_gncm(CHAIN, seed=0)
    part = QueryPart(1, (Term("Y", 1),))
    num, den = part_counts(net, part, 5000, np.random.default_rng(0))
    assert den == 5000
    assert 0 <= num <= den


def test_self_intervened_term_is_certain():
    """The evaluation protocol makes P(Y[Y=1]=1) an indicator, so every draw
    satisfies it regardless of the model parameters."""
    net = build_gncm(named_graph("bow"), seed=9)
    part = QueryPart(1, (Term("Y", 1, (("Y", 1),)),))
    num, den = part_counts(net, part, 4000, np.random.default_rng(1))
    assert num == den == 4000


def test_ctf_noise_acceptance_rate():
    net = compile_tabular(casino_scm())
    rng = np.random.default_rng(5)
    noise, accepted, drawn = net.ctf_noise((Term("X", 2),), 2000, rng)
    assert accepted == 2000
    # every kept draw reproduces the condition
    cols = net.forward_columns(noise, accepted)
    assert (cols["X"] == 2).all()
    # X=2 has probability 1/3 under this model
    assert drawn * 0.15 < accepted <= drawn


def test_ctf_noise_impossible_condition():
    net = compile_tabular(casino_scm())
    rng = np.random.default_rng(0)
    with pytest.raises(LowAcceptanceError) as info:
        net.ctf_noise((Term("X", 3),), 50, rng, max_draws=10_000)
    assert info.value.accepted == 0
    noise, accepted, _ = net.ctf_noise((Term("X", 3),), 50, rng,
                                       max_draws=10_000, allow_short=True)
    assert accepted == 0
    assert all(v.shape[0] == 0 for v in noise.values())


def test_ctf_sample_nested_outcomes():
    net = compile_tabular(hiring_scm())
    q = parse_query("P(J[E=E[R=0], R=1]=1)")
    nested = q.parts[0].outcomes[0].interventions
    out = net.ctf_sample([("J", nested), ("J", ())], (), 500, 11)
    assert set(out) == {"0:J", "1:J"}
    assert all(a.shape == (500,) for a in out.values())


# -- checkpoints --------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    m = build_gncm(named_graph("bdm"), seed=6)
    path = tmp_path / "model.ckpt"
    save_ncm(m, path)
    back = load_ncm(path)
    assert back.kind == "gan"
    noise = m.draw_noise(np.random.default_rng(3), 100)
    a = m.forward_columns(noise, 100)
    b = back.forward_columns(noise, 100)
    for v in m.diagram.vertices:
        np.testing.assert_array_equal(a[v], b[v])


def test_save_load_mle_kind(tmp_path):
    m = build_mle_ncm(CHAIN, seed=1)
    path = tmp_path / "mle.ckpt"
    save_ncm(m, path)
    back = load_ncm(path)
    assert back.kind == "mle"
    assert type(back).__name__ == "MleNcm"


def test_save_load_compiled_preserves_exactness(tmp_path):
    net = compile_tabular(textbook_scm())
    path = tmp_path / "compiled.ckpt"
    save_ncm(net, path)
    back = load_ncm(path)
    q = parse_query("P(Y[X=1]=0)")
    assert enumerate_query_compiled(back, q) == pytest.approx(
        enumerate_query_compiled(net, q), abs=1e-15)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(NcmError):
        load_ncm(path)
