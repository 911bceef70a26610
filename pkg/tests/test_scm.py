"""The enumeration oracle, sampling, and serialization of tabular models.

The worked-example fixtures have hand-checkable exact values; those are
frozen here and reused by the acceptance suite.
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncmctf.fixtures import (bow_pair, casino_scm, drug_trial_bound_models,
                             drug_trial_scm, hiring_scm, named_graph,
                             textbook_scm)
from ncmctf.query import parse_query
from ncmctf.rcm import rcm_to_tabular, sample_rcm
from ncmctf.scm import (Dataset, DatasetCollection, ScmError,
                        ZeroProbabilityError, bits_to_values, draw_dataset,
                        enumerate_distribution, enumerate_query, load_dataset,
                        potential_response, save_dataset, scm_from_json,
                        scm_to_json, values_to_bits)


def _probe_models():
    """A few structurally different models for property-style checks."""
    yield casino_scm()
    yield hiring_scm()
    for seed in (0, 1):
        yield rcm_to_tabular(sample_rcm(named_graph("bdm"), r=2, seed=seed))


# -- frozen fixture values ----------------------------------------------------


def test_casino_machine_query():
    m = casino_scm()
    assert enumerate_query(m, parse_query("P(Y[X=0]=1)")) \
        == pytest.approx(0.4, abs=1e-12)
    assert enumerate_query(m, parse_query("P(Y[X=0]=1 | X=2)")) \
        == pytest.approx(0.6, abs=1e-12)


def test_textbook_reversal():
    m = textbook_scm()
    assert enumerate_query(m, parse_query("P(Y[X=0]=1)")) \
        == pytest.approx(0.32, abs=1e-12)
    assert enumerate_query(m, parse_query("P(Y[X=1]=1)")) \
        == pytest.approx(0.16, abs=1e-12)
    # observationally the ordering is reversed
    assert enumerate_query(m, parse_query("P(Y=1 | X=1)")) \
        > enumerate_query(m, parse_query("P(Y=1 | X=0)"))


def test_drug_trial_sufficiency_is_underdetermined():
    ps = parse_query("P(Y[X=1]=1 | X=0, Y=0)")
    assert enumerate_query(drug_trial_scm(), ps) == pytest.approx(0.5, abs=1e-12)
    lo, hi = drug_trial_bound_models()
    assert enumerate_query(lo, ps) == pytest.approx(0.0, abs=1e-12)
    assert enumerate_query(hi, ps) == pytest.approx(1.0, abs=1e-12)
    # all three agree on every observational cell
    for x in (0, 1):
        for y in (0, 1):
            cell = parse_query(f"P(X={x}, Y={y})")
            want = enumerate_query(drug_trial_scm(), cell)
            assert enumerate_query(lo, cell) == pytest.approx(want, abs=1e-12)
            assert enumerate_query(hi, cell) == pytest.approx(want, abs=1e-12)


def test_hiring_direct_effect():
    assert enumerate_query(hiring_scm(), parse_query("nde(R,J;E)")) \
        == pytest.approx(-0.25, abs=1e-12)


def test_bow_pair_agrees_on_observations_not_effects():
    confounded, markovian = bow_pair()
    for text in ("P(X=1)", "P(Y=1)", "P(Y=1 | X=1)", "P(Y=1 | X=0)"):
        q = parse_query(text)
        assert enumerate_query(confounded, q) \
            == pytest.approx(enumerate_query(markovian, q), abs=1e-12)
    ate = parse_query("ate(X,Y)")
    assert enumerate_query(confounded, ate) == pytest.approx(0.0, abs=1e-12)
    assert enumerate_query(markovian, ate) == pytest.approx(0.8, abs=1e-12)


# -- oracle laws --------------------------------------------------------------


@pytest.mark.parametrize("m", list(_probe_models()),
                         ids=lambda m: repr(m.diagram))
def test_distributions_normalize(m):
    for iv in ({}, {m.diagram.vertices[0]: 1}):
        dist = enumerate_distribution(m, iv)
        total = sum(dist.values())
        assert total == pytest.approx(1.0, abs=1e-12)
        assert all(p >= 0 for p in dist.values())


@pytest.mark.parametrize("m", list(_probe_models()),
                         ids=lambda m: repr(m.diagram))
def test_conditioning_is_a_ratio(m):
    v0, v1 = m.diagram.vertices[0], m.diagram.vertices[-1]
    joint = enumerate_query(m, parse_query(f"P({v1}=1, {v0}=0)"))
    marg = enumerate_query(m, parse_query(f"P({v0}=0)"))
    if marg > 0:
        cond = enumerate_query(m, parse_query(f"P({v1}=1 | {v0}=0)"))
        assert cond == pytest.approx(joint / marg, abs=1e-12)


def test_empty_event_has_probability_one():
    assert enumerate_query(casino_scm(), parse_query("P()")) \
        == pytest.approx(1.0, abs=1e-12)


def test_consistency_axiom_for_self_intervention():
    m = textbook_scm()
    assert enumerate_query(m, parse_query("P(Y[Y=1]=1)")) \
        == pytest.approx(1.0, abs=1e-12)
    assert enumerate_query(m, parse_query("P(Y[Y=0]=1)")) == 0.0


def test_intervening_on_everything_removes_randomness():
    m = hiring_scm()
    q = parse_query("P(J[R=1, E=0, J=1]=1)")
    assert enumerate_query(m, q) == pytest.approx(1.0, abs=1e-12)


def test_zero_probability_condition_raises():
    m = textbook_scm()
    with pytest.raises(ZeroProbabilityError):
        enumerate_query(m, parse_query("P(Y=1 | X=3)"))


def test_potential_response_returns_targets_in_order():
    m = hiring_scm()
    u = {ev.name: ev.domain[0] for ev in m.exo_vars}
    j, e = potential_response(m, u, {"R": 1}, ("J", "E"))
    e2, j2 = potential_response(m, u, {"R": 1}, ("E", "J"))
    assert (j, e) == (j2, e2)


def test_consistency_of_potential_response_under_pinning():
    m = hiring_scm()
    for state in range(3):
        u = {ev.name: ev.domain[state % len(ev.domain)] for ev in m.exo_vars}
        assert potential_response(m, u, {"E": 1}, ("E",)) == (1,)


# -- bit packing --------------------------------------------------------------


@given(st.lists(st.integers(0, 2 ** 6 - 1), min_size=1, max_size=30),
       st.integers(6, 8))
def test_bit_round_trip(values, dim):
    arr = np.asarray(values)
    assert np.array_equal(bits_to_values(values_to_bits(arr, dim)), arr)


# -- datasets -----------------------------------------------------------------


def test_draw_dataset_shapes_and_pinning():
    m = hiring_scm()
    ds = draw_dataset(m, {"R": 1}, 200, seed=4)
    assert ds.n == 200
    assert ds.intervention == (("R", 1),)
    col = ds.rows[:, m.diagram.vertices.index("R")]
    assert (col == 1).all()
    assert draw_dataset(m, {}, 1, seed=0).n == 1


def test_draw_dataset_deterministic():
    m = casino_scm()
    a = draw_dataset(m, {}, 50, seed=9)
    b = draw_dataset(m, {}, 50, seed=9)
    assert np.array_equal(a.rows, b.rows)


def test_empirical_marginals_match_enumeration():
    m = textbook_scm()
    n = 40_000
    ds = draw_dataset(m, {}, n, seed=11)
    dist = enumerate_distribution(m, {})
    for key, p in dist.items():
        hits = int((ds.rows == np.asarray(key)).all(axis=1).sum())
        sigma = (p * (1 - p) / n) ** 0.5
        assert abs(hits / n - p) < 4 * sigma + 1e-9


def test_collection_rejects_duplicate_regimes():
    m = casino_scm()
    a = draw_dataset(m, {}, 10, seed=0)
    b = draw_dataset(m, {}, 10, seed=1)
    with pytest.raises(ScmError):
        DatasetCollection((a, b))


def test_dataset_save_load_round_trip(tmp_path):
    m = hiring_scm()
    ds = draw_dataset(m, {"R": 1}, 64, seed=2)
    save_dataset(ds, tmp_path / "d.csv", tmp_path / "d.json")
    back = load_dataset(tmp_path / "d.json")
    assert back.variables == ds.variables
    assert back.intervention == ds.intervention
    assert np.array_equal(back.rows, ds.rows)


def test_scm_json_round_trip_is_exact():
    for m in _probe_models():
        back = scm_from_json(scm_to_json(m))
        assert back.diagram == m.diagram
        assert enumerate_distribution(back, {}) == enumerate_distribution(m, {})
