"""Training loop mechanics: schedules, losses, logs and failure modes.

Real convergence behavior lives in the acceptance suite; everything here is
cheap enough to run on every commit.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ncmctf.autodiff as ad
import ncmctf.train as tr
from ncmctf.fixtures import bow_pair, named_graph
from ncmctf.ncm import build_gncm, build_mle_ncm
from ncmctf.query import QueryPart, Term, build_named_query, parse_query
from ncmctf.scm import Dataset, DatasetCollection, draw_dataset

TINY = tr.TrainConfig(lr=1e-3, epochs=3, batch=16, mc_samples=64)


def _bow_data(n=400, seed=0):
    return DatasetCollection((draw_dataset(bow_pair()[0], {}, n, seed),))


# -- lambda schedule ----------------------------------------------------------


def test_lam_endpoints():
    cfg = tr.TrainConfig(lam_start=1e-4, lam_end=1e-5, epochs=1000)
    assert tr.lam_value(cfg, 1, 0) == 1e-4
    assert tr.lam_value(cfg, 1, 999) == pytest.approx(1e-5, rel=1e-12)
    # squared dataset-count scaling
    assert tr.lam_value(cfg, 3, 0) == pytest.approx(9e-4, rel=1e-12)


def test_lam_degenerate_schedules():
    one = tr.TrainConfig(lam_start=0.5, lam_end=0.1, epochs=1)
    assert tr.lam_value(one, 1, 0) == 0.5
    flat = tr.TrainConfig(lam_start=0.2, lam_end=0.2)
    assert tr.lam_value(flat, 2, 500) == pytest.approx(0.8)
    zero = tr.TrainConfig(lam_start=0.0, lam_end=0.0)
    assert tr.lam_value(zero, 1, 3) == 0.0
    to_zero = tr.TrainConfig(lam_start=0.3, lam_end=0.0, epochs=11)
    assert tr.lam_value(to_zero, 1, 10) == 0.0
    assert tr.lam_value(to_zero, 1, 5) == pytest.approx(0.15)


@given(st.integers(0, 999))
@settings(max_examples=40, deadline=None)
def test_lam_monotone_nonincreasing(t):
    cfg = tr.TrainConfig(lam_start=1e-2, lam_end=1e-6, epochs=1000)
    here, there = tr.lam_value(cfg, 1, t), tr.lam_value(cfg, 1, t + 1)
    assert here >= there > 0


def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(lr=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(lam_start=1e-6, lam_end=1e-4)
    with pytest.raises(ValueError):
        tr.TrainConfig(direction="sideways")
    with pytest.raises(ValueError):
        tr.CriticConfig(lipschitz_c=0)
    with pytest.raises(ValueError):
        tr.CriticConfig(lam_gp=-1)


# -- critic and penalty -------------------------------------------------------


def test_critic_loss_gradients_match_finite_differences():
    g = named_graph("bow")
    cfg = tr.CriticConfig(width_per_vertex=4, hidden_layers=1)
    critic = tr.build_critic(g, 1, cfg, seed=0, dtype=np.float64)
    rng = np.random.default_rng(1)
    real = ad.Tensor(rng.integers(0, 2, size=(8, 3)).astype(np.float64))
    fake = ad.Tensor(rng.uniform(size=(8, 3)))
    interp = ad.Tensor(rng.uniform(size=(8, 3)), requires_grad=True)

    def loss():
        return tr.critic_loss(critic, real, fake, interp, cfg)[0]

    params = critic.parameters()
    analytic = ad.grad(loss(), params)
    numeric = ad.finite_difference(loss, params)
    for got, want in zip(analytic, numeric):
        scale = max(1.0, float(np.max(np.abs(want))))
        assert float(np.max(np.abs(got - want))) / scale < 1e-6


def test_flat_critic_pays_no_penalty():
    g = named_graph("bow")
    cfg = tr.CriticConfig(width_per_vertex=4, hidden_layers=1)
    critic = tr.build_critic(g, 1, cfg, seed=0, dtype=np.float64)
    for p in critic.parameters():
        p.data[:] = 0.0  # constant critic: zero input gradient everywhere
    x = ad.Tensor(np.random.default_rng(0).uniform(size=(16, 3)))
    interp = ad.Tensor(x.data.copy(), requires_grad=True)
    loss, wass = tr.critic_loss(critic, x, x, interp, cfg)
    assert wass == 0.0
    assert float(loss.data) == pytest.approx(0.0, abs=1e-11)


def test_penalty_is_squared_excess_above_target():
    """A linear critic has constant input gradient w, so the penalty must be
    exactly relu(|w| - c)^2 regardless of the interpolate batch."""
    w = np.array([[3.0], [4.0]])  # norm 5
    critic = tr.Critic([("linear", ad.Tensor(w, requires_grad=True),
                         ad.Tensor(np.zeros(1), requires_grad=True))])
    cfg = tr.CriticConfig(lam_gp=10.0, lipschitz_c=0.01)
    rng = np.random.default_rng(0)
    real = ad.Tensor(rng.uniform(size=(6, 2)))
    fake = ad.Tensor(rng.uniform(size=(6, 2)))
    interp = ad.Tensor(rng.uniform(size=(6, 2)), requires_grad=True)
    loss, wass = tr.critic_loss(critic, real, fake, interp, cfg)
    want = wass + 10.0 * (5.0 - 0.01) ** 2
    assert float(loss.data) == pytest.approx(want, rel=1e-9)


def test_lam_gp_zero_skips_penalty_graph():
    g = named_graph("bow")
    cfg = tr.CriticConfig(lam_gp=0.0, width_per_vertex=4, hidden_layers=1)
    critic = tr.build_critic(g, 1, cfg, seed=0, dtype=np.float64)
    rng = np.random.default_rng(2)
    real = ad.Tensor(rng.uniform(size=(4, 3)))
    fake = ad.Tensor(rng.uniform(size=(4, 3)))
    interp = ad.Tensor(rng.uniform(size=(4, 3)), requires_grad=True)
    loss, wass = tr.critic_loss(critic, real, fake, interp, cfg)
    assert float(loss.data) == pytest.approx(wass, abs=1e-12)


# -- query loss ---------------------------------------------------------------


def _logloss(parts_probs, signs, direction):
    total = 0.0
    for probs, sign in zip(parts_probs, signs):
        for p in probs:
            p = min(max(p, 1e-7), 1 - 1e-7)
            down = (direction == "minimize") == (sign > 0)
            total += -math.log(1 - p) if down else -math.log(p)
    return total


@pytest.mark.parametrize("direction", ["minimize", "maximize"])
def test_query_loss_direction_table(direction):
    q = parse_query("P(Y=1) - P(X=1)")
    samples = [ad.Tensor(np.array([0.3, 0.7])), ad.Tensor(np.array([0.2]))]
    got = float(tr.query_loss(samples, q, direction).data)
    want = _logloss([[0.3, 0.7], [0.2]], [1, -1], direction)
    assert got == pytest.approx(want, rel=1e-6)


def test_query_loss_skips_empty_parts():
    q = parse_query("P(Y=1) - P(X=1)")
    samples = [None, ad.Tensor(np.array([0.2]))]
    got = float(tr.query_loss(samples, q, "minimize").data)
    assert got == pytest.approx(-math.log(0.2), rel=1e-6)
    empty = tr.query_loss([None, None], q, "minimize")
    assert float(empty.data) == 0.0


def test_query_loss_clamps_extremes():
    q = parse_query("P(Y=1)")
    for p in (0.0, 1.0):
        val = float(tr.query_loss([ad.Tensor(np.array([p]))], q, "minimize").data)
        assert np.isfinite(val)
    with pytest.raises(ValueError):
        tr.query_loss([ad.Tensor(np.array([0.5]))], q, "fit-only")


def test_part_event_probabilities_single_bit():
    ncm = build_gncm(named_graph("bow"), seed=3)
    noise = ncm.draw_noise(np.random.default_rng(0), 32)
    part = QueryPart(1, (Term("Y", 1),))
    probs = tr.part_event_probabilities(ncm, part, noise)
    assert probs.shape == (32,)
    soft = ncm.forward_bits(noise, 32, mode="soft")["Y"][:, 0]
    np.testing.assert_allclose(probs.data, soft, rtol=1e-5)


def test_part_event_probabilities_joint_event():
    ncm = build_gncm(named_graph("bow"), seed=3)
    noise = ncm.draw_noise(np.random.default_rng(1), 16)
    part = QueryPart(1, (Term("Y", 0), Term("X", 1, (("X", 1),))))
    probs = tr.part_event_probabilities(ncm, part, noise)
    soft = ncm.forward_bits(noise, 16, mode="soft")["Y"][:, 0]
    np.testing.assert_allclose(probs.data, 1.0 - soft, rtol=1e-6)


# -- adversarial loop ---------------------------------------------------------


def _strip(log):
    """Drop timing and make NaN comparable so logs can be == checked."""
    out = []
    for row in log:
        clean = {}
        for k, v in row.items():
            if k == "wall_ms":
                continue
            clean[k] = None if isinstance(v, float) and math.isnan(v) else v
        out.append(clean)
    return out


def test_gan_training_log_and_determinism():
    data = _bow_data()
    q = build_named_query("ate", "X", "Y")
    runs = []
    for _ in range(2):
        ncm = build_gncm(named_graph("bow"), seed=1)
        cfg = tr.TrainConfig(lr=1e-3, epochs=3, batch=16, mc_samples=64,
                             direction="maximize", seed=7)
        _, log = tr.train_gan_ncm(ncm, data, q, cfg)
        runs.append((log, [p.data.copy() for p in ncm.parameters()]))
    (log_a, params_a), (log_b, params_b) = runs
    assert _strip(log_a) == _strip(log_b)
    for pa, pb in zip(params_a, params_b):
        np.testing.assert_array_equal(pa, pb)
    row = log_a[-1]
    assert set(row) == {"epoch", "dp_0", "dq", "lam", "query_estimate",
                        "mc_accepted", "wall_ms"}
    assert row["mc_accepted"] == 2 * 64  # two unconditional parts
    assert np.isfinite(row["query_estimate"])
    assert row["dq"] > 0


def test_gan_fit_only_ignores_query():
    data = _bow_data()
    ncm = build_gncm(named_graph("bow"), seed=2)
    _, log = tr.train_gan_ncm(ncm, data, None, TINY)
    assert [row["dq"] for row in log] == [0.0, 0.0, 0.0]
    assert all(math.isnan(row["query_estimate"]) for row in log)
    with pytest.raises(ValueError):
        cfg = tr.TrainConfig(lr=1e-3, epochs=1, batch=8, mc_samples=8,
                             direction="minimize")
        tr.train_gan_ncm(ncm, data, None, cfg)


def test_gan_accepts_permuted_dataset_columns():
    base = draw_dataset(bow_pair()[0], {}, 200, 3)
    flipped = Dataset(("Y", "X"), (1, 1), (), base.rows[:, ::-1].copy())
    logs = []
    for ds in (base, flipped):
        ncm = build_gncm(named_graph("bow"), seed=0)
        _, log = tr.train_gan_ncm(ncm, DatasetCollection((ds,)), None, TINY)
        logs.append(_strip(log))
    assert logs[0] == logs[1]


def test_gan_rejects_wrong_variables():
    from ncmctf.fixtures import hiring_scm

    ds = draw_dataset(hiring_scm(), {}, 50, 0)
    ncm = build_gncm(named_graph("bow"), seed=0)
    with pytest.raises(ValueError, match="variables"):
        tr.train_gan_ncm(ncm, DatasetCollection((ds,)), None, TINY)


def test_gan_on_epoch_callback():
    seen = []
    ncm = build_gncm(named_graph("bow"), seed=0)
    tr.train_gan_ncm(ncm, _bow_data(), None, TINY,
                     on_epoch=lambda t, m: seen.append((t, m is ncm)))
    assert seen == [(0, True), (1, True), (2, True)]


def test_gan_divergence_detected():
    ncm = build_gncm(named_graph("bow"), seed=0)
    ncm.parameters()[0].data[:] = np.nan
    with pytest.raises(tr.TrainingDiverged, match="epoch 0"):
        tr.train_gan_ncm(ncm, _bow_data(), None, TINY)


# -- likelihood loop ----------------------------------------------------------


def test_mle_row_likelihood_bounds():
    model = build_mle_ncm(named_graph("bow"), seed=0)
    noise = model.draw_noise(np.random.default_rng(0), 50)
    rows = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    probs = tr.mle_row_likelihood(model, rows, {}, noise)
    assert probs.shape == (4,)
    assert ((0 < probs.data) & (probs.data <= 1)).all()
    pinned = tr.mle_row_likelihood(model, rows[:1], {"X": 0, "Y": 0}, noise)
    assert float(pinned.data[0]) == 1.0


def test_mle_query_prob_within_range():
    model = build_mle_ncm(named_graph("mediation"), seed=1)
    noise = model.draw_noise(np.random.default_rng(0), 100)
    for kind in ("ate", "nde"):  # nde exercises the unnesting path
        q = build_named_query(kind, "X", "Y", "W")
        val = float(tr.mle_query_prob(model, q, noise).data)
        assert -1.0 <= val <= 1.0


def test_mle_training_log_and_determinism():
    data = _bow_data(n=200)
    cfg = tr.TrainConfig(lr=4e-3, epochs=4, mc_samples=50, lam_start=1.0,
                         lam_end=0.1, direction="maximize", seed=3)
    q = build_named_query("ate", "X", "Y")
    logs = []
    for _ in range(2):
        model = build_mle_ncm(named_graph("bow"), seed=2)
        _, log = tr.train_mle_ncm(model, data, q, cfg)
        logs.append(_strip(log))
    assert logs[0] == logs[1]
    assert set(logs[0][0]) == {"epoch", "nll_0", "dq", "lam",
                               "query_estimate"}
    assert all(np.isfinite(row["query_estimate"]) for row in logs[0])


def test_mle_nll_never_beats_empirical_entropy():
    """The fit NLL is a cross-entropy against the empirical distribution, so
    the empirical entropy is a hard floor at every epoch."""
    data = _bow_data(n=300, seed=5)
    rows = data.datasets[0].rows
    _, counts = np.unique(rows, axis=0, return_counts=True)
    w = counts / counts.sum()
    floor = float(-(w * np.log(w)).sum())
    model = build_mle_ncm(named_graph("bow"), seed=0)
    cfg = tr.TrainConfig(lr=4e-3, epochs=40, mc_samples=50)
    _, log = tr.train_mle_ncm(model, data, None, cfg)
    nlls = [row["nll_0"] for row in log]
    assert min(nlls) >= floor - 1e-5
    assert nlls[-1] < nlls[0]  # it does descend toward the floor


def test_mle_zero_lam_equals_fit_only():
    data = _bow_data(n=200)
    q = build_named_query("ate", "X", "Y")
    finals = []
    for direction, lam in (("maximize", 0.0), ("fit-only", 1.0)):
        model = build_mle_ncm(named_graph("bow"), seed=4)
        cfg = tr.TrainConfig(lr=4e-3, epochs=3, mc_samples=30,
                             lam_start=lam, lam_end=0.0 if lam == 0 else 0.1,
                             direction=direction, seed=1)
        tr.train_mle_ncm(model, data, q if direction != "fit-only" else None,
                         cfg)
        finals.append([p.data.copy() for p in model.parameters()])
    for a, b in zip(*finals):
        np.testing.assert_array_equal(a, b)
