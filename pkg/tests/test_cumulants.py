import logging

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from conftest import random_stream
from hawkes_cpd.cumulants import (
    CumulantSet,
    characteristic_time,
    covariance_density,
    estimate_C,
    estimate_cumulants,
    estimate_K,
    estimate_Kc,
    estimate_lambda,
    pair_term,
    select_W,
)
from hawkes_cpd.events import EventStream
from hawkes_cpd.simulation import HawkesParams, simulate


# --- brute-force evaluators -------------------------------------------------

def brute_counts(z_i, z_j, W):
    return np.array([np.sum((z_j > t - W) & (z_j <= t + W)) for t in z_i], dtype=float)


def brute_C(stream, W):
    T, m = stream.horizon, stream.dim
    lam = stream.counts / T
    C = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            C[i, j] = np.sum(brute_counts(stream.events[i], stream.events[j], W) - 2 * W * lam[j]) / T
    return C


def brute_K_terms(stream, W, i, j, k):
    """The three summands of the estimator, evaluated directly."""
    T = stream.horizon
    lam = stream.counts / T
    zi, zj, zk = stream.events[i], stream.events[j], stream.events[k]
    first = np.sum(
        (brute_counts(zi, zj, W) - 2 * W * lam[j]) * (brute_counts(zi, zk, W) - 2 * W * lam[k])
    ) / T
    pairs = np.maximum(2 * W - np.abs(zk[None, :] - zj[:, None]), 0.0).sum()
    return first, -lam[i] / T * pairs, 4 * W**2 * lam[i] * lam[j] * lam[k]


def brute_K(stream, W, i, j, k):
    return sum(brute_K_terms(stream, W, i, j, k))


def brute_Kc(stream, W):
    m = stream.dim
    return np.array([[brute_K(stream, W, i, i, j) for j in range(m)] for i in range(m)])


def term_scale(stream, W):
    """Largest summand magnitude; the yardstick for entries that cancel to zero."""
    m, T = stream.dim, stream.horizon
    lam = stream.counts / T
    c_terms = [
        (brute_counts(stream.events[i], stream.events[j], W).sum() + 2 * W * lam[j] * stream.counts[i]) / T
        for i in range(m)
        for j in range(m)
    ]
    k_terms = [sum(abs(t) for t in brute_K_terms(stream, W, i, i, j)) for i in range(m) for j in range(m)]
    return max(c_terms + k_terms, default=0.0)


def _close(a, b, rtol=1e-9, scale=0.0):
    scale = max(np.max(np.abs(b)), scale, 1e-300)
    np.testing.assert_allclose(a, b, rtol=rtol, atol=rtol * scale)


# --- lambda ---------------------------------------------------------------

def test_lambda_examples():
    s = EventStream(3.0, ([0.5, 1.5, 2.5], []))
    np.testing.assert_array_equal(estimate_lambda(s), [1.0, 0.0])


def test_lambda_poisson():
    s = simulate(HawkesParams([0.3], [[0.0]], 1.0), 10000.0, 2)
    assert abs(estimate_lambda(s)[0] - 0.3) < 4 * np.sqrt(0.3 / 10000)


def test_zero_horizon():
    with pytest.raises(ValueError, match="zero horizon"):
        estimate_lambda(EventStream(0.0, ([],)))


# --- C --------------------------------------------------------------------

def test_C_hand_example():
    s = EventStream(3.0, ([1.0, 2.0, 3.0],))
    assert estimate_C(s, 0.5)[0, 0] == pytest.approx(0.0, abs=1e-15)


def test_C_empty_stream():
    np.testing.assert_array_equal(estimate_C(EventStream.empty(3, 10.0), 1.0), np.zeros((3, 3)))


def test_C_empty_margin():
    s = EventStream(10.0, ([1.0, 2.5, 7.0], []))
    C = estimate_C(s, 1.0)
    np.testing.assert_array_equal(C[1], 0.0)
    np.testing.assert_array_equal(C[:, 1], 0.0)


def test_W_range_checked():
    s = EventStream(10.0, ([1.0],))
    for W in (0.0, 5.0, -1.0):
        with pytest.raises(ValueError, match="out of range"):
            estimate_C(s, W)


# --- K --------------------------------------------------------------------

def test_K_single_event():
    # (1 - 2 * 0.1)^2 / 10 - (0.1 / 10) * 2 + 4 * 0.1^3 = 0.064 - 0.02 + 0.004
    s = EventStream(10.0, ([5.0],))
    assert estimate_Kc(s, 1.0)[0, 0] == pytest.approx(0.048, abs=1e-15)
    assert brute_K(s, 1.0, 0, 0, 0) == pytest.approx(0.048, abs=1e-15)


def test_Kc_empty_stream():
    np.testing.assert_array_equal(estimate_Kc(EventStream.empty(2, 10.0), 1.0), np.zeros((2, 2)))


def test_general_triple_matches_slice(rng):
    s = random_stream(rng, 3, 50.0, 0.6)
    Kc = estimate_Kc(s, 1.5)
    for i in range(3):
        for j in range(3):
            assert estimate_K(s, 1.5, i, i, j) == pytest.approx(Kc[i, j], rel=1e-12, abs=1e-15)
    _close(estimate_K(s, 1.5, 0, 1, 2), brute_K(s, 1.5, 0, 1, 2))


def test_pair_term_matches_brute(rng):
    s = random_stream(rng, 2, 40.0, 1.0)
    brute = sum(max(3.0 - abs(b - a), 0.0) for a in s.events[0] for b in s.events[1])
    assert pair_term(s, 1.5, 0, 1) == pytest.approx(brute, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_estimators_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    s = random_stream(rng, m, 200.0, float(rng.uniform(0.2, 2.0)))
    W = float(rng.uniform(0.1, 20.0))
    _close(estimate_C(s, W), brute_C(s, W))
    _close(estimate_Kc(s, W), brute_Kc(s, W))


def test_matches_brute_force_on_hawkes_sample():
    s = simulate(HawkesParams([0.4, 0.3], [[0.5, 0.3], [0.2, 0.4]], 2.0), 1500.0, 3)
    assert 1000 < s.n_events < 3000
    _close(estimate_C(s, 2.0), brute_C(s, 2.0), 1e-10)
    _close(estimate_Kc(s, 2.0), brute_Kc(s, 2.0), 1e-10)


@given(
    st.lists(st.floats(0, 20, allow_nan=False), max_size=25),
    st.lists(st.floats(0, 20, allow_nan=False), max_size=25),
    st.floats(0.05, 9.9),
)
@example(a=[], b=[0.0], W=5.0)  # K_22 cancels to exactly zero
def test_brute_force_property(a, b, W):
    s = EventStream(20.0, (np.unique(a), np.unique(b)))
    scale = term_scale(s, W)
    _close(estimate_C(s, W), brute_C(s, W), scale=scale)
    _close(estimate_Kc(s, W), brute_Kc(s, W), scale=scale)


def test_cumulants_share_one_pass(rng):
    s = random_stream(rng, 3, 100.0, 0.8)
    cs = estimate_cumulants(s, 2.0)
    np.testing.assert_array_equal(cs.C_hat, estimate_C(s, 2.0))
    np.testing.assert_array_equal(cs.Kc_hat, estimate_Kc(s, 2.0))
    assert cs.W == 2.0 and cs.T == 100.0
    back = CumulantSet.from_dict(cs.to_dict())
    np.testing.assert_array_equal(back.Kc_hat, cs.Kc_hat)


def test_shift_invariance(rng):
    s = random_stream(rng, 3, 1000.0, 0.5)
    W, c = 2.0, 1.0
    t = s.shifted(c)
    np.testing.assert_array_equal(estimate_lambda(s) * s.horizon, estimate_lambda(t) * s.horizon * t.horizon / s.horizon)
    bound = 2 * W * s.dim * estimate_lambda(s).max() ** 2 / s.horizon
    assert np.max(np.abs(estimate_C(s, W) - estimate_C(t, W))) <= bound
    assert np.max(np.abs(estimate_Kc(s, W) - estimate_Kc(t, W))) <= bound


def test_poisson_limit():
    mu = np.array([0.5, 1.0, 0.8])
    s = simulate(HawkesParams(mu, np.zeros((3, 3)), 1.0), 1e5, 21)
    cs = estimate_cumulants(s, 1.0)
    off = ~np.eye(3, dtype=bool)
    np.testing.assert_allclose(np.diag(cs.C_hat), mu, rtol=0.15)
    np.testing.assert_allclose(np.diag(cs.Kc_hat), mu, rtol=0.15)
    assert np.all(np.abs(cs.C_hat[off]) < 0.05)
    assert np.all(np.abs(cs.Kc_hat[off]) < 0.05)


# --- covariance density and W ------------------------------------------------

def test_covariance_density_poisson_far_lag():
    mu = np.array([0.5, 0.8])
    s = simulate(HawkesParams(mu, np.zeros((2, 2)), 1.0), 20000.0, 4)
    delta = 0.5
    C = covariance_density(s, 50.0, delta)
    lam = s.counts / s.horizon
    se = np.sqrt(np.outer(lam, lam) / (delta * s.horizon))
    assert np.all(np.abs(C) < 3 * se)


def test_covariance_density_empty():
    np.testing.assert_array_equal(covariance_density(EventStream.empty(2, 10.0), 1.0, 0.5), 0.0)


def test_covariance_density_self_exciting_positive():
    s = simulate(HawkesParams([0.3], [[0.5]], 1.0), 20000.0, 6)
    assert covariance_density(s, 0.05, 0.2)[0, 0] > 0


def test_select_W_poisson():
    s = simulate(HawkesParams(np.full(3, 1.0), np.zeros((3, 3)), 1.0), 20000.0, 1)
    delta = 0.1
    assert select_W(s, delta) == pytest.approx(5 * delta)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_select_W_univariate_beta_one(seed):
    s = simulate(HawkesParams([0.5], [[0.5]], 1.0), 1e5, seed)
    tau = select_W(s, multiple=1.0)
    assert 1 / 3 <= tau <= 3


def test_select_W_default_multiple():
    s = simulate(HawkesParams([0.5], [[0.5]], 1.0), 2e4, 0)
    assert select_W(s) == pytest.approx(5 * select_W(s, multiple=1.0))


def test_characteristic_time_never_settles():
    lags = np.geomspace(0.1, 100, 40)
    assert characteristic_time(lags, np.where(lags < 20, 1.0, 0.01)) is None
    assert characteristic_time(lags, np.where(lags < 1, 1.0, 0.01)) == pytest.approx(lags[lags >= 1][0])
    assert characteristic_time(lags, np.full(40, 0.3)) == pytest.approx(lags[0])


def test_select_W_fallback(monkeypatch, caplog):
    import hawkes_cpd.cumulants as cm

    monkeypatch.setattr(cm, "characteristic_time", lambda lags, norms: None)
    s = simulate(HawkesParams([0.5], [[0.5]], 1.0), 2e4, 0)
    with caplog.at_level(logging.WARNING):
        W = cm.select_W(s)
    assert W == pytest.approx(100 * s.horizon / s.n_events)
    assert "falling back" in caplog.text


def test_select_W_empty_stream():
    with pytest.raises(ValueError, match="empty"):
        select_W(EventStream.empty(2, 100.0))
