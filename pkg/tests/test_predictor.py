import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adfeedback.predictor import (
    Predictor, PredictorConfig, fitting_error, limit_poles, lls_fit, pole_radius,
)


def _ar1(n, a=0.9, seed=0, streams=1):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n, streams)) * np.sqrt(1 - a * a)
    x = np.zeros((n, streams))
    x[0] = rng.standard_normal(streams)
    for i in range(1, n):
        x[i] = a * x[i - 1] + e[i]
    return x


def test_config_validation():
    for bad in (dict(order=0), dict(memory=0), dict(memory=1.5), dict(learning_period=1, order=2),
                dict(delta0=0), dict(mode="kalman"), dict(psi_form="other"), dict(max_pole_radius=0)):
        with pytest.raises(ValueError):
            PredictorConfig(**bad)
    assert PredictorConfig().history_length == 102


def test_predict_examples():
    p = Predictor(PredictorConfig(), 1)
    p.history[0, :2] = [1, 1]
    p.weights[0] = [0.5, 0.5]
    assert p.predict()[0] == 1.0
    p.weights[0] = [0, 0]
    assert p.predict()[0] == 0.0
    p.history[0, :2] = [2, 1]
    p.weights[0] = [1.5, -0.5]
    assert p.predict()[0] == 2.5


def test_lls_constant_history_min_norm():
    w = lls_fit(np.full(102, 3.0), 2, 100)
    assert w.sum() == pytest.approx(1, abs=1e-6)
    np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-6)


def test_lls_zero_history():
    np.testing.assert_array_equal(lls_fit(np.zeros(102), 2, 100), [0, 0])


def test_lls_geometric_sequence():
    # x_n = 0.9 x_{n-1} makes both lags collinear: every w with
    # 0.9 w1 + w2 = 0.81 fits exactly, and the ridge picks the min-norm one.
    w = lls_fit(0.9 ** -np.arange(102.0) * 1e-3, 2, 100)
    assert 0.9 * w[0] + w[1] == pytest.approx(0.81, abs=1e-6)
    assert fitting_error(0.9 ** -np.arange(102.0) * 1e-3, w, 100) < 1e-12
    np.testing.assert_allclose(w, 0.81 * np.array([0.9, 1]) / 1.81, atol=1e-4)


def test_lls_noisy_ar1_recovery():
    x = _ar1(5000, seed=1)[::-1, 0]
    w = lls_fit(x, 2, 4998)
    np.testing.assert_allclose(w, [0.9, 0], atol=0.03)


def test_lls_beats_random_candidates(rng):
    h = _ar1(300, seed=2)[::-1, 0]
    w = lls_fit(h, 2, 100)
    best = fitting_error(h, w, 100)
    cand = rng.normal(scale=1.0, size=(100, 2)) + w
    assert all(best <= fitting_error(h, c, 100) + 1e-12 for c in cand)


def test_lls_batched_matches_single():
    h = np.stack([_ar1(150, seed=s)[::-1, 0] for s in range(3)])
    np.testing.assert_allclose(lls_fit(h, 2, 100), [lls_fit(row, 2, 100) for row in h])


def test_rls_single_update_by_hand():
    p = Predictor(PredictorConfig(order=1, memory=1.0, learning_period=1, delta0=1e-12, max_pole_radius=None), 1)
    p.update([1.0])
    p.update([0.5])
    assert p.phi[0, 0, 0] == pytest.approx(1.0)
    assert p.psi[0, 0] == pytest.approx(0.5)
    assert p.weights[0, 0] == pytest.approx(0.5)


def test_rls_zero_stream():
    p = Predictor(PredictorConfig(), 2)
    for _ in range(50):
        p.update(np.zeros(2))
    np.testing.assert_array_equal(p.weights, 0)


def test_rls_ar1_recovery():
    x = _ar1(30_000, seed=3)
    p = Predictor(PredictorConfig(memory=1.0), 1)
    for v in x:
        p.update(v)
    np.testing.assert_allclose(p.weights[0], [0.9, 0], atol=1e-2)
    # with forgetting the estimate fluctuates around the truth, carrying the
    # O(1 - memory) small-sample bias of least squares on an AR process
    p = Predictor(PredictorConfig(memory=0.98), 1)
    trace = []
    for v in x[:20_000]:
        p.update(v)
        trace.append(p.weights[0].copy())
    np.testing.assert_allclose(np.mean(trace[2000:], axis=0), [0.9, 0], atol=2e-2)


def test_rls_geometric_sequence():
    p = Predictor(PredictorConfig(memory=0.98, max_pole_radius=None), 1)
    for n in range(300):
        p.update([0.999 ** n])
    w = p.weights[0]
    assert 0.999 * w[0] + w[1] == pytest.approx(0.999 ** 2, abs=1e-3)
    assert abs(p.predict()[0] - 0.999 ** 300) < 1e-3 * 0.999 ** 300


def test_rls_phi_symmetric_psd_and_bounded():
    x = np.random.default_rng(4).uniform(-1, 1, (2000, 3))
    cfg = PredictorConfig(memory=0.95)
    p = Predictor(cfg, 3)
    for v in x:
        p.update(v)
        np.testing.assert_array_equal(p.phi, np.swapaxes(p.phi, 1, 2))
        assert np.all(np.linalg.eigvalsh(p.phi) >= -1e-12)
        norms = np.linalg.norm(p.phi, 2, axis=(1, 2))
        assert np.all(norms <= 1.0 * 2 / (1 - cfg.memory) + cfg.delta0 + 1e-9)


def test_rls_near_wiener_floor():
    # AR(1) with a = 0.9, unit variance: ideal one-step error is 1 - a^2
    x = _ar1(6250, seed=5, streams=16)
    p = Predictor(PredictorConfig(max_pole_radius=None), 16)
    err = []
    for v in x:
        err.append((v - p.predict()) ** 2)
        p.update(v)
    mse = np.mean(err[500:])
    assert 0.19 * 0.97 < mse <= 0.19 * 1.2


def test_residual_form_available():
    x = _ar1(2000, seed=6)
    p = Predictor(PredictorConfig(psi_form="residual"), 1)
    for v in x:
        p.update(v, v - p.predict())
    assert np.all(np.isfinite(p.weights))


def test_lls_mode_waits_for_window():
    cfg = PredictorConfig(mode="lls", learning_period=10)
    p = Predictor(cfg, 1)
    x = _ar1(40, seed=7)
    for i, v in enumerate(x):
        p.update(v)
        if i + 1 < cfg.history_length:
            np.testing.assert_array_equal(p.weights, 0)
    assert np.any(p.weights != 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_pole_radius_matches_companion(w1, w2):
    comp = np.array([[w1, w2], [1, 0]])
    assert pole_radius(np.array([w1, w2])) == pytest.approx(np.abs(np.linalg.eigvals(comp)).max(), abs=1e-9)
    limited = limit_poles(np.array([[w1, w2]]), 0.999)
    assert pole_radius(limited)[0] <= 0.999 + 1e-9


def test_pole_radius_higher_order():
    w = np.array([0.5, 0.2, -0.1])
    comp = np.array([[0.5, 0.2, -0.1], [1, 0, 0], [0, 1, 0]])
    assert pole_radius(w) == pytest.approx(np.abs(np.linalg.eigvals(comp)).max())
    assert pole_radius(np.array([-1.2])) == pytest.approx(1.2)


def test_copy_is_independent():
    p = Predictor(PredictorConfig(), 2)
    p.update([1.0, 2.0])
    q = p.copy()
    q.update([3.0, 4.0])
    assert p.count == 1 and q.count == 2
    assert not np.array_equal(p.history, q.history)
