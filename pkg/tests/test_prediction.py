import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2

from serocs.errors import InputDomainError, StateError
from serocs.prediction import (Bounds, PlanClassifier, TrajectoryWindow, adapt_online, classify_plan,
                               class_probabilities, constant_speed_predictor, encode_trajectory_image,
                               kalman_gain, make_predictor, max_pool, msee_matrix, nn_forward, phi_matrix,
                               predict_with_uncertainty, train_nn_offline, train_plan_classifier)
from serocs.prediction.motion import hidden, input_vector, mse_loss_and_grads

UNIT = Bounds([-1, -1, -1], [1, 1, 1])


# ---- encoding ---------------------------------------------------------------

def _oracle_image(samples, bounds, S):
    lo, hi = bounds.lo, bounds.hi
    pix = []
    for p in samples:
        pix.append([min(S - 1, max(0, math.floor((p[a] - lo[a]) / (hi[a] - lo[a]) * S))) for a in range(3)])
    img = np.zeros((3, S, S))
    for ch, (ra, ca) in enumerate(((1, 0), (2, 1), (0, 2))):
        pts = [(q[ra], q[ca]) for q in pix]
        if len(pts) == 1:
            img[ch][pts[0]] = 1
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            n = max(abs(r1 - r0), abs(c1 - c0))
            if n == 0:
                img[ch, r0, c0] = 1
                continue
            for k in range(n + 1):
                img[ch, r0 + (2 * k * (r1 - r0) + n) // (2 * n), c0 + (2 * k * (c1 - c0) + n) // (2 * n)] = 1
    return img


def test_center_point_single_pixel():
    img = encode_trajectory_image(TrajectoryWindow([[0.0, 0.0, 0.0]]), UNIT, 224).channels
    for ch in range(3):
        assert img[ch].sum() == 1 and img[ch, 112, 112] == 1


def test_x_stroke_projections():
    xs = np.linspace(-0.5, 0.5, 20)
    img = encode_trajectory_image(TrajectoryWindow(np.c_[xs, np.zeros(20), np.zeros(20)]), UNIT, 64).channels
    rows, cols = np.nonzero(img[0])
    assert np.all(rows == 32) and cols.min() == 16 and cols.max() == 48
    assert img[1].sum() == 1
    r, c = np.nonzero(img[2])
    assert np.all(c == 32) and r.size == 33


@pytest.mark.parametrize("seed", range(10))
def test_encoding_matches_integer_oracle(seed):
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-1.2, 1.2, (rng.integers(2, 30), 3))
    img = encode_trajectory_image(TrajectoryWindow(samples), UNIT, 96).channels
    ref = _oracle_image(samples, UNIT, 96)
    assert img.sum() == ref.sum()
    assert np.array_equal(img, ref)


def test_out_of_bounds_clipped():
    img = encode_trajectory_image(TrajectoryWindow([[5.0, -5.0, 0.0]]), UNIT, 32).channels
    assert img[0, 0, 31] == 1 and img[2, 31, 16] == 1
    assert np.all((img == 0) | (img == 1))


def test_degenerate_bounds():
    with pytest.raises(InputDomainError):
        Bounds([0, 0, 0], [1, 0, 1])


def test_encoding_deterministic():
    rng = np.random.default_rng(3)
    w = TrajectoryWindow(rng.normal(size=(15, 3)))
    assert np.array_equal(encode_trajectory_image(w, UNIT).channels, encode_trajectory_image(w, UNIT).channels)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(*[st.integers(-64, 64)] * 3), min_size=1, max_size=12),
       st.tuples(*[st.integers(-256, 256)] * 3))
def test_encoding_translation_covariant(pts, shift):
    # dyadic coordinates keep the shifted arithmetic exact
    P = np.array(pts, float) / 64.0
    s = np.array(shift, float) / 16.0
    a = encode_trajectory_image(TrajectoryWindow(P), UNIT, 64).channels
    b = encode_trajectory_image(TrajectoryWindow(P + s), Bounds(UNIT.lo + s, UNIT.hi + s), 64).channels
    assert np.array_equal(a, b)


def test_max_pool():
    x = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4)
    out = max_pool(x, 2)
    assert out.shape == (2, 2, 2) and out[0, 0, 0] == 5 and out[1, 1, 1] == 31


# ---- classifier -------------------------------------------------------------

def _stroke(rng, x_side):
    x0 = rng.uniform(0.1, 0.9) * x_side
    pts = np.c_[np.full(8, x0), np.linspace(-0.8, 0.8, 8), rng.uniform(-0.5, 0.5, 8)]
    return TrajectoryWindow(pts + rng.normal(scale=0.01, size=pts.shape))


def _separable(seed=0, n=20):
    rng = np.random.default_rng(seed)
    return [(_stroke(rng, -1), 1) for _ in range(n)] + [(_stroke(rng, 1), 2) for _ in range(n)]


def test_separable_training_accuracy():
    data = _separable()
    clf = train_plan_classifier(data, bounds=UNIT)
    assert all(classify_plan(clf, t)[0] == p for t, p in data)
    tr = np.array(clf.loss_trace)
    assert np.all(np.diff(tr) <= 1e-12)


def test_duplicate_dataset_same_decision():
    data = _separable(1, 10)
    a = train_plan_classifier(data, bounds=UNIT)
    b = train_plan_classifier(data + data, bounds=UNIT)
    probe = _stroke(np.random.default_rng(5), 1)
    np.testing.assert_allclose(a.logits(probe), b.logits(probe), atol=1e-9)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-9)


def test_classifier_errors():
    with pytest.raises(InputDomainError):
        train_plan_classifier([(_stroke(np.random.default_rng(0), 1), 1)] * 3, bounds=UNIT)
    with pytest.raises(InputDomainError):
        train_plan_classifier([])
    with pytest.raises(StateError):
        classify_plan(PlanClassifier(UNIT), _stroke(np.random.default_rng(0), 1))


def test_symmetric_training_gives_uniform_confidence():
    rng = np.random.default_rng(7)
    data = []
    for _ in range(12):
        P = rng.uniform(-0.9, 0.9, (6, 3))
        data.append((TrajectoryWindow(P), 1))
        data.append((TrajectoryWindow(P[:, [1, 0, 2]]), 2))
    clf = train_plan_classifier(data, S=64, pool=4, bounds=UNIT)
    label, conf = classify_plan(clf, TrajectoryWindow(np.zeros((5, 3))))
    assert conf == pytest.approx(0.5, abs=1e-9)


def test_tie_break_lower_id():
    clf = PlanClassifier(UNIT, S=32, pool=1, weights=np.zeros((3 * 32 * 32, 3)), bias=np.zeros(3),
                         classes=np.array([2, 5, 7]))
    assert classify_plan(clf, TrajectoryWindow([[0.0, 0.0, 0.0]])) == (2, pytest.approx(1 / 3))


def test_argmax_invariant_to_logit_scaling():
    data = _separable(2, 8)
    clf = train_plan_classifier(data, bounds=UNIT)
    scaled = PlanClassifier(UNIT, clf.S, clf.pool, 3.7 * clf.weights, 3.7 * clf.bias, clf.classes)
    for t, _ in data:
        assert classify_plan(clf, t)[0] == classify_plan(scaled, t)[0]


# ---- NN predictor -----------------------------------------------------------

def _model(N=2, n_h=3, seed=0, sigma0_sq=1e-2, var=1e-4, rho=1e-6):
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(3 * N + 2, n_h))
    W = rng.normal(size=(n_h, 3 * N))
    return make_predictor(U, W, np.full(3 * N, var), sigma0_sq=sigma0_sq, rho=rho)


def _window(rng, N=2):
    return TrajectoryWindow(rng.normal(size=(N, 3)))


def test_forward_zero_W():
    m = make_predictor(np.ones((8, 3)), np.zeros((3, 6)), np.ones(6))
    assert np.array_equal(nn_forward(m, TrajectoryWindow(np.ones((2, 3))), 1), np.zeros(6))


def test_forward_one_neuron_by_hand():
    # N = 1: s = [x, y, z, p, 1]
    U = np.array([[1.0], [-2.0], [0.5], [1.0], [0.25]])
    W = np.array([[1.0, -1.0, 2.0]])
    m = make_predictor(U, W, np.ones(3))
    s = [0.5, 0.1, 2.0]
    z = 0.5 - 0.2 + 1.0 + 2 + 0.25  # plan 2
    np.testing.assert_allclose(nn_forward(m, TrajectoryWindow([s]), 2), [z, -z, 2 * z], atol=1e-15)
    assert nn_forward(m, TrajectoryWindow([[-9.0, 0.0, 0.0]]), 2).tolist() == [0.0, 0.0, 0.0]


def test_forward_experiment_width():
    m = _model(N=10, n_h=40)
    out = nn_forward(m, _window(np.random.default_rng(0), 10), 1)
    assert out.shape == (30,) and m.theta_hat.shape == (1200,)


def test_forward_dimension_mismatch():
    with pytest.raises(InputDomainError):
        nn_forward(_model(N=2), _window(np.random.default_rng(0), 3), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(-20, 20), st.integers(0, 1000))
def test_forward_homogeneous_in_W(k, seed):
    m = _model(seed=seed)
    w = _window(np.random.default_rng(seed))
    c = 2.0 ** k
    from dataclasses import replace
    m2 = replace(m, theta_hat=c * m.theta_hat)
    assert np.array_equal(nn_forward(m2, w, 1), c * nn_forward(m, w, 1))


def test_phi_structure():
    m = _model(seed=4)
    w = _window(np.random.default_rng(4))
    h = hidden(m, w, 2)
    np.testing.assert_allclose(phi_matrix(h, 6) @ m.theta_hat, nn_forward(m, w, 2), atol=1e-13)


def test_loss_gradient_finite_differences():
    rng = np.random.default_rng(0)
    S = rng.normal(size=(12, 5))
    Y = rng.normal(size=(12, 3))
    U = rng.normal(size=(5, 1))
    W = rng.normal(size=(1, 3))
    _, gU, gW = mse_loss_and_grads(U, W, S, Y)
    h = 1e-6
    for G, Par in ((gW, W), (gU, U)):
        fd = np.zeros_like(Par)
        for idx in np.ndindex(Par.shape):
            old = Par[idx]
            Par[idx] = old + h
            lp = mse_loss_and_grads(U, W, S, Y)[0]
            Par[idx] = old - h
            lm = mse_loss_and_grads(U, W, S, Y)[0]
            Par[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        np.testing.assert_allclose(G, fd, atol=1e-4)


def test_offline_training_linear_zero_noise():
    rng = np.random.default_rng(1)
    data = []
    for _ in range(400):
        x = rng.uniform(0.5, 1.5, (2, 3))
        v = x[1] - x[0]
        data.append((TrajectoryWindow(x), 1, np.vstack([x[1] + v, x[1] + 2 * v])))
    m = train_nn_offline(data, n_h=20, epochs=2000, seed=0)
    err = np.array([nn_forward(m, w, p) - y.ravel() for w, p, y in data])
    assert np.mean(np.sum(err ** 2, axis=1)) / 6 < 1e-4
    assert np.all(np.diag(m.var_w) > 0)
    assert m.X_theta.shape == (120, 120) and np.array_equal(m.X_theta, 1e-2 * np.eye(120))
    blocks = np.array(m.loss_trace).reshape(10, -1).mean(1)
    assert np.all(np.diff(blocks) <= 0)


def test_offline_training_folding_is_exact():
    # Prediction with raw inputs must equal the standardized network recomputed by hand.
    rng = np.random.default_rng(2)
    data = [(TrajectoryWindow(rng.uniform(0, 1, (2, 3))), int(rng.integers(1, 3)), rng.uniform(0, 1, (2, 3)))
            for _ in range(50)]
    m = train_nn_offline(data, n_h=6, epochs=3, seed=0)
    U = m.U
    assert np.array_equal(U[:, 0], np.r_[np.zeros(7), 1.0])
    for w, p, _ in data[:5]:
        h = np.maximum(0, U.T @ input_vector(w, p))
        assert h[0] == 1.0
        np.testing.assert_allclose(nn_forward(m, w, p), m.W.T @ h, atol=1e-12)


# ---- online adaptation ------------------------------------------------------

def _dense_update(m, h, obs):
    Phi = phi_matrix(h, 3 * m.N)
    X = m.X_theta
    S = Phi @ X @ Phi.T + m.var_w
    K = X @ Phi.T @ np.linalg.inv(S)
    A = np.eye(X.shape[0]) - K @ Phi
    Xn = A @ X @ A.T + K @ m.var_w @ K.T + m.rho * np.eye(X.shape[0]) + np.outer(m.d_theta, m.d_theta)
    th = m.theta_hat + K @ (obs - Phi @ m.theta_hat)
    return th, Xn, S, K


def test_adapt_matches_dense_formulas():
    m = _model(seed=3)
    rng = np.random.default_rng(3)
    w = _window(rng)
    obs = rng.normal(size=6)
    h = hidden(m, w, 1)
    th, Xn, S, K = _dense_update(m, h, obs)
    K2, _, S2 = kalman_gain(m, h)
    np.testing.assert_allclose(S2, S, atol=1e-12)
    np.testing.assert_allclose(K2, K, atol=1e-10)
    m2, prior = adapt_online(m, obs, w, 1)
    np.testing.assert_allclose(m2.theta_hat, th, atol=1e-10)
    np.testing.assert_allclose(m2.X_theta, Xn, atol=1e-12)
    np.testing.assert_allclose(prior.msee, S, atol=1e-12)
    np.testing.assert_allclose(prior.mean.ravel(), nn_forward(m, w, 1), atol=1e-14)
    # functional update
    assert m.X_theta[0, 0] == 1e-2


def test_msee_identity():
    m = _model(seed=5)
    w = _window(np.random.default_rng(5))
    h = hidden(m, w, 2)
    Phi = phi_matrix(h, 6)
    X = np.random.default_rng(6).normal(size=(18, 18))
    from dataclasses import replace
    m = replace(m, X_theta=X @ X.T)
    np.testing.assert_allclose(msee_matrix(m, h), Phi @ m.X_theta @ Phi.T + m.var_w, atol=1e-12)


def test_zero_innovation_keeps_theta_and_inflates():
    m = _model(seed=7, rho=1e-3)
    from dataclasses import replace
    m = replace(m, d_theta=np.full(18, 0.01))
    w = _window(np.random.default_rng(7))
    m2, _ = adapt_online(m, nn_forward(m, w, 1), w, 1)
    np.testing.assert_array_equal(m2.theta_hat, m.theta_hat)
    _, Xn, _, _ = _dense_update(m, hidden(m, w, 1), nn_forward(m, w, 1))
    np.testing.assert_allclose(m2.X_theta, Xn, atol=1e-12)
    no_infl = Xn - 1e-3 * np.eye(18) - 1e-4 * np.ones((18, 18))
    assert np.linalg.eigvalsh(m2.X_theta - no_infl).min() > 1e-3 - 1e-10


def test_parameter_error_decreases_in_expectation():
    steps, runs = 12, 50
    errs = np.zeros((runs, steps + 1))
    for r in range(runs):
        rng = np.random.default_rng(100 + r)
        m = _model(seed=1, sigma0_sq=1.0, var=1e-2, rho=0.0)
        theta_true = m.theta_hat + rng.normal(size=m.theta_hat.size)
        errs[r, 0] = np.linalg.norm(m.theta_hat - theta_true)
        for k in range(steps):
            w = _window(rng)
            h = hidden(m, w, 1)
            obs = phi_matrix(h, 6) @ theta_true + rng.normal(scale=0.1, size=6)
            m, _ = adapt_online(m, obs, w, 1)
            errs[r, k + 1] = np.linalg.norm(m.theta_hat - theta_true)
    mean = errs.mean(0)
    assert np.all(np.diff(mean) <= 0)
    assert mean[-1] < 0.2 * mean[0]


def test_psd_preserved_and_clamp_logged(caplog):
    m = _model(seed=8)
    rng = np.random.default_rng(8)
    for _ in range(30):
        w = _window(rng)
        m, pr = adapt_online(m, rng.normal(size=6), w, 1)
        assert np.linalg.eigvalsh(m.X_theta).min() >= -1e-10
        assert np.linalg.eigvalsh(pr.msee).min() >= -1e-10
        assert np.array_equal(m.X_theta, m.X_theta.T)
    assert m.psd_clamps == 0
    from dataclasses import replace
    bad = replace(m, X_theta=m.X_theta - 0.5 * np.eye(18), rho=0.0)
    with caplog.at_level("WARNING"):
        m3, _ = adapt_online(bad, rng.normal(size=6), _window(rng), 1)
    assert m3.psd_clamps == 1 and "clamping" in caplog.text
    assert np.linalg.eigvalsh(m3.X_theta).min() >= -1e-10


def test_error_recursion_contracts():
    # E[theta_err_{k+1}] = (I - F Phi^T Phi) E[theta_err_k]; contraction when the norm is < 1.
    rng = np.random.default_rng(9)
    h = np.abs(rng.normal(size=3))
    Phi = phi_matrix(h, 2)
    F = 0.5 / (h @ h)
    A = np.eye(6) - F * Phi.T @ Phi
    assert np.linalg.norm(A, 2) <= 1.0
    # restricted to the range of Phi^T the map contracts strictly
    e = Phi.T @ rng.normal(size=2)
    for _ in range(5):
        e_next = A @ e
        assert np.linalg.norm(e_next) < np.linalg.norm(e)
        e = e_next
    # and our gain realizes the same recursion with F Phi^T = K in expectation (zero-mean noise)
    m = make_predictor(np.eye(8)[:, :3] + 0.1, np.zeros((3, 6)), np.full(6, 1e-2), sigma0_sq=1.0, rho=0.0)
    w = TrajectoryWindow(np.ones((2, 3)))
    hh = hidden(m, w, 1)
    K, _, _ = kalman_gain(m, hh)
    P6 = phi_matrix(hh, 6)
    assert np.linalg.norm(np.eye(18) - K @ P6, 2) <= 1 + 1e-12


# ---- predict_with_uncertainty -----------------------------------------------

def test_zero_param_cov_radii_3sigma():
    m = _model(sigma0_sq=0.0, var=0.04)
    pr = predict_with_uncertainty(m, _window(np.random.default_rng(0)), 1)
    np.testing.assert_allclose(pr.radii, 0.6, rtol=1e-12)
    np.testing.assert_allclose(pr.semi_axes, 0.6, rtol=1e-12)


def test_radii_monotone_in_var_w():
    w = _window(np.random.default_rng(1))
    r = [predict_with_uncertainty(_model(var=v, seed=2), w, 1).radii for v in (1e-4, 1e-3, 1e-2)]
    assert np.all(r[1] >= r[0]) and np.all(r[2] >= r[1])


def test_ellipsoids_calibrated():
    # Model-consistent draws land inside the 3-sigma ellipsoid with chi2(3) probability.
    m = _model(seed=3)
    w = _window(np.random.default_rng(3))
    pr = predict_with_uncertainty(m, w, 1)
    rng = np.random.default_rng(4)
    L = np.linalg.cholesky(pr.msee)
    n = 4000
    inside = [pr.in_ellipsoids(pr.mean.ravel() + L @ rng.normal(size=6)) for _ in range(n)]
    frac = np.mean(inside)
    p = chi2.cdf(9.0, 3)
    assert abs(frac - p) < 4 * np.sqrt(p * (1 - p) / (2 * n))


def test_predict_does_not_mutate():
    m = _model(seed=5)
    before = m.theta_hat.copy()
    predict_with_uncertainty(m, _window(np.random.default_rng(5)), 1)
    assert np.array_equal(before, m.theta_hat)


# ---- constant speed ---------------------------------------------------------

def test_constant_speed_stationary():
    pr = constant_speed_predictor(TrajectoryWindow(np.ones((3, 3)), 0.1), 4, a_max=2.0)
    np.testing.assert_array_equal(pr.mean, np.ones((4, 3)))
    np.testing.assert_allclose(pr.radii, [0.01, 0.04, 0.09, 0.16], rtol=1e-12)


def test_constant_speed_linear_exact():
    t = np.arange(4)[:, None] * np.array([[0.5, -1.0, 0.25]])
    pr = constant_speed_predictor(TrajectoryWindow(t * 0.1, 0.1), 3, a_max=0.0)
    exp = (np.arange(4, 7)[:, None] * np.array([[0.5, -1.0, 0.25]])) * 0.1
    np.testing.assert_allclose(pr.mean, exp, atol=1e-15)
    assert np.all(pr.radii == 0)


def test_constant_speed_radius_value():
    pr = constant_speed_predictor(TrajectoryWindow(np.zeros((2, 3)), 0.1), 2, a_max=1.0)
    assert pr.radii[1] == pytest.approx(0.02, rel=1e-12)
    np.testing.assert_allclose(3 * np.sqrt(np.linalg.eigvalsh(pr.block(1))), 0.02, rtol=1e-12)


def test_constant_speed_needs_two_samples():
    with pytest.raises(InputDomainError):
        constant_speed_predictor(TrajectoryWindow(np.zeros((1, 3))), 3)
