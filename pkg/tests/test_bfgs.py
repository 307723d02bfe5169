import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdc_estimator.bfgs import (
    TrainConfig, TrainHistory, bfgs_update, minimize, newton_step, train, wolfe_line_search,
)
from bdc_estimator.cfnn import CfnnTopology, forward, init_weights, sse_loss
from bdc_estimator.csvio import read_columns
from bdc_estimator.errors import (
    CurvatureViolation, LineSearchFailed, NotDescent, NotPositiveDefinite, SingularDenominator,
)


def rosenbrock(w):
    return 100.0 * (w[1] - w[0] ** 2) ** 2 + (1 - w[0]) ** 2


def rosenbrock_grad(w):
    return np.array([-400.0 * w[0] * (w[1] - w[0] ** 2) - 2 * (1 - w[0]),
                     200.0 * (w[1] - w[0] ** 2)])


def spd_quadratic(n, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = q @ np.diag(np.linspace(1.0, 10.0, n)) @ q.T
    b = rng.standard_normal(n)
    return A, b, np.linalg.solve(A, b)


def test_update_identity_preserved():
    e1 = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(bfgs_update(np.eye(3), e1, e1), np.eye(3))


def test_update_two_by_two_hand_case():
    H = bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    np.testing.assert_array_equal(H, [[2.0, 0.0], [0.0, 1.0]])


def test_update_symmetric_and_secant():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((6, 6))
    H = A @ A.T + 6 * np.eye(6)
    s = rng.standard_normal(6)
    y = H @ s + 0.1 * rng.standard_normal(6)
    H2 = bfgs_update(H, s, y)
    assert np.max(np.abs(H2 - H2.T)) == 0.0
    np.testing.assert_allclose(H2 @ s, y, rtol=1e-10, atol=1e-10)


def test_update_errors():
    with pytest.raises(CurvatureViolation):
        bfgs_update(np.eye(2), np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    with pytest.raises(SingularDenominator):
        bfgs_update(-np.eye(2), np.array([1.0, 0.0]), np.array([1.0, 0.0]))


def test_newton_step_examples():
    g = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(newton_step(np.eye(3), g), -g)
    np.testing.assert_allclose(newton_step(np.diag([2.0, 4.0]), np.array([2.0, 4.0])), [-1.0, -1.0])
    with pytest.raises(NotPositiveDefinite):
        newton_step(np.diag([1.0, -1.0]), np.array([1.0, 1.0]))


@pytest.mark.parametrize("n", [1, 5, 20, 50])
def test_newton_step_residual(n):
    rng = np.random.default_rng(n)
    A = rng.standard_normal((n, n))
    H = A @ A.T + n * np.eye(n)
    g = rng.standard_normal(n)
    p = newton_step(H, g)
    assert np.linalg.norm(H @ p + g) <= 1e-10 * np.linalg.norm(g)


def test_line_search_exact_on_sphere():
    f = lambda w: 0.5 * w @ w
    w = np.array([1.0, 0.0])
    res = wolfe_line_search(f, lambda w: w, w, -w, 1e-4, 0.9, 40)
    assert res.alpha == 1.0 and res.f_new == 0.0
    np.testing.assert_array_equal(res.grad_new, [0.0, 0.0])


def test_line_search_not_descent():
    f = lambda w: 0.5 * w @ w
    with pytest.raises(NotDescent):
        wolfe_line_search(f, lambda w: w, np.array([1.0, 0.0]), np.array([1.0, 0.0]), 1e-4, 0.9, 40)


def test_line_search_fails_on_unbounded():
    f = lambda w: -np.exp(w[0])
    g = lambda w: np.array([-np.exp(w[0])])
    with pytest.raises(LineSearchFailed):
        wolfe_line_search(f, g, np.array([0.0]), np.array([1.0]), 1e-4, 0.9, 5)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-2, 2), y=st.floats(-1, 3), angle=st.floats(0, 2 * np.pi))
def test_line_search_strong_wolfe(x, y, angle):
    w = np.array([x, y])
    g0 = rosenbrock_grad(w)
    d = np.array([np.cos(angle), np.sin(angle)])
    slope = g0 @ d
    if abs(slope) < 1e-8:
        return
    p = -np.sign(slope) * d
    res = wolfe_line_search(rosenbrock, rosenbrock_grad, w, p, 1e-4, 0.9, 60)
    d0 = g0 @ p
    assert res.f_new <= rosenbrock(w) + 1e-4 * res.alpha * d0
    assert abs(res.grad_new @ p) <= 0.9 * abs(d0) + 1e-12


def test_quadratic_finite_termination():
    A, b, w_star = spd_quadratic(5, 0)
    cfg = TrainConfig(grad_tol=1e-12, max_iterations=50)
    res = minimize(lambda w: 0.5 * w @ A @ w - b @ w, lambda w: A @ w - b, np.zeros(5), cfg)
    assert len(res.history) <= 6
    assert np.max(np.abs(res.w - w_star)) <= 1e-10


def test_rosenbrock():
    res = minimize(rosenbrock, rosenbrock_grad, np.array([-1.2, 1.0]),
                   TrainConfig(grad_tol=1e-10, max_iterations=200))
    assert np.max(np.abs(res.w - 1.0)) <= 1e-6
    assert len(res.history) <= 200
    assert np.all(np.diff(res.history.losses) <= 0)


def test_stationary_start_returns_immediately():
    res = minimize(lambda w: w @ w, lambda w: 2 * w, np.zeros(3))
    assert len(res.history) == 0 and res.history.stop_reason == "grad_tol"


def test_loss_goal_and_iteration_cap():
    res = minimize(rosenbrock, rosenbrock_grad, np.array([-1.2, 1.0]), TrainConfig(loss_goal=1.0))
    assert res.history.stop_reason == "loss_goal" and res.loss <= 1.0
    res = minimize(rosenbrock, rosenbrock_grad, np.array([-1.2, 1.0]), TrainConfig(max_iterations=3))
    assert res.history.stop_reason == "max_iterations" and len(res.history) == 3
    assert not res.history.goal_reached


def test_h_stays_symmetric_positive_definite():
    seen = []
    minimize(rosenbrock, rosenbrock_grad, np.array([-1.2, 1.0]),
             TrainConfig(grad_tol=1e-10), callback=lambda st: seen.append(st.hessian_approx.copy()))
    for H in seen:
        assert np.max(np.abs(H - H.T)) <= 1e-10
        np.linalg.cholesky(H)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(wolfe_c1=0.9, wolfe_c2=0.1)
    with pytest.raises(ValueError):
        TrainConfig(grad_tol=0.0)


def _planted_problem():
    rng = np.random.default_rng(5)
    top = CfnnTopology.build(2, (4,), 2)
    x = rng.uniform(-1, 1, (40, 2))
    w_true = 3.0 * init_weights(top, 11)
    return top, (x, forward(top, w_true, x))


def test_train_planted_solution():
    top, data = _planted_problem()
    res = train(top, data, init_weights(top, 12), TrainConfig(grad_tol=1e-12, loss_goal=1e-10))
    assert res.loss <= 1e-8
    assert res.loss == pytest.approx(sse_loss(top, res.w, data))
    assert np.all(np.diff(res.history.losses) <= 0)


def test_train_deterministic(tmp_path):
    top, data = _planted_problem()
    cfg = TrainConfig(max_iterations=40)
    a = train(top, data, init_weights(top, 12), cfg)
    b = train(top, data, init_weights(top, 12), cfg)
    a.history.save_csv(tmp_path / "a.csv")
    b.history.save_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    np.testing.assert_array_equal(a.w, b.w)


def test_history_csv(tmp_path):
    res = minimize(rosenbrock, rosenbrock_grad, np.array([-1.2, 1.0]), TrainConfig(max_iterations=5))
    path = tmp_path / "h.csv"
    res.history.save_csv(path)
    header, data, comments = read_columns(path)
    assert header == ["iteration", "loss", "grad_norm", "alpha", "curvature", "updated_flag"]
    assert data.shape == (5, 6) and data[:, 0].tolist() == [1, 2, 3, 4, 5]
    assert "stop_reason = max_iterations" in comments and "warning = 1" in comments
    assert isinstance(res.history, TrainHistory)


def test_update_cost_is_quadratic():
    # both sizes are far beyond cache so the ratio reflects operation count,
    # not a move between levels of the memory hierarchy
    def cost(n, reps=5):
        rng = np.random.default_rng(n)
        H = np.eye(n)
        s = rng.standard_normal(n)
        y = s + 0.1 * rng.standard_normal(n)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            bfgs_update(H, s, y)
            times.append(time.perf_counter() - t0)
        return min(times)

    assert cost(4000) / cost(2000) <= 4.5
