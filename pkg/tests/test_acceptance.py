"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary (see
``conftest.py``) so they appear even when output capture is on.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from bdc_estimator.bfgs import TrainConfig, bfgs_update, minimize
from bdc_estimator.cfnn import CfnnTopology, forward, gradient, init_weights, unpack
from bdc_estimator.cli import main
from bdc_estimator.estimator import ExperimentConfig, run_experiment
from bdc_estimator.motor_model import (
    MotorState, calibrate, default_params, heat_dissipation, power_losses, steady_state,
)
from bdc_estimator.simulator import DutyProfile, default_profile, integrate_rk4

from oracles import central_difference_sse, ffnn_forward_rows, ffnn_gradient, random_cascade_case

RESULTS = {}


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def default_run():
    """The default experiment, with the Hessian approximation checked at every iteration."""
    checks = []

    def inspect(state):
        H = state.hessian_approx
        asym = float(np.max(np.abs(H - H.T)))
        try:
            np.linalg.cholesky(H)
            spd = True
        except np.linalg.LinAlgError:
            spd = False
        checks.append((state.iteration, asym, spd))

    t0 = time.perf_counter()
    result = run_experiment(ExperimentConfig(), callback=inspect)
    return result, checks, time.perf_counter() - t0


def test_criterion_1_steady_state_temperature():
    p = default_params()
    traj = integrate_rk4(p, MotorState(0.0, 0.0, 0.0), default_profile(p), dt=1e-3, record_every=1000)
    settled = traj.theta[-1]
    oracle = steady_state(p, p.v_rated, p.t_l_rated).theta
    ok = abs(settled - 80.0) <= 2.0 and abs(oracle - 80.0) <= 2.0
    verdict(1, ok, f"S1 end theta = {settled:.3f} degC, equilibrium = {oracle:.6f} degC (80 +- 2)")


def test_criterion_2_estimation_errors(default_run):
    result, _, elapsed = default_run
    rep = result.report
    th = result.config.thresholds
    m = rep.metrics
    checks = rep.check(th)
    detail = (f"speed {m['omega_rpm'].steady_state_error:+.4f} rpm (<= {th.speed_rpm}), "
              f"theta {m['theta'].steady_state_error:+.4f} degC (<= {th.theta}), "
              f"r_a {m['r_a'].steady_state_error:+.6f} ohm (<= {th.r_a}); "
              f"% of final {m['omega'].percent_of_final:.3f}/{m['theta'].percent_of_final:.3f}/"
              f"{m['r_a'].percent_of_final:.3f} (<= {th.speed_pct}/{th.theta_pct}/{th.r_a_pct}); "
              f"{elapsed:.0f} s; failed: {[k for k, v in checks.items() if not v] or 'none'}")
    verdict(2, all(checks.values()) and elapsed <= 600, detail)


def test_criterion_3_gradient_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    failures = 0
    cases = 24
    for k in range(cases):
        n_in, hidden, n_out, x, y = random_cascade_case(rng, max_hidden_layers=2, max_width=8)
        top = CfnnTopology.build(n_in, hidden, n_out, full_cascade=True)
        w = init_weights(top, k) * 2.0
        g = gradient(top, w, (x, y))
        fd = central_difference_sse(lambda v: forward(top, v, x) - y, w, h=1e-6)
        diff = np.abs(g - fd)
        rel = diff / np.maximum(np.abs(fd), 1e-300)
        good = (rel < 1e-6) | (diff < 1e-8)
        failures += int(np.sum(~good))
        worst = max(worst, float(np.max(rel, where=np.abs(fd) > 1e-8, initial=0.0)))
    verdict(3, failures == 0, f"{cases} random cascade networks, worst relative error {worst:.2e}; "
                              f"{failures} components fail both rel < 1e-6 and abs < 1e-8")


def test_criterion_4_rk4_order():
    p = default_params()
    duration = 0.2

    def end(dt):
        traj = integrate_rk4(p, MotorState(0.0, 0.0, 0.0), DutyProfile.s1(duration, 240.0, 11.0), dt=dt,
                             record_every=round(duration / dt))
        return np.array([traj.i_a[-1], traj.omega[-1], traj.theta[-1]])

    y1, y2, y3 = end(2e-3), end(1e-3), end(5e-4)
    order = math.log2(np.linalg.norm(y1 - y2) / np.linalg.norm(y2 - y3))
    verdict(4, 3.5 <= order <= 4.5, f"observed order {order:.3f} from dt = 2, 1, 0.5 ms")


def test_criterion_5_bfgs(default_run):
    notes = []
    # (a) hand examples
    e1 = np.array([1.0, 0.0])
    a_ok = (np.array_equal(bfgs_update(np.eye(2), e1, e1), np.eye(2))
            and np.array_equal(bfgs_update(np.eye(2), e1, np.array([2.0, 0.0])), [[2.0, 0.0], [0.0, 1.0]]))
    notes.append(f"(a) {'ok' if a_ok else 'mismatch'}")

    # (b) convex quadratic, n = 5, with a near-exact line search (tight curvature condition)
    rng = np.random.default_rng(5)
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    A = q @ np.diag([1.0, 2.0, 4.0, 7.0, 10.0]) @ q.T
    b = rng.standard_normal(5)
    w_star = np.linalg.solve(A, b)
    res = minimize(lambda w: 0.5 * w @ A @ w - b @ w, lambda w: A @ w - b, np.zeros(5),
                   TrainConfig(grad_tol=1e-12, max_iterations=50, wolfe_c2=1e-3))
    b_err = float(np.max(np.abs(res.w - w_star)))
    b_ok = b_err <= 1e-10 and len(res.history) <= 6
    notes.append(f"(b) {len(res.history)} it, err {b_err:.1e}")

    # (c) Rosenbrock from (-1.2, 1)
    f = lambda w: 100.0 * (w[1] - w[0] ** 2) ** 2 + (1 - w[0]) ** 2
    g = lambda w: np.array([-400.0 * w[0] * (w[1] - w[0] ** 2) - 2 * (1 - w[0]), 200.0 * (w[1] - w[0] ** 2)])
    res = minimize(f, g, np.array([-1.2, 1.0]), TrainConfig(grad_tol=1e-10, max_iterations=200))
    c_err = float(np.max(np.abs(res.w - 1.0)))
    c_ok = c_err <= 1e-6 and len(res.history) <= 200
    notes.append(f"(c) {len(res.history)} it, err {c_err:.1e}")

    # (d) H symmetric and factorizable at every iteration of the default training run
    _, checks, _ = default_run
    max_asym = max(a for _, a, _ in checks)
    d_ok = bool(checks) and all(spd for _, _, spd in checks) and max_asym <= 1e-10
    notes.append(f"(d) {len(checks)} it, max asym {max_asym:.1e}, "
                 f"all SPD {all(spd for _, _, spd in checks)}")
    verdict(5, a_ok and b_ok and c_ok and d_ok, "; ".join(notes))


def test_criterion_6_cascade_off_equivalence():
    rng = np.random.default_rng(66)
    worst = 0.0
    for k in range(10):
        n_in, hidden, n_out, x, y = random_cascade_case(rng, max_hidden_layers=3)
        top = CfnnTopology.build(n_in, hidden, n_out, full_cascade=True)
        w = init_weights(top, k)
        weights, biases = unpack(top, w)
        for (dst, src), block in weights.items():
            if src != dst - 1:
                block[:] = 0.0
        layers = [(weights[(d, d - 1)].tolist(), biases[d].tolist(), top.activations[d - 1])
                  for d in range(1, top.n_layers)]
        ref_out, _ = ffnn_forward_rows(layers, x)
        worst = max(worst, float(np.max(np.abs(forward(top, w, x) - ref_out))))
        gW, gb = ffnn_gradient(layers, x, y)
        grad_w, grad_b = unpack(top, gradient(top, w, (x, y)))
        for d in range(1, top.n_layers):
            worst = max(worst, float(np.max(np.abs(grad_w[(d, d - 1)] - gW[d - 1]))),
                        float(np.max(np.abs(grad_b[d] - gb[d - 1]))))
    verdict(6, worst <= 1e-12, f"10 networks, max forward/gradient deviation {worst:.1e}")


def test_criterion_7_determinism(tmp_path, capsys):
    config = Path(__file__).resolve().parents[1] / "configs" / "default.ini"
    a, b = tmp_path / "a", tmp_path / "b"
    codes = (main(["run", "--config", str(config), "--out", str(a)]),
             main(["run", "--config", str(config), "--out", str(b)]))
    capsys.readouterr()
    names = sorted(p.name for p in a.iterdir())
    same = names == sorted(p.name for p in b.iterdir()) and all(
        (a / n).read_bytes() == (b / n).read_bytes() for n in names)
    verdict(7, same and codes[0] == codes[1], f"{len(names)} files compared, exit codes {codes}")


def test_criterion_8_steady_state_balance():
    rng = np.random.default_rng(8)
    worst = 0.0
    solved = 0
    base = default_params()
    for _ in range(60):
        omega = rng.uniform(5.0, 120.0)
        theta = rng.uniform(10.0, 150.0)
        v = rng.uniform(60.0, 400.0)
        tl = rng.uniform(0.5, 20.0)
        try:
            p = calibrate(omega, theta, v, tl)
        except Exception:
            continue
        for vv, tt in ((v, tl), (0.7 * v, 0.5 * tl), (base.v_rated, base.t_l_rated)):
            try:
                ss = steady_state(p, vv, tt)
            except Exception:
                continue
            worst = max(worst, abs(power_losses(p, ss) - heat_dissipation(p, ss)))
            solved += 1
    ss = steady_state(base, base.v_rated, base.t_l_rated)
    worst = max(worst, abs(power_losses(base, ss) - heat_dissipation(base, ss)))
    verdict(8, solved >= 100 and worst <= 1e-6,
            f"{solved + 1} equilibria, max |losses - dissipation| = {worst:.1e} W")
