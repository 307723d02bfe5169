"""BFGS quasi-Newton minimization with a strong-Wolfe line search.

The Hessian approximation itself (not its inverse) is updated; each
iteration solves ``H p = -g`` through a Cholesky factorization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve

from . import csvio
from .cfnn import CfnnTopology, loss_and_gradient
from .errors import (CurvatureViolation, LineSearchFailed, NotDescent,
                     NotPositiveDefinite, SingularDenominator)

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "loss", "grad_norm", "alpha", "curvature", "updated_flag")


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 2000
    grad_tol: float = 1e-6
    loss_goal: float | None = None
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 40
    curvature_eps: float = 1e-10

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.grad_tol <= 0 or self.curvature_eps <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 0 or self.max_line_search_steps < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    alpha: float
    curvature: float
    updated: bool
    # diagnostics kept in memory only
    reset: bool = False
    spd: bool = True
    asymmetry: float = 0.0


@dataclass
class TrainHistory:
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    initial_loss: float = math.nan

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def goal_reached(self) -> bool:
        return self.stop_reason in ("grad_tol", "loss_goal")

    def save_csv(self, path) -> None:
        cols = [[getattr(r, name) for r in self.records]
                for name in ("iteration", "loss", "grad_norm", "alpha", "curvature", "updated")]
        trailer = [f"stop_reason = {self.stop_reason}",
                   f"warning = {0 if self.goal_reached else 1}"]
        csvio.write_columns(path, HISTORY_COLUMNS, cols, trailer)


@dataclass
class BfgsState:
    w: np.ndarray
    hessian_approx: np.ndarray
    grad: np.ndarray
    iteration: int
    loss: float


@dataclass
class MinimizeResult:
    w: np.ndarray
    loss: float
    grad: np.ndarray
    history: TrainHistory
    state: BfgsState


def bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray,
                curvature_eps: float = 1e-10) -> np.ndarray:
    """Rank-two BFGS update of the Hessian approximation ``H``.

    ``H + y y^T / (y^T s) - H s s^T H / (s^T H s)``, symmetrized.

    Raises
    ------
    CurvatureViolation
        ``y^T s <= curvature_eps * |s| |y|``.
    SingularDenominator
        ``s^T H s <= 0`` (``H`` is no longer positive definite).
    """
    ys = float(y @ s)
    if not ys > curvature_eps * np.linalg.norm(s) * np.linalg.norm(y):
        raise CurvatureViolation(f"y^T s = {ys:.3e} fails the curvature condition")
    Hs = H @ s
    sHs = float(s @ Hs)
    if not sHs > 0:
        raise SingularDenominator(f"s^T H s = {sHs:.3e} <= 0")
    out = H + np.outer(y, y) / ys - np.outer(Hs, Hs) / sHs
    return 0.5 * (out + out.T)


def newton_step(H: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Solve ``H p = -grad`` by Cholesky factorization."""
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Hessian approximation is not positive definite") from exc
    return cho_solve((L, True), -grad)


def _cubic_min(a, fa, da, b, fb, db):
    # minimizer of the cubic matching values and slopes at a and b
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (db + d2 - d1) / denom
    return x if math.isfinite(x) else None


@dataclass
class LineSearchResult:
    alpha: float
    f_new: float
    grad_new: np.ndarray
    evaluations: int


def wolfe_line_search(f: Callable, grad_f: Callable | None, w: np.ndarray, p: np.ndarray,
                      c1: float = 1e-4, c2: float = 0.9, max_steps: int = 40,
                      f0: float | None = None, g0: np.ndarray | None = None,
                      alpha0: float = 1.0, fg: Callable | None = None) -> LineSearchResult:
    """Find a step satisfying the strong Wolfe conditions by bracketing and zoom.

    ``fg`` may be given instead of ``f``/``grad_f`` to evaluate both at once.
    ``max_steps`` bounds the total number of function/gradient evaluations.

    Raises
    ------
    NotDescent
        ``grad^T p >= 0``.
    LineSearchFailed
        No acceptable step within ``max_steps`` evaluations.
    """
    if fg is None:
        fg = lambda x: (f(x), grad_f(x))
    if f0 is None or g0 is None:
        f0, g0 = fg(w)
    d0 = float(g0 @ p)
    if not d0 < 0:
        raise NotDescent(f"grad^T p = {d0:.3e} is not negative")

    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        fa, ga = fg(w + a * p)
        fa = float(fa)
        if not math.isfinite(fa):
            return math.inf, None, math.nan
        return fa, ga, float(ga @ p)

    def accept(da):
        return abs(da) <= -c2 * d0

    def sufficient(a, fa):
        return fa <= f0 + c1 * a * d0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while evals < max_steps:
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            width = hi - lo
            # keep the trial point safely inside the bracket
            if a is None or not (min(lo, hi) + 0.1 * abs(width) <= a <= max(lo, hi) - 0.1 * abs(width)):
                if a is None or math.isfinite(f_hi):
                    a = lo + 0.5 * width
                else:
                    a = lo + 0.1 * width
            fa, ga, da = phi(a)
            if not sufficient(a, fa) or fa >= f_lo:
                hi, f_hi, d_hi = a, fa, da
            else:
                if accept(da):
                    return a, fa, ga
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, fa, da
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        raise LineSearchFailed(f"zoom exhausted after {evals} evaluations")

    a_prev, f_prev, d_prev = 0.0, float(f0), d0
    a = alpha0
    first = True
    while evals < max_steps:
        fa, ga, da = phi(a)
        if not sufficient(a, fa) or (not first and fa >= f_prev):
            alpha, fn, gn = zoom(a_prev, f_prev, d_prev, a, fa, da)
            return LineSearchResult(alpha, fn, gn, evals)
        if accept(da):
            return LineSearchResult(a, fa, ga, evals)
        if da >= 0:
            alpha, fn, gn = zoom(a, fa, da, a_prev, f_prev, d_prev)
            return LineSearchResult(alpha, fn, gn, evals)
        a_prev, f_prev, d_prev = a, fa, da
        a = 2.0 * a
        first = False
    raise LineSearchFailed(f"no acceptable step after {evals} evaluations")


def minimize(f: Callable | None, grad_f: Callable | None, w0: np.ndarray,
             config: TrainConfig = TrainConfig(), fg: Callable | None = None,
             callback: Callable[[BfgsState], None] | None = None) -> MinimizeResult:
    """Minimize ``f`` from ``w0`` with BFGS.

    ``H`` starts at the identity. The update is skipped when the curvature
    condition fails. When the factorization of ``H`` fails, the direction is
    not a descent direction, or the line search fails, ``H`` is reset to the
    identity; a line-search failure right after a reset is raised as
    :class:`LineSearchFailed` carrying the partial result.

    Stops on ``|grad|_inf <= grad_tol``, ``loss <= loss_goal`` or
    ``max_iterations``.
    """
    if fg is None:
        fg = lambda x: (f(x), grad_f(x))
    w = np.array(w0, dtype=float)
    n = w.size
    loss, g = fg(w)
    loss = float(loss)
    eye = np.eye(n)
    H = eye.copy()
    history = TrainHistory(initial_loss=loss)

    def result():
        state = BfgsState(w, H, g, len(history), loss)
        return MinimizeResult(w, loss, g, history, state)

    def converged():
        if np.max(np.abs(g), initial=0.0) <= config.grad_tol:
            return "grad_tol"
        if config.loss_goal is not None and loss <= config.loss_goal:
            return "loss_goal"
        return ""

    reason = converged()
    k = 0
    while not reason and k < config.max_iterations:
        k += 1
        reset = False
        spd = True
        try:
            p = newton_step(H, g)
        except NotPositiveDefinite:
            spd = False
            reset = True
            H = eye.copy()
            p = -g
        if not float(g @ p) < 0:
            reset = True
            H = eye.copy()
            p = -g
        identity = reset or k == 1
        gnorm = float(np.linalg.norm(g))
        alpha0 = min(1.0, 1.0 / gnorm) if identity and gnorm > 0 else 1.0
        try:
            ls = wolfe_line_search(None, None, w, p, config.wolfe_c1, config.wolfe_c2,
                                   config.max_line_search_steps, f0=loss, g0=g,
                                   alpha0=alpha0, fg=fg)
        except LineSearchFailed as exc:
            if identity:
                history.stop_reason = "line_search_failed"
                raise LineSearchFailed(str(exc), result()) from exc
            log.debug("line search failed at iteration %d; resetting H", k)
            reset = True
            H = eye.copy()
            p = -g
            try:
                ls = wolfe_line_search(None, None, w, p, config.wolfe_c1, config.wolfe_c2,
                                       config.max_line_search_steps, f0=loss, g0=g,
                                       alpha0=min(1.0, 1.0 / gnorm), fg=fg)
            except LineSearchFailed as exc2:
                history.stop_reason = "line_search_failed"
                raise LineSearchFailed(str(exc2), result()) from exc2

        s = ls.alpha * p
        y = ls.grad_new - g
        curvature = float(s @ y)
        updated = False
        try:
            H = bfgs_update(H, s, y, config.curvature_eps)
            updated = True
        except CurvatureViolation:
            pass
        except SingularDenominator:
            H = eye.copy()
            reset = True
        w = w + s
        loss = ls.f_new
        g = ls.grad_new
        history.records.append(IterationRecord(
            k, loss, float(np.max(np.abs(g))), ls.alpha, curvature, updated,
            reset=reset, spd=spd, asymmetry=float(np.max(np.abs(H - H.T)))))
        if callback is not None:
            callback(BfgsState(w, H, g, k, loss))
        reason = converged()
    history.stop_reason = reason or "max_iterations"
    return result()


def train(topology: CfnnTopology, dataset, w0: np.ndarray,
          config: TrainConfig = TrainConfig(),
          callback: Callable[[BfgsState], None] | None = None) -> MinimizeResult:
    """Fit the network to ``dataset`` by minimizing the batch SSE with BFGS."""
    fg = lambda w: loss_and_gradient(topology, w, dataset)
    return minimize(None, None, w0, config, fg=fg, callback=callback)
