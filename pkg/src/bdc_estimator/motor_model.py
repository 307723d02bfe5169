"""Electro-thermal model of a brushed DC motor.

State is ``(i_a, omega, theta)``: armature current [A], shaft speed [rad/s]
and armature temperature rise above ambient [degC]. Inputs are the armature
voltage ``v_a`` [V] and the load torque ``t_l`` [N*m].

The constants ``k_e``, ``b`` and ``j`` are not given directly;
:func:`calibrate` derives them from a target operating point and
:func:`default_params` applies the standard targets.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, InfeasibleTarget, NoConvergence

RAD_S_TO_RPM = 60.0 / (2.0 * math.pi)

# Default calibration targets: 80 degC rise at ~222 rpm under rated V and load.
DEFAULT_THETA_SS = 80.0
DEFAULT_OMEGA_SS = 23.24
DEFAULT_TAU_MECH = 0.5

STEADY_STATE_TOL = 1e-9
STEADY_STATE_MAX_ITER = 200


@dataclass(frozen=True, kw_only=True)
class MotorParams:
    """Physical constants of the motor (SI units, theta in degC above ambient)."""

    v_rated: float = 240.0
    p_rated: float = 3000.0
    t_l_rated: float = 11.0
    r_a0: float = 3.5
    l_a: float = 0.034
    alpha_cu: float = 0.004
    k_e: float
    j: float
    b: float
    k_ir: float = 0.0041
    k_0: float = 4.33
    k_t: float = 0.0028
    h: float = 18000.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"MotorParams.{f.name} must be finite and > 0, got {value!r}")

    @property
    def i_rated(self) -> float:
        return self.p_rated / self.v_rated

    @property
    def thermal_time_constant(self) -> float:
        return self.h / self.k_0

    @property
    def electrical_time_constant(self) -> float:
        return self.l_a / self.r_a0


PARAM_NAMES = tuple(f.name for f in dataclasses.fields(MotorParams))


@dataclass(frozen=True)
class MotorState:
    i_a: float
    omega: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.i_a, self.omega, self.theta], dtype=float)


@dataclass(frozen=True)
class MotorInput:
    v_a: float
    t_l: float


@dataclass(frozen=True)
class StateDerivative:
    di_a_dt: float
    domega_dt: float
    dtheta_dt: float

    def as_array(self) -> np.ndarray:
        return np.array([self.di_a_dt, self.domega_dt, self.dtheta_dt], dtype=float)


def resistance(params: MotorParams, theta: float) -> float:
    """Armature resistance at temperature rise ``theta``."""
    return params.r_a0 * (1.0 + params.alpha_cu * theta)


def power_losses(params: MotorParams, state: MotorState) -> float:
    """Copper plus iron losses [W]."""
    return resistance(params, state.theta) * state.i_a**2 + params.k_ir * state.omega**2


def heat_dissipation(params: MotorParams, state: MotorState) -> float:
    """Heat carried away by convection from the armature surface [W]."""
    return params.k_0 * (1.0 + params.k_t * state.omega) * state.theta


def derivatives(params: MotorParams, state: MotorState, inp: MotorInput) -> StateDerivative:
    r = resistance(params, state.theta)
    di = (inp.v_a - r * state.i_a - params.k_e * state.omega) / params.l_a
    dw = (params.k_e * state.i_a - params.b * state.omega - inp.t_l) / params.j
    dth = (power_losses(params, state) - heat_dissipation(params, state)) / params.h
    return StateDerivative(di, dw, dth)


def _balance_residual(p: MotorParams, x: np.ndarray, v_a: float, t_l: float) -> np.ndarray:
    # Equilibrium balances in volts, newton-meters and watts.
    i, w, th = x
    r = p.r_a0 * (1.0 + p.alpha_cu * th)
    return np.array([
        v_a - r * i - p.k_e * w,
        p.k_e * i - p.b * w - t_l,
        r * i * i + p.k_ir * w * w - p.k_0 * (1.0 + p.k_t * w) * th,
    ])


def _balance_jacobian(p: MotorParams, x: np.ndarray) -> np.ndarray:
    i, w, th = x
    r = p.r_a0 * (1.0 + p.alpha_cu * th)
    return np.array([
        [-r, -p.k_e, -p.r_a0 * p.alpha_cu * i],
        [p.k_e, -p.b, 0.0],
        [2.0 * r * i, 2.0 * p.k_ir * w - p.k_0 * p.k_t * th,
         p.r_a0 * p.alpha_cu * i * i - p.k_0 * (1.0 + p.k_t * w)],
    ])


def _as_state(x: np.ndarray) -> MotorState:
    # + 0.0 folds negative zeros
    return MotorState(float(x[0]) + 0.0, float(x[1]) + 0.0, float(x[2]) + 0.0)


def steady_state(params: MotorParams, v_a: float, t_l: float,
                 tol: float = STEADY_STATE_TOL,
                 max_iter: int = STEADY_STATE_MAX_ITER) -> MotorState:
    """Solve for the equilibrium of the motor under constant ``v_a`` and ``t_l``.

    Damped Newton iteration on the three balance equations, started from the
    cold (theta = 0) electro-mechanical equilibrium.

    Raises
    ------
    NoConvergence
        If the residual is not below ``tol`` (each component, natural units)
        after ``max_iter`` iterations.
    """
    p = params
    # cold start: linear electro-mechanical solve at theta = 0
    det = -p.r_a0 * p.b - p.k_e**2
    i0 = (-p.b * v_a - p.k_e * t_l) / det
    w0 = (p.r_a0 * t_l - p.k_e * v_a) / det
    denom = p.k_0 * (1.0 + p.k_t * w0) - p.r_a0 * p.alpha_cu * i0**2
    th0 = (p.r_a0 * i0**2 + p.k_ir * w0**2) / denom if denom > 0 else 0.0
    x = np.array([i0, w0, th0])

    r = _balance_residual(p, x, v_a, t_l)
    for _ in range(max_iter):
        if np.all(np.abs(r) <= tol):
            return _as_state(x)
        try:
            dx = np.linalg.solve(_balance_jacobian(p, x), -r)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular equilibrium Jacobian at {x}") from exc
        norm0 = np.linalg.norm(r)
        step = 1.0
        for _ in range(40):
            x_new = x + step * dx
            r_new = _balance_residual(p, x_new, v_a, t_l)
            if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new) < norm0:
                break
            step *= 0.5
        else:
            # no decrease possible: accept the full step only if it is already converged
            x_new = x + dx
            r_new = _balance_residual(p, x_new, v_a, t_l)
            if not np.all(np.abs(r_new) <= tol):
                raise NoConvergence(f"damped Newton stalled at residual {r}")
        x, r = x_new, r_new
    if np.all(np.abs(r) <= tol):
        return _as_state(x)
    raise NoConvergence(f"no equilibrium within {max_iter} iterations (residual {r})")


def calibrate(omega_ss: float, theta_ss: float, v_a: float, t_l: float,
              fixed: Mapping[str, float] | None = None,
              tau_mech: float = DEFAULT_TAU_MECH) -> MotorParams:
    """Derive ``k_e``, ``b`` and ``j`` so that the motor settles at the target point.

    The thermal balance fixes the steady current, the electrical balance
    then fixes ``k_e`` and the mechanical balance ``b``. ``j`` is set so the
    mechanical time constant ``j / b`` equals ``tau_mech``.

    Parameters
    ----------
    omega_ss, theta_ss : float
        Target steady speed [rad/s] and temperature rise [degC].
    v_a, t_l : float
        Constant voltage and load torque of the operating point.
    fixed : mapping, optional
        Known constants overriding the defaults of :class:`MotorParams`.
        Must not contain ``k_e``, ``b`` or ``j``.
    """
    fixed = dict(fixed or {})
    for name in ("k_e", "b", "j"):
        if name in fixed:
            raise ValueError(f"{name} is an output of calibrate, not an input")
    if not (omega_ss > 0 and theta_ss > 0):
        raise InfeasibleTarget(
            f"targets must be positive (omega_ss={omega_ss}, theta_ss={theta_ss})")
    # build with placeholders to pick up defaults and validation of the fixed part
    base = MotorParams(k_e=1.0, b=1.0, j=1.0, **fixed)
    r_ss = resistance(base, theta_ss)
    i_sq = (base.k_0 * (1.0 + base.k_t * omega_ss) * theta_ss
            - base.k_ir * omega_ss**2) / r_ss
    if not i_sq > 0:
        raise InfeasibleTarget(f"implied steady current squared {i_sq} is not positive")
    i_ss = math.sqrt(i_sq)
    k_e = (v_a - r_ss * i_ss) / omega_ss
    if not k_e > 0:
        raise InfeasibleTarget(f"implied k_e {k_e} is not positive")
    b = (k_e * i_ss - t_l) / omega_ss
    if not b > 0:
        raise InfeasibleTarget(f"implied viscous friction b {b} is not positive")
    return dataclasses.replace(base, k_e=k_e, b=b, j=tau_mech * b)


def default_params() -> MotorParams:
    """Default motor constants with ``k_e``, ``b``, ``j`` calibrated to 80 degC / 23.24 rad/s."""
    base = MotorParams(k_e=1.0, b=1.0, j=1.0)
    return calibrate(DEFAULT_OMEGA_SS, DEFAULT_THETA_SS, base.v_rated, base.t_l_rated)


def params_from_mapping(values: Mapping[str, float]) -> MotorParams:
    """Build parameters from a partial mapping.

    Besides the :class:`MotorParams` fields the mapping may carry calibration
    targets ``omega_ss``, ``theta_ss`` and ``tau_mech``. When ``k_e``, ``b``
    and ``j`` are all absent they are calibrated at rated voltage and torque.
    """
    values = dict(values)
    targets = {k: values.pop(k) for k in ("omega_ss", "theta_ss", "tau_mech") if k in values}
    unknown = set(values) - set(PARAM_NAMES)
    if unknown:
        raise ConfigError(f"unknown motor parameter(s): {', '.join(sorted(unknown))}")
    given = [k for k in ("k_e", "b", "j") if k in values]
    if len(given) == 3:
        if targets:
            raise ConfigError("calibration targets given together with explicit k_e, b, j")
        return MotorParams(**values)
    if given:
        raise ConfigError("k_e, b and j must be given together (or all omitted for calibration)")
    base = MotorParams(k_e=1.0, b=1.0, j=1.0, **values)
    return calibrate(targets.get("omega_ss", DEFAULT_OMEGA_SS),
                     targets.get("theta_ss", DEFAULT_THETA_SS),
                     base.v_rated, base.t_l_rated, fixed=values,
                     tau_mech=targets.get("tau_mech", DEFAULT_TAU_MECH))


def parse_params(text: str) -> MotorParams:
    """Parse a flat ``name = number`` parameter file (``#`` starts a comment)."""
    values: dict[str, float] = {}
    allowed = set(PARAM_NAMES) | {"omega_ss", "theta_ss", "tau_mech"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'name = number', got {raw!r}")
        if key not in allowed:
            raise ConfigError(f"line {lineno}: unknown parameter {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate parameter {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} is not a number: {val.strip()!r}") from None
    try:
        return params_from_mapping(values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def format_params(params: MotorParams) -> str:
    lines = ["# brushed DC motor parameters (SI units, theta above ambient)"]
    lines += [f"{name} = {getattr(params, name)!r}" for name in PARAM_NAMES]
    return "\n".join(lines) + "\n"


def load_params(path) -> MotorParams:
    with open(path, encoding="utf-8") as fh:
        return parse_params(fh.read())


def save_params(params: MotorParams, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_params(params))
