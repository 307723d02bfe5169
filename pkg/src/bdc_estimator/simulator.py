"""Fixed-step RK4 simulation of duty profiles, measurement noise and dataset building."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import csvio
from .errors import DimensionMismatch, EmptyDataset, NonFinite, UnstableStep
from .motor_model import MotorParams, MotorState, resistance
from .normalization import Normalization

TRAJECTORY_COLUMNS = ("time", "v_a", "t_l", "i_a", "omega", "theta", "r_a")
TARGET_COLUMNS = ("omega", "theta", "r_a")

# Stability guard: dt must stay below half the electrical time constant at this temperature rise.
THETA_GUARD = 200.0

DEFAULT_DT = 1e-3
DEFAULT_RECORD_EVERY = 1000
DEFAULT_DECIMATE = 5
DEFAULT_DELAY_TAPS = 0
DEFAULT_NOISE_FRACTION = 5e-3


@dataclass(frozen=True)
class Segment:
    duration: float
    v_a: float
    t_l: float


@dataclass(frozen=True)
class DutyProfile:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a duty profile needs at least one segment")
        for seg in self.segments:
            if not seg.duration > 0:
                raise ValueError(f"segment duration must be > 0, got {seg.duration}")
            if not (math.isfinite(seg.v_a) and math.isfinite(seg.t_l)):
                raise ValueError("segment inputs must be finite")

    @classmethod
    def s1(cls, duration: float, v_a: float, t_l: float) -> "DutyProfile":
        """Continuous duty: one constant segment held until thermal equilibrium."""
        return cls((Segment(duration, v_a, t_l),))

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


def default_s1_duration(params: MotorParams) -> float:
    """Five thermal time constants, rounded to whole seconds."""
    return float(round(5.0 * params.thermal_time_constant))


def default_profile(params: MotorParams) -> DutyProfile:
    return DutyProfile.s1(default_s1_duration(params), params.v_rated, params.t_l_rated)


@dataclass
class Trajectory:
    """Uniformly sampled motor trajectory; ``dt`` is the sample spacing."""

    dt: float
    time: np.ndarray
    v_a: np.ndarray
    t_l: np.ndarray
    i_a: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    r_a: np.ndarray

    def __post_init__(self):
        n = len(self.time)
        for name in TRAJECTORY_COLUMNS:
            col = np.asarray(getattr(self, name), dtype=float)
            if col.shape != (n,):
                raise DimensionMismatch(f"column {name} has shape {col.shape}, expected ({n},)")
            setattr(self, name, col)

    def __len__(self) -> int:
        return len(self.time)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def replace(self, **columns) -> "Trajectory":
        data = {name: getattr(self, name) for name in TRAJECTORY_COLUMNS}
        data.update(columns)
        return Trajectory(dt=self.dt, **data)

    def save_csv(self, path) -> None:
        csvio.write_columns(path, TRAJECTORY_COLUMNS, [getattr(self, c) for c in TRAJECTORY_COLUMNS])

    @classmethod
    def load_csv(cls, path) -> "Trajectory":
        header, data, _ = csvio.read_columns(path)
        if tuple(header) != TRAJECTORY_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(TRAJECTORY_COLUMNS)}")
        if len(data) < 2:
            raise ValueError(f"{path}: a trajectory needs at least two samples")
        dt = float(data[1, 0] - data[0, 0])
        return cls(dt=dt, **{name: data[:, k] for k, name in enumerate(TRAJECTORY_COLUMNS)})


@njit(cache=True)
def _rhs(i, w, th, v, tl, r_a0, alpha, l_a, k_e, j, b, k_ir, k_0, k_t, h):
    r = r_a0 * (1.0 + alpha * th)
    di = (v - r * i - k_e * w) / l_a
    dw = (k_e * i - b * w - tl) / j
    dth = (r * i * i + k_ir * w * w - k_0 * (1.0 + k_t * w) * th) / h
    return di, dw, dth


@njit(cache=True)
def _rk4_segment(y0, n_steps, record_every, dt, v, tl, pv):
    r_a0, alpha, l_a, k_e, j, b, k_ir, k_0, k_t, h = (
        pv[0], pv[1], pv[2], pv[3], pv[4], pv[5], pv[6], pv[7], pv[8], pv[9])
    n_rec = n_steps // record_every
    out = np.empty((n_rec, 3))
    i, w, th = y0[0], y0[1], y0[2]
    half = 0.5 * dt
    k = 0
    for step in range(1, n_steps + 1):
        a1, b1, c1 = _rhs(i, w, th, v, tl, r_a0, alpha, l_a, k_e, j, b, k_ir, k_0, k_t, h)
        a2, b2, c2 = _rhs(i + half * a1, w + half * b1, th + half * c1, v, tl,
                          r_a0, alpha, l_a, k_e, j, b, k_ir, k_0, k_t, h)
        a3, b3, c3 = _rhs(i + half * a2, w + half * b2, th + half * c2, v, tl,
                          r_a0, alpha, l_a, k_e, j, b, k_ir, k_0, k_t, h)
        a4, b4, c4 = _rhs(i + dt * a3, w + dt * b3, th + dt * c3, v, tl,
                          r_a0, alpha, l_a, k_e, j, b, k_ir, k_0, k_t, h)
        i = i + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        w = w + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        th = th + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        if not (abs(i) < np.inf and abs(w) < np.inf and abs(th) < np.inf):
            return out[:k], step
        if step % record_every == 0:
            out[k, 0] = i
            out[k, 1] = w
            out[k, 2] = th
            k += 1
    return out, -1


def _steps(duration: float, dt: float) -> int:
    n = round(duration / dt)
    if n < 1 or abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"duration {duration} s is not an integer multiple of {dt} s")
    return n


def max_stable_dt(params: MotorParams) -> float:
    return 0.5 * params.l_a / resistance(params, THETA_GUARD)


def integrate_rk4(params: MotorParams, init: MotorState, profile: DutyProfile,
                  dt: float = DEFAULT_DT, record_every: int = 1) -> Trajectory:
    """Integrate the motor over ``profile`` with classical RK4.

    Parameters
    ----------
    dt : float
        Integration step [s].
    record_every : int
        Keep one sample every ``record_every`` steps; the returned trajectory
        has sample spacing ``dt * record_every``. Segment durations must be
        whole multiples of that spacing so boundaries land on samples.

    Raises
    ------
    UnstableStep
        If ``dt`` violates the electrical stability guard.
    NonFinite
        If the state overflows.
    """
    if not dt > 0:
        raise UnstableStep(f"dt must be > 0, got {dt}")
    limit = max_stable_dt(params)
    if not dt < limit:
        raise UnstableStep(f"dt={dt} s exceeds stability guard {limit:.6g} s")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    sample_dt = dt * record_every

    pv = np.array([params.r_a0, params.alpha_cu, params.l_a, params.k_e, params.j,
                   params.b, params.k_ir, params.k_0, params.k_t, params.h])
    y = init.as_array()
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"initial state is not finite: {init}")
    states = [y[None, :]]
    v_cols = []
    tl_cols = []
    for seg in profile.segments:
        n_samples = _steps(seg.duration, sample_dt)
        out, failed_at = _rk4_segment(y, n_samples * record_every, record_every, dt,
                                      float(seg.v_a), float(seg.t_l), pv)
        if failed_at >= 0:
            raise NonFinite(f"state left the finite range after {failed_at} steps "
                            f"of segment {seg}")
        states.append(out)
        v_cols.append(np.full(n_samples, seg.v_a, dtype=float))
        tl_cols.append(np.full(n_samples, seg.t_l, dtype=float))
        y = out[-1].copy()
    x = np.concatenate(states)
    # sample k carries the input applied on [t_k, t_k+1); the last sample repeats it
    v_col = np.concatenate(v_cols + [v_cols[-1][-1:]])
    tl_col = np.concatenate(tl_cols + [tl_cols[-1][-1:]])
    time = np.arange(len(x)) * sample_dt
    theta = x[:, 2]
    return Trajectory(dt=sample_dt, time=time, v_a=v_col, t_l=tl_col,
                      i_a=x[:, 0], omega=x[:, 1], theta=theta,
                      r_a=params.r_a0 * (1.0 + params.alpha_cu * theta))


def add_awgn(traj: Trajectory, sigma_v: float, sigma_i: float, seed: int) -> Trajectory:
    """Add white Gaussian measurement noise to the voltage and current columns.

    Target columns (speed, temperature, resistance) and the load torque are
    returned untouched.
    """
    if sigma_v < 0 or sigma_i < 0:
        raise ValueError("noise standard deviations must be >= 0")
    rng = np.random.default_rng(seed)
    n = len(traj)
    noise_v = rng.standard_normal(n)
    noise_i = rng.standard_normal(n)
    v = traj.v_a + sigma_v * noise_v if sigma_v > 0 else traj.v_a.copy()
    i = traj.i_a + sigma_i * noise_i if sigma_i > 0 else traj.i_a.copy()
    return traj.replace(v_a=v, i_a=i)


def default_noise(params: MotorParams) -> tuple[float, float]:
    """Default measurement noise: 0.5 % of rated voltage and of rated current."""
    return DEFAULT_NOISE_FRACTION * params.v_rated, DEFAULT_NOISE_FRACTION * params.i_rated


def input_names(delay_taps: int) -> list[str]:
    names = ["v_a", "i_a"]
    for lag in range(1, delay_taps + 1):
        names += [f"v_a_lag{lag}", f"i_a_lag{lag}"]
    return names


@dataclass
class Dataset:
    """Supervised rows (measured v, i and their delay taps) -> (omega, theta, r_a)."""

    time: np.ndarray
    raw_inputs: np.ndarray
    raw_targets: np.ndarray
    delay_taps: int
    input_norm: Normalization
    target_norm: Normalization
    inputs: np.ndarray = field(init=False)
    targets: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.raw_inputs) != len(self.raw_targets) or len(self.time) != len(self.raw_inputs):
            raise DimensionMismatch("input, target and time row counts differ")
        if self.raw_inputs.shape[1] != 2 * (self.delay_taps + 1):
            raise DimensionMismatch("input width does not match delay_taps")
        self.inputs = self.input_norm.normalize(self.raw_inputs)
        self.targets = self.target_norm.normalize(self.raw_targets)

    def __len__(self) -> int:
        return len(self.time)

    @property
    def input_names(self) -> list[str]:
        return input_names(self.delay_taps)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.time[rows], self.raw_inputs[rows], self.raw_targets[rows],
                       self.delay_taps, self.input_norm, self.target_norm)

    def save_csv(self, path) -> None:
        header = ["time", *self.input_names, *TARGET_COLUMNS]
        cols = [self.time, *self.raw_inputs.T, *self.raw_targets.T]
        csvio.write_columns(path, header, cols)

    @classmethod
    def load_csv(cls, path) -> "Dataset":
        """Load raw columns; normalization is refitted, reproducing the build-time ranges."""
        header, data, _ = csvio.read_columns(path)
        n_in = len(header) - 1 - len(TARGET_COLUMNS)
        taps = n_in // 2 - 1
        expected = ["time", *input_names(taps), *TARGET_COLUMNS]
        if n_in < 2 or n_in % 2 or header != expected:
            raise ValueError(f"{path}: unexpected dataset header {','.join(header)}")
        if len(data) < 2:
            raise EmptyDataset(f"{path}: fewer than 2 rows")
        raw_in = data[:, 1:1 + n_in]
        raw_tg = data[:, 1 + n_in:]
        return cls(data[:, 0], raw_in, raw_tg, taps,
                   Normalization.fit(raw_in), Normalization.fit(raw_tg))


def make_dataset(traj: Trajectory, decimate: int = DEFAULT_DECIMATE,
                 delay_taps: int = DEFAULT_DELAY_TAPS,
                 input_norm: Normalization | None = None,
                 target_norm: Normalization | None = None,
                 offset: int = 0) -> Dataset:
    """Build supervised rows from every ``decimate``-th sample starting at ``offset``.

    Row ``k`` holds ``(v_a, i_a)`` at kept sample ``k`` followed by the pairs
    at the ``delay_taps`` preceding kept samples; rows without full history
    are dropped. Normalization ranges are fitted on the surviving rows unless
    given explicitly (e.g. to reuse the training ranges at evaluation time).
    """
    if decimate < 1:
        raise ValueError("decimate must be >= 1")
    if delay_taps < 0:
        raise ValueError("delay_taps must be >= 0")
    if not 0 <= offset < decimate:
        raise ValueError("offset must lie in [0, decimate)")
    kept = slice(offset, None, decimate)
    v = traj.v_a[kept]
    i = traj.i_a[kept]
    n = len(v) - delay_taps
    if n < 2:
        raise EmptyDataset(f"only {max(n, 0)} rows survive decimate={decimate}, "
                           f"delay_taps={delay_taps}")
    cols = []
    for lag in range(delay_taps + 1):
        cols.append(v[delay_taps - lag:delay_taps - lag + n])
        cols.append(i[delay_taps - lag:delay_taps - lag + n])
    raw_in = np.column_stack(cols)
    raw_tg = np.column_stack([traj.column(c)[kept][delay_taps:] for c in TARGET_COLUMNS])
    time = traj.time[kept][delay_taps:]
    return Dataset(time, raw_in, raw_tg, delay_taps,
                   input_norm if input_norm is not None else Normalization.fit(raw_in),
                   target_norm if target_norm is not None else Normalization.fit(raw_tg))


def phase_datasets(traj: Trajectory, decimate: int, delay_taps: int,
                   input_norm: Normalization, target_norm: Normalization) -> Sequence[Dataset]:
    """One dataset per decimation phase; together they cover every sample with full history."""
    out = []
    for offset in range(decimate):
        try:
            out.append(make_dataset(traj, decimate, delay_taps, input_norm, target_norm, offset))
        except EmptyDataset:
            continue
    return out
