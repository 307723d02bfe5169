"""End-to-end experiment: simulate S1 duty, train the CFNN, evaluate the estimates."""

from __future__ import annotations

import contextlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import csvio
from .bfgs import MinimizeResult, TrainConfig, train
from .cfnn import CfnnModel, CfnnTopology, init_weights
from .errors import BdcError, DimensionMismatch, GridMismatch
from .motor_model import RAD_S_TO_RPM, MotorParams, MotorState, default_params
from .simulator import (DEFAULT_DECIMATE, DEFAULT_DELAY_TAPS, DEFAULT_DT,
                        DEFAULT_RECORD_EVERY, Dataset, DutyProfile, Trajectory,
                        add_awgn, default_noise, default_profile, integrate_rk4,
                        make_dataset)

OUTPUTS = ("omega", "theta", "r_a")
REPORT_COLUMNS = ("quantity", "metric", "value")
FIGURE_COLUMNS = ("time", "simulated", "estimated", "error")
FIG5_COLUMNS = ("time", "speed_error_rpm", "theta_error", "r_a_error",
                "speed_error_pct", "theta_error_pct", "r_a_error_pct")


@dataclass(frozen=True)
class Thresholds:
    """Steady-state error limits for PASS/FAIL (absolute and percent of final)."""

    speed_rpm: float = 0.8
    theta: float = 1.0
    r_a: float = 1.2e-2
    speed_pct: float = 0.4
    theta_pct: float = 1.25
    r_a_pct: float = 0.3


@dataclass
class ExperimentConfig:
    params: MotorParams = field(default_factory=default_params)
    profile: DutyProfile | None = None
    dt: float = DEFAULT_DT
    record_every: int = DEFAULT_RECORD_EVERY
    sigma_v: float | None = None
    sigma_i: float | None = None
    noise_seed: int = 1
    decimate: int = DEFAULT_DECIMATE
    delay_taps: int = DEFAULT_DELAY_TAPS
    hidden: tuple[int, ...] = (10, 10)
    full_cascade: bool = True
    init_scheme: str = "uniform"
    init_value: float = 0.0
    init_seed: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    window_fraction: float = 0.1
    ambient: float = 0.0
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        if self.profile is None:
            self.profile = default_profile(self.params)
        default_sv, default_si = default_noise(self.params)
        if self.sigma_v is None:
            self.sigma_v = default_sv
        if self.sigma_i is None:
            self.sigma_i = default_si
        if not 0 < self.window_fraction <= 0.5:
            raise ValueError("window_fraction must lie in (0, 0.5]")
        self.hidden = tuple(int(h) for h in self.hidden)

    def topology(self, n_in: int) -> CfnnTopology:
        return CfnnTopology.build(n_in, self.hidden, len(OUTPUTS), self.full_cascade)


@dataclass
class OutputMetrics:
    rmse: float
    max_abs_error: float
    steady_state_error: float
    final_value: float
    percent_of_final: float


@dataclass
class EvalSeries:
    """Evaluated rows in time order; ``estimated`` / ``simulated`` are (rows, 3)."""

    time: np.ndarray
    simulated: np.ndarray
    estimated: np.ndarray

    @property
    def error(self) -> np.ndarray:
        return self.estimated - self.simulated


@dataclass
class EvalReport:
    metrics: dict[str, OutputMetrics]
    r_consistency: float
    window_fraction: float
    n_rows: int
    n_window: int

    def steady_state_summary(self) -> dict[str, float]:
        return {
            "speed_rpm": self.metrics["omega_rpm"].steady_state_error,
            "theta": self.metrics["theta"].steady_state_error,
            "r_a": self.metrics["r_a"].steady_state_error,
        }

    def check(self, thresholds: Thresholds) -> dict[str, bool]:
        m = self.metrics
        return {
            "speed_rpm": abs(m["omega_rpm"].steady_state_error) <= thresholds.speed_rpm,
            "theta": abs(m["theta"].steady_state_error) <= thresholds.theta,
            "r_a": abs(m["r_a"].steady_state_error) <= thresholds.r_a,
            "speed_pct": m["omega"].percent_of_final <= thresholds.speed_pct,
            "theta_pct": m["theta"].percent_of_final <= thresholds.theta_pct,
            "r_a_pct": m["r_a"].percent_of_final <= thresholds.r_a_pct,
        }

    def save_csv(self, path) -> None:
        rows = []
        for name, mm in self.metrics.items():
            for metric in ("rmse", "max_abs_error", "steady_state_error",
                           "final_value", "percent_of_final"):
                rows.append((name, metric, getattr(mm, metric)))
        rows += [("r_a_consistency", "max_abs_error", self.r_consistency),
                 ("evaluation", "rows", self.n_rows),
                 ("evaluation", "window_rows", self.n_window),
                 ("evaluation", "window_fraction", self.window_fraction)]
        csvio.write_columns(path, REPORT_COLUMNS, list(zip(*rows)))

    def to_text(self, ambient: float = 0.0, thresholds: Thresholds | None = None) -> str:
        m = self.metrics
        lines = [
            f"evaluated rows: {self.n_rows} (steady-state window: last {self.n_window}, "
            f"{self.window_fraction:.0%})",
            "",
            f"{'quantity':<12}{'rmse':>12}{'max |err|':>12}{'ss error':>12}{'final':>12}{'% final':>10}",
        ]
        labels = {"omega": "speed rad/s", "omega_rpm": "speed rpm",
                  "theta": "temp degC", "r_a": "resist. ohm"}
        for key, label in labels.items():
            mm = m[key]
            final = mm.final_value + (ambient if key == "theta" else 0.0)
            lines.append(f"{label:<12}{mm.rmse:>12.4g}{mm.max_abs_error:>12.4g}"
                         f"{mm.steady_state_error:>12.4g}{final:>12.5g}{mm.percent_of_final:>10.4f}")
        lines.append("")
        lines.append(f"resistance consistency max|r_est - R(theta_est)|: {self.r_consistency:.4g} ohm")
        if ambient:
            lines.append(f"temperatures shown above include an ambient offset of {ambient:g} degC")
        if thresholds is not None:
            lines.append("")
            for name, ok in self.check(thresholds).items():
                lines.append(f"{name:<10} {'PASS' if ok else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _metrics(err: np.ndarray, truth: np.ndarray, window: slice) -> OutputMetrics:
    ss = float(np.mean(err[window]))
    final = float(truth[-1])
    pct = abs(ss) / abs(final) * 100.0 if final != 0 else math.nan
    return OutputMetrics(
        rmse=float(np.sqrt(np.mean(err * err))),
        max_abs_error=float(np.max(np.abs(err))),
        steady_state_error=ss,
        final_value=final,
        percent_of_final=pct,
    )


def predict_series(model: CfnnModel, clean: Trajectory, noisy: Trajectory,
                   decimate: int = 1) -> EvalSeries:
    """Run the model over every sample with full tap history, in time order."""
    if len(clean) != len(noisy) or not np.array_equal(clean.time, noisy.time):
        raise GridMismatch("clean and noisy trajectories are not on the same grid")
    n_in = 2 * (model.delay_taps + 1)
    if model.topology.n_in != n_in or model.topology.n_out != len(OUTPUTS):
        raise DimensionMismatch(f"model expects {model.topology.n_in} inputs, "
                                f"{model.delay_taps} taps imply {n_in}")
    idx_parts, est_parts = [], []
    for offset in range(decimate):
        idx = np.arange(offset, len(noisy), decimate)[model.delay_taps:]
        if len(idx) < 2:
            continue
        ds = make_dataset(noisy, decimate, model.delay_taps, model.input_norm,
                          model.target_norm, offset)
        idx_parts.append(idx)
        est_parts.append(model.predict(ds.raw_inputs))
    idx = np.concatenate(idx_parts)
    order = np.argsort(idx, kind="stable")
    idx = idx[order]
    est = np.concatenate(est_parts)[order]
    truth = np.column_stack([clean.column(c)[idx] for c in OUTPUTS])
    return EvalSeries(clean.time[idx], truth, est)


def report_from_series(series: EvalSeries, params: MotorParams,
                       window_fraction: float = 0.1) -> EvalReport:
    n = len(series.time)
    n_window = max(1, int(math.floor(window_fraction * n)))
    window = slice(n - n_window, n)
    err = series.error
    metrics = {}
    for k, name in enumerate(OUTPUTS):
        metrics[name] = _metrics(err[:, k], series.simulated[:, k], window)
        if name == "omega":
            metrics["omega_rpm"] = _metrics(err[:, k] * RAD_S_TO_RPM,
                                            series.simulated[:, k] * RAD_S_TO_RPM, window)
    theta_hat = series.estimated[:, 1]
    r_from_theta = params.r_a0 * (1.0 + params.alpha_cu * theta_hat)
    consistency = float(np.max(np.abs(series.estimated[:, 2] - r_from_theta)))
    order = ("omega", "omega_rpm", "theta", "r_a")
    return EvalReport({k: metrics[k] for k in order}, consistency, window_fraction, n, n_window)


def evaluate(model: CfnnModel, clean: Trajectory, noisy: Trajectory, params: MotorParams,
             window_fraction: float = 0.1, decimate: int = 1) -> tuple[EvalReport, EvalSeries]:
    """Compare the network's estimates on noisy measurements with the clean states.

    Steady-state metrics average the signed error over the last
    ``window_fraction`` of the evaluated samples; percentages are relative
    to the clean final value.
    """
    series = predict_series(model, clean, noisy, decimate)
    return report_from_series(series, params, window_fraction), series


def write_figures(series: EvalSeries, out_dir, ambient: float = 0.0) -> list[str]:
    """Write fig2_speed.csv .. fig5_errors.csv; speed in rpm."""
    t = series.time
    sim, est = series.simulated, series.estimated
    scale = np.array([RAD_S_TO_RPM, 1.0, 1.0])
    offset = np.array([0.0, ambient, 0.0])
    sim_d = sim * scale + offset
    est_d = est * scale + offset
    err = est_d - sim_d
    names = ["fig2_speed.csv", "fig3_temperature.csv", "fig4_resistance.csv"]
    paths = []
    for k, name in enumerate(names):
        path = os.path.join(out_dir, name)
        csvio.write_columns(path, FIGURE_COLUMNS, [t, sim_d[:, k], est_d[:, k], err[:, k]])
        paths.append(path)
    final = sim[-1] * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = (est - sim) * scale / np.abs(final) * 100.0
    path = os.path.join(out_dir, "fig5_errors.csv")
    csvio.write_columns(path, FIG5_COLUMNS,
                        [t, err[:, 0], err[:, 1], err[:, 2], pct[:, 0], pct[:, 1], pct[:, 2]])
    paths.append(path)
    return paths


@contextlib.contextmanager
def stage(name: str):
    """Tag any package error raised inside with the pipeline stage name."""
    try:
        yield
    except BdcError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
            if exc.args:
                exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    clean: Trajectory
    noisy: Trajectory
    dataset: Dataset
    model: CfnnModel
    training: MinimizeResult
    report: EvalReport
    series: EvalSeries

    @property
    def passed(self) -> bool:
        return all(self.report.check(self.config.thresholds).values())


def simulate(config: ExperimentConfig) -> Trajectory:
    with stage("simulate"):
        return integrate_rk4(config.params, MotorState(0.0, 0.0, 0.0), config.profile,
                             config.dt, config.record_every)


def noisy_copy(config: ExperimentConfig, clean: Trajectory) -> Trajectory:
    with stage("noise"):
        return add_awgn(clean, config.sigma_v, config.sigma_i, config.noise_seed)


def build_dataset(config: ExperimentConfig, noisy: Trajectory) -> Dataset:
    with stage("dataset"):
        return make_dataset(noisy, config.decimate, config.delay_taps)


def fit(config: ExperimentConfig, dataset: Dataset, callback=None) -> tuple[CfnnModel, MinimizeResult]:
    with stage("train"):
        topology = config.topology(dataset.inputs.shape[1])
        w0 = init_weights(topology, config.init_seed, config.init_scheme, config.init_value)
        result = train(topology, dataset, w0, config.train, callback=callback)
        model = CfnnModel(topology, result.w, dataset.input_norm, dataset.target_norm,
                          dataset.delay_taps)
    return model, result


def run_experiment(config: ExperimentConfig, callback=None) -> ExperimentResult:
    """Simulate -> add noise -> build dataset -> train -> evaluate on the whole run."""
    clean = simulate(config)
    noisy = noisy_copy(config, clean)
    dataset = build_dataset(config, noisy)
    model, training = fit(config, dataset, callback)
    with stage("evaluate"):
        report, series = evaluate(model, clean, noisy, config.params,
                                  config.window_fraction, config.decimate)
    return ExperimentResult(config, clean, noisy, dataset, model, training, report, series)
