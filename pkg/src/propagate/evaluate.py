"""Model scoring and the three comparison experiments.

Experiments are deliberately dumb harnesses around fit(): they slice or
corrupt the series, train each arm, simulate, and score.  One arm failing
(divergence, fit failure) never takes down the others; the failure lands in
the arm's record with its message.

Scoring always targets the smoothed channel of whatever series the arm was
asked to explain: the clean series for fitting and forecasting, the
corrupted one in the noise study.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import context_from_series
from .errors import PropagateError
from .ingest import IntensitySeries
from .integrate import Trajectory
from .train import FitResult, TrainConfig, fit, simulate_trajectory


@dataclass
class MetricBundle:
    rmse: float
    mae: float
    mape: float
    pearson: float | None  # None when either side has zero variance

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "mape": self.mape,
                "pearson": self.pearson}


_MAPE_EPS = 1e-8


def metrics(y_true, y_pred) -> MetricBundle:
    """RMSE, MAE, MAPE (epsilon-guarded), and Pearson r.

    Pearson is undefined when either series is constant; that comes back as
    None rather than a NaN that would poison downstream arithmetic silently.
    """
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape or yt.ndim != 1 or len(yt) < 2:
        raise ValueError("metrics needs two equal-length 1-d arrays (>= 2 points)")
    resid = yp - yt
    rmse = float(np.sqrt(np.mean(resid * resid)))
    mae = float(np.mean(np.abs(resid)))
    mape = float(np.mean(np.abs(resid) / np.maximum(np.abs(yt), _MAPE_EPS)) * 100.0)
    st = float(np.std(yt))
    sp = float(np.std(yp))
    if st == 0.0 or sp == 0.0 or not (math.isfinite(st) and math.isfinite(sp)):
        pearson = None
    else:
        pearson = float(np.mean((yt - yt.mean()) * (yp - yp.mean())) / (st * sp))
    return MetricBundle(rmse=rmse, mae=mae, mape=mape, pearson=pearson)


@dataclass
class ArmResult:
    label: str
    kind: str
    failed: bool = False
    message: str = ""
    metrics: MetricBundle | None = None
    forecast_metrics: MetricBundle | None = None
    improvement_pct: float | None = None
    trajectory: Trajectory | None = None
    fit_result: FitResult | None = None


@dataclass
class ExperimentReport:
    name: str
    arms: list[ArmResult]
    config_echo: dict = field(default_factory=dict)
    seed: int = 0

    def arm(self, label: str) -> ArmResult:
        for a in self.arms:
            if a.label == label:
                return a
        raise KeyError(label)


def _echo(cfg: TrainConfig, **extra) -> dict:
    d = {
        "adam_iters": cfg.adam_iters, "adam_lr": cfg.adam_lr,
        "lbfgs_iters": cfg.lbfgs_iters, "lbfgs_memory": cfg.lbfgs_memory,
        "substeps_per_interval": cfg.substeps_per_interval, "seed": cfg.seed,
    }
    d.update(extra)
    return d


def _fit_arm(label: str, kind: str, series: IntensitySeries,
             cfg: TrainConfig) -> ArmResult:
    try:
        res = fit(kind, series, cfg)
    except PropagateError as exc:
        return ArmResult(label=label, kind=kind, failed=True, message=str(exc))
    bundle = metrics(series.smoothed, res.trajectory.M)
    return ArmResult(label=label, kind=kind, metrics=bundle,
                     trajectory=res.trajectory, fit_result=res)


def run_ablation(series: IntensitySeries, cfg: TrainConfig | None = None) -> ExperimentReport:
    """Three feedback arms on the same data: none, analytic log, learned.

    Improvement percentages are reductions in fit RMSE relative to the
    no-feedback baseline; they stay None if that baseline failed.
    """
    cfg = cfg or TrainConfig()
    arms = [
        _fit_arm("no_feedback", "ode_no_feedback", series, cfg),
        _fit_arm("log_feedback", "ode", series, cfg),
        _fit_arm("neural_feedback", "ude", series, cfg),
    ]
    base = arms[0]
    if not base.failed and base.metrics is not None and base.metrics.rmse > 0:
        for arm in arms:
            if not arm.failed and arm.metrics is not None:
                arm.improvement_pct = 100.0 * (base.metrics.rmse - arm.metrics.rmse) / base.metrics.rmse
    return ExperimentReport("ablation", arms, _echo(cfg), seed=cfg.seed)


_MIN_TRAIN_BINS = 10


def truncate_series(series: IntensitySeries, fraction: float) -> IntensitySeries:
    """First floor(fraction * n) bins as their own series.

    The smoothed channel is sliced, not recomputed: the forecast contract is
    that everything the model sees, forcing signal included, is exactly the
    head of the full preprocessed signal.
    """
    if series.smoothed is None:
        raise ValueError("truncate_series needs a smoothed series")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n_train = int(math.floor(fraction * series.n_bins))
    if n_train < _MIN_TRAIN_BINS:
        raise ValueError(f"fraction {fraction} leaves {n_train} bins; need {_MIN_TRAIN_BINS}")
    out = IntensitySeries(
        t=series.t[:n_train].copy(),
        raw=series.raw[:n_train].copy(),
        smoothed=series.smoothed[:n_train].copy(),
        bin_width=series.bin_width,
    )
    out.validate()
    return out


def run_forecast(series: IntensitySeries, fractions=(0.25, 0.5, 0.75),
                 cfg: TrainConfig | None = None,
                 kinds=("ode", "ude", "node")) -> ExperimentReport:
    """Train on a prefix, integrate the full horizon, score both regions.

    Normalization constants (max_eta, t boundaries) and the forcing signal
    stay those of the training window; constant extrapolation of eta is the
    model's only knowledge of the future.  ArmResult.metrics scores the full
    series, forecast_metrics the unseen tail.  Fractions too small to leave
    a trainable prefix are skipped with a notice in the arm record.
    """
    cfg = cfg or TrainConfig()
    series.validate()
    arms: list[ArmResult] = []
    for frac in fractions:
        try:
            train_series = truncate_series(series, frac)
        except ValueError as exc:
            for kind in kinds:
                arms.append(ArmResult(label=f"{kind}@{frac:g}", kind=kind,
                                      failed=True, message=f"skipped: {exc}"))
            continue
        n_train = train_series.n_bins
        ctx = context_from_series(train_series)
        for kind in kinds:
            label = f"{kind}@{frac:g}"
            try:
                res = fit(kind, train_series, cfg, ctx=ctx)
                traj = simulate_trajectory(kind, res.params, series.t, ctx, cfg)
            except PropagateError as exc:
                arms.append(ArmResult(label=label, kind=kind, failed=True,
                                      message=str(exc)))
                continue
            full = metrics(series.smoothed, traj.M)
            tail = metrics(series.smoothed[n_train:], traj.M[n_train:])
            arms.append(ArmResult(label=label, kind=kind, metrics=full,
                                  forecast_metrics=tail, trajectory=traj,
                                  fit_result=res))
    return ExperimentReport("forecast", arms,
                            _echo(cfg, fractions=list(fractions), kinds=list(kinds)),
                            seed=cfg.seed)


def corrupt(series: IntensitySeries, level: float, seed: int) -> IntensitySeries:
    """Additive Gaussian noise on the smoothed channel, floored at zero.

    sigma = level * std(smoothed); the generator is keyed on (seed, level)
    so levels are independent draws yet reproducible run to run.
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    rng = np.random.default_rng([seed, int(round(level * 1e9))])
    sm = series.smoothed
    if sm is None:
        raise ValueError("corrupt needs a smoothed series")
    sigma = level * float(np.std(sm))
    if sigma > 0:
        noisy = np.maximum(sm + rng.normal(0.0, sigma, size=len(sm)), 0.0)
    else:
        noisy = sm.copy()
    return IntensitySeries(t=series.t.copy(), raw=series.raw.copy(),
                           smoothed=np.asarray(noisy, dtype=np.float64),
                           bin_width=series.bin_width)


def run_noise(series: IntensitySeries, levels=(0.0, 0.05, 0.10, 0.20),
              cfg: TrainConfig | None = None, noise_seed: int | None = None,
              kinds=("ode", "ude", "node")) -> ExperimentReport:
    """Robustness study: refit every model on noise-corrupted signals.

    Each (kind, level) arm trains on the corrupted series and is scored
    against that same corrupted series; the question is degradation, not
    denoising.  level 0 must reproduce the clean fit bit for bit.
    """
    cfg = cfg or TrainConfig()
    series.validate()
    if noise_seed is None:
        noise_seed = cfg.seed
    arms: list[ArmResult] = []
    for level in levels:
        noisy = corrupt(series, level, noise_seed)
        for kind in kinds:
            arm = _fit_arm(f"{kind}@{level:g}", kind, noisy, cfg)
            arms.append(arm)
    return ExperimentReport("noise", arms,
                            _echo(cfg, levels=list(levels), kinds=list(kinds),
                                  noise_seed=noise_seed), seed=cfg.seed)
