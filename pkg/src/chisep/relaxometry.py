"""Transverse relaxation-rate fitting: ARLO R2*, log-linear oracle, R2, R2'.

ARLO fits a mono-exponential rate from uniformly spaced echoes by
auto-regression over consecutive echo triplets, with Simpson-rule
integration of the signal across each triplet. The log-linear estimator
(OLS on log magnitude vs TE) serves as its independent cross-check and as
the R2 estimator for spin-echo data.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateX, InvalidArgument, NonUniformSpacing, TooFewEchoes
from .phantom import MultiEchoSeries
from .volume import (
    Mask3D,
    RegressionResult,
    Unit,
    Volume3D,
    check_same_grid,
    linear_regression,
)

_MIN_SIGNAL = 1e-12


def _series_volume(series: MultiEchoSeries, data: np.ndarray) -> Volume3D:
    return Volume3D(data, series.voxel_size, Unit.PER_SECOND, series.b0_dir)


def fit_r2star_arlo(series: MultiEchoSeries) -> Volume3D:
    """Per-voxel R2* (1/s) from multi-echo magnitudes via ARLO.

    Requires >= 3 echoes with uniform spacing. Negative estimates are
    clamped to zero; voxels with negligible first-echo magnitude return 0.
    """
    tes = np.asarray(series.echo_times)
    if len(tes) < 3:
        raise TooFewEchoes(f"ARLO needs >= 3 echoes, got {len(tes)}")
    spacing = np.diff(tes)
    dt = float(spacing[0])
    if np.any(np.abs(spacing - dt) > 1e-6):
        raise NonUniformSpacing(f"echo spacing varies beyond 1e-6 s: {spacing}")

    y = series.magnitude
    # Uniform-spacing triplet coefficients: Simpson integral
    # s_j = dt/3 * (y_j + 4 y_{j+1} + y_{j+2}), difference x_j = y_j - y_{j+2},
    # with regression mixing weight beta = dt/3.
    beta = dt / 3.0
    sum_ss = np.zeros(series.dims)
    sum_sx = np.zeros(series.dims)
    sum_xx = np.zeros(series.dims)
    for j in range(len(tes) - 2):
        s = beta * (y[j] + 4.0 * y[j + 1] + y[j + 2])
        x = y[j] - y[j + 2]
        sum_ss += s * s
        sum_sx += s * x
        sum_xx += x * x
    num = sum_sx + beta * sum_xx
    den = sum_ss + beta * sum_sx
    out = np.zeros(series.dims)
    valid = (y[0] >= _MIN_SIGNAL) & (np.abs(den) > 0)
    np.divide(num, den, out=out, where=valid)
    out[~np.isfinite(out)] = 0.0
    np.maximum(out, 0.0, out=out)
    return _series_volume(series, out)


def fit_r2star_loglinear(series: MultiEchoSeries) -> Volume3D:
    """OLS of ln(magnitude) against TE, slope negated and clamped at 0.

    Voxels with any non-positive magnitude are set to 0.
    """
    tes = np.asarray(series.echo_times)
    if len(tes) < 2:
        raise TooFewEchoes(f"log-linear fit needs >= 2 echoes, got {len(tes)}")
    y = series.magnitude
    valid = np.all(y > _MIN_SIGNAL, axis=0)
    logm = np.log(np.where(y > _MIN_SIGNAL, y, 1.0))
    t_mean = tes.mean()
    t_c = tes - t_mean
    denom = float(np.sum(t_c ** 2))
    slope = np.tensordot(t_c, logm, axes=(0, 0)) / denom
    out = np.where(valid, np.maximum(-slope, 0.0), 0.0)
    return _series_volume(series, out)


def fit_r2(se_series: MultiEchoSeries) -> Volume3D:
    """R2 (1/s) from spin-echo magnitudes; same log-linear estimator."""
    return fit_r2star_loglinear(se_series)


def compute_r2prime(r2star: Volume3D, r2: Volume3D) -> Volume3D:
    """R2' = max(0, R2* - R2) voxelwise."""
    check_same_grid(r2star, r2, "r2star and r2")
    return r2star.with_data(np.maximum(r2star.data - r2.data, 0.0), unit=Unit.PER_SECOND)


def estimate_dr(r2prime: Volume3D, qsm: Volume3D, roi_mask: Mask3D) -> RegressionResult:
    """Relaxometric constant: OLS slope of in-mask R2' against QSM, Hz/ppm."""
    check_same_grid(r2prime, qsm, "r2prime and qsm")
    check_same_grid(r2prime, roi_mask, "r2prime and roi mask")
    m = roi_mask.data
    if not m.any():
        raise InvalidArgument("roi mask selects no voxels")
    xs = qsm.data[m]
    ys = r2prime.data[m]
    if float(np.var(xs)) <= 1e-15:
        raise DegenerateX("QSM values in ROI mask are (nearly) constant")
    return linear_regression(xs, ys)
