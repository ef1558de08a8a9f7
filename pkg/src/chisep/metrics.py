"""Evaluation metrics under mask exclusion: pSNR, NRMSE, HFEN, SSIM, ROI stats.

Filtering (LoG for HFEN, Gaussian window for SSIM) sees the full volume;
only the final statistic is restricted to the mask. HFEN uses circular FFT
convolution with a DC-corrected Laplacian-of-Gaussian kernel, which makes
its invariance to constant offsets exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyResult,
    InvalidArgument,
    NoLabels,
    ZeroDynamicRange,
    ZeroPeak,
    ZeroReference,
)
from .volume import (
    Mask3D,
    RegressionResult,
    Volume3D,
    check_same_grid,
    linear_regression,
)

HFEN_KERNEL_SIZE = 15
HFEN_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    nrmse_percent: float
    hfen_percent: float
    ssim: float
    mask_voxels: int

    def as_dict(self) -> dict:
        return {
            "psnr_db": self.psnr_db,
            "nrmse_percent": self.nrmse_percent,
            "hfen_percent": self.hfen_percent,
            "ssim": self.ssim,
            "mask_voxels": self.mask_voxels,
        }


def _as_arrays(x, ref, mask):
    xd = x.data if isinstance(x, Volume3D) else np.asarray(x, dtype=np.float64)
    rd = ref.data if isinstance(ref, Volume3D) else np.asarray(ref, dtype=np.float64)
    md = mask.data if isinstance(mask, Mask3D) else np.asarray(mask, dtype=bool)
    if xd.shape != rd.shape or xd.shape != md.shape:
        from .errors import GridMismatch

        raise GridMismatch(f"shapes differ: {xd.shape}, {rd.shape}, {md.shape}")
    if not md.any():
        raise EmptyResult("mask selects no voxels")
    return xd, rd, md


def eval_mask(brain: Mask3D, csf: Mask3D, vessels: Mask3D) -> Mask3D:
    """Evaluation region: brain minus CSF minus vessels."""
    check_same_grid(brain, csf, "brain and csf masks")
    check_same_grid(brain, vessels, "brain and vessel masks")
    out = brain.data & ~csf.data & ~vessels.data
    if not out.any():
        raise EmptyResult("exclusions empty the brain mask")
    return Mask3D(out)


def psnr(x, ref, mask) -> float:
    """20*log10(peak/rmse) with peak = max in-mask |ref|; +inf for identical."""
    xd, rd, md = _as_arrays(x, ref, mask)
    peak = float(np.abs(rd[md]).max())
    if peak == 0.0:
        raise ZeroPeak("reference peak within mask is zero")
    rmse = float(np.sqrt(np.mean((xd[md] - rd[md]) ** 2)))
    if rmse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / rmse)


def nrmse(x, ref, mask) -> float:
    """100 * ||x - ref||_2 / ||ref||_2 over the mask, in percent."""
    xd, rd, md = _as_arrays(x, ref, mask)
    denom = float(np.linalg.norm(rd[md]))
    if denom == 0.0:
        raise ZeroReference("reference norm within mask is zero")
    return 100.0 * float(np.linalg.norm(xd[md] - rd[md])) / denom


def log_kernel(size: int = HFEN_KERNEL_SIZE, sigma: float = HFEN_SIGMA) -> np.ndarray:
    """Laplacian-of-Gaussian tap kernel, DC-corrected to sum exactly to zero."""
    if size < 3 or size % 2 == 0:
        raise InvalidArgument(f"kernel size must be odd and >= 3, got {size}")
    half = size // 2
    g = np.arange(-half, half + 1, dtype=np.float64)
    gx, gy, gz = np.meshgrid(g, g, g, indexing="ij")
    r2 = gx * gx + gy * gy + gz * gz
    kern = (r2 - 3.0 * sigma ** 2) / sigma ** 4 * np.exp(-r2 / (2.0 * sigma ** 2))
    kern -= kern.mean()
    kern -= kern.mean()  # second pass pushes the residual below 1e-16
    return kern


def circular_filter(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution of a volume with a small centered tap kernel."""
    padded = np.zeros(data.shape)
    half = tuple(s // 2 for s in kernel.shape)
    for ix in range(kernel.shape[0]):
        for iy in range(kernel.shape[1]):
            for iz in range(kernel.shape[2]):
                w = kernel[ix, iy, iz]
                if w == 0.0:
                    continue
                px = (ix - half[0]) % data.shape[0]
                py = (iy - half[1]) % data.shape[1]
                pz = (iz - half[2]) % data.shape[2]
                padded[px, py, pz] += w
    return np.fft.ifftn(np.fft.fftn(data) * np.fft.fftn(padded)).real


def hfen(x, ref, mask, size: int = HFEN_KERNEL_SIZE, sigma: float = HFEN_SIGMA) -> float:
    """NRMSE between LoG-filtered volumes (filter full volume, mask the stat)."""
    xd, rd, md = _as_arrays(x, ref, mask)
    kern = log_kernel(size, sigma)
    fx = circular_filter(xd, kern)
    fr = circular_filter(rd, kern)
    denom = float(np.linalg.norm(fr[md]))
    if denom == 0.0:
        raise ZeroReference("filtered reference is zero within mask")
    return 100.0 * float(np.linalg.norm(fx[md] - fr[md])) / denom


def _gauss_window(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    g = np.exp(-np.arange(-half, half + 1, dtype=np.float64) ** 2 / (2.0 * sigma ** 2))
    return g / g.sum()


def _corr1d_reflect(data: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    half = len(taps) // 2
    pad = [(0, 0)] * data.ndim
    pad[axis] = (half, half)
    padded = np.pad(data, pad, mode="reflect")
    out = np.zeros_like(data)
    n = data.shape[axis]
    for i, w in enumerate(taps):
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(i, i + n)
        out += w * padded[tuple(sl)]
    return out


def _local_mean(data: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = data
    for axis in range(3):
        out = _corr1d_reflect(out, taps, axis)
    return out


def ssim(x, ref, mask, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
         k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean in-mask structural similarity with a 3D Gaussian window.

    Dynamic range is max(ref) - min(ref) within the mask.
    """
    xd, rd, md = _as_arrays(x, ref, mask)
    rin = rd[md]
    dyn = float(rin.max() - rin.min())
    if dyn == 0.0:
        raise ZeroDynamicRange("reference has zero dynamic range within mask")
    c1 = (k1 * dyn) ** 2
    c2 = (k2 * dyn) ** 2
    taps = _gauss_window(window, sigma)
    mu_x = _local_mean(xd, taps)
    mu_r = _local_mean(rd, taps)
    var_x = np.maximum(_local_mean(xd * xd, taps) - mu_x * mu_x, 0.0)
    var_r = np.maximum(_local_mean(rd * rd, taps) - mu_r * mu_r, 0.0)
    cov = _local_mean(xd * rd, taps) - mu_x * mu_r
    num = (2.0 * mu_x * mu_r + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_r ** 2 + c1) * (var_x + var_r + c2)
    return float((num / den)[md].mean())


def compute_report(x, ref, mask, hfen_size: int = HFEN_KERNEL_SIZE,
                   hfen_sigma: float = HFEN_SIGMA, ssim_window: int = SSIM_WINDOW,
                   ssim_sigma: float = SSIM_SIGMA) -> MetricReport:
    _, _, md = _as_arrays(x, ref, mask)
    return MetricReport(
        psnr_db=psnr(x, ref, mask),
        nrmse_percent=nrmse(x, ref, mask),
        hfen_percent=hfen(x, ref, mask, hfen_size, hfen_sigma),
        ssim=ssim(x, ref, mask, ssim_window, ssim_sigma),
        mask_voxels=int(md.sum()),
    )


@dataclass(frozen=True)
class RoiRow:
    label: int
    n_voxels: int
    test_mean: float
    test_std: float
    ref_mean: float
    ref_std: float


@dataclass(frozen=True)
class RoiReport:
    rows: tuple[RoiRow, ...]
    regression: RegressionResult | None

    def as_dict(self) -> dict:
        return {
            "rows": [vars(r) for r in self.rows],
            "regression": None if self.regression is None else vars(self.regression),
        }


def roi_report(test, ref, roi_labels) -> RoiReport:
    """Per-ROI mean/std of both maps plus a regression of test vs reference means.

    ``roi_labels`` is an integer volume; 0 is background. The regression is
    omitted (None) when fewer than two labels exist.
    """
    td = test.data if isinstance(test, Volume3D) else np.asarray(test, dtype=np.float64)
    rd = ref.data if isinstance(ref, Volume3D) else np.asarray(ref, dtype=np.float64)
    labels = np.asarray(roi_labels)
    if labels.shape != td.shape or rd.shape != td.shape:
        from .errors import GridMismatch

        raise GridMismatch("roi label volume does not match the maps")
    ids = np.unique(labels)
    ids = ids[ids > 0]
    if ids.size == 0:
        raise NoLabels("no positive ROI labels present")
    rows = []
    for lab in ids:
        sel = labels == lab
        rows.append(RoiRow(
            label=int(lab), n_voxels=int(sel.sum()),
            test_mean=float(td[sel].mean()), test_std=float(td[sel].std()),
            ref_mean=float(rd[sel].mean()), ref_std=float(rd[sel].std()),
        ))
    regression = None
    if len(rows) >= 2:
        regression = linear_regression([r.ref_mean for r in rows],
                                       [r.test_mean for r in rows])
    return RoiReport(rows=tuple(rows), regression=regression)
