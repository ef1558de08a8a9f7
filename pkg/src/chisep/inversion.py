"""Dipole inversion: multi-orientation COSMOS, source decomposition, baselines.

Orientation is modeled purely through each field volume's B0 direction; the
object never moves, so no registration error enters the labels. The source
decomposition solves the 2x2 linear system
    chi_para - chi_dia = chi_total
    chi_para + chi_dia = R2' / D_r
in closed form, then clamps both maps at zero.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dipole import DipoleKernel, build_kernel, tkd_invert
from .errors import BadDr, InvalidArgument, TooFewOrientations
from .volume import Mask3D, Unit, Volume3D, check_same_grid


def cosmos(fields: Sequence[Volume3D], epsilon: float = 1e-6,
           allow_single: bool = False) -> Volume3D:
    """Least-squares susceptibility from multiple B0 orientations (ppm).

    chi(k) = sum_i D_i(k) phi_i(k) / (sum_i D_i(k)^2 + epsilon), chi(0) = 0.
    Each field supplies its own b0_dir. With a single orientation and
    epsilon = 0 this degenerates to unthresholded k-space division, so it is
    refused unless ``allow_single`` is set.
    """
    fields = list(fields)
    if len(fields) < 2 and not allow_single:
        raise TooFewOrientations(f"COSMOS needs >= 2 orientations, got {len(fields)}")
    if not fields:
        raise TooFewOrientations("no field volumes given")
    if epsilon < 0:
        raise InvalidArgument(f"epsilon must be >= 0, got {epsilon}")
    first = fields[0]
    num = np.zeros(first.dims, dtype=complex)
    den = np.zeros(first.dims)
    for vol in fields:
        check_same_grid(first, vol, "orientation fields")
        kern = build_kernel(vol.dims, vol.voxel_size, vol.b0_dir)
        num += kern.kvals * np.fft.fftn(vol.data)
        den += kern.kvals ** 2
    chi_k = num / (den + epsilon) if epsilon > 0 else \
        np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    chi_k[0, 0, 0] = 0.0
    out = np.fft.ifftn(chi_k).real
    return Volume3D(out, first.voxel_size, Unit.PPM, first.b0_dir)


def split_sources(chi_total: Volume3D, r2prime: Volume3D, dr: float
                  ) -> tuple[Volume3D, Volume3D]:
    """Closed-form pre-clamp decomposition into (chi_para, chi_dia), ppm.

    With s = R2'/dr: chi_para = (s + chi_total)/2, chi_dia = (s - chi_total)/2,
    so chi_para - chi_dia = chi_total and chi_para + chi_dia = s exactly.
    """
    if dr <= 0:
        raise BadDr(f"relaxometric constant must be positive, got {dr}")
    check_same_grid(chi_total, r2prime, "chi_total and r2prime")
    s = r2prime.data / dr
    para = (s + chi_total.data) / 2.0
    dia = (s - chi_total.data) / 2.0
    return (chi_total.with_data(para, unit=Unit.PPM),
            chi_total.with_data(dia, unit=Unit.PPM))


def _clamp_and_mask(para: Volume3D, dia: Volume3D, brain_mask: Mask3D
                    ) -> tuple[Volume3D, Volume3D]:
    check_same_grid(para, brain_mask, "maps and brain mask")
    m = brain_mask.data
    return (para.with_data(np.where(m, np.maximum(para.data, 0.0), 0.0)),
            dia.with_data(np.where(m, np.maximum(dia.data, 0.0), 0.0)))


def chi_sep_cosmos(fields: Sequence[Volume3D], r2prime: Volume3D, dr: float,
                   brain_mask: Mask3D, epsilon: float = 1e-6
                   ) -> tuple[Volume3D, Volume3D]:
    """Multi-orientation source separation: COSMOS total map + decomposition.

    Outputs are clamped at zero (both maps stored positive) and zeroed
    outside the brain mask.
    """
    chi_total = cosmos(fields, epsilon=epsilon)
    para, dia = split_sources(chi_total, r2prime, dr)
    return _clamp_and_mask(para, dia, brain_mask)


def chi_sep_single(field: Volume3D, r2prime: Volume3D, dr: float,
                   kernel: DipoleKernel, threshold: float,
                   brain_mask: Mask3D) -> tuple[Volume3D, Volume3D]:
    """Single-orientation baseline: TKD total map + the same decomposition."""
    chi_total = tkd_invert(field, kernel, threshold)
    para, dia = split_sources(chi_total, r2prime, dr)
    return _clamp_and_mask(para, dia, brain_mask)
