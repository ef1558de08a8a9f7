"""Loss algebra for the separation networks: L1 reconstruction, edge
(gradient-magnitude) terms, and the three physics model terms.

Reconstruction and gradient losses act on normalized maps. The model terms
de-normalize back to physical units first, evaluate the physical identities
    (para - dia) - chi,   d*(para - dia) - field,   Dr*(para + dia) - R2',
and rescale each residual by the corresponding label std so the three terms
live on comparable ranges. All reductions are in-mask means, so values do
not depend on grid size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dipole import DipoleKernel, convolve_array
from .errors import BadDr, GridMismatch, InvalidArgument
from .volume import NormStats, finite_gradient_array

_AXES = ("x", "y", "z")


@dataclass(frozen=True)
class LossWeights:
    w_recon: float = 1.0
    w_grad: float = 0.1
    w_model: float = 1.0
    # single-channel (R2' synthesis) variant
    w_l1: float = 1.0
    w_grad_r2p: float = 0.1

    def __post_init__(self):
        for name in ("w_recon", "w_grad", "w_model", "w_l1", "w_grad_r2p"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be >= 0")


@dataclass(frozen=True)
class StatsBundle:
    """Normalization stats for the five maps entering the model loss."""

    para: NormStats
    dia: NormStats
    qsm: NormStats
    field: NormStats
    r2p: NormStats
    r2star: NormStats | None = None


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    gradient: float
    model_qsm: float
    model_field: float
    model_r2p: float
    total: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("recon", "gradient", "model_qsm", "model_field", "model_r2p", "total")}


def _check_shapes(mask: np.ndarray, *arrays: np.ndarray) -> int:
    for arr in arrays:
        if arr.shape != mask.shape:
            raise GridMismatch(f"array shape {arr.shape} != mask shape {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise InvalidArgument("mask selects no voxels")
    return n


def masked_l1(residual: np.ndarray, mask: np.ndarray) -> float:
    return float(np.abs(residual[mask]).mean())


def loss_recon(out_para, out_dia, lbl_para, lbl_dia, mask) -> float:
    """Mean in-mask |para error| + |dia error| (normalized maps)."""
    _check_shapes(mask, out_para, out_dia, lbl_para, lbl_dia)
    return masked_l1(out_para - lbl_para, mask) + masked_l1(out_dia - lbl_dia, mask)


def _gradient_term(out: np.ndarray, lbl: np.ndarray, mask: np.ndarray) -> float:
    total = 0.0
    for axis in _AXES:
        g_out = np.abs(finite_gradient_array(out, axis))
        g_lbl = np.abs(finite_gradient_array(lbl, axis))
        total += masked_l1(g_out - g_lbl, mask)
    return total


def loss_gradient(out_pair, lbl_pair, mask) -> float:
    """Edge term: per-axis L1 between absolute forward-difference maps."""
    out_para, out_dia = out_pair
    lbl_para, lbl_dia = lbl_pair
    _check_shapes(mask, out_para, out_dia, lbl_para, lbl_dia)
    return (_gradient_term(out_para, lbl_para, mask)
            + _gradient_term(out_dia, lbl_dia, mask))


def loss_model(out_pair_normalized, qsm_n, field_n, r2p_n,
               kernel: DipoleKernel, dr: float, stats: StatsBundle,
               mask: np.ndarray) -> tuple[float, float, float]:
    """Physics residual terms (qsm, field, r2p), each scaled by its label std.

    Inputs are normalized maps; residuals are evaluated in physical units.
    All three are exactly zero when the outputs equal the ground truth the
    references were generated from.
    """
    out_para_n, out_dia_n = out_pair_normalized
    _check_shapes(mask, out_para_n, out_dia_n, qsm_n, field_n, r2p_n)
    if dr <= 0:
        raise BadDr(f"relaxometric constant must be positive, got {dr}")
    if kernel.dims != mask.shape:
        raise GridMismatch(f"kernel dims {kernel.dims} != volume dims {mask.shape}")

    para = out_para_n * stats.para.std + stats.para.mean
    dia = out_dia_n * stats.dia.std + stats.dia.mean
    qsm = qsm_n * stats.qsm.std + stats.qsm.mean
    field = field_n * stats.field.std + stats.field.mean
    r2p = r2p_n * stats.r2p.std + stats.r2p.mean

    diff = para - dia
    model_qsm = masked_l1(diff - qsm, mask) / stats.qsm.std
    model_field = masked_l1(convolve_array(kernel, diff) - field, mask) / stats.field.std
    model_r2p = masked_l1(dr * (para + dia) - r2p, mask) / stats.r2p.std
    return model_qsm, model_field, model_r2p


def combine_breakdown(recon: float, gradient: float, model_terms,
                      weights: LossWeights) -> LossBreakdown:
    mq, mf, mr = model_terms
    total = (weights.w_recon * recon + weights.w_grad * gradient
             + weights.w_model * (mq + mf + mr))
    return LossBreakdown(recon=recon, gradient=gradient, model_qsm=mq,
                         model_field=mf, model_r2p=mr, total=total)


def total_loss(out_para, out_dia, lbl_para, lbl_dia, qsm_n, field_n, r2p_n,
               kernel: DipoleKernel, dr: float, stats: StatsBundle,
               mask: np.ndarray, weights: LossWeights = LossWeights()
               ) -> LossBreakdown:
    """Weighted sum of reconstruction, gradient, and model terms."""
    recon = loss_recon(out_para, out_dia, lbl_para, lbl_dia, mask)
    gradient = loss_gradient((out_para, out_dia), (lbl_para, lbl_dia), mask)
    model = loss_model((out_para, out_dia), qsm_n, field_n, r2p_n,
                       kernel, dr, stats, mask)
    return combine_breakdown(recon, gradient, model, weights)


def loss_r2prime_net(out_r2p, lbl_r2p, mask,
                     weights: LossWeights = LossWeights()) -> float:
    """Single-channel loss: w_l1 * L1 + w_grad_r2p * per-axis edge term."""
    _check_shapes(mask, out_r2p, lbl_r2p)
    l1 = masked_l1(out_r2p - lbl_r2p, mask)
    grad = _gradient_term(out_r2p, lbl_r2p, mask)
    return weights.w_l1 * l1 + weights.w_grad_r2p * grad
