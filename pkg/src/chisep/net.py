"""Toy fully-convolutional 3D network with analytic backprop, plus the
patch/augmentation machinery, an RMSprop trainer, and the two inference
pipelines (measured-R2' and R2*-only).

The network is a stack of 3x3x3 same-padded convolutions with ReLU between
layers, small enough that every gradient can be checked against central
finite differences. Training runs in double precision and is bit-
deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dipole import DipoleKernel, convolve_array
from .errors import (
    B0NotAxial,
    BadAngle,
    ChannelMismatch,
    DivergedLoss,
    EmptyDataset,
    InvalidArgument,
    PatchTooLarge,
    ShapeMismatch,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    StatsBundle,
    _gradient_term,
    combine_breakdown,
    loss_gradient,
    loss_model,
    loss_recon,
    masked_l1,
)
from .volume import (
    Unit,
    Volume3D,
    finite_gradient_adjoint,
    finite_gradient_array,
)

_OFFSETS = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]


# ---------------------------------------------------------------------------
# Network definition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetConfig:
    in_channels: int
    out_channels: int
    hidden: tuple[int, ...] = (8, 8)
    relu_output: bool = False
    input_names: tuple[str, ...] = ()
    init_scale: float = 1.0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidArgument("channel counts must be >= 1")
        hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in hidden):
            raise InvalidArgument("hidden channel counts must be >= 1")
        object.__setattr__(self, "hidden", hidden)
        names = tuple(self.input_names)
        if names and len(names) != self.in_channels:
            raise InvalidArgument(
                f"input_names {names} do not match in_channels {self.in_channels}")
        object.__setattr__(self, "input_names", names)

    @property
    def channel_chain(self) -> tuple[int, ...]:
        return (self.in_channels, *self.hidden, self.out_channels)

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "hidden": list(self.hidden),
            "relu_output": self.relu_output,
            "input_names": list(self.input_names),
            "init_scale": self.init_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(
            in_channels=d["in_channels"],
            out_channels=d["out_channels"],
            hidden=tuple(d.get("hidden", (8, 8))),
            relu_output=d.get("relu_output", False),
            input_names=tuple(d.get("input_names", ())),
            init_scale=d.get("init_scale", 1.0),
        )


@dataclass(frozen=True)
class TinyNet:
    config: NetConfig
    weights: tuple[np.ndarray, ...]  # each (c_out, c_in, 3, 3, 3)
    biases: tuple[np.ndarray, ...]   # each (c_out,)
    seed: int = 0

    def __post_init__(self):
        chain = self.config.channel_chain
        if len(self.weights) != len(chain) - 1 or len(self.biases) != len(chain) - 1:
            raise ShapeMismatch("parameter count does not match layer chain")
        frozen_w, frozen_b = [], []
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            want = (chain[layer + 1], chain[layer], 3, 3, 3)
            if w.shape != want or b.shape != (chain[layer + 1],):
                raise ShapeMismatch(
                    f"layer {layer}: weights {w.shape} / biases {b.shape}, expected {want}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidArgument(f"layer {layer} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen_w.append(w)
            frozen_b.append(b)
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_net(config: NetConfig, seed: int = 0) -> TinyNet:
    """He-style initialization, deterministic per seed; biases start at zero."""
    rng = np.random.default_rng(seed)
    chain = config.channel_chain
    weights, biases = [], []
    for c_in, c_out in zip(chain[:-1], chain[1:]):
        std = config.init_scale * np.sqrt(2.0 / (c_in * 27))
        weights.append(rng.normal(0.0, std, size=(c_out, c_in, 3, 3, 3)))
        biases.append(np.zeros(c_out))
    return TinyNet(config=config, weights=tuple(weights), biases=tuple(biases), seed=seed)


# ---------------------------------------------------------------------------
# Forward/backward
# ---------------------------------------------------------------------------

def _shifted(arr: np.ndarray, off: tuple[int, int, int]) -> np.ndarray:
    """out[r] = arr[r + off] with zero fill outside the grid."""
    out = np.zeros_like(arr)
    src = tuple(slice(max(0, o), n + min(0, o)) for o, n in zip(off, arr.shape))
    dst = tuple(slice(max(0, -o), n + min(0, -o)) for o, n in zip(off, arr.shape))
    out[dst] = arr[src]
    return out


def _conv_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3x3 same-padded convolution: x (c_in, *dims) -> (c_out, *dims)."""
    c_out = w.shape[0]
    out = np.broadcast_to(b[:, None, None, None], (c_out,) + x.shape[1:]).copy()
    for i in range(x.shape[0]):
        for off in _OFFSETS:
            tap = w[:, i, off[0] + 1, off[1] + 1, off[2] + 1]
            if not tap.any():
                continue
            sx = _shifted(x[i], off)
            out += tap[:, None, None, None] * sx
    return out


def _forward_cached(net: TinyNet, x: np.ndarray):
    """Forward pass keeping pre-activations for backprop."""
    if x.ndim != 4 or x.shape[0] != net.config.in_channels:
        raise ChannelMismatch(
            f"input has shape {x.shape}, expected ({net.config.in_channels}, nx, ny, nz)")
    acts = [x]
    pre = []
    h = x
    last = net.n_layers - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = _conv_same(h, w, b)
        pre.append(z)
        if layer < last:
            h = np.maximum(z, 0.0)
        elif net.config.relu_output:
            h = np.maximum(z, 0.0)
        else:
            h = z
        acts.append(h)
    return h, acts, pre


def forward(net: TinyNet, x: np.ndarray) -> np.ndarray:
    """Apply the network to a (c_in, nx, ny, nz) stack; dims are preserved."""
    y, _, _ = _forward_cached(net, x)
    return y


def backward(net: TinyNet, x: np.ndarray, upstream: np.ndarray):
    """Analytic gradients for a scalar loss with d(loss)/d(output) = upstream.

    Returns ([(dW, db) per layer], d(loss)/d(input)). The ReLU subgradient
    at exactly zero is taken as zero.
    """
    y, acts, pre = _forward_cached(net, x)
    if upstream.shape != y.shape:
        raise ShapeMismatch(f"upstream shape {upstream.shape} != output shape {y.shape}")
    g = np.asarray(upstream, dtype=np.float64)
    if net.config.relu_output:
        g = g * (pre[-1] > 0)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.n_layers
    for layer in range(net.n_layers - 1, -1, -1):
        a_in = acts[layer]
        w = net.weights[layer]
        c_out, c_in = w.shape[0], w.shape[1]
        dw = np.zeros_like(w)
        db = g.sum(axis=(1, 2, 3))
        dx = np.zeros_like(a_in)
        for i in range(c_in):
            for off in _OFFSETS:
                sx = _shifted(a_in[i], off)
                dw[:, i, off[0] + 1, off[1] + 1, off[2] + 1] = \
                    np.tensordot(g, sx, axes=([1, 2, 3], [0, 1, 2]))
        for o in range(c_out):
            for off in _OFFSETS:
                back = _shifted(g[o], (-off[0], -off[1], -off[2]))
                dx += w[o, :, off[0] + 1, off[1] + 1, off[2] + 1][:, None, None, None] * back
        grads[layer] = (dw, db)
        if layer > 0:
            g = dx * (pre[layer - 1] > 0)
    return grads, dx


# ---------------------------------------------------------------------------
# Patch extraction / reassembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Patch:
    start: tuple[int, int, int]
    vols: tuple[np.ndarray, ...]


def patch_starts(n: int, patch: int, overlap: int) -> list[int]:
    """Stride sequence with the trailing patch shifted flush to the boundary."""
    if patch > n:
        raise PatchTooLarge(f"patch {patch} exceeds extent {n}")
    if not (0 <= overlap < patch):
        raise InvalidArgument(f"overlap must satisfy 0 <= overlap < patch, got {overlap}")
    stride = patch - overlap
    starts = list(range(0, n - patch + 1, stride))
    if starts[-1] + patch < n:
        starts.append(n - patch)
    return starts


def extract_patches(vols, patch_size, overlap) -> list[Patch]:
    """Tile aligned volumes into overlapping cubes covering every voxel.

    Iteration order is z-start slowest, then y, then x; deterministic.
    """
    arrays = [np.asarray(v) for v in vols]
    if not arrays:
        raise InvalidArgument("no volumes to patch")
    dims = arrays[0].shape
    if any(a.shape != dims for a in arrays):
        raise ShapeMismatch("volumes to patch have differing dims")
    ps = (patch_size,) * 3 if np.isscalar(patch_size) else tuple(patch_size)
    ov = (overlap,) * 3 if np.isscalar(overlap) else tuple(overlap)
    sx = patch_starts(dims[0], ps[0], ov[0])
    sy = patch_starts(dims[1], ps[1], ov[1])
    sz = patch_starts(dims[2], ps[2], ov[2])
    patches = []
    for z0 in sz:
        for y0 in sy:
            for x0 in sx:
                sl = (slice(x0, x0 + ps[0]), slice(y0, y0 + ps[1]), slice(z0, z0 + ps[2]))
                patches.append(Patch(start=(x0, y0, z0),
                                     vols=tuple(a[sl].copy() for a in arrays)))
    return patches


def reassemble_patches(patches, vol_index: int, dims) -> np.ndarray:
    """Average overlapping patches back into a full volume."""
    acc = np.zeros(tuple(dims))
    count = np.zeros(tuple(dims))
    for p in patches:
        data = p.vols[vol_index]
        sl = tuple(slice(s, s + e) for s, e in zip(p.start, data.shape))
        acc[sl] += data
        count[sl] += 1.0
    if np.any(count == 0):
        raise InvalidArgument("patches do not cover the volume")
    return acc / count


# ---------------------------------------------------------------------------
# Rotation augmentation (plane perpendicular to B0)
# ---------------------------------------------------------------------------

def rotate_z_array(data: np.ndarray, angle_deg: float) -> np.ndarray:
    """In-plane rotation about the grid center; bilinear, zero outside."""
    nx, ny = data.shape[0], data.shape[1]
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    th = np.deg2rad(angle_deg)
    c, s = np.cos(th), np.sin(th)
    gx = np.arange(nx)[:, None] - cx
    gy = np.arange(ny)[None, :] - cy
    u = cx + c * gx + s * gy
    v = cy - s * gx + c * gy
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    fu = u - u0
    fv = v - v0
    out = np.zeros_like(data)
    for du in (0, 1):
        for dv in (0, 1):
            iu = u0 + du
            iv = v0 + dv
            wgt = (fu if du else 1.0 - fu) * (fv if dv else 1.0 - fv)
            valid = (iu >= 0) & (iu < nx) & (iv >= 0) & (iv < ny)
            iu_c = np.clip(iu, 0, nx - 1)
            iv_c = np.clip(iv, 0, ny - 1)
            contrib = data[iu_c, iv_c, :] * (wgt * valid)[:, :, None]
            out += contrib
    return out


def augment_rotate_z(vols, angle_deg: float) -> list[Volume3D]:
    """Rotate a set of volumes identically in the plane perpendicular to B0.

    Only axial B0 (0, 0, 1) is supported; angle is limited to [-90, +90]
    degrees. 0 degrees is the identity.
    """
    if not (-90.0 <= angle_deg <= 90.0):
        raise BadAngle(f"angle must be in [-90, 90] degrees, got {angle_deg}")
    out = []
    for vol in vols:
        if not np.allclose(vol.b0_dir, (0.0, 0.0, 1.0), rtol=0, atol=1e-9):
            raise B0NotAxial(f"rotation requires b0 = (0,0,1), got {vol.b0_dir}")
        out.append(vol.with_data(rotate_z_array(vol.data, angle_deg)))
    return out


# ---------------------------------------------------------------------------
# Training samples and objectives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChisepSample:
    """One training patch for the separation net (all maps normalized)."""

    qsm_n: np.ndarray
    field_n: np.ndarray
    r2p_n: np.ndarray
    lbl_para_n: np.ndarray
    lbl_dia_n: np.ndarray
    mask: np.ndarray
    kernel: DipoleKernel


@dataclass(frozen=True)
class ScalarSample:
    """One training patch for a single-input/single-output map net."""

    input_n: np.ndarray
    label_n: np.ndarray
    mask: np.ndarray


def assemble_inputs(config: NetConfig, available: dict) -> np.ndarray:
    names = config.input_names or ("qsm", "field", "r2p")[: config.in_channels]
    missing = [n for n in names if n not in available or available[n] is None]
    if missing:
        raise ChannelMismatch(f"net wants input channels {names}, missing {missing}")
    return np.stack([np.asarray(available[n], dtype=np.float64) for n in names])


def _sign(arr: np.ndarray) -> np.ndarray:
    return np.sign(arr)


def _l1_grad(out: np.ndarray, lbl: np.ndarray, mask: np.ndarray, n: int) -> np.ndarray:
    return _sign(out - lbl) * mask / n


def _edge_grad(out: np.ndarray, lbl: np.ndarray, mask: np.ndarray, n: int) -> np.ndarray:
    """Gradient of sum_axis mean_mask(| |grad out| - |grad lbl| |) w.r.t. out."""
    g = np.zeros_like(out)
    for axis in ("x", "y", "z"):
        d_out = finite_gradient_array(out, axis)
        d_lbl = finite_gradient_array(lbl, axis)
        r = np.abs(d_out) - np.abs(d_lbl)
        g += finite_gradient_adjoint(_sign(r) * _sign(d_out) * mask / n, axis)
    return g


def make_chisep_objective(weights: LossWeights, dr: float, stats: StatsBundle):
    """Objective closure: (net, ChisepSample) -> (LossBreakdown, param grads).

    Model terms mirror the net's input ablation: a net trained without the
    qsm (or field) channel drops the corresponding physics term.
    """

    def objective(net: TinyNet, sample: ChisepSample):
        names = net.config.input_names or ("qsm", "field", "r2p")
        use_q = "qsm" in names
        use_f = "field" in names
        x = assemble_inputs(net.config, {
            "qsm": sample.qsm_n, "field": sample.field_n, "r2p": sample.r2p_n})
        y, acts, pre = _forward_cached(net, x)
        if y.shape[0] != 2:
            raise ChannelMismatch(f"separation net must have 2 outputs, got {y.shape[0]}")
        out_para, out_dia = y[0], y[1]
        mask = sample.mask
        n = int(mask.sum())

        recon = loss_recon(out_para, out_dia, sample.lbl_para_n, sample.lbl_dia_n, mask)
        gradient = loss_gradient((out_para, out_dia),
                                 (sample.lbl_para_n, sample.lbl_dia_n), mask)
        mq, mf, mr = loss_model((out_para, out_dia), sample.qsm_n, sample.field_n,
                                sample.r2p_n, sample.kernel, dr, stats, mask)
        if not use_q:
            mq = 0.0
        if not use_f:
            mf = 0.0
        breakdown = combine_breakdown(recon, gradient, (mq, mf, mr), weights)

        gp = weights.w_recon * _l1_grad(out_para, sample.lbl_para_n, mask, n)
        gd = weights.w_recon * _l1_grad(out_dia, sample.lbl_dia_n, mask, n)
        gp += weights.w_grad * _edge_grad(out_para, sample.lbl_para_n, mask, n)
        gd += weights.w_grad * _edge_grad(out_dia, sample.lbl_dia_n, mask, n)

        sp, sd = stats.para.std, stats.dia.std
        para = out_para * sp + stats.para.mean
        dia = out_dia * sd + stats.dia.mean
        diff = para - dia
        if use_q:
            qsm = sample.qsm_n * stats.qsm.std + stats.qsm.mean
            sgn_q = _sign(diff - qsm) * mask / (n * stats.qsm.std)
            gp += weights.w_model * sp * sgn_q
            gd -= weights.w_model * sd * sgn_q
        if use_f:
            fld = sample.field_n * stats.field.std + stats.field.mean
            r_f = convolve_array(sample.kernel, diff) - fld
            # forward operator is self-adjoint (real, even kernel)
            back = convolve_array(sample.kernel, _sign(r_f) * mask) / (n * stats.field.std)
            gp += weights.w_model * sp * back
            gd -= weights.w_model * sd * back
        r2p = sample.r2p_n * stats.r2p.std + stats.r2p.mean
        sgn_r = _sign(dr * (para + dia) - r2p) * mask * dr / (n * stats.r2p.std)
        gp += weights.w_model * sp * sgn_r
        gd += weights.w_model * sd * sgn_r

        grads, _ = backward(net, x, np.stack([gp, gd]))
        return breakdown, grads

    return objective


def make_scalar_objective(weights: LossWeights):
    """Objective for single-map nets: w_l1 * L1 + w_grad_r2p * edge term."""

    def objective(net: TinyNet, sample: ScalarSample):
        x = sample.input_n[None] if sample.input_n.ndim == 3 else sample.input_n
        y, _, _ = _forward_cached(net, x)
        if y.shape[0] != 1:
            raise ChannelMismatch(f"scalar net must have 1 output, got {y.shape[0]}")
        out = y[0]
        mask = sample.mask
        n = int(mask.sum())
        l1 = masked_l1(out - sample.label_n, mask)
        edge = _gradient_term(out, sample.label_n, mask)
        total = weights.w_l1 * l1 + weights.w_grad_r2p * edge
        breakdown = LossBreakdown(recon=l1, gradient=edge, model_qsm=0.0,
                                  model_field=0.0, model_r2p=0.0, total=total)
        g = weights.w_l1 * _l1_grad(out, sample.label_n, mask, n)
        g += weights.w_grad_r2p * _edge_grad(out, sample.label_n, mask, n)
        grads, _ = backward(net, x, g[None])
        return breakdown, grads

    return objective


# ---------------------------------------------------------------------------
# RMSprop trainer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    rho: float = 0.9
    eps: float = 1e-8
    step_size: int = 1000
    gamma: float = 0.98
    batch_size: int = 12
    max_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.eps <= 0 or not (0 <= self.rho < 1):
            raise InvalidArgument("bad optimizer constants")
        if not (0 < self.gamma <= 1):
            raise InvalidArgument(f"gamma must be in (0, 1], got {self.gamma}")
        if self.step_size < 1 or self.batch_size < 1 or self.max_steps < 0:
            raise InvalidArgument("step_size/batch_size must be >= 1, max_steps >= 0")


def train(net: TinyNet, samples, objective, cfg: TrainConfig,
          workers: int = 1) -> tuple[TinyNet, list[LossBreakdown]]:
    """RMSprop loop: v <- rho*v + (1-rho)*g^2, theta <- theta - lr*g/(sqrt(v)+eps).

    The learning rate decays by ``gamma`` every ``step_size`` steps. Batches
    are drawn with replacement from a seeded generator and reduced in fixed
    order, so a given seed reproduces bit-identical results.
    """
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no training samples")
    weights = [np.array(w) for w in net.weights]
    biases = [np.array(b) for b in net.biases]
    v_w = [np.zeros_like(w) for w in weights]
    v_b = [np.zeros_like(b) for b in biases]
    rng = np.random.default_rng(cfg.seed)
    history: list[LossBreakdown] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for step in range(cfg.max_steps):
            lr = cfg.learning_rate * cfg.gamma ** (step // cfg.step_size)
            current = TinyNet(net.config, tuple(weights), tuple(biases), net.seed)
            idx = rng.integers(0, len(samples), size=cfg.batch_size)
            jobs = [samples[i] for i in idx]
            if pool is not None:
                results = list(pool.map(lambda s: objective(current, s), jobs))
            else:
                results = [objective(current, s) for s in jobs]

            nb = len(results)
            acc_w = [np.zeros_like(w) for w in weights]
            acc_b = [np.zeros_like(b) for b in biases]
            terms = np.zeros(6)
            for breakdown, grads in results:
                terms += np.array([breakdown.recon, breakdown.gradient,
                                   breakdown.model_qsm, breakdown.model_field,
                                   breakdown.model_r2p, breakdown.total])
                for layer, (dw, db) in enumerate(grads):
                    acc_w[layer] += dw
                    acc_b[layer] += db
            terms /= nb
            if not np.all(np.isfinite(terms)):
                raise DivergedLoss(f"non-finite loss at step {step}: {terms}")
            history.append(LossBreakdown(*terms))

            for layer in range(len(weights)):
                gw = acc_w[layer] / nb
                gb = acc_b[layer] / nb
                v_w[layer] = cfg.rho * v_w[layer] + (1 - cfg.rho) * gw * gw
                v_b[layer] = cfg.rho * v_b[layer] + (1 - cfg.rho) * gb * gb
                weights[layer] = weights[layer] - lr * gw / (np.sqrt(v_w[layer]) + cfg.eps)
                biases[layer] = biases[layer] - lr * gb / (np.sqrt(v_b[layer]) + cfg.eps)
    finally:
        if pool is not None:
            pool.shutdown()
    return TinyNet(net.config, tuple(weights), tuple(biases), net.seed), history


# ---------------------------------------------------------------------------
# Inference pipelines
# ---------------------------------------------------------------------------

def _denorm_clamp(data: np.ndarray, stats, like: Volume3D, unit: Unit) -> Volume3D:
    phys = data * stats.std + stats.mean
    return like.with_data(np.maximum(phys, 0.0), unit=unit)


def infer_chisep_r2prime(qsm_n: Volume3D, field_n: Volume3D, r2p_n: Volume3D,
                         chisep_net: TinyNet, stats: StatsBundle
                         ) -> tuple[Volume3D, Volume3D]:
    """Separation inference from normalized (qsm, field, R2') volumes.

    Full-volume forward pass (no patching); outputs are de-normalized to ppm
    and clamped at zero.
    """
    x = assemble_inputs(chisep_net.config, {
        "qsm": qsm_n.data, "field": field_n.data, "r2p": r2p_n.data})
    if chisep_net.config.out_channels != 2:
        raise ChannelMismatch("separation net must have 2 output channels")
    y = forward(chisep_net, x)
    para = _denorm_clamp(y[0], stats.para, qsm_n, Unit.PPM)
    dia = _denorm_clamp(y[1], stats.dia, qsm_n, Unit.PPM)
    return para, dia


def infer_chisep_r2star(qsm_n: Volume3D, field_n: Volume3D, r2star_n: Volume3D,
                        r2prime_net: TinyNet, chisep_net: TinyNet,
                        stats: StatsBundle) -> tuple[Volume3D, Volume3D]:
    """GRE-only pipeline: synthesize R2' from R2*, then run the R2' pipeline.

    The synthesized R2' map is clamped at zero in physical units before
    being re-normalized for the separation net.
    """
    if stats.r2star is None:
        raise InvalidArgument("stats bundle lacks r2star normalization")
    if r2prime_net.config.in_channels != 1 or r2prime_net.config.out_channels != 1:
        raise ChannelMismatch("R2' synthesis net must be 1-in/1-out")
    y = forward(r2prime_net, r2star_n.data[None])
    r2p_phys = np.maximum(y[0] * stats.r2p.std + stats.r2p.mean, 0.0)
    r2p_n = r2star_n.with_data((r2p_phys - stats.r2p.mean) / stats.r2p.std)
    return infer_chisep_r2prime(qsm_n, field_n, r2p_n, chisep_net, stats)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(net: TinyNet, directory, step: int = 0, extra: dict | None = None
                    ) -> None:
    """JSON manifest + little-endian float64 blob with per-layer offsets."""
    os.makedirs(directory, exist_ok=True)
    layers = []
    blob = bytearray()
    for w, b in zip(net.weights, net.biases):
        layers.append({
            "w_offset": len(blob), "w_shape": list(w.shape),
            "b_offset": len(blob) + w.nbytes, "b_shape": list(b.shape),
        })
        blob += w.astype("<f8").tobytes()
        blob += b.astype("<f8").tobytes()
    manifest = {
        "config": net.config.to_dict(),
        "seed": net.seed,
        "step": step,
        "layers": layers,
        "blob": "params.bin",
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "params.bin"), "wb") as f:
        f.write(bytes(blob))
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_checkpoint(directory) -> tuple[TinyNet, dict]:
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    with open(os.path.join(directory, manifest["blob"]), "rb") as f:
        blob = f.read()
    config = NetConfig.from_dict(manifest["config"])
    weights, biases = [], []
    for layer in manifest["layers"]:
        w_shape = tuple(layer["w_shape"])
        b_shape = tuple(layer["b_shape"])
        w = np.frombuffer(blob, dtype="<f8", count=int(np.prod(w_shape)),
                          offset=layer["w_offset"]).reshape(w_shape)
        b = np.frombuffer(blob, dtype="<f8", count=int(np.prod(b_shape)),
                          offset=layer["b_offset"]).reshape(b_shape)
        weights.append(w)
        biases.append(b)
    net = TinyNet(config=config, weights=tuple(weights), biases=tuple(biases),
                  seed=manifest.get("seed", 0))
    return net, manifest
