"""Dipole kernel, FFT forward field model, spatial-domain oracle, TKD baseline.

The k-space kernel is the standard D(k) = 1/3 - (k.b)^2/|k|^2 with D(0) = 0,
sampled at the discrete frequencies k_i = n_i/(N_i * voxel_i). Convolution is
circular (no zero padding); phantoms keep an empty margin so wrap-around
stays negligible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadB0, BadThreshold, GridMismatch, InvalidArgument, TooLarge
from .volume import Unit, Volume3D, check_same_grid

MAX_ORACLE_VOXELS = 4096


@dataclass(frozen=True)
class DipoleKernel:
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    b0_dir: tuple[float, float, float]
    kvals: np.ndarray  # real, fftn layout (DC at [0,0,0])

    def __post_init__(self):
        arr = np.asarray(self.kvals, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "kvals", arr)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "b0_dir", tuple(float(v) for v in self.b0_dir))


def _negated_frequencies(arr: np.ndarray) -> np.ndarray:
    """Resample an fftn-layout array at the negated frequency indices."""
    return np.roll(arr[::-1, ::-1, ::-1], (1, 1, 1), axis=(0, 1, 2))


def build_kernel(dims, voxel_size, b0_dir) -> DipoleKernel:
    """K-space dipole kernel for a grid, voxel size (mm), and unit B0 direction."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 2 for d in dims):
        raise InvalidArgument(f"kernel needs >= 2 samples per axis, got {dims}")
    voxel_size = tuple(float(v) for v in voxel_size)
    if any(v <= 0 for v in voxel_size):
        raise InvalidArgument(f"voxel_size must be positive, got {voxel_size}")
    b0 = np.asarray(b0_dir, dtype=np.float64)
    if b0.shape != (3,) or abs(np.linalg.norm(b0) - 1.0) > 1e-9:
        raise BadB0(f"b0_dir must be a unit 3-vector, got {b0_dir}")

    freqs = [np.fft.fftfreq(n, d=v) for n, v in zip(dims, voxel_size)]
    kx, ky, kz = np.meshgrid(*freqs, indexing="ij")
    k2 = kx * kx + ky * ky + kz * kz
    kb = kx * b0[0] + ky * b0[1] + kz * b0[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 / 3.0 - (kb * kb) / k2
    d[0, 0, 0] = 0.0
    # Nyquist rows pair with themselves under n -> -n mod N, where the b0
    # cross terms of D are not even; symmetrize so the spatial kernel is
    # exactly real and the k-space diagonal is exactly D.
    d = 0.5 * (d + _negated_frequencies(d))
    return DipoleKernel(dims=dims, voxel_size=voxel_size, b0_dir=tuple(b0), kvals=d)


def check_kernel_grid(vol: Volume3D, kernel: DipoleKernel, match_b0: bool = True) -> None:
    check_same_grid(vol, kernel, "volume and kernel")
    if match_b0 and not np.allclose(vol.b0_dir, kernel.b0_dir, rtol=0, atol=1e-9):
        raise GridMismatch(f"volume b0 {vol.b0_dir} != kernel b0 {kernel.b0_dir}")


def convolve_array(kernel: DipoleKernel, data: np.ndarray) -> np.ndarray:
    """Real part of IFFT(D * FFT(data)); linear and self-adjoint (D real, even)."""
    if data.shape != kernel.dims:
        raise GridMismatch(f"data shape {data.shape} != kernel dims {kernel.dims}")
    return np.fft.ifftn(np.fft.fftn(data) * kernel.kvals).real


def forward_field(chi: Volume3D, kernel: DipoleKernel) -> Volume3D:
    """Field perturbation (ppm) induced by a susceptibility map (ppm)."""
    check_kernel_grid(chi, kernel)
    return chi.with_data(convolve_array(kernel, chi.data), unit=Unit.PPM)


def dipole_spatial_oracle(chi: Volume3D, kernel: DipoleKernel) -> Volume3D:
    """Direct circular-convolution sum with the spatial kernel IFFT(D).

    O(N^2) per volume; guarded to small grids. Exists purely to cross-check
    forward_field.
    """
    check_kernel_grid(chi, kernel)
    nx, ny, nz = chi.dims
    if nx * ny * nz > MAX_ORACLE_VOXELS:
        raise TooLarge(f"{nx * ny * nz} voxels exceeds oracle guard {MAX_ORACLE_VOXELS}")
    d_spatial = np.fft.ifftn(kernel.kvals).real
    src = chi.data
    sx, sy, sz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    out = np.empty_like(src)
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                shifted = d_spatial[(ix - sx) % nx, (iy - sy) % ny, (iz - sz) % nz]
                out[ix, iy, iz] = np.sum(shifted * src)
    return chi.with_data(out, unit=Unit.PPM)


def tkd_invert(field: Volume3D, kernel: DipoleKernel, threshold: float) -> Volume3D:
    """Thresholded k-space division: chi(k) = phi(k)/D(k) where |D| >= threshold."""
    if not (0.0 < threshold < 2.0 / 3.0):
        raise BadThreshold(f"threshold must be in (0, 2/3), got {threshold}")
    check_kernel_grid(field, kernel)
    d = kernel.kvals
    keep = np.abs(d) >= threshold
    f_k = np.fft.fftn(field.data)
    chi_k = np.zeros_like(f_k)
    np.divide(f_k, d, out=chi_k, where=keep)
    chi_k[0, 0, 0] = 0.0
    return field.with_data(np.fft.ifftn(chi_k).real, unit=Unit.PPM)
