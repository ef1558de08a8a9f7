"""Core 3D volume/mask types, normalization, finite differences, regression.

Volumes are immutable after construction: the backing numpy arrays are
copied and marked read-only, so they are safe to share across threads.
Array index order is (x, y, z); serialization (module nifti) stores x
fastest on disk.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AxisTooShort,
    DegenerateStats,
    DegenerateX,
    GridMismatch,
    InvalidArgument,
)

_AXES = {"x": 0, "y": 1, "z": 2}


class Unit(str, enum.Enum):
    PPM = "ppm"
    HERTZ = "hertz"
    PER_SECOND = "per_second"
    DIMENSIONLESS = "dimensionless"


def _frozen_array(data, dtype, shape=None) -> np.ndarray:
    arr = np.array(data, dtype=dtype)
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidArgument(f"expected shape {tuple(shape)}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume3D:
    """Scalar field on a regular 3D grid with voxel size and B0 metadata."""

    data: np.ndarray                 # float64, shape (nx, ny, nz)
    voxel_size: tuple[float, float, float]
    unit: Unit = Unit.DIMENSIONLESS
    b0_dir: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        arr = _frozen_array(self.data, np.float64)
        if arr.ndim != 3:
            raise InvalidArgument(f"volume data must be 3D, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise InvalidArgument(f"volume dims must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("volume data contains non-finite values")
        object.__setattr__(self, "data", arr)

        vs = tuple(float(v) for v in self.voxel_size)
        if len(vs) != 3 or any(v <= 0 for v in vs):
            raise InvalidArgument(f"voxel_size must be 3 positive reals, got {self.voxel_size}")
        object.__setattr__(self, "voxel_size", vs)

        b0 = tuple(float(v) for v in self.b0_dir)
        if len(b0) != 3 or abs(np.linalg.norm(b0) - 1.0) > 1e-9:
            raise InvalidArgument(f"b0_dir must be a unit 3-vector, got {self.b0_dir}")
        object.__setattr__(self, "b0_dir", b0)

        object.__setattr__(self, "unit", Unit(self.unit))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray, unit: Unit | None = None) -> "Volume3D":
        """New volume on the same grid, optionally retagging the unit."""
        return Volume3D(data, self.voxel_size, unit if unit is not None else self.unit,
                        self.b0_dir)

    def with_b0(self, b0_dir: Sequence[float]) -> "Volume3D":
        return Volume3D(self.data, self.voxel_size, self.unit, tuple(b0_dir))


@dataclass(frozen=True)
class Mask3D:
    """Boolean voxel selection on a 3D grid."""

    data: np.ndarray  # bool, shape (nx, ny, nz)

    def __post_init__(self):
        arr = _frozen_array(self.data, bool)
        if arr.ndim != 3:
            raise InvalidArgument(f"mask data must be 3D, got ndim={arr.ndim}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())

    @classmethod
    def full(cls, dims: Sequence[int]) -> "Mask3D":
        return cls(np.ones(tuple(dims), dtype=bool))


@dataclass(frozen=True)
class NormStats:
    """Affine normalization parameters (subtract mean, divide by std)."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise DegenerateStats(f"std must be positive, got {self.std}")


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def check_same_grid(a, b, what: str = "volumes") -> None:
    """Raise GridMismatch unless a and b share dims (and voxel size if both carry one)."""
    if a.dims != b.dims:
        raise GridMismatch(f"{what} have different dims: {a.dims} vs {b.dims}")
    a_vs = getattr(a, "voxel_size", None)
    b_vs = getattr(b, "voxel_size", None)
    if a_vs is not None and b_vs is not None and not np.allclose(a_vs, b_vs, rtol=0, atol=1e-9):
        raise GridMismatch(f"{what} have different voxel sizes: {a_vs} vs {b_vs}")


def mask_stats(data: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """In-mask mean and population (divide-by-N) standard deviation."""
    vals = data[mask]
    if vals.size == 0:
        raise DegenerateStats("mask selects no voxels")
    return float(vals.mean()), float(vals.std())


def normalize(vol: Volume3D, mask: Mask3D) -> tuple[Volume3D, NormStats]:
    """Map vol so its in-mask values have mean 0 and std 1.

    Out-of-mask voxels go through the same affine map, which keeps the
    transform invertible by :func:`denormalize`.
    """
    check_same_grid(vol, mask, "volume and mask")
    mean, std = mask_stats(vol.data, mask.data)
    if std <= 1e-12:
        raise DegenerateStats(f"in-mask std {std} too small to normalize")
    out = (vol.data - mean) / std
    return vol.with_data(out), NormStats(mean=mean, std=std)


def denormalize(vol: Volume3D, stats: NormStats) -> Volume3D:
    """Invert :func:`normalize`: multiply by std, add mean."""
    return vol.with_data(vol.data * stats.std + stats.mean)


def finite_gradient(vol: Volume3D, axis: str) -> Volume3D:
    """Forward difference g[i] = v[i+1] - v[i] along x, y, or z.

    The last plane along the axis is set to zero; the unit tag is kept.
    """
    if axis not in _AXES:
        raise InvalidArgument(f"axis must be one of x/y/z, got {axis!r}")
    return vol.with_data(finite_gradient_array(vol.data, axis))


def finite_gradient_array(data: np.ndarray, axis: str) -> np.ndarray:
    ax = _AXES[axis]
    if data.shape[ax] < 2:
        raise AxisTooShort(f"axis {axis} has length {data.shape[ax]} < 2")
    out = np.zeros_like(data)
    lead = [slice(None)] * 3
    lag = [slice(None)] * 3
    lead[ax] = slice(1, None)
    lag[ax] = slice(0, -1)
    out[tuple(lag)] = data[tuple(lead)] - data[tuple(lag)]
    return out


def finite_gradient_adjoint(data: np.ndarray, axis: str) -> np.ndarray:
    """Adjoint of :func:`finite_gradient_array` (used by backprop)."""
    ax = _AXES[axis]
    if data.shape[ax] < 2:
        raise AxisTooShort(f"axis {axis} has length {data.shape[ax]} < 2")
    out = np.zeros_like(data)
    lead = [slice(None)] * 3
    lag = [slice(None)] * 3
    lead[ax] = slice(1, None)
    lag[ax] = slice(0, -1)
    # <u, D v> = <D^T u, v> with the last input plane of u ignored (D zeroes it).
    out[tuple(lead)] += data[tuple(lag)]
    out[tuple(lag)] -= data[tuple(lag)]
    return out


def linear_regression(xs: Sequence[float], ys: Sequence[float]) -> RegressionResult:
    """Ordinary least squares fit of ys against xs.

    R^2 = 1 - SSres/SStot, defined as 0 when SStot = 0.
    """
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InvalidArgument(f"xs and ys differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise InvalidArgument(f"need at least 2 points, got {x.size}")
    xm = x.mean()
    ym = y.mean()
    sxx = float(np.sum((x - xm) ** 2)) / x.size
    if sxx <= 1e-15:
        raise DegenerateX(f"xs variance {sxx} too small for regression")
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / float(np.sum((x - xm) ** 2))
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionResult(slope=float(slope), intercept=float(intercept),
                            r_squared=float(r2), n_points=int(x.size))
