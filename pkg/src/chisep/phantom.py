"""Digital phantom generation and synthetic multi-echo GRE/SE measurements.

Phantoms are built from geometric primitives (spheres, cylinders,
ellipsoids), each carrying paramagnetic/diamagnetic susceptibility
concentrations (both stored positive), R2, M0, and an ROI label.
Measurements are synthesized through the dipole forward model with
mono-exponential decay.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_DR_HZ_PER_PPM, GAMMA_HZ_PER_TESLA
from .dipole import DipoleKernel, forward_field
from .errors import BadEchoTimes, InvalidArgument, PrimitiveOutOfBounds
from .nifti import EchoStack
from .volume import Mask3D, Unit, Volume3D, check_same_grid

_SHAPES = ("sphere", "cylinder", "ellipsoid")
_TISSUES = ("tissue", "csf", "vessel")
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class Primitive:
    """One geometric building block; coordinates are voxel indices."""

    shape: str
    center: tuple[float, float, float]
    chi_para: float = 0.0      # ppm, >= 0
    chi_dia: float = 0.0       # ppm, >= 0 (positive-valued convention)
    r2: float = 0.0            # 1/s
    m0: float = 1.0
    roi_label: int = 0
    tissue: str = "tissue"
    radius: float | None = None            # sphere, cylinder
    semi_axes: tuple[float, float, float] | None = None  # ellipsoid
    axis: str = "z"                        # cylinder
    length: float | None = None            # cylinder
    value_jitter_frac: float = 0.0

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise InvalidArgument(f"unknown primitive shape {self.shape!r}")
        if self.tissue not in _TISSUES:
            raise InvalidArgument(f"unknown tissue class {self.tissue!r}")
        if self.chi_para < 0 or self.chi_dia < 0:
            raise InvalidArgument("chi_para and chi_dia must be >= 0 (stored positive)")
        if self.r2 < 0 or self.m0 < 0:
            raise InvalidArgument("r2 and m0 must be >= 0")
        if self.shape in ("sphere", "cylinder") and not (self.radius and self.radius > 0):
            raise InvalidArgument(f"{self.shape} needs a positive radius")
        if self.shape == "cylinder":
            if self.axis not in _AXIS_INDEX:
                raise InvalidArgument(f"cylinder axis must be x/y/z, got {self.axis!r}")
            if not (self.length and self.length > 0):
                raise InvalidArgument("cylinder needs a positive length")
        if self.shape == "ellipsoid":
            if self.semi_axes is None or len(self.semi_axes) != 3 \
                    or any(a <= 0 for a in self.semi_axes):
                raise InvalidArgument("ellipsoid needs 3 positive semi_axes")

    def half_extent(self) -> tuple[float, float, float]:
        if self.shape == "sphere":
            return (self.radius, self.radius, self.radius)
        if self.shape == "ellipsoid":
            return tuple(self.semi_axes)
        ext = [self.radius] * 3
        ext[_AXIS_INDEX[self.axis]] = self.length / 2.0
        return tuple(ext)

    def membership(self, ix: np.ndarray, iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
        """Voxel-center inclusion test on index grids."""
        cx, cy, cz = self.center
        if self.shape == "sphere":
            return ((ix - cx) ** 2 + (iy - cy) ** 2 + (iz - cz) ** 2) <= self.radius ** 2
        if self.shape == "ellipsoid":
            ax, ay, az = self.semi_axes
            return (((ix - cx) / ax) ** 2 + ((iy - cy) / ay) ** 2
                    + ((iz - cz) / az) ** 2) <= 1.0
        deltas = (ix - cx, iy - cy, iz - cz)
        k = _AXIS_INDEX[self.axis]
        along = deltas[k]
        perp = [deltas[i] for i in range(3) if i != k]
        return (np.abs(along) <= self.length / 2.0) & \
               (perp[0] ** 2 + perp[1] ** 2 <= self.radius ** 2)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.0)
    dr_true: float = DEFAULT_DR_HZ_PER_PPM
    margin_frac: float = 0.25
    # Signal-bearing bath surrounding the object (zero susceptibility), like
    # the gel bath of a physical phantom; lets the field be measured over the
    # whole grid instead of only where primitives sit.
    background_m0: float = 0.0
    background_r2: float = 0.0
    primitives: tuple[Primitive, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise InvalidArgument(f"bad grid dims {self.dims}")
        if not (0.0 <= self.margin_frac < 1.0):
            raise InvalidArgument(f"margin_frac must be in [0, 1), got {self.margin_frac}")
        if self.dr_true <= 0:
            raise InvalidArgument(f"dr_true must be positive, got {self.dr_true}")
        if self.background_m0 < 0 or self.background_r2 < 0:
            raise InvalidArgument("background m0/r2 must be >= 0")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PhantomSpec":
        grid = doc.get("grid", {})
        prims = tuple(
            Primitive(
                shape=p["shape"],
                center=tuple(p["center"]),
                chi_para=p.get("chi_para", 0.0),
                chi_dia=p.get("chi_dia", 0.0),
                r2=p.get("r2", 0.0),
                m0=p.get("m0", 1.0),
                roi_label=p.get("roi_label", 0),
                tissue=p.get("tissue", "tissue"),
                radius=p.get("radius"),
                semi_axes=tuple(p["semi_axes"]) if "semi_axes" in p else None,
                axis=p.get("axis", "z"),
                length=p.get("length"),
                value_jitter_frac=p.get("value_jitter_frac", 0.0),
            )
            for p in doc.get("primitives", [])
        )
        return cls(
            dims=tuple(grid.get("dims", (32, 32, 32))),
            voxel_size=tuple(grid.get("voxel_size", (1.0, 1.0, 1.0))),
            dr_true=doc.get("dr_true", DEFAULT_DR_HZ_PER_PPM),
            margin_frac=grid.get("margin_frac", 0.25),
            background_m0=doc.get("background_m0", 0.0),
            background_r2=doc.get("background_r2", 0.0),
            primitives=prims,
        )

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class Phantom:
    chi_para: Volume3D   # ppm, >= 0
    chi_dia: Volume3D    # ppm, >= 0 (positive-valued convention)
    r2: Volume3D         # 1/s
    m0: Volume3D
    brain_mask: Mask3D
    csf_mask: Mask3D
    vessel_mask: Mask3D
    roi_labels: np.ndarray  # int32, 0 = background
    dr_true: float

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.chi_para.dims


@dataclass(frozen=True)
class MultiEchoSeries:
    """Per-echo magnitude (and optionally phase) volumes with echo times."""

    echo_times: tuple[float, ...]     # seconds, strictly increasing
    magnitude: np.ndarray             # (ne, nx, ny, nz)
    phase: np.ndarray | None          # radians; None for magnitude-only SE
    voxel_size: tuple[float, float, float]
    b0_dir: tuple[float, float, float]
    b0_tesla: float | None = None
    phase_wrapped: bool = False

    def __post_init__(self):
        tes = tuple(float(t) for t in self.echo_times)
        if len(tes) < 1 or any(t <= 0 for t in tes):
            raise BadEchoTimes(f"echo times must be positive, got {tes}")
        if any(b <= a for a, b in zip(tes, tes[1:])):
            raise BadEchoTimes(f"echo times must be strictly increasing, got {tes}")
        mag = np.asarray(self.magnitude, dtype=np.float64)
        if mag.ndim != 4 or mag.shape[0] != len(tes):
            raise InvalidArgument(f"magnitude must be (n_echoes, nx, ny, nz), got {mag.shape}")
        mag.setflags(write=False)
        object.__setattr__(self, "echo_times", tes)
        object.__setattr__(self, "magnitude", mag)
        if self.phase is not None:
            ph = np.asarray(self.phase, dtype=np.float64)
            if ph.shape != mag.shape:
                raise InvalidArgument("phase and magnitude shapes differ")
            ph.setflags(write=False)
            object.__setattr__(self, "phase", ph)

    @property
    def n_echoes(self) -> int:
        return len(self.echo_times)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.magnitude.shape[1:]

    def magnitude_stack(self) -> EchoStack:
        return EchoStack(self.magnitude, self.echo_times, self.voxel_size,
                         Unit.DIMENSIONLESS, self.b0_dir, self.b0_tesla)

    def phase_stack(self) -> EchoStack:
        if self.phase is None:
            raise InvalidArgument("series has no phase data")
        return EchoStack(self.phase, self.echo_times, self.voxel_size,
                         Unit.DIMENSIONLESS, self.b0_dir, self.b0_tesla)

    @classmethod
    def from_stacks(cls, magnitude: EchoStack, phase: EchoStack | None,
                    phase_wrapped: bool = True) -> "MultiEchoSeries":
        return cls(
            echo_times=magnitude.echo_times,
            magnitude=magnitude.data,
            phase=None if phase is None else phase.data,
            voxel_size=magnitude.voxel_size,
            b0_dir=magnitude.b0_dir,
            b0_tesla=magnitude.b0_tesla,
            phase_wrapped=phase_wrapped,
        )


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    return -(np.mod(-phase + np.pi, 2.0 * np.pi) - np.pi)


def generate_phantom(spec: PhantomSpec, seed: int = 0) -> Phantom:
    """Rasterize the primitives of a spec; deterministic for a given seed.

    Overlapping primitives resolve last-wins. Each primitive's bounding box
    must stay inside the central region that leaves ``margin_frac`` of the
    FOV empty (half on each side), so circular dipole convolution does not
    wrap sources onto themselves.
    """
    nx, ny, nz = spec.dims
    rng = np.random.default_rng(seed)
    lo = [spec.margin_frac / 2.0 * n for n in spec.dims]
    hi = [(1.0 - spec.margin_frac / 2.0) * n - 1.0 for n in spec.dims]

    chi_para = np.zeros(spec.dims)
    chi_dia = np.zeros(spec.dims)
    r2 = np.zeros(spec.dims)
    m0 = np.zeros(spec.dims)
    brain = np.zeros(spec.dims, dtype=bool)
    csf = np.zeros(spec.dims, dtype=bool)
    vessel = np.zeros(spec.dims, dtype=bool)
    labels = np.zeros(spec.dims, dtype=np.int32)

    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    for prim in spec.primitives:
        ext = prim.half_extent()
        for a in range(3):
            if prim.center[a] - ext[a] < lo[a] or prim.center[a] + ext[a] > hi[a]:
                raise PrimitiveOutOfBounds(
                    f"{prim.shape} at {prim.center} extends past the "
                    f"{spec.margin_frac:.0%} empty margin on axis {'xyz'[a]}")
        inside = prim.membership(ix, iy, iz)
        jitter = 1.0 + prim.value_jitter_frac * rng.uniform(-1.0, 1.0)
        chi_para[inside] = prim.chi_para * jitter
        chi_dia[inside] = prim.chi_dia * jitter
        r2[inside] = prim.r2 * jitter
        m0[inside] = prim.m0
        brain[inside] = True
        csf[inside] = prim.tissue == "csf"
        vessel[inside] = prim.tissue == "vessel"
        if prim.roi_label > 0:
            labels[inside] = prim.roi_label

    mk = lambda data, unit: Volume3D(data, spec.voxel_size, unit)
    return Phantom(
        chi_para=mk(chi_para, Unit.PPM),
        chi_dia=mk(chi_dia, Unit.PPM),
        r2=mk(r2, Unit.PER_SECOND),
        m0=mk(m0, Unit.DIMENSIONLESS),
        brain_mask=Mask3D(brain),
        csf_mask=Mask3D(csf),
        vessel_mask=Mask3D(vessel),
        roi_labels=labels,
        dr_true=float(spec.dr_true),
    )


def total_chi(phantom: Phantom) -> Volume3D:
    """Bulk susceptibility chi_para - chi_dia (sign convention: dia stored positive)."""
    return phantom.chi_para.with_data(phantom.chi_para.data - phantom.chi_dia.data)


def true_field(phantom: Phantom, kernel: DipoleKernel) -> Volume3D:
    """Dipole field (ppm) of the phantom's total susceptibility."""
    chi = total_chi(phantom).with_b0(kernel.b0_dir)
    return forward_field(chi, kernel)


def true_r2prime(phantom: Phantom) -> Volume3D:
    """Ground-truth R2' = dr_true * (chi_para + chi_dia), in 1/s."""
    data = phantom.dr_true * (phantom.chi_para.data + phantom.chi_dia.data)
    return phantom.chi_para.with_data(data, unit=Unit.PER_SECOND)


def _check_echo_times(echo_times) -> tuple[float, ...]:
    tes = tuple(float(t) for t in echo_times)
    if len(tes) < 1 or any(t <= 0 for t in tes):
        raise BadEchoTimes(f"echo times must be positive, got {tes}")
    if any(b <= a for a, b in zip(tes, tes[1:])):
        raise BadEchoTimes(f"echo times must be strictly increasing, got {tes}")
    return tes


def synthesize_gre(phantom: Phantom, kernel: DipoleKernel, echo_times,
                   b0_tesla: float, snr: float = np.inf,
                   seed: int = 0) -> MultiEchoSeries:
    """Simulate a multi-echo GRE acquisition of the phantom.

    Signal model: m0 * exp(-(r2 + r2') * TE) * exp(i * 2*pi * f * TE) with f
    the dipole field in Hz. Finite snr adds complex white Gaussian noise
    with sigma = max(m0)/snr; phase is stored wrapped to (-pi, pi].
    """
    tes = _check_echo_times(echo_times)
    if not snr > 0:
        raise InvalidArgument(f"snr must be positive (or inf), got {snr}")
    f_hz = true_field(phantom, kernel).data * b0_tesla * GAMMA_HZ_PER_TESLA * 1e-6
    r2star = phantom.r2.data + true_r2prime(phantom).data
    rng = np.random.default_rng(seed)
    sigma = 0.0 if np.isinf(snr) else float(phantom.m0.data.max()) / snr

    mags = np.empty((len(tes),) + phantom.dims)
    phases = np.empty_like(mags)
    for e, te in enumerate(tes):
        signal = phantom.m0.data * np.exp(-r2star * te) * np.exp(2j * np.pi * f_hz * te)
        if sigma > 0:
            signal = signal + sigma * (rng.standard_normal(phantom.dims)
                                       + 1j * rng.standard_normal(phantom.dims))
        mags[e] = np.abs(signal)
        phases[e] = wrap_phase(np.angle(signal))
    return MultiEchoSeries(
        echo_times=tes, magnitude=mags, phase=phases,
        voxel_size=phantom.chi_para.voxel_size, b0_dir=kernel.b0_dir,
        b0_tesla=float(b0_tesla), phase_wrapped=True,
    )


def synthesize_se(phantom: Phantom, echo_times, snr: float = np.inf,
                  seed: int = 0) -> MultiEchoSeries:
    """Ideal spin-echo magnitude decay: m0 * exp(-r2 * TE) plus optional noise."""
    tes = _check_echo_times(echo_times)
    if not snr > 0:
        raise InvalidArgument(f"snr must be positive (or inf), got {snr}")
    rng = np.random.default_rng(seed)
    sigma = 0.0 if np.isinf(snr) else float(phantom.m0.data.max()) / snr
    mags = np.empty((len(tes),) + phantom.dims)
    for e, te in enumerate(tes):
        m = phantom.m0.data * np.exp(-phantom.r2.data * te)
        if sigma > 0:
            m = np.abs(m + sigma * (rng.standard_normal(phantom.dims)
                                    + 1j * rng.standard_normal(phantom.dims)))
        mags[e] = m
    return MultiEchoSeries(
        echo_times=tes, magnitude=mags, phase=None,
        voxel_size=phantom.chi_para.voxel_size, b0_dir=phantom.chi_para.b0_dir,
    )
