"""Minimal NIfTI-1 single-file (.nii) reader/writer.

Supports float32/float64, 3D volumes and 4D echo stacks, both endiannesses
on read, little-endian on write. Unit tag and B0 direction travel in the
80-byte descrip field as ``unit=<u>;b0=<x>,<y>,<z>`` (plus optional
``tes``/``b0t`` tokens for echo stacks); qform/sform are not interpreted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadHeader, BadMagic, InvalidArgument, TruncatedData, UnsupportedDatatype
from .volume import Unit, Volume3D

HEADER_SIZE = 348
DATA_OFFSET = 352  # header + 4-byte extension flag
DT_FLOAT32 = 16
DT_FLOAT64 = 64
_BITPIX = {DT_FLOAT32: 32, DT_FLOAT64: 64}
_NP_DTYPE = {DT_FLOAT32: "f4", DT_FLOAT64: "f8"}

# (name, struct format, byte offset) for the fields this reader interprets.
_FIELDS = (
    ("sizeof_hdr", "i", 0),
    ("dim", "8h", 40),
    ("datatype", "h", 70),
    ("bitpix", "h", 72),
    ("pixdim", "8f", 76),
    ("vox_offset", "f", 108),
    ("scl_slope", "f", 112),
    ("scl_inter", "f", 116),
    ("toffset", "f", 136),
    ("descrip", "80s", 148),
    ("magic", "4s", 344),
)


@dataclass(frozen=True)
class NiftiHeader:
    sizeof_hdr: int
    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: int
    scl_slope: float
    scl_inter: float
    toffset: float
    descrip: str
    magic: bytes
    byteswapped: bool
    raw: bytes = field(repr=False)


@dataclass(frozen=True)
class EchoStack:
    """4D stack of echo volumes as stored in a single NIfTI file."""

    data: np.ndarray  # (ne, nx, ny, nz) float64
    echo_times: tuple[float, ...]
    voxel_size: tuple[float, float, float]
    unit: Unit
    b0_dir: tuple[float, float, float]
    b0_tesla: float | None = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def n_echoes(self) -> int:
        return self.data.shape[0]

    def volume(self, e: int) -> Volume3D:
        return Volume3D(self.data[e], self.voxel_size, self.unit, self.b0_dir)


def _parse_descrip(descrip: str) -> dict:
    out = {"unit": Unit.DIMENSIONLESS, "b0": (0.0, 0.0, 1.0), "b0t": None}
    for token in descrip.split(";"):
        if "=" not in token:
            continue
        key, _, val = token.partition("=")
        key = key.strip()
        try:
            if key == "unit":
                out["unit"] = Unit(val.strip())
            elif key == "b0":
                parts = [float(p) for p in val.split(",")]
                if len(parts) == 3:
                    out["b0"] = tuple(parts)
            elif key == "b0t":
                out["b0t"] = float(val)
        except (ValueError, KeyError):
            continue  # lenient: malformed tokens fall back to defaults
    return out


def _format_descrip(unit: Unit, b0_dir, b0_tesla=None) -> str:
    s = f"unit={unit.value};b0={b0_dir[0]:.12g},{b0_dir[1]:.12g},{b0_dir[2]:.12g}"
    if b0_tesla is not None:
        s += f";b0t={b0_tesla:.9g}"
    if len(s) > 79:
        raise InvalidArgument(f"descrip overflows 80 bytes: {s!r}")
    return s


def read_header(buf: bytes) -> NiftiHeader:
    if len(buf) < HEADER_SIZE:
        raise TruncatedData(f"stream has {len(buf)} bytes, header needs {HEADER_SIZE}")
    for prefix, swapped in (("<", False), (">", True)):
        (size,) = struct.unpack_from(prefix + "i", buf, 0)
        if size == HEADER_SIZE:
            break
    else:
        raise BadHeader("sizeof_hdr is not 348 in either byte order")
    vals = {}
    for name, fmt, off in _FIELDS:
        got = struct.unpack_from(prefix + fmt, buf, off)
        vals[name] = got[0] if len(got) == 1 else got
    magic = vals["magic"]
    if magic != b"n+1\x00":
        raise BadMagic(f"unsupported magic {magic!r} (only single-file n+1)")
    if vals["datatype"] not in _BITPIX:
        raise UnsupportedDatatype(f"datatype {vals['datatype']} not supported")
    if vals["bitpix"] != _BITPIX[vals["datatype"]]:
        raise BadHeader(f"bitpix {vals['bitpix']} inconsistent with datatype {vals['datatype']}")
    dim = vals["dim"]
    if dim[0] not in (3, 4):
        raise BadHeader(f"dim[0] must be 3 or 4, got {dim[0]}")
    if any(d < 1 for d in dim[1:dim[0] + 1]):
        raise BadHeader(f"non-positive extent in dim {dim}")
    vox_offset = int(vals["vox_offset"])
    if vox_offset < HEADER_SIZE:
        raise BadHeader(f"vox_offset {vox_offset} < {HEADER_SIZE}")
    descrip = vals["descrip"].split(b"\x00", 1)[0].decode("ascii", errors="replace")
    return NiftiHeader(
        sizeof_hdr=size,
        dim=tuple(dim),
        datatype=vals["datatype"],
        bitpix=vals["bitpix"],
        pixdim=tuple(vals["pixdim"]),
        vox_offset=vox_offset,
        scl_slope=float(vals["scl_slope"]),
        scl_inter=float(vals["scl_inter"]),
        toffset=float(vals["toffset"]),
        descrip=descrip,
        magic=magic,
        byteswapped=swapped,
        raw=bytes(buf[:HEADER_SIZE]),
    )


def read_nifti(buf: bytes) -> tuple[NiftiHeader, Volume3D | EchoStack]:
    """Parse a .nii byte stream into a Volume3D (3D) or EchoStack (4D)."""
    hdr = read_header(buf)
    ndim = hdr.dim[0]
    nx, ny, nz = hdr.dim[1:4]
    nt = hdr.dim[4] if ndim == 4 else 1
    dtype = np.dtype(("<" if not hdr.byteswapped else ">") + _NP_DTYPE[hdr.datatype])
    nvox = nx * ny * nz * nt
    nbytes = nvox * dtype.itemsize
    if len(buf) < hdr.vox_offset + nbytes:
        raise TruncatedData(
            f"declared {nvox} voxels need {nbytes} bytes at offset {hdr.vox_offset}, "
            f"stream has {len(buf)}")
    flat = np.frombuffer(buf, dtype=dtype, count=nvox, offset=hdr.vox_offset)
    data = flat.astype(np.float64).reshape((nx, ny, nz, nt), order="F")
    slope = hdr.scl_slope if hdr.scl_slope != 0.0 else 1.0
    if slope != 1.0 or hdr.scl_inter != 0.0:
        data = data * slope + hdr.scl_inter
    meta = _parse_descrip(hdr.descrip)
    voxel_size = tuple(float(p) for p in hdr.pixdim[1:4])
    if any(v <= 0 for v in voxel_size):
        raise BadHeader(f"non-positive pixdim {hdr.pixdim[1:4]}")
    if ndim == 3 or nt == 1:
        vol = Volume3D(data[..., 0], voxel_size, meta["unit"], meta["b0"])
        return hdr, vol
    dt = float(hdr.pixdim[4])
    tes = tuple(float(hdr.toffset + e * dt) for e in range(nt))
    stack = EchoStack(
        data=np.ascontiguousarray(np.moveaxis(data, 3, 0)),
        echo_times=tes,
        voxel_size=voxel_size,
        unit=meta["unit"],
        b0_dir=meta["b0"],
        b0_tesla=meta["b0t"],
    )
    return hdr, stack


def _build_header(dim, pixdim, datatype, descrip: str, toffset: float) -> bytes:
    buf = bytearray(HEADER_SIZE)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    struct.pack_into("<8h", buf, 40, *dim)
    struct.pack_into("<h", buf, 70, datatype)
    struct.pack_into("<h", buf, 72, _BITPIX[datatype])
    struct.pack_into("<8f", buf, 76, *pixdim)
    struct.pack_into("<f", buf, 108, float(DATA_OFFSET))
    struct.pack_into("<f", buf, 112, 1.0)  # scl_slope
    struct.pack_into("<f", buf, 116, 0.0)  # scl_inter
    struct.pack_into("<f", buf, 136, toffset)
    struct.pack_into("<80s", buf, 148, descrip.encode("ascii"))
    # sform: plain voxel-size scaling so external viewers get a geometry.
    struct.pack_into("<h", buf, 254, 1)
    struct.pack_into("<4f", buf, 280, pixdim[1], 0.0, 0.0, 0.0)
    struct.pack_into("<4f", buf, 296, 0.0, pixdim[2], 0.0, 0.0)
    struct.pack_into("<4f", buf, 312, 0.0, 0.0, pixdim[3], 0.0)
    struct.pack_into("<4s", buf, 344, b"n+1\x00")
    return bytes(buf)


def write_nifti(obj: Volume3D | EchoStack, datatype: int = DT_FLOAT32) -> bytes:
    """Serialize a volume or echo stack to little-endian .nii bytes.

    Data lands at offset 352 with scl_slope 1 / scl_inter 0, so a
    write-read round trip is bit-exact for float32 payloads.
    """
    if datatype not in _BITPIX:
        raise UnsupportedDatatype(f"datatype {datatype} not supported")
    if isinstance(obj, Volume3D):
        nx, ny, nz = obj.dims
        dim = (3, nx, ny, nz, 1, 1, 1, 1)
        pixdim = (1.0, *obj.voxel_size, 0.0, 0.0, 0.0, 0.0)
        descrip = _format_descrip(obj.unit, obj.b0_dir)
        payload = obj.data
        toffset = 0.0
    elif isinstance(obj, EchoStack):
        nt = obj.n_echoes
        nx, ny, nz = obj.dims
        tes = np.asarray(obj.echo_times)
        dt = float(tes[1] - tes[0]) if nt > 1 else 0.0
        if nt > 2 and not np.allclose(np.diff(tes), dt, rtol=0, atol=1e-9):
            raise InvalidArgument("echo stack serialization requires uniform echo spacing")
        dim = (4, nx, ny, nz, nt, 1, 1, 1)
        pixdim = (1.0, *obj.voxel_size, dt, 0.0, 0.0, 0.0)
        descrip = _format_descrip(obj.unit, obj.b0_dir, obj.b0_tesla)
        payload = np.moveaxis(obj.data, 0, 3)
        toffset = float(tes[0])
    else:
        raise InvalidArgument(f"cannot serialize {type(obj).__name__}")
    hdr = _build_header(dim, pixdim, datatype, descrip, toffset)
    body = np.asfortranarray(payload.astype(_NP_DTYPE[datatype])).tobytes(order="F")
    return hdr + b"\x00\x00\x00\x00" + body


def read_nifti_file(path) -> tuple[NiftiHeader, Volume3D | EchoStack]:
    with open(path, "rb") as f:
        return read_nifti(f.read())


def write_nifti_file(path, obj, datatype: int = DT_FLOAT32) -> None:
    with open(path, "wb") as f:
        f.write(write_nifti(obj, datatype))
