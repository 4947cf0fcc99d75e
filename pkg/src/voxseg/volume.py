"""Voxel grids with physical spacing, their on-disk format, and resampling.

A VolumeGrid couples a dense float32 array with the millimetre geometry needed
to interpret it: per-axis voxel spacing and the physical position of the first
voxel centre.  Axis order is (depth, height, width) everywhere, with width
fastest in memory.

The file format is a fixed little-endian header followed by the raw float32
payload, no compression:

    bytes 0..3    magic "VXSG"
    bytes 4..5    format version, u16
    byte  6       kind, u8: 0 = image, 1 = label
    bytes 7..18   extents (D, H, W), 3 x u32
    bytes 19..30  spacing (z, y, x) in mm, 3 x f32
    bytes 31..42  origin (z, y, x) in mm, 3 x f32
    bytes 43..    payload, D*H*W f32 values, row-major (W fastest)

Resampling maps voxel centres between grids: output voxel i along an axis with
target spacing t reads input position p = ((i + 0.5) * t) / s - 0.5, clamped
to the valid index range.  Output extents round e * s / t so the physical
extent is preserved to within one voxel, and the origin shifts by (t - s) / 2
per axis so both grids cover the same physical slab.  Images interpolate
trilinearly, labels take the nearest voxel so they stay binary.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, FormatError

MAGIC = b"VXSG"
FORMAT_VERSION = 1
_KIND_CODES = {"image": 0, "label": 1}
_KIND_NAMES = {0: "image", 1: "label"}
_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u2"),
        ("kind", "u1"),
        ("extents", "<u4", 3),
        ("spacing", "<f4", 3),
        ("origin", "<f4", 3),
    ]
)


@dataclass
class VolumeGrid:
    """A float32 voxel array plus its physical geometry in millimetres."""

    values: np.ndarray
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    kind: str = "image"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ContractViolation(
                f"volume values must be a 3-d (D, H, W) array, got {self.values.ndim}-d"
            )
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or len(self.origin) != 3:
            raise ContractViolation("spacing and origin must each have 3 components")
        if any(s <= 0 for s in self.spacing):
            raise ContractViolation(f"spacing must be strictly positive, got {self.spacing}")
        if self.kind not in _KIND_CODES:
            raise ContractViolation(f"kind must be 'image' or 'label', got {self.kind!r}")
        if self.kind == "label":
            bad = ~np.isin(self.values, (0.0, 1.0))
            if bad.any():
                raise ContractViolation(
                    f"label volumes may contain only 0 and 1, found {self.values[bad].flat[0]}"
                )

    @property
    def extents(self):
        return self.values.shape


def write_volume(grid, path):
    """Serialize a VolumeGrid; identical grids produce identical bytes."""
    header = np.zeros((), dtype=_HEADER)
    header["magic"] = MAGIC
    header["version"] = FORMAT_VERSION
    header["kind"] = _KIND_CODES[grid.kind]
    header["extents"] = grid.extents
    header["spacing"] = grid.spacing
    header["origin"] = grid.origin
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_volume(path):
    """Parse a volume file, raising FormatError on any malformation."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.itemsize:
        raise FormatError(f"truncated header: {len(raw)} bytes, need {_HEADER.itemsize}")
    header = np.frombuffer(raw[: _HEADER.itemsize], dtype=_HEADER)[0]
    if bytes(header["magic"]) != MAGIC:
        raise FormatError(f"bad magic {bytes(header['magic'])!r}, expected {MAGIC!r}")
    if int(header["version"]) != FORMAT_VERSION:
        raise FormatError(
            f"unsupported format version {int(header['version'])}, expected {FORMAT_VERSION}"
        )
    kind_code = int(header["kind"])
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"unknown volume kind code {kind_code}")
    extents = tuple(int(e) for e in header["extents"])
    count = extents[0] * extents[1] * extents[2]
    payload = raw[_HEADER.itemsize :]
    if len(payload) != count * 4:
        raise FormatError(
            f"truncated payload: {len(payload)} bytes, need {count * 4} for extents {extents}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(extents)
    return VolumeGrid(
        values=values.copy(),
        spacing=tuple(float(s) for s in header["spacing"]),
        origin=tuple(float(o) for o in header["origin"]),
        kind=_KIND_NAMES[kind_code],
    )


def _axis_positions(n_in, n_out, scale):
    """Clamped fractional input positions of the n_out voxel centres.

    scale is target_spacing / source_spacing for the axis.
    """
    p = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    return np.clip(p, 0.0, n_in - 1)


def _interp_matrix(n_in, n_out, scale):
    """Dense [n_out, n_in] matrix performing 1-d linear interpolation."""
    pos = _axis_positions(n_in, n_out, scale)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    m[rows, i0] += 1.0 - frac
    m[rows, i1] += frac
    return m


def resample_isotropic(grid, target_spacing):
    """Resample a grid onto an isotropic lattice with the given spacing."""
    t = float(target_spacing)
    if t <= 0:
        raise ContractViolation(f"target spacing must be positive, got {t}")
    if all(s == t for s in grid.spacing):
        return replace(grid, values=grid.values.copy())

    in_ext = grid.extents
    out_ext = tuple(max(1, round(e * s / t)) for e, s in zip(in_ext, grid.spacing))
    origin = tuple(o + (t - s) / 2.0 for o, s in zip(grid.origin, grid.spacing))

    if grid.kind == "label":
        idx = [
            np.floor(_axis_positions(n_in, n_out, t / s) + 0.5).astype(np.int64)
            for n_in, n_out, s in zip(in_ext, out_ext, grid.spacing)
        ]
        values = grid.values[np.ix_(*idx)]
    else:
        values = grid.values.astype(np.float64)
        for axis, (n_in, n_out, s) in enumerate(zip(in_ext, out_ext, grid.spacing)):
            m = _interp_matrix(n_in, n_out, t / s)
            moved = np.moveaxis(values, axis, 0)
            rest = moved.shape[1:]
            mixed = np.matmul(m, moved.reshape(n_in, -1)).reshape((n_out,) + rest)
            values = np.moveaxis(mixed, 0, axis)
        values = values.astype(np.float32)

    return VolumeGrid(values=values, spacing=(t, t, t), origin=origin, kind=grid.kind)


def crop_or_pad(grid, extents, fill=0.0):
    """Centre-crop or zero-pad (with `fill`) each axis to the given extents."""
    extents = tuple(int(e) for e in extents)
    if len(extents) != 3 or any(e < 1 for e in extents):
        raise ContractViolation(f"target extents must be 3 positive integers, got {extents}")
    values = grid.values
    origin = list(grid.origin)
    for axis in range(3):
        have, want = values.shape[axis], extents[axis]
        if have == want:
            continue
        if have > want:
            lo = (have - want) // 2
            sl = [slice(None)] * 3
            sl[axis] = slice(lo, lo + want)
            values = values[tuple(sl)]
            origin[axis] += lo * grid.spacing[axis]
        else:
            lo = (want - have) // 2
            pad = [(0, 0)] * 3
            pad[axis] = (lo, want - have - lo)
            values = np.pad(values, pad, constant_values=np.float32(fill))
            origin[axis] -= lo * grid.spacing[axis]
    return VolumeGrid(
        values=np.ascontiguousarray(values),
        spacing=grid.spacing,
        origin=tuple(origin),
        kind=grid.kind,
    )


def batch_sampler(case_ids, batch_size, seed):
    """Yield disjoint batches, reshuffling each epoch; remainder dropped.

    The stream is infinite; determinism comes solely from `seed`.
    """
    ids = list(case_ids)
    if not ids:
        raise ContractViolation("cannot sample batches from an empty dataset")
    if batch_size < 1:
        raise ContractViolation(f"batch size must be >= 1, got {batch_size}")
    if batch_size > len(ids):
        raise ContractViolation(
            f"batch size {batch_size} exceeds dataset size {len(ids)}"
        )

    def stream():
        rng = np.random.default_rng(int(seed))
        while True:
            order = rng.permutation(len(ids))
            for start in range(0, len(ids) - batch_size + 1, batch_size):
                yield [ids[i] for i in order[start : start + batch_size]]

    return stream()
