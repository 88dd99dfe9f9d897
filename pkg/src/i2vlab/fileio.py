"""On-disk formats: binary latent/weight streams, PGM images, CSV tables.

Latents are a flat little-endian float32 stream prefixed by five int32
values ``(magic, F, H, W, C)``.  Weight files reuse the identical record
layout, one record per parameter in registry order with shapes padded to
four dimensions.  All writes go through a temp file and ``os.replace``
so partially written outputs never appear under the final name.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "LATENT_MAGIC",
    "WEIGHTS_MAGIC",
    "save_latent",
    "load_latent",
    "save_weights",
    "load_weights",
    "write_pgm16",
    "write_pgm8",
    "read_pgm",
    "write_csv",
    "write_matrix_csv",
    "write_sweep_csv",
    "write_sweep_detail_csv",
]

LATENT_MAGIC = int.from_bytes(b"IVLT", "little")
WEIGHTS_MAGIC = int.from_bytes(b"IVWT", "little")

_HEADER = struct.Struct("<5i")


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _pack_record(magic: int, array: np.ndarray) -> bytes:
    if array.ndim > 4:
        raise ValueError(f"cannot serialize {array.ndim}-dimensional array")
    dims = list(array.shape) + [1] * (4 - array.ndim)
    data = np.ascontiguousarray(array, dtype="<f4")
    return _HEADER.pack(magic, *dims) + data.tobytes()


def _read_record(buf: memoryview, offset: int, magic: int, where: str) -> tuple[np.ndarray, int]:
    if offset + _HEADER.size > len(buf):
        raise ValueError(f"{where}: truncated header at byte {offset}")
    got_magic, *dims = _HEADER.unpack_from(buf, offset)
    if got_magic != magic:
        raise ValueError(f"{where}: bad magic 0x{got_magic:08x}, expected 0x{magic:08x}")
    if min(dims) < 1:
        raise ValueError(f"{where}: non-positive dimension in header {dims}")
    count = int(np.prod(dims))
    start = offset + _HEADER.size
    end = start + 4 * count
    if end > len(buf):
        raise ValueError(f"{where}: truncated data, needs {count} floats")
    data = np.frombuffer(buf[start:end], dtype="<f4").astype(float)
    return data.reshape(dims), end


def save_latent(path: str, latent: np.ndarray) -> None:
    """Write a ``(F, H, W, C)`` latent as header plus float32 stream."""
    latent = np.asarray(latent, dtype=float)
    if latent.ndim != 4:
        raise ValueError(f"latent must be 4-dimensional, got shape {latent.shape}")
    _atomic_write(path, _pack_record(LATENT_MAGIC, latent))


def load_latent(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    latent, end = _read_record(buf, 0, LATENT_MAGIC, path)
    if end != len(buf):
        raise ValueError(f"{path}: {len(buf) - end} trailing bytes after latent record")
    return latent


def save_weights(path: str, params: dict[str, np.ndarray]) -> None:
    """Serialize parameters as concatenated records in registry order.

    Names are not stored; the registry order of the model config defines
    the mapping, which :func:`load_weights` re-checks via shapes.
    """
    if not params:
        raise ValueError("no parameters to save")
    payload = b"".join(_pack_record(WEIGHTS_MAGIC, arr) for arr in params.values())
    _atomic_write(path, payload)


def load_weights(path: str, template: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Read records back into the shapes of ``template``, in its order."""
    with open(path, "rb") as fh:
        buf = memoryview(fh.read())
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name, ref in template.items():
        arr, offset = _read_record(buf, offset, WEIGHTS_MAGIC, f"{path}[{name}]")
        if arr.size != ref.size:
            raise ValueError(
                f"{path}[{name}]: stored size {arr.size} does not match expected {ref.size}"
            )
        out[name] = arr.reshape(ref.shape)
    if offset != len(buf):
        raise ValueError(f"{path}: {len(buf) - offset} trailing bytes after last record")
    return out


def write_pgm16(path: str, values: np.ndarray, lo: float | None = None, hi: float | None = None) -> None:
    """Plain-text (P2) 16-bit graymap of a 2-d array.

    Values are mapped linearly from [lo, hi] (data range by default) onto
    0..65535; a constant input renders as all zeros.  Pair with
    :func:`write_matrix_csv` when exact values matter.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"PGM wants a 2-d array, got shape {values.shape}")
    lo = float(values.min()) if lo is None else float(lo)
    hi = float(values.max()) if hi is None else float(hi)
    if hi > lo:
        scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(values)
    gray = np.round(scaled * 65535).astype(np.uint16)
    rows, cols = gray.shape
    lines = [f"P2", f"{cols} {rows}", "65535"]
    lines += [" ".join(str(v) for v in row) for row in gray]
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def write_pgm8(path: str, frame: np.ndarray) -> None:
    """Binary (P5) 8-bit graymap of one pixel frame clipped to [0, 1]."""
    frame = np.asarray(frame, dtype=float)
    if frame.ndim == 3 and frame.shape[-1] == 1:
        frame = frame[..., 0]
    if frame.ndim != 2:
        raise ValueError(f"PGM wants a single-channel frame, got shape {frame.shape}")
    gray = np.round(np.clip(frame, 0.0, 1.0) * 255).astype(np.uint8)
    rows, cols = gray.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    _atomic_write(path, header + gray.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a P2 or P5 graymap back as integers (test round trips)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic == b"P2":
        fields = raw.decode("ascii").split()
        cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
        data = np.array(fields[4:], dtype=np.int64)
    elif magic == b"P5":
        parts = raw.split(b"\n", 3)
        cols, rows = (int(x) for x in parts[1].split())
        maxval = int(parts[2])
        data = np.frombuffer(parts[3], dtype=np.uint8).astype(np.int64)
    else:
        raise ValueError(f"{path}: not a P2/P5 graymap")
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} pixels, found {data.size}")
    if maxval not in (255, 65535):
        raise ValueError(f"{path}: unsupported max value {maxval}")
    return data.reshape(rows, cols)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Atomic CSV write with a fixed header row."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    _atomic_write(path, buf.getvalue().encode("utf-8"))


def write_matrix_csv(path: str, values: np.ndarray) -> None:
    """Raw numeric dump of a 2-d array, full float precision."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"matrix CSV wants a 2-d array, got shape {values.shape}")
    header = [f"col{j}" for j in range(values.shape[1])]
    write_csv(path, header, ([repr(float(v)) for v in row] for row in values))


def write_sweep_csv(path: str, result) -> None:
    """One row per gamma with the pinned column set."""
    if not result.rows:
        raise ValueError("sweep result holds no rows")
    k = result.frames - 1
    header = ["gamma", "dd_proxy", "ref_mse", "d_gamma"] + [f"refmass_f{i}" for i in range(1, k + 1)]
    rows = []
    for row in result.rows:
        rows.append(
            [repr(float(row.gamma)), repr(row.dynamic_degree), repr(row.ref_fidelity), repr(row.d_gamma)]
            + [repr(float(m)) for m in row.reference_mass]
        )
    write_csv(path, header, rows)


def write_sweep_detail_csv(path: str, result) -> None:
    """Per-seed breakdown plus the temporal smoothness proxy."""
    header = ["gamma", "seed", "dd_proxy", "ref_mse", "smoothness"]
    rows = []
    for row in result.rows:
        for i, seed in enumerate(result.seeds):
            rows.append(
                [
                    repr(float(row.gamma)),
                    seed,
                    repr(float(row.seed_dynamic_degree[i])),
                    repr(float(row.seed_ref_fidelity[i])),
                    repr(float(row.seed_smoothness[i])),
                ]
            )
    write_csv(path, header, rows)
