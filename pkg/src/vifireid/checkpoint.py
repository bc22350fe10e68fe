"""Checkpoint format: a flat binary of little-endian f64 arrays plus a text
index.

``<prefix>.idx`` starts with ``# key=value`` metadata lines, followed by one
``name<TAB>shape<TAB>byte_offset`` line per array, where shape is
``x``-separated extents (empty for a scalar). ``<prefix>.bin`` holds the
arrays back to back in index order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class CheckpointError(OSError):
    pass


def _paths(prefix) -> tuple[Path, Path]:
    p = Path(prefix)
    if p.suffix in (".idx", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".idx"), p.with_name(p.name + ".bin")


def save_arrays(prefix, arrays: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> Path:
    idx_path, bin_path = _paths(prefix)
    idx_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        if "\t" in name or "\n" in name:
            raise CheckpointError(f"invalid array name {name!r}")
        a = np.asarray(arr, dtype="<f8")
        lines.append(f"{name}\t{'x'.join(map(str, a.shape))}\t{offset}")
        chunks.append(a.tobytes(order="C"))
        offset += a.nbytes
    bin_path.write_bytes(b"".join(chunks))
    idx_path.write_text("\n".join(lines) + "\n")
    return idx_path


def load_arrays(prefix) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    idx_path, bin_path = _paths(prefix)
    for p in (idx_path, bin_path):
        if not p.exists():
            raise CheckpointError(f"checkpoint file not found: {p}")
    raw = bin_path.read_bytes()
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    for line in idx_path.read_text().splitlines():
        if not line:
            continue
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
            continue
        name, shape_s, off_s = line.split("\t")
        shape = tuple(int(x) for x in shape_s.split("x")) if shape_s else ()
        off = int(off_s)
        n = int(np.prod(shape)) * 8
        if off + n > len(raw):
            raise CheckpointError(f"{bin_path}: array {name} runs past end of file")
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=n // 8, offset=off).reshape(shape).astype(np.float64)
    return arrays, meta


def checkpoint_paths(prefix) -> tuple[Path, Path]:
    return _paths(prefix)
