"""PFM depth images and PGM masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(path, image: np.ndarray) -> None:
    """Single-channel little-endian PFM (negative scale), rows stored bottom-up."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D depth image, got shape {image.shape}")
    h, w = image.shape
    data = np.flipud(image).astype("<f4").tobytes()
    Path(path).write_bytes(f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + data)


def _read_header_lines(buf: bytes, n: int) -> tuple[list[str], int]:
    lines, pos = [], 0
    while len(lines) < n:
        end = buf.index(b"\n", pos)
        line = buf[pos:end].decode("ascii").strip()
        pos = end + 1
        if line and not line.startswith("#"):
            lines.append(line)
    return lines, pos


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    try:
        (magic, dims, scale), offset = _read_header_lines(buf, 3)
    except ValueError as exc:
        raise ValueError(f"{path}: truncated PFM header") from exc
    if magic != "Pf":
        raise ValueError(f"{path}: not a single-channel PFM (magic {magic!r})")
    w, h = (int(v) for v in dims.split())
    dtype = "<f4" if float(scale) < 0 else ">f4"
    raw = np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset)
    return np.flipud(raw.reshape(h, w)).astype(np.float32)


def write_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    h, w = mask.shape
    data = np.where(mask, 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data)


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, dims, maxval), offset = _read_header_lines(buf, 3)
    if magic != "P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h = (int(v) for v in dims.split())
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=offset)
    return raw.reshape(h, w) > int(maxval) // 2
