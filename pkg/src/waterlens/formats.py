"""On-disk formats: binary PPM (P6), the F32R float raster, flat key = value text."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

F32R_MAGIC = b"F32R"


class FormatError(ValueError):
    """A file does not parse as the expected format."""


def write_f32r(path, array: np.ndarray) -> None:
    """Write a 2-D or 3-D array as ``[height, width, channels]`` float32 LE."""
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise FormatError(f"F32R stores 2-D or 3-D arrays, got shape {a.shape}")
    h, w, c = a.shape
    header = F32R_MAGIC + struct.pack("<III", w, h, c)
    Path(path).write_bytes(header + np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_f32r(path) -> np.ndarray:
    """Read an F32R file as a float64 ``[height, width, channels]`` array."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != F32R_MAGIC:
        raise FormatError(f"{path}: not an F32R file")
    w, h, c = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * w * h * c:
        raise FormatError(f"{path}: expected {16 + 4 * w * h * c} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=16).reshape(h, w, c).astype(np.float64)


def _ppm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    """Parse ``count`` whitespace-separated header integers, skipping comments."""
    vals: list[int] = []
    pos = 2
    while len(vals) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header")
        vals.append(int(raw[start:pos]))
    return vals, pos + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 image into float64 ``[H, W, 3]`` values in [0, 1]."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    if raw[:2] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6)")
    (w, h, maxval), pos = _ppm_tokens(raw, 3)
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * 3
    data = np.frombuffer(raw, dtype=dtype, count=n, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / maxval


def write_ppm(path, image: np.ndarray) -> None:
    """Write ``[H, W, 3]`` values in [0, 1] as 8-bit P6 (round to nearest)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an [H, W, 3] image, got {img.shape}")
    q = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = q.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.tobytes())


def quantize8(image: np.ndarray) -> np.ndarray:
    """The values an 8-bit PPM round trip would produce."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255) / 255.0


def read_keyvalue(path) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_keyvalue(path, items) -> None:
    lines = [f"{k} = {v}" for k, v in items]
    Path(path).write_text("\n".join(lines) + "\n")


def format_float(x: float) -> str:
    """Shortest round-tripping text for a float (stable across runs)."""
    return repr(float(x))
