"""Dataset generation and ingestion: two-spiral CSV and the ARIM image container."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

__all__ = [
    "two_spirals",
    "toy_images",
    "save_csv",
    "load_csv",
    "write_arim",
    "read_arim",
]

ARIM_MAGIC = b"ARIM"


def two_spirals(n: int = 1024, noise: float = 0.15, turns: float = 1.75, seed: int = 0):
    """Deterministic interleaved-spirals binary classification set."""
    rng = np.random.default_rng(seed)
    half = n // 2
    t = np.sqrt(rng.uniform(0.05, 1.0, size=half)) * turns * 2 * np.pi
    dx = t * np.cos(t)
    dy = t * np.sin(t)
    x0 = np.stack([dx, dy], axis=1) + rng.normal(0, noise, size=(half, 2))
    x1 = np.stack([-dx, -dy], axis=1) + rng.normal(0, noise, size=(half, 2))
    x = np.concatenate([x0, x1]) / (turns * 2 * np.pi)
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    order = rng.permutation(len(x))
    return x[order], y[order]


def toy_images(n: int = 512, hw: int = 8, classes: int = 4, seed: int = 0):
    """Grayscale images whose class is the quadrant of a bright blob."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, classes, size=n)
    imgs = rng.uniform(0, 0.25, size=(n, 1, hw, hw))
    half = hw // 2
    corners = [(0, 0), (0, half), (half, 0), (half, half)]
    for i in range(n):
        r0, c0 = corners[int(y[i]) % len(corners)]
        rr = r0 + rng.integers(0, half - 1)
        cc = c0 + rng.integers(0, half - 1)
        imgs[i, 0, rr : rr + 2, cc : cc + 2] += 0.75
    return np.clip(imgs, 0, 1), y.astype(np.int64)


def save_csv(path, x: np.ndarray, y: np.ndarray) -> None:
    cols = ",".join(f"x{i}" for i in range(x.shape[1]))
    header = f"{cols},label"
    data = np.column_stack([x, y.astype(np.float64)])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")


def load_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise FormatError("csv needs at least one feature column and a label column")
    return data[:, :-1], data[:, -1].astype(np.int64)


def write_arim(path, images: np.ndarray, labels: np.ndarray) -> None:
    """magic ARIM, u32 count, u32 H, u32 W, u8 pixels, u8 labels."""
    images = np.asarray(images)
    if images.ndim == 4:
        if images.shape[1] != 1:
            raise ValueError("ARIM stores single-channel images")
        images = images[:, 0]
    n, h, w = images.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError("one label per image required")
    pixels = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(ARIM_MAGIC)
        fh.write(struct.pack("<III", n, h, w))
        fh.write(pixels.tobytes())
        fh.write(labels.astype(np.uint8).tobytes())


def read_arim(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != ARIM_MAGIC:
        raise FormatError("not an ARIM file (bad magic)")
    n, h, w = struct.unpack_from("<III", buf, 4)
    need = 16 + n * h * w + n
    if len(buf) != need:
        raise FormatError(f"ARIM file has {len(buf)} bytes, expected {need}")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=n * h * w, offset=16)
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=16 + n * h * w)
    images = pixels.reshape(n, 1, h, w).astype(np.float64) / 255.0
    return images, labels.astype(np.int64)
