"""Minimal PNG output for cover maps and observed/predicted scatter plots."""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

# a few anchor colours of a perceptually ordered ramp (dark blue -> yellow)
_RAMP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=np.float64)


def write_png(path, image: np.ndarray) -> None:
    """Write an ``(h, w)`` grey or ``(h, w, 3)`` RGB uint8 array as PNG."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError("image must be uint8")
    if img.ndim == 2:
        color_type, channels = 0, 1
    elif img.ndim == 3 and img.shape[2] == 3:
        color_type, channels = 2, 3
    else:
        raise ValueError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    raw = np.concatenate([np.zeros((h, 1), dtype=np.uint8), img.reshape(h, w * channels)], axis=1)

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    png = b"\x89PNG\r\n\x1a\n"
    png += chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0))
    png += chunk(b"IDAT", zlib.compress(raw.tobytes(), 9))
    png += chunk(b"IEND", b"")
    Path(path).write_bytes(png)


def colorize(values: np.ndarray, valid: np.ndarray | None = None, vmin=0.0, vmax=1.0,
             nodata_rgb=(255, 255, 255)) -> np.ndarray:
    v = np.clip((np.nan_to_num(values, nan=vmin) - vmin) / max(vmax - vmin, 1e-300), 0, 1)
    pos = v * (len(_RAMP) - 1)
    lo = np.minimum(pos.astype(int), len(_RAMP) - 2)
    t = (pos - lo)[..., None]
    rgb = _RAMP[lo] * (1 - t) + _RAMP[lo + 1] * t
    rgb = np.round(rgb).astype(np.uint8)
    if valid is not None:
        rgb[~np.asarray(valid, dtype=bool)] = nodata_rgb
    return rgb


def render_map(path, values, valid=None, scale: int = 8) -> None:
    """Cover map with each cell drawn as a ``scale`` x ``scale`` block."""
    rgb = colorize(values, valid)
    write_png(path, np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1))


def _line(img, x0, y0, x1, y1, color):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.round(np.linspace(x0, x1, n)).astype(int)
    ys = np.round(np.linspace(y0, y1, n)).astype(int)
    ok = (xs >= 0) & (xs < img.shape[1]) & (ys >= 0) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = color


def render_scatter(path, observed, predicted, size: int = 320, limit: float | None = None,
                   fit: tuple[float, float] | None = None) -> None:
    """Observed (x) against predicted (y) with the 1:1 line and optional fit line."""
    obs = np.asarray(observed, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.float64)
    if limit is None:
        limit = max(float(np.max(obs, initial=0)), float(np.max(pred, initial=0)), 1e-6) * 1.05
    pad = 16
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    span = size - 2 * pad

    def px(v):
        return pad + v / limit * span

    _line(img, pad, size - pad, size - pad, size - pad, (0, 0, 0))
    _line(img, pad, pad, pad, size - pad, (0, 0, 0))
    _line(img, px(0), size - px(0), px(limit), size - px(limit), (150, 150, 150))
    if fit is not None:
        slope, intercept = fit
        _line(img, px(0), size - px(intercept), px(limit), size - px(intercept + slope * limit), (200, 30, 30))
    xs = np.round(px(obs)).astype(int)
    ys = np.round(size - px(pred)).astype(int)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            x, y = xs + dx, ys + dy
            ok = (x >= 0) & (x < size) & (y >= 0) & (y < size)
            img[y[ok], x[ok]] = (33, 100, 160)
    write_png(path, img)
