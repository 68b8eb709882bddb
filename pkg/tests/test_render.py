import struct
import zlib

import numpy as np

from woodycover.render import colorize, render_map, render_scatter, write_png


def read_png(path):
    """Minimal decoder for 8-bit grey/RGB, filter-0, non-interlaced PNGs."""
    data = path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    pos, chunks = 8, []
    while pos < len(data):
        n, = struct.unpack(">I", data[pos:pos + 4])
        kind, body = data[pos + 4:pos + 8], data[pos + 8:pos + 8 + n]
        crc, = struct.unpack(">I", data[pos + 8 + n:pos + 12 + n])
        assert zlib.crc32(kind + body) == crc
        chunks.append((kind, body))
        pos += 12 + n
    w, h, depth, ctype = struct.unpack(">IIBB", chunks[0][1][:10])
    raw = zlib.decompress(b"".join(b for k, b in chunks if k == b"IDAT"))
    ch = 3 if ctype == 2 else 1
    rows = np.frombuffer(raw, np.uint8).reshape(h, 1 + w * ch)
    assert np.all(rows[:, 0] == 0)
    return rows[:, 1:].reshape(h, w, ch).squeeze()


def test_png_roundtrip(tmp_path, rng):
    rgb = rng.integers(0, 256, (7, 5, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", rgb)
    assert np.array_equal(read_png(tmp_path / "a.png"), rgb)
    grey = rng.integers(0, 256, (3, 9), dtype=np.uint8)
    write_png(tmp_path / "b.png", grey)
    assert np.array_equal(read_png(tmp_path / "b.png"), grey)


def test_colorize_nodata_and_ends():
    vals = np.array([[0.0, 1.0, 0.5]])
    valid = np.array([[True, True, False]])
    rgb = colorize(vals, valid)
    assert rgb.shape == (1, 3, 3) and rgb.dtype == np.uint8
    assert rgb[0, 2].tolist() == [255, 255, 255]
    assert rgb[0, 0].tolist() != rgb[0, 1].tolist()


def test_render_map_and_scatter(tmp_path, rng):
    render_map(tmp_path / "m.png", rng.random((4, 6)), scale=3)
    assert read_png(tmp_path / "m.png").shape == (12, 18, 3)
    y = rng.random(30)
    render_scatter(tmp_path / "s.png", y, y + rng.normal(0, 0.05, 30), size=100, fit=(1.0, 0.0))
    img = read_png(tmp_path / "s.png")
    assert img.shape[:2] == (100, 100) and img.min() < 128
