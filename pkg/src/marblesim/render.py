"""Deterministic rasterization of marble traces to binary PPM (and a small
SVG subset): time on the horizontal axis, space vertical, particle
trajectories as 1-px black polylines, fragmentation events as red vertical
segments, bubbles flood-filled with palette colors keyed by a hash of
(bubble index, palette seed).  Byte-identical output across runs is part
of the contract; no timestamps, no platform-dependent state.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

__all__ = ["Raster", "render_marble", "write_ppm", "read_ppm", "write_svg"]

BACKGROUND = (255, 255, 255)
PATH_COLOR = (0, 0, 0)
EVENT_COLOR = (220, 30, 30)


@dataclass
class Raster:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8, row 0 at the top

    @classmethod
    def blank(cls, width: int, height: int, color=BACKGROUND) -> "Raster":
        if width < 1 or height < 1:
            raise ValueError("raster must have positive size")
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = color
        return cls(width, height, px)


def _mix(a: int, b: int) -> int:
    """Deterministic 64-bit integer hash mix (splitmix64 finalizer)."""
    z = (a * 0x9E3779B97F4A7C15 + b) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def palette_color(key: int, palette_seed: int) -> tuple[int, int, int]:
    """Reproducible distinct-ish hue for a bubble key."""
    h = _mix(key, palette_seed)
    hue = (h & 0xFFFF) / 0x10000
    sat = 0.35 + 0.25 * ((h >> 16) & 0xFF) / 255.0
    val = 0.85 + 0.12 * ((h >> 24) & 0xFF) / 255.0
    r, g, b = colorsys.hsv_to_rgb(hue, sat, min(val, 1.0))
    return int(r * 255), int(g * 255), int(b * 255)


class _View:
    def __init__(self, viewport, width, height):
        self.t0, self.t1, self.x0, self.x1 = viewport
        if not (self.t1 > self.t0 and self.x1 > self.x0):
            raise ValueError("degenerate viewport")
        self.w, self.h = width, height

    def col(self, t: float) -> int:
        u = (t - self.t0) / (self.t1 - self.t0)
        return min(max(int(u * (self.w - 1) + 0.5), 0), self.w - 1)

    def row(self, x: float) -> int:
        u = (x - self.x0) / (self.x1 - self.x0)
        return min(max(int((1.0 - u) * (self.h - 1) + 0.5), 0), self.h - 1)


def render_marble(trace, bubbles=None, viewport=None, size=(800, 500),
                  palette_seed: int = 0) -> Raster:
    """Rasterize recorded fronts (requires ``record_fronts=True``).

    Draw order: bubble fills, then red fragmentation marks, then black
    particle paths (paths override fills).
    """
    if not trace.fronts:
        raise ValueError("trace carries no fronts; rerun with record_fronts=True")
    if viewport is None:
        x_min, x_max = trace.config["window"]
        viewport = (trace.grid.t0, trace.grid.t1, x_min, x_max)
    else:
        x_min, x_max = trace.config["window"]
        if not (trace.grid.t0 <= viewport[0] and viewport[1] <= trace.grid.t1):
            raise ValueError("viewport time range outside the trace")
    view = _View(viewport, *size)
    ras = Raster.blank(*size)
    px = ras.pixels

    if bubbles is not None:
        for idx, b in enumerate(bubbles.bubbles):
            color = palette_color(idx, palette_seed)
            for t, lo, up in zip(b.times, b.lower, b.upper):
                c = view.col(t)
                r0, r1 = view.row(up), view.row(lo)
                px[r0 : r1 + 1, c] = color

    for ev in trace.events:
        c = view.col(ev.time)
        r0, r1 = view.row(ev.upper), view.row(ev.lower)
        px[r0 : r1 + 1, c] = EVENT_COLOR

    prev = trace.fronts[0]
    for front in trace.fronts[1:]:
        c0, c1 = view.col(prev.time), view.col(front.time)
        pos_prev = dict(zip(prev.ids.tolist(), prev.positions.tolist()))
        for pid, x1 in zip(front.ids.tolist(), front.positions.tolist()):
            x0 = pos_prev.get(pid)
            if x0 is None:
                x0 = x1
            _draw_segment(px, view, c0, x0, c1, x1)
        prev = front
    return ras


def _draw_segment(px, view, c0, x0, c1, x1):
    if c1 <= c0:
        px[view.row(x1), c1] = PATH_COLOR
        return
    for c in range(c0, c1 + 1):
        x = x0 + (x1 - x0) * (c - c0) / (c1 - c0)
        px[view.row(x), c] = PATH_COLOR


def write_ppm(raster: Raster, path) -> None:
    """Binary PPM (P6), bit-exact: header then row-major RGB bytes."""
    if raster.width < 1 or raster.height < 1:
        raise ValueError("raster must have positive size")
    if raster.pixels.shape != (raster.height, raster.width, 3):
        raise ValueError("pixel buffer shape mismatch")
    header = f"P6\n{raster.width} {raster.height}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(raster.pixels.astype(np.uint8).tobytes())
    except OSError as exc:
        raise OSError(f"writing PPM to {path!s}: {exc}") from exc


def read_ppm(path) -> Raster:
    """Inverse of :func:`write_ppm` (binary P6, maxval 255 only)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    idx = 0
    while len(fields) < 4:
        while idx < len(data) and data[idx : idx + 1].isspace():
            idx += 1
        if data[idx : idx + 1] == b"#":
            while idx < len(data) and data[idx : idx + 1] != b"\n":
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx : idx + 1].isspace():
            idx += 1
        fields.append(data[start:idx])
    if fields[0] != b"P6" or fields[3] != b"255":
        raise ValueError("only binary P6 with maxval 255 is supported")
    width, height = int(fields[1]), int(fields[2])
    idx += 1
    raw = np.frombuffer(data[idx : idx + width * height * 3], dtype=np.uint8)
    return Raster(width, height, raw.reshape(height, width, 3).copy())


def write_svg(trace, path, viewport=None, size=(800, 500)) -> None:
    """SVG 1.1 subset (polyline + rect) of paths and fragmentation marks."""
    if not trace.fronts:
        raise ValueError("trace carries no fronts; rerun with record_fronts=True")
    if viewport is None:
        x_min, x_max = trace.config["window"]
        viewport = (trace.grid.t0, trace.grid.t1, x_min, x_max)
    view = _View(viewport, *size)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size[0]}" height="{size[1]}" '
        f'viewBox="0 0 {size[0]} {size[1]}" version="1.1">',
        f'<rect x="0" y="0" width="{size[0]}" height="{size[1]}" fill="white"/>',
    ]
    for ev in trace.events:
        c = view.col(ev.time)
        r0, r1 = view.row(ev.upper), view.row(ev.lower)
        lines.append(
            f'<rect x="{c}" y="{r0}" width="1" height="{max(r1 - r0, 1)}" fill="rgb(220,30,30)"/>'
        )
    tracks: dict[int, list] = {}
    for front in trace.fronts:
        c = view.col(front.time)
        for pid, x in zip(front.ids.tolist(), front.positions.tolist()):
            tracks.setdefault(pid, []).append((c, view.row(x)))
    for pid in sorted(tracks):
        pts = " ".join(f"{c},{r}" for c, r in tracks[pid])
        lines.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
