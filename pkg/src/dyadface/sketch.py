"""One-pixel line sketches of the 68 landmarks."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pdm import PDMModel, project
from .template import N_LANDMARKS

OPEN_POLYLINES = [range(0, 17), range(17, 22), range(22, 27), range(27, 31), range(31, 36)]
CLOSED_LOOPS = [range(36, 42), range(42, 48), range(48, 60), range(60, 68)]


@dataclass(frozen=True)
class Topology:
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < N_LANDMARKS and 0 <= j < N_LANDMARKS):
                raise ValueError(f"edge ({i}, {j}) references a landmark outside [0, 67]")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)


def ibug68() -> Topology:
    edges = []
    for line in OPEN_POLYLINES:
        idx = list(line)
        edges += list(zip(idx[:-1], idx[1:]))
    for loop in CLOSED_LOOPS:
        idx = list(loop)
        edges += list(zip(idx, idx[1:] + idx[:1]))
    return Topology(tuple(edges))


@dataclass
class RasterFrame:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8, line = 1

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.width}x{self.height}:".encode())
        h.update(np.ascontiguousarray(self.pixels, dtype=np.uint8).tobytes())
        return h.hexdigest()


def _round_half_down(num, den):
    # ceil(num / den - 1/2) for den > 0, exact in integers
    return -((den - 2 * num) // (2 * den))


def _round_half_up(num, den):
    return (2 * num + den) // (2 * den)


def line_pixels(x0: int, y0: int, x1: int, y1: int, width: int, height: int):
    """Integer pixels of the segment, one per major-axis step, clipped to the canvas.

    This is Bresenham's line evaluated in closed form. Ties on x-major lines
    round toward smaller y; ties on y-major lines round toward the x of the
    upper endpoint. Both rules are unchanged by a horizontal mirror and by
    swapping the endpoints.
    """
    dx, dy = x1 - x0, y1 - y0
    if abs(dx) >= abs(dy):
        if x0 > x1:
            x0, y0, x1, y1, dx, dy = x1, y1, x0, y0, -dx, -dy
        xs = np.arange(max(x0, 0), min(x1, width - 1) + 1, dtype=np.int64)
        if dx == 0:
            ys = np.full(xs.shape, y0, dtype=np.int64)
        else:
            ys = _round_half_down(y0 * dx + (xs - x0) * dy, dx)
    else:
        if y0 > y1:
            x0, y0, x1, y1, dx, dy = x1, y1, x0, y0, -dx, -dy
        ys = np.arange(max(y0, 0), min(y1, height - 1) + 1, dtype=np.int64)
        num = x0 * dy + (ys - y0) * dx
        xs = _round_half_down(num, dy) if dx > 0 else _round_half_up(num, dy)
    keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    return xs[keep], ys[keep]


def _to_pixel(v: float) -> int:
    return int(np.floor(v + 0.5))


def render(landmarks, topo: Topology | None = None, width: int = 256, height: int = 256) -> RasterFrame:
    if width < 1 or height < 1:
        raise ValueError("canvas dimensions must be at least 1")
    topo = topo or ibug68()
    pts = np.asarray(landmarks, dtype=np.float64)
    grid = np.zeros((height, width), dtype=np.uint8)
    for i, j in topo.edges:
        if not (np.all(np.isfinite(pts[i])) and np.all(np.isfinite(pts[j]))):
            continue
        xi, yi = _to_pixel(pts[i, 0]), _to_pixel(pts[i, 1])
        xj, yj = _to_pixel(pts[j, 0]), _to_pixel(pts[j, 1])
        if max(xi, xj) < 0 or min(xi, xj) >= width or max(yi, yj) < 0 or min(yi, yj) >= height:
            continue
        xs, ys = line_pixels(xi, yi, xj, yj, width, height)
        grid[ys, xs] = 1
    return RasterFrame(width, height, grid)


def render_sequence(shapes, pdm: PDMModel, topo: Topology | None = None,
                    width: int = 256, height: int = 256) -> list[RasterFrame]:
    topo = topo or ibug68()
    return [render(project(pdm, v), topo, width, height) for v in np.asarray(shapes).reshape(-1, pdm.dim)]


def display_params(pdm: PDMModel, width: int = 256, height: int = 256) -> np.ndarray:
    """Neutral pose scaled and centered for viewing the mean face on a canvas."""
    vec = np.zeros(pdm.dim)
    vec[0] = 96.0 * min(width, height) / 256.0
    vec[4:6] = width / 2.0, height / 2.0
    return vec


def mean_shape_frame(pdm: PDMModel, width: int = 256, height: int = 256) -> RasterFrame:
    return render(project(pdm, display_params(pdm, width, height)), ibug68(), width, height)


def write_pgm(frame: RasterFrame, path) -> None:
    data = np.where(frame.pixels > 0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{frame.width} {frame.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> RasterFrame:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    width, height = int(parts[1]), int(parts[2])
    body = parts[4][: width * height]
    data = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return RasterFrame(width, height, (data == 0).astype(np.uint8))


def _svg(landmarks_seq, topo: Topology, width: int, height: int) -> str:
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
    ]
    for k, pts in enumerate(landmarks_seq):
        out.append(f'  <g id="frame_{k:06d}" fill="none" stroke="black" stroke-width="1">')
        for i, j in topo.edges:
            out.append(
                f'    <polyline points="{pts[i, 0]:.3f},{pts[i, 1]:.3f} {pts[j, 0]:.3f},{pts[j, 1]:.3f}"/>'
            )
        out.append("  </g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export(frames, directory, fmt: str = "pgm", landmarks=None, topo: Topology | None = None) -> list[Path]:
    """Write ``frame_%06d.pgm`` files and/or a ``frames.svg`` overlay.

    The SVG needs the landmark sequence the frames were rendered from.
    """
    if fmt not in ("pgm", "svg", "both"):
        raise ValueError("fmt must be 'pgm', 'svg' or 'both'")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write frames to {directory}: {exc}") from exc
    written = []
    if fmt in ("pgm", "both"):
        for k, frame in enumerate(frames):
            path = directory / f"frame_{k:06d}.pgm"
            write_pgm(frame, path)
            written.append(path)
    if fmt in ("svg", "both"):
        if landmarks is None:
            raise ValueError("SVG export needs the landmark sequence")
        frames = list(frames)
        width = frames[0].width if frames else 256
        height = frames[0].height if frames else 256
        path = directory / "frames.svg"
        path.write_text(_svg(np.asarray(landmarks), topo or ibug68(), width, height), encoding="utf-8")
        written.append(path)
    return written
