import numpy as np
import pytest
from conftest import random_params
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadface.pdm import project
from dyadface.sketch import (
    RasterFrame, Topology, export, ibug68, line_pixels, mean_shape_frame, read_pgm, render, render_sequence,
    write_pgm,
)

# frozen from the first run of the renderer on the reference model
GOLDEN_MEAN_FRAME = "1c8fd40af724e3b1814a667dac5f49d1fd10a8687500d29814f3855f8585c986"

coord = st.integers(-40, 80)


def one_edge(p, q):
    pts = np.zeros((68, 2))
    pts[0], pts[1] = p, q
    return pts, Topology(((0, 1),))


def neighbour_counts(grid):
    padded = np.pad(grid.astype(int), 1)
    total = sum(np.roll(np.roll(padded, dy, 0), dx, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
    return (total - padded)[1:-1, 1:-1]


def test_topology_is_ibug68():
    topo = ibug68()
    assert len(topo.edges) == 16 + 4 + 4 + 3 + 4 + 6 + 6 + 12 + 8
    assert (16, 17) not in topo.edges and (41, 36) in topo.edges and (67, 60) in topo.edges


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology(((0, 68),))
    with pytest.raises(ValueError):
        Topology(((1, 2), (2, 1)))


def test_horizontal_edge_lights_ten_pixels():
    pts, topo = one_edge((0, 0), (9, 0))
    frame = render(pts, topo, 32, 32)
    assert frame.pixels.sum() == 10
    assert np.all(frame.pixels[0, :10] == 1)


def test_offscreen_landmarks_render_nothing():
    pts = np.full((68, 2), -500.0) + np.random.default_rng(0).random((68, 2))
    assert render(pts, width=64, height=64).pixels.sum() == 0


def test_mean_shape_golden_hash(pdm):
    frame = mean_shape_frame(pdm)
    assert (frame.width, frame.height) == (256, 256)
    assert frame.digest() == GOLDEN_MEAN_FRAME


def test_render_is_deterministic(pdm):
    pts = project(pdm, random_params(pdm, np.random.default_rng(1)))
    assert np.array_equal(render(pts).pixels, render(pts).pixels)


def test_random_segments_are_one_pixel_wide():
    rng = np.random.default_rng(2)
    for _ in range(100):
        p, q = rng.integers(0, 64, 2), rng.integers(0, 64, 2)
        frame = render(*one_edge(p, q), 64, 64)
        on = frame.pixels == 1
        assert np.all(neighbour_counts(frame.pixels)[on] <= 2)
        # one pixel per major-axis step
        assert on.sum() == max(abs(q - p)) + 1


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord)
def test_line_is_symmetric_in_its_endpoints(x0, y0, x1, y1):
    a = set(zip(*line_pixels(x0, y0, x1, y1, 40, 40)))
    b = set(zip(*line_pixels(x1, y1, x0, y0, 40, 40)))
    assert a == b


@settings(max_examples=200, deadline=None)
@given(coord, coord, coord, coord)
def test_clipping_matches_the_unclipped_line(x0, y0, x1, y1):
    clipped = set(zip(*line_pixels(x0, y0, x1, y1, 40, 40)))
    # shift into a big canvas so nothing is cut, then keep the visible part
    shifted = set(zip(*line_pixels(x0 + 100, y0 + 100, x1 + 100, y1 + 100, 10_000, 10_000)))
    expected = {(x - 100, y - 100) for x, y in shifted if 100 <= x < 140 and 100 <= y < 140}
    assert clipped == expected


def test_horizontal_mirror(pdm):
    rng = np.random.default_rng(3)
    for _ in range(20):
        pts = project(pdm, random_params(pdm, rng))
        mirrored = pts.copy()
        mirrored[:, 0] = 255 - pts[:, 0]
        assert np.array_equal(render(mirrored).pixels, render(pts).pixels[:, ::-1])


def test_render_sequence(pdm):
    assert render_sequence(np.zeros((0, pdm.dim)), pdm) == []
    v = random_params(pdm, np.random.default_rng(4))
    w = random_params(pdm, np.random.default_rng(5))
    frames = render_sequence(np.stack([v, w, v]), pdm)
    assert len(frames) == 3
    assert np.array_equal(frames[0].pixels, frames[2].pixels)
    assert np.array_equal(frames[1].pixels, render_sequence(w[None], pdm)[0].pixels)


def test_render_rejects_empty_canvas():
    with pytest.raises(ValueError):
        render(np.zeros((68, 2)), width=0)


def test_pgm_bytes(tmp_path):
    pixels = np.zeros((2, 3), dtype=np.uint8)
    pixels[1, 2] = 1
    write_pgm(RasterFrame(3, 2, pixels), tmp_path / "f.pgm")
    assert (tmp_path / "f.pgm").read_bytes() == b"P5\n3 2\n255\n" + bytes([255] * 5 + [0])
    assert np.array_equal(read_pgm(tmp_path / "f.pgm").pixels, pixels)


def test_export_names_and_svg(pdm, tmp_path):
    params = np.stack([random_params(pdm, np.random.default_rng(s)) for s in range(3)])
    frames = render_sequence(params, pdm)
    landmarks = np.stack([project(pdm, v) for v in params])
    written = export(frames, tmp_path / "out", "both", landmarks)
    names = [p.name for p in written]
    assert names == ["frame_000000.pgm", "frame_000001.pgm", "frame_000002.pgm", "frames.svg"]
    svg = (tmp_path / "out" / "frames.svg").read_text()
    assert svg.count("<g id=") == 3 and 'version="1.1"' in svg
    assert np.array_equal(read_pgm(written[1]).pixels, frames[1].pixels)


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        export([], tmp_path, "png")
    with pytest.raises(ValueError):
        export([], tmp_path, "svg")
    (tmp_path / "file").write_text("x")
    with pytest.raises(OSError):
        export([], tmp_path / "file" / "sub")
