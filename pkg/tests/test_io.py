"""Text formats and configuration files."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvedraw import io
from curvedraw.config import PipelineConfig
from curvedraw.curves import Curve2D, Curve3D
from curvedraw.geometry import Camera, look_at_camera
from curvedraw.synth import SceneSpec, Segment, generate_scene

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_cameras_round_trip(tmp_path):
    cams = {v: look_at_camera([5 * np.cos(v), 5 * np.sin(v), 1.0], [0, 0, 0], 700.0, 800, 600, view_id=v) for v in (0, 3, 7)}
    io.write_cameras(tmp_path / "cams.txt", cams)
    back = io.read_cameras(tmp_path / "cams.txt")
    assert sorted(back) == [0, 3, 7]
    for v in cams:
        assert np.array_equal(back[v].projection, cams[v].projection)


def test_camera_directory_and_bare_matrix(tmp_path):
    P = np.hstack([np.eye(3), [[0.0], [0.0], [4.0]]])
    for v in (2, 5):
        (tmp_path / f"cam_{v}.txt").write_text("\n".join(" ".join(str(float(x)) for x in r) for r in P))
    cams = io.read_cameras(tmp_path)
    assert sorted(cams) == [2, 5]
    with pytest.raises(ValueError):
        io.parse_cameras("1 2 3 4\n")
    with pytest.raises(ValueError):
        io.parse_cameras("# view 0\n1 2 3\n")
    with pytest.raises(FileNotFoundError):
        io.read_cameras(tmp_path / "empty_dir_missing")


def test_curves2d_round_trip_of_a_scene(tmp_path):
    scene = generate_scene(SceneSpec(curves=[Segment((0, 0, 0), (1, 0.3, 0.1))], noise=0.5, seed=3))
    io.write_curves2d(tmp_path / "c.txt", scene.curves, scene.sizes)
    curves, sizes = io.read_curves2d(tmp_path / "c.txt")
    assert sizes == {v: tuple(map(float, s)) for v, s in scene.sizes.items()}
    for v, cs in scene.curves.items():
        for a, b in zip(cs, curves[v]):
            assert a.curve_id == b.curve_id
            assert np.array_equal(a.points, b.points)
            assert np.array_equal(a.orientations, b.orientations)
            assert np.array_equal(a.edgel_ids, b.edgel_ids)


def test_curves2d_rejects_bad_input():
    with pytest.raises(ValueError):
        io.parse_curves2d("curve 0 1\n0 0 0\n")
    with pytest.raises(ValueError):
        io.parse_curves2d("view 0 10 10\nview 0 10 10\n")
    with pytest.raises(ValueError):
        io.parse_curves2d("view 0 10 10\nline 1\n")


@settings(max_examples=50, deadline=None)
@given(
    start=st.tuples(finite, finite, finite),
    steps=st.lists(st.tuples(*[st.floats(0.001, 10)] * 3), min_size=1, max_size=7),
    rel=st.floats(0, 1),
    views=st.lists(st.integers(0, 20), max_size=4),
)
def test_curves3d_round_trip_is_lossless(start, steps, rel, views):
    pts = np.cumsum(np.vstack([start, steps]), axis=0)
    n = len(pts)
    support = [{v: frozenset({s, s + v}) for v in views} for s in range(n)]
    c = Curve3D(pts, support, np.full(n, rel), 4, 9)
    (back,) = io.parse_curves3d(io.format_curves3d([c]))
    assert np.array_equal(back.points, c.points)
    assert np.array_equal(back.reliability, c.reliability)
    assert back.support == c.support
    assert (back.curve_id, back.primary_view) == (4, 9)


def test_curves3d_rejects_garbage():
    with pytest.raises(ValueError):
        io.parse_curves3d("points 1\n")


def test_polylines_wrap_without_support():
    (c,) = io.polylines_to_curves3d([np.eye(3)])
    assert c.support == [{}, {}, {}] and c.primary_view == -1


def test_config_round_trip_and_validation(tmp_path):
    cfg = PipelineConfig()
    cfg.verification.n_min_views = 5
    cfg.drawing.alpha = 0.5
    cfg.input.cameras = "cams.txt"
    back = PipelineConfig.from_ini(cfg.to_ini())
    assert back == cfg
    path = tmp_path / "a.cfg"
    path.write_text("[input]\ncameras = cams.txt\n[run]\nthreads = 4\n")
    loaded = PipelineConfig.load(path)
    assert loaded.input.cameras == str(tmp_path / "cams.txt")
    assert loaded.run.threads == 4
    # thread count never changes results, so it is left out of the digest
    assert loaded.digest() == PipelineConfig.from_ini("[input]\ncameras = " + str(tmp_path / "cams.txt")).digest()
    with pytest.raises(ValueError):
        PipelineConfig.from_ini("[bogus]\nx = 1\n")
    with pytest.raises(ValueError):
        PipelineConfig.from_ini("[run]\nspeed = 1\n")


def test_curve2d_ids_follow_file_order():
    text = "view 1 100 100\ncurve 7 2\n0 0 0\n1 0 0\ncurve 3 3\n0 1 0\n1 1 0\n2 1 0\n"
    curves, _ = io.parse_curves2d(text)
    a, b = curves[1]
    assert isinstance(a, Curve2D) and a.edgel_ids.tolist() == [0, 1] and b.edgel_ids.tolist() == [2, 3, 4]
    assert (a.curve_id, b.curve_id) == (7, 3)


def test_camera_class_used_for_parsed_matrices():
    (cam,) = io.parse_cameras("# view 4\n1 0 0 0\n0 1 0 0\n0 0 1 5\n").values()
    assert isinstance(cam, Camera) and cam.view_id == 4
