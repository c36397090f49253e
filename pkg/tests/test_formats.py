import json
import os

import numpy as np
import pytest

from trisdf import formats as fm
from trisdf.field import AnalyticSdf, SdfModel
from trisdf.geometry import TriangleMesh
from trisdf.meshing import extract_mesh
from trisdf.scenes import OrbitSpec, orbit_cameras


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "sub" / "a.txt"
    fm.atomic_write_text(p, "one")
    fm.atomic_write_text(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["a.txt"]


def test_atomic_write_failure_keeps_old_content(tmp_path, monkeypatch):
    p = tmp_path / "a.txt"
    fm.atomic_write_text(p, "old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        fm.atomic_write_text(p, "new")
    assert p.read_text() == "old"
    assert os.listdir(tmp_path) == ["a.txt"]


def test_read_json_errors_are_input_errors(tmp_path):
    with pytest.raises(fm.InputError, match="not found"):
        fm.read_json(tmp_path / "nope.json", "config")
    (tmp_path / "bad.json").write_text("{oops")
    with pytest.raises(fm.InputError):
        fm.read_json(tmp_path / "bad.json")


def test_png_round_trip(tmp_path):
    rgb = np.random.default_rng(0).random((5, 7, 3))
    fm.write_png(tmp_path / "x.png", rgb)
    back = fm.read_png(tmp_path / "x.png")
    assert back.shape == (5, 7, 3)
    assert np.abs(back - rgb).max() <= 0.5 / 255 + 1e-12


def test_depth_pgm_round_trip(tmp_path):
    d = np.random.default_rng(1).uniform(0, 4, size=(6, 9))
    fm.write_depth_pgm(tmp_path / "d.pgm", d)
    back = fm.read_depth_pgm(tmp_path / "d.pgm")
    assert np.abs(back - d).max() <= d.max() / 65535
    fm.write_depth_pgm(tmp_path / "z.pgm", np.zeros((2, 2)))
    assert np.all(fm.read_depth_pgm(tmp_path / "z.pgm") == 0)
    with pytest.raises(ValueError):
        fm.write_depth_pgm(tmp_path / "n.pgm", -np.ones((2, 2)))


def same_camera(a, b):
    return (a.fx, a.fy, a.cx, a.cy, a.width, a.height) == (b.fx, b.fy, b.cx, b.cy, b.width, b.height) \
        and np.array_equal(a.pose, b.pose)


def test_camera_and_manifest_round_trip(tmp_path):
    cams = orbit_cameras(OrbitSpec(count=3), 8)
    for c in cams:
        assert same_camera(fm.camera_from_dict(json.loads(json.dumps(fm.camera_to_dict(c)))), c)
    (tmp_path / "images").mkdir()
    files = []
    for k in range(3):
        files.append(f"v{k}.png")
        fm.write_png(tmp_path / "images" / files[-1], np.full((8, 8, 3), k / 3))
    fm.write_manifest(tmp_path / "manifest.json", files, cams, extra={"seed": 3})
    doc, paths, back = fm.read_manifest(tmp_path / "manifest.json")
    assert doc["seed"] == 3 and all(map(same_camera, back, cams)) and [p.name for p in paths] == files
    ds = fm.load_dataset(tmp_path / "manifest.json")
    assert len(ds.images) == 3 and ds.images[0].shape == (8, 8, 3)
    os.remove(tmp_path / "images" / "v1.png")
    with pytest.raises(fm.InputError):
        fm.read_manifest(tmp_path / "manifest.json")


def test_tensor_encoding_is_lossless():
    a = np.random.default_rng(2).normal(size=(3, 4, 5)) * 1e-300
    assert np.array_equal(fm.decode_tensor(json.loads(json.dumps(fm.encode_tensor(a)))), a)


def test_checkpoint_round_trip_and_tamper_detection(tmp_path, small_model):
    digest = fm.save_checkpoint(tmp_path / "c.json", small_model, 7, {"seed": 11})
    model, doc = fm.load_checkpoint(tmp_path / "c.json")
    assert doc["sha256"] == digest and doc["iteration"] == 7 and doc["seed"] == 11
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    assert np.array_equal(model.sdf_values(pts), small_model.sdf_values(pts))
    assert fm.save_checkpoint(tmp_path / "d.json", small_model, 7, {"seed": 11}) == digest
    doc["iteration"] = 8
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(fm.InputError, match="hash"):
        fm.load_checkpoint(tmp_path / "c.json")


def test_curves_csv_round_trip(tmp_path):
    rows = [{"iter": 0, "L_photo": 0.1, "L_s": float("nan"), "beta": 0.1, "lambda": 0.0},
            {"iter": 50, "L_photo": 1 / 3, "L_s": 0.25, "beta": 0.099, "lambda": 0.1}]
    cols = ("iter", "L_photo", "L_s", "beta", "lambda")
    fm.write_curves_csv(tmp_path / "l.csv", rows, cols)
    header, back = fm.read_curves_csv(tmp_path / "l.csv")
    assert tuple(header) == cols
    np.testing.assert_equal(back, rows)


@pytest.mark.parametrize("ext", [".obj", ".ply"])
def test_mesh_round_trip(tmp_path, ext):
    m = extract_mesh(AnalyticSdf.sphere(0.5), 12)
    fm.write_mesh(tmp_path / f"m{ext}", m)
    back = fm.read_mesh(tmp_path / f"m{ext}")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)


def test_empty_mesh_and_bad_extension(tmp_path):
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    fm.write_mesh(tmp_path / "e.obj", empty)
    assert fm.read_mesh(tmp_path / "e.obj").is_empty
    with pytest.raises(fm.InputError):
        fm.write_mesh(tmp_path / "m.stl", empty)


def test_obj_quads_are_fan_triangulated(tmp_path):
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n")
    m = fm.read_mesh(tmp_path / "q.obj")
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]
