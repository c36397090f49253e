"""On-disk formats: atomic writes, images, manifests, checkpoints, meshes, CSV.

Every writer goes through :func:`atomic_write_bytes` (temp file in the target
directory, fsync, ``os.replace``), so readers never observe a partial file.
Byte layouts are described in FORMATS.md.
"""
from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import ParamStore
from .field import ModelConfig, SdfModel
from .geometry import Camera, TriangleMesh

FORMAT_VERSION = 1
CHECKPOINT_KIND = "trisdf-checkpoint"


class InputError(ValueError):
    """Bad or missing user input (maps to exit code 2)."""


# --- atomic writes ----------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path, what: str = "file") -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from exc


# --- images -----------------------------------------------------------------

def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, rgb: np.ndarray) -> Path:
    """8-bit RGB PNG from a float (H, W, 3) image in [0, 1]."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(rgb), mode="RGB").save(buf, format="PNG")
    return atomic_write_bytes(path, buf.getvalue())


def read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"image not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_depth_pgm(path, depth: np.ndarray) -> Path:
    """Plain (P2) 16-bit PGM; the scale is stored in a ``# depth_max`` comment."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)) or depth.min() < 0:
        raise ValueError("depth must be finite and non-negative")
    dmax = float(depth.max())
    q = np.zeros(depth.shape, dtype=np.int64) if dmax == 0 else \
        np.round(depth / dmax * 65535).astype(np.int64)
    h, w = depth.shape
    lines = ["P2", f"# depth_max {dmax!r}", f"{w} {h}", "65535"]
    lines += [" ".join(map(str, row)) for row in q]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_depth_pgm(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "P2":
        raise InputError(f"{path}: not a plain PGM")
    dmax = None
    body = []
    for ln in lines[1:]:
        if ln.startswith("# depth_max"):
            dmax = float(ln.split()[2])
        elif not ln.startswith("#"):
            body.extend(ln.split())
    w, h, maxval = int(body[0]), int(body[1]), int(body[2])
    q = np.array(body[3:], dtype=np.float64).reshape(h, w)
    return q / maxval * (dmax if dmax is not None else 1.0)


# --- dataset manifest -------------------------------------------------------

def camera_to_dict(cam: Camera) -> dict:
    return {"intrinsics": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                           "width": cam.width, "height": cam.height},
            "c2w": np.asarray(cam.pose).tolist()}


def camera_from_dict(d: dict) -> Camera:
    try:
        k = d["intrinsics"]
        return Camera(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]),
                      int(k["width"]), int(k["height"]), np.array(d["c2w"], dtype=np.float64))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed camera entry: missing {exc}") from exc
    except ValueError as exc:
        raise InputError(f"invalid camera: {exc}") from exc


def write_manifest(path, files: list[str], cameras: list[Camera], image_dir: str = "images",
                   extra: dict | None = None) -> Path:
    doc = {"version": FORMAT_VERSION, "image_dir": image_dir,
           "views": [{"file": f, **camera_to_dict(c)} for f, c in zip(files, cameras)]}
    doc.update(extra or {})
    return write_json(path, doc)


def read_manifest(path) -> tuple[dict, list[Path], list[Camera]]:
    """Manifest document, absolute image paths, cameras.  Checks every file exists."""
    path = Path(path)
    doc = read_json(path, "manifest")
    if doc.get("version") != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    views = doc.get("views")
    if not isinstance(views, list) or not views:
        raise InputError(f"{path}: manifest lists no views")
    root = path.parent / doc.get("image_dir", ".")
    files, cams = [], []
    for v in views:
        f = root / v["file"]
        if not f.is_file():
            raise InputError(f"{path}: referenced image missing: {f}")
        files.append(f)
        cams.append(camera_from_dict(v))
    return doc, files, cams


def load_dataset(manifest_path):
    from .fitting import MultiViewDataset

    _, files, cams = read_manifest(manifest_path)
    try:
        return MultiViewDataset([read_png(f) for f in files], cams)
    except ValueError as exc:
        raise InputError(f"{manifest_path}: {exc}") from exc


# --- checkpoints ------------------------------------------------------------

def encode_tensor(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def _content_hash(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "sha256"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()


def checkpoint_doc(model: SdfModel, iteration: int = 0, extra: dict | None = None) -> dict:
    doc = {
        "kind": CHECKPOINT_KIND,
        "version": FORMAT_VERSION,
        "model": model.config.to_dict(),
        "beta_learnable": bool(model.beta_learnable),
        "beta": model.current_beta(),
        "iteration": int(iteration),
        "tensors": {n: encode_tensor(model.store.params[n]) for n in model.store.names()},
    }
    doc.update(extra or {})
    doc["sha256"] = _content_hash(doc)
    return doc


def save_checkpoint(path, model: SdfModel, iteration: int = 0, extra: dict | None = None) -> str:
    doc = checkpoint_doc(model, iteration, extra)
    write_json(path, doc)
    return doc["sha256"]


def load_checkpoint(path) -> tuple[SdfModel, dict]:
    doc = read_json(path, "checkpoint")
    if doc.get("kind") != CHECKPOINT_KIND or doc.get("version") != FORMAT_VERSION:
        raise InputError(f"{path}: not a version-{FORMAT_VERSION} checkpoint")
    if doc.get("sha256") != _content_hash(doc):
        raise InputError(f"{path}: checkpoint hash mismatch (file corrupted or edited)")
    store = ParamStore()
    for name, t in doc["tensors"].items():
        store.add(name, decode_tensor(t))
    model = SdfModel(ModelConfig(**doc["model"]), store)
    model.beta_learnable = bool(doc["beta_learnable"])
    return model, doc


# --- loss curves ------------------------------------------------------------

def write_curves_csv(path, rows: list[dict], columns) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c])) for c in columns])
    return atomic_write_text(path, buf.getvalue())


def read_curves_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = [{k: (int(v) if k == "iter" else float(v)) for k, v in zip(header, r)} for r in rd]
    return header, rows


# --- meshes -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def mesh_to_obj(mesh: TriangleMesh) -> str:
    out = io.StringIO()
    for v in mesh.vertices:
        out.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
    for f in mesh.faces:
        out.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    return out.getvalue()


def mesh_to_ply(mesh: TriangleMesh) -> str:
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {len(mesh.vertices)}\n")
    out.write("property double x\nproperty double y\nproperty double z\n")
    out.write(f"element face {len(mesh.faces)}\n")
    out.write("property list uchar int vertex_indices\nend_header\n")
    for v in mesh.vertices:
        out.write(f"{_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
    for f in mesh.faces:
        out.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    return out.getvalue()


def _mesh_kind(path) -> str:
    ext = Path(path).suffix.lower()
    if ext not in (".obj", ".ply"):
        raise InputError(f"unsupported mesh extension {ext!r} (use .obj or .ply)")
    return ext


def write_mesh(path, mesh: TriangleMesh) -> Path:
    text = mesh_to_obj(mesh) if _mesh_kind(path) == ".obj" else mesh_to_ply(mesh)
    return atomic_write_text(path, text)


def _parse_obj(text: str) -> TriangleMesh:
    verts, faces = [], []
    for ln in text.splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def _parse_ply(text: str) -> TriangleMesh:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InputError("not a PLY file")
    if "format ascii" not in lines[1]:
        raise InputError("only ASCII PLY is supported")
    counts, i = {}, 2
    while lines[i].strip() != "end_header":
        p = lines[i].split()
        if p[0] == "element":
            counts[p[1]] = int(p[2])
        i += 1
    i += 1
    nv, nf = counts.get("vertex", 0), counts.get("face", 0)
    verts = [[float(x) for x in lines[i + k].split()[:3]] for k in range(nv)]
    faces = []
    for k in range(nf):
        p = [int(x) for x in lines[i + nv + k].split()]
        idx = p[1:1 + p[0]]
        for j in range(1, len(idx) - 1):
            faces.append([idx[0], idx[j], idx[j + 1]])
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    path = Path(path)
    kind = _mesh_kind(path)
    if not path.is_file():
        raise InputError(f"mesh not found: {path}")
    text = path.read_text()
    try:
        return _parse_obj(text) if kind == ".obj" else _parse_ply(text)
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: malformed mesh: {exc}") from exc
