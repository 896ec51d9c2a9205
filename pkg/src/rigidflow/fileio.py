"""On-disk formats: map archives, scene files and PPM images.

A map archive is a directory holding ``manifest.json`` and one raw
little-endian, row-major array file per map. Directories are written to a
temporary sibling first and renamed into place, so a failed write never
leaves a half-written archive behind.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, SymmetrySpec
from .synth import Floor, SceneObject, ScenePair

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}
INT_MAPS = {"obj_id", "labels"}


class ArchiveError(Exception):
    pass


@contextmanager
def atomic_dir(path):
    """Yield a temporary directory that replaces ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if path.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{path.name}.old.", dir=path.parent))
        os.replace(path, old / "x")
        os.replace(tmp, path)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, path)


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# map archives

def _as_hwc(name, a):
    a = np.asarray(a)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise ArchiveError(f"map {name!r} must be (H, W) or (H, W, C), got shape {a.shape}")
    return a


def write_maps(dirpath, maps: dict, meta: dict | None = None):
    """Write the raw files and manifest for ``maps`` into an existing directory."""
    dirpath = Path(dirpath)
    entries = []
    for name in maps:
        a = _as_hwc(name, maps[name])
        code = "i32" if name in INT_MAPS or np.issubdtype(a.dtype, np.integer) else "f32"
        data = np.ascontiguousarray(a, dtype=DTYPES[code])
        fname = f"{name}.bin"
        (dirpath / fname).write_bytes(data.tobytes(order="C"))
        entries.append({"name": name, "shape": list(data.shape), "dtype": code,
                        "byte_order": "LE", "file": fname})
    manifest = {"version": FORMAT_VERSION, "maps": entries}
    if meta:
        manifest["meta"] = meta
    (dirpath / MANIFEST).write_text(json.dumps(manifest, indent=2))


def save_maps(path, maps: dict, meta: dict | None = None):
    """Atomically write an archive. Floats are stored as float32, integers as int32."""
    with atomic_dir(path) as tmp:
        write_maps(tmp, maps, meta)


def read_manifest(path) -> dict:
    path = Path(path)
    mf = path / MANIFEST
    if not mf.is_file():
        raise ArchiveError(f"{path}: no {MANIFEST} (not a map archive)")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{mf}: invalid JSON ({exc})") from None
    if not isinstance(manifest.get("maps"), list):
        raise ArchiveError(f"{mf}: manifest has no 'maps' list")
    return manifest


def load_maps(path, names=None, as_float64: bool = False) -> dict:
    """Read an archive into a dict of arrays (float32/int32 unless ``as_float64``)."""
    path = Path(path)
    manifest = read_manifest(path)
    out = {}
    for e in manifest["maps"]:
        name = e.get("name")
        if names is not None and name not in names:
            continue
        code = e.get("dtype")
        if code not in DTYPES:
            raise ArchiveError(f"map {name!r}: unknown dtype {code!r}")
        if e.get("byte_order", "LE") != "LE":
            raise ArchiveError(f"map {name!r}: unsupported byte order {e.get('byte_order')!r}")
        shape = tuple(int(s) for s in e.get("shape", ()))
        if len(shape) != 3:
            raise ArchiveError(f"map {name!r}: shape must be [H, W, C], got {list(shape)}")
        f = path / e.get("file", "")
        if not f.is_file():
            raise ArchiveError(f"map {name!r}: missing file {f}")
        raw = f.read_bytes()
        expected = int(np.prod(shape)) * 4
        if len(raw) != expected:
            raise ArchiveError(f"map {name!r}: byte length {len(raw)} != expected {expected} for shape {list(shape)}")
        a = np.frombuffer(raw, dtype=DTYPES[code]).reshape(shape).copy()
        if as_float64 and code == "f32":
            a = a.astype(np.float64)
        out[name] = a
    if names is not None:
        missing = [n for n in names if n not in out]
        if missing:
            raise ArchiveError(f"{path}: archive lacks maps {', '.join(missing)}")
    return out


def load_meta(path) -> dict:
    return read_manifest(path).get("meta", {})


# --------------------------------------------------------------------------
# scene files

def _order_to_json(order):
    return "inf" if order == math.inf else int(order)


def _order_from_json(order):
    return math.inf if order == "inf" else int(order)


def scene_to_dict(scene: ScenePair) -> dict:
    cam = scene.cam
    return {
        "version": FORMAT_VERSION,
        "seed": scene.seed,
        "depth_noise": scene.depth_noise,
        "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                   "width": cam.width, "height": cam.height},
        "floor": {"z": scene.floor.z, "extent": scene.floor.extent,
                  "color": list(scene.floor.color), "color2": list(scene.floor.color2),
                  "checker": scene.floor.checker},
        "objects": [{
            "id": o.id,
            "shape": o.shape,
            "points": np.asarray(o.points).tolist(),
            "colors": np.asarray(o.colors).tolist(),
            "pose_t": {"q": np.asarray(o.pose_t[0]).tolist(), "center": np.asarray(o.pose_t[1]).tolist()},
            "pose_tm1": {"q": np.asarray(o.pose_tm1[0]).tolist(), "center": np.asarray(o.pose_tm1[1]).tolist()},
            "symmetries": [{"axis": list(s.axis), "order": _order_to_json(s.order)} for s in o.syms],
        } for o in scene.objects],
    }


def scene_from_dict(d: dict) -> ScenePair:
    try:
        c = d["camera"]
        cam = CameraIntrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                               int(c["width"]), int(c["height"]))
        f = d["floor"]
        floor = Floor(float(f["z"]), float(f["extent"]), tuple(f["color"]),
                      tuple(f.get("color2", f["color"])), float(f.get("checker", 0.0)))
        objects = []
        seen = set()
        for o in d["objects"]:
            if o["id"] in seen or int(o["id"]) < 1:
                raise ValueError(f"object ids must be unique and >= 1 (got {o['id']})")
            seen.add(o["id"])
            pts = np.asarray(o["points"], dtype=float).reshape(-1, 3)
            if len(pts) == 0:
                raise ValueError(f"object {o['id']} has no points")
            objects.append(SceneObject(
                int(o["id"]), o.get("shape", "custom"), pts,
                np.asarray(o["colors"], dtype=float).reshape(-1, 3),
                (np.asarray(o["pose_t"]["q"], float), np.asarray(o["pose_t"]["center"], float)),
                (np.asarray(o["pose_tm1"]["q"], float), np.asarray(o["pose_tm1"]["center"], float)),
                [SymmetrySpec(tuple(s["axis"]), _order_from_json(s["order"])) for s in o.get("symmetries", [])],
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"malformed scene description: {exc}") from None
    return ScenePair(objects, floor, cam, int(d.get("seed", 0)), float(d.get("depth_noise", 0.0)))


def save_scene(path, scene: ScenePair):
    # json writes floats with repr(), the shortest string that round-trips
    atomic_write_text(path, json.dumps(scene_to_dict(scene)))


def load_scene(path) -> ScenePair:
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"scene file not found: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{path}: invalid JSON ({exc})") from None
    return scene_from_dict(d)


# --------------------------------------------------------------------------
# PPM images

def ppm_bytes(rgb) -> bytes:
    """Binary P6 encoding of an ``(H, W, 3)`` uint8 image."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    H, W, _ = rgb.shape
    return f"P6\n{W} {H}\n255\n".encode("ascii") + rgb.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    W, H, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    pix = data[len(data) - W * H * 3:]
    return np.frombuffer(pix, dtype=np.uint8).reshape(H, W, 3)


def flow_image(S, vmax: float = 0.1) -> np.ndarray:
    """Green, blue and red intensities proportional to |S_x|, |S_y| and |S_z|."""
    S = np.asarray(S, dtype=float)
    mag = np.clip(np.abs(S) / vmax, 0.0, 1.0)
    rgb = np.stack([mag[..., 2], mag[..., 0], mag[..., 1]], axis=-1)
    return np.round(rgb * 255.0).astype(np.uint8)


def label_color(k: int):
    if k <= 0:
        return (0, 0, 0)
    hue = (k * 0.618033988749895) % 1.0
    sat = 0.55 + 0.45 * ((k * 7) % 3) / 2
    r, g, b = colorsys.hsv_to_rgb(hue, sat, 1.0)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def label_image(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 3:
        labels = labels[..., 0]
    ids = np.unique(labels)
    lut = {int(k): label_color(int(k)) for k in ids}
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for k, c in lut.items():
        out[labels == k] = c
    return out


def viz_flow(S, vmax: float = 0.1) -> bytes:
    return ppm_bytes(flow_image(S, vmax))


def viz_labels(labels) -> bytes:
    return ppm_bytes(label_image(labels))
