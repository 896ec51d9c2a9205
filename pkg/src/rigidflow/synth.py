"""Kinematic synthetic scene pairs and their ground-truth pixel maps.

Objects are point-sampled primitives (boxes, square prisms, cylinders) placed
over a floor plane and seen by a static pinhole camera looking along +z.
Each object gets an independent pose at frame t and t-1; there is no physics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import geometry as geo
from .geometry import CameraIntrinsics, SymmetrySpec

FRAME_T = "t"
FRAME_TM1 = "tm1"

SHAPES = ("box", "prism", "cylinder")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    height: int = 60
    width: int = 80
    objects: tuple[int, int] = (2, 6)
    # workspace for object centers at frame t, camera frame (m)
    x_range: tuple[float, float] = (-0.36, 0.36)
    y_range: tuple[float, float] = (-0.26, 0.26)
    floor_z: float = 1.0
    floor_extent: float = 1.5
    size_range: tuple[float, float] = (0.07, 0.15)
    # center displacement magnitude; the mean of the default range is 0.085 m
    motion_range: tuple[float, float] = (0.04, 0.13)
    max_spin: float = math.pi
    max_tumble: float = 0.35
    max_tilt: float = 0.5
    symmetry_prob: float = 0.6
    point_spacing: Optional[float] = None  # default: half a pixel at the nearest depth
    depth_noise: float = 0.0
    default_radius: float = 0.05
    centroid_pixels: int = 300
    degenerate_trajectories: bool = False

    def validate(self):
        lo, hi = self.objects
        if not (1 <= lo <= hi):
            raise ConfigError(f"object count range must satisfy 1 <= min <= max, got {self.objects}")
        for name in ("x_range", "y_range", "size_range", "motion_range"):
            a, b = getattr(self, name)
            if a > b:
                raise ConfigError(f"{name} is empty: {a} > {b}")
        if self.size_range[0] <= 0:
            raise ConfigError("object sizes must be positive")
        if self.motion_range[0] < 0:
            raise ConfigError("motion magnitudes must be nonnegative")
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("resolution must be positive")
        if not 0.0 <= self.symmetry_prob <= 1.0:
            raise ConfigError("symmetry_prob must lie in [0, 1]")
        if self.floor_z <= self.size_range[1]:
            raise ConfigError("floor too close to the camera for the object sizes")
        if self.default_radius <= 0 or self.centroid_pixels < 1:
            raise ConfigError("default_radius must be > 0 and centroid_pixels >= 1")
        if self.depth_noise < 0:
            raise ConfigError("depth_noise must be >= 0")

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.for_resolution(self.height, self.width)


@dataclass
class Floor:
    z: float
    extent: float
    color: tuple[float, float, float]
    color2: tuple[float, float, float]
    checker: float = 0.05  # square size in m; 0 disables the checkerboard


@dataclass
class SceneObject:
    id: int
    shape: str
    points: np.ndarray   # (N, 3) object frame
    colors: np.ndarray   # (N, 3) in [0, 1]
    pose_t: tuple        # (quaternion, center)
    pose_tm1: tuple
    syms: list = field(default_factory=list)

    def world_points(self, frame: str) -> np.ndarray:
        q, c = self.pose_t if frame == FRAME_T else self.pose_tm1
        return self.points @ geo.quat_to_matrix(q).T + np.asarray(c)

    def center(self, frame: str) -> np.ndarray:
        return np.asarray((self.pose_t if frame == FRAME_T else self.pose_tm1)[1], dtype=float)

    def relative_rotation(self) -> np.ndarray:
        """Quaternion taking the object at frame t to its pose at t-1, canonicalized."""
        q_t = np.asarray(self.pose_t[0], float)
        q_tm1 = np.asarray(self.pose_tm1[0], float)
        if np.array_equal(q_t, q_tm1):
            # q * conj(q) is only identity up to rounding
            return np.array([1.0, 0.0, 0.0, 0.0])
        q_rel = geo.quat_mul(q_tm1, geo.quat_conj(q_t))
        return geo.canonicalize_rotation(q_rel, self.syms, frame_rotation=q_t)

    def motion(self) -> geo.RigidMotion:
        X = self.center(FRAME_T)
        return geo.RigidMotion(geo.axis_angle_from_quat(self.relative_rotation()),
                               self.center(FRAME_TM1) - X, X)


@dataclass
class ScenePair:
    objects: list
    floor: Floor
    cam: CameraIntrinsics
    seed: int
    depth_noise: float = 0.0

    def object_ids(self):
        return [o.id for o in self.objects]


# per-pixel maps at frame t; arrays are (H, W, C)
MAP_CHANNELS = {"P": 3, "I": 3, "Q": 3, "T": 3, "X": 3, "S": 3,
                "mask": 1, "B": 1, "eta": 1, "obj_id": 1, "both": 1}


@dataclass
class PixelMaps:
    P: np.ndarray
    I: np.ndarray
    Q: np.ndarray
    T: np.ndarray
    X: np.ndarray
    S: np.ndarray
    mask: np.ndarray
    B: np.ndarray
    eta: np.ndarray
    obj_id: np.ndarray
    both: np.ndarray  # 1 where the pixel's object is visible in both frames

    @property
    def shape(self):
        return self.mask.shape[:2]

    @property
    def xi(self):
        return np.concatenate([self.X, self.X + self.T], axis=-1)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "PixelMaps":
        missing = [n for n in MAP_CHANNELS if n not in d]
        if missing:
            raise KeyError(f"ground-truth archive lacks maps: {', '.join(missing)}")
        return cls(**{n: d[n] for n in MAP_CHANNELS})


# --------------------------------------------------------------------------
# shapes

def _face_grid(a: float, b: float, spacing: float):
    na = max(1, int(math.ceil(a / spacing)))
    nb = max(1, int(math.ceil(b / spacing)))
    ua = (np.arange(na) + 0.5) / na * a - a / 2
    ub = (np.arange(nb) + 0.5) / nb * b - b / 2
    A, B = np.meshgrid(ua, ub, indexing="ij")
    return A.ravel(), B.ravel()


def sample_box(dims, spacing, shades=(1.0, 0.9, 0.8, 0.7, 0.6, 0.5)):
    """Surface points of an axis-aligned box centered at the origin, with per-face shade."""
    dx, dy, dz = dims
    pts, shade = [], []
    for axis, (ea, eb), half in ((2, (dx, dy), dz / 2), (0, (dy, dz), dx / 2), (1, (dx, dz), dy / 2)):
        a, b = _face_grid(ea, eb, spacing)
        for sgn in (1.0, -1.0):
            p = np.zeros((a.size, 3))
            other = [i for i in range(3) if i != axis]
            p[:, other[0]] = a
            p[:, other[1]] = b
            p[:, axis] = sgn * half
            pts.append(p)
            shade.append(np.full(a.size, shades[len(shade)]))
    return np.concatenate(pts), np.concatenate(shade)


def sample_prism(side, height, spacing):
    """Square prism about z; the four side faces are exact quarter-turn copies."""
    a, b = _face_grid(side, height, spacing)
    face = np.stack([a, np.full(a.size, side / 2), b], axis=1)
    pts, shade = [], []
    for k in range(4):
        R = geo.quat_to_matrix(geo.twist_quat([0, 0, 1], k * math.pi / 2))
        pts.append(face @ R.T)
        shade.append(np.full(a.size, 0.85))
    ca, cb = _face_grid(side, side, spacing)
    for sgn, s in ((1.0, 0.6), (-1.0, 1.0)):
        pts.append(np.stack([ca, cb, np.full(ca.size, sgn * height / 2)], axis=1))
        shade.append(np.full(ca.size, s))
    return np.concatenate(pts), np.concatenate(shade)


def sample_cylinder(radius, height, spacing):
    n_ring = max(8, int(math.ceil(2 * math.pi * radius / spacing)))
    n_h = max(1, int(math.ceil(height / spacing)))
    ang = np.arange(n_ring) * 2 * math.pi / n_ring
    hz = (np.arange(n_h) + 0.5) / n_h * height - height / 2
    A, Z = np.meshgrid(ang, hz, indexing="ij")
    side = np.stack([radius * np.cos(A.ravel()), radius * np.sin(A.ravel()), Z.ravel()], axis=1)
    pts, shade = [side], [np.full(len(side), 0.85)]
    n_r = max(1, int(math.ceil(radius / spacing)))
    cap = [np.zeros((1, 2))]
    for i in range(1, n_r + 1):
        r = radius * i / n_r
        m = max(6, int(math.ceil(2 * math.pi * r / spacing)))
        t = np.arange(m) * 2 * math.pi / m
        cap.append(np.stack([r * np.cos(t), r * np.sin(t)], axis=1))
    cap = np.concatenate(cap)
    for sgn, s in ((1.0, 0.6), (-1.0, 1.0)):
        pts.append(np.column_stack([cap, np.full(len(cap), sgn * height / 2)]))
        shade.append(np.full(len(cap), s))
    return np.concatenate(pts), np.concatenate(shade)


def _make_object(rng, oid, shape, size, spacing):
    base = 0.25 + 0.75 * rng.random(3)
    if shape == "box":
        dims = size * (0.55 + 0.45 * rng.random(3))
        pts, shade = sample_box(dims, spacing)
        syms = []
        half_height = dims[2] / 2
    elif shape == "prism":
        side, height = size * (0.6 + 0.3 * rng.random()), size * (0.5 + 0.5 * rng.random())
        pts, shade = sample_prism(side, height, spacing)
        syms = [SymmetrySpec((0.0, 0.0, 1.0), 4)]
        half_height = height / 2
    else:
        radius, height = size * (0.3 + 0.2 * rng.random()), size * (0.5 + 0.5 * rng.random())
        pts, shade = sample_cylinder(radius, height, spacing)
        syms = [SymmetrySpec((0.0, 0.0, 1.0), geo.INF_ORDER)]
        half_height = height / 2
    colors = np.clip(shade[:, None] * base[None, :], 0.0, 1.0)
    radius = float(np.max(np.linalg.norm(pts, axis=1)))
    return pts, colors, syms, half_height, radius


def _rot(axis, angle):
    return geo.quat_from_axis_angle(np.asarray(axis, float) * angle)


def generate_scene_pair(cfg: SynthConfig, seed: int) -> ScenePair:
    """Random scene pair, fully determined by ``(cfg, seed)``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    cam = cfg.camera()
    n_obj = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
    spacing = cfg.point_spacing
    if spacing is None:
        nearest = cfg.floor_z - 2 * cfg.size_range[1]
        spacing = 0.5 * nearest / cam.fx

    shapes = []
    for _ in range(n_obj):
        if rng.random() < cfg.symmetry_prob:
            shapes.append("prism" if rng.random() < 0.5 else "cylinder")
        else:
            shapes.append("box")
    sizes = rng.uniform(*cfg.size_range, size=n_obj)

    objects = []
    placed_t, placed_tm1 = [], []
    for i in range(n_obj):
        pts, colors, syms, half_h, radius = _make_object(rng, i + 1, shapes[i], sizes[i], spacing)
        for _attempt in range(500):
            # upright-ish orientation; the object z axis points back at the camera
            yaw = rng.uniform(-math.pi, math.pi)
            psi = rng.uniform(0, 2 * math.pi)
            tilt_axis = np.array([math.cos(psi), math.sin(psi), 0.0])
            q_t = geo.quat_mul(_rot(tilt_axis, rng.uniform(0, cfg.max_tilt)),
                               geo.quat_mul(_rot([1, 0, 0], math.pi), _rot([0, 0, 1], yaw)))
            c_t = np.array([rng.uniform(*cfg.x_range), rng.uniform(*cfg.y_range), cfg.floor_z - half_h])

            mag = rng.uniform(*cfg.motion_range)
            phi = rng.uniform(-math.pi, math.pi)
            beta = rng.uniform(-0.3, 0.3)
            T = mag * np.array([math.cos(phi) * math.cos(beta), math.sin(phi) * math.cos(beta), math.sin(beta)])
            spin = rng.uniform(-cfg.max_spin, cfg.max_spin)
            tumble_axis = rng.standard_normal(3)
            tumble_axis /= np.linalg.norm(tumble_axis)
            tumble = rng.uniform(0, cfg.max_tumble)
            # spin about the object's own axis, then a small tumble in the world frame
            q_tm1 = geo.quat_mul(_rot(tumble_axis, tumble), geo.quat_mul(q_t, _rot([0, 0, 1], spin)))
            c_tm1 = c_t + T
            ok = all(np.linalg.norm(c_t - c) > radius + r for c, r in placed_t) and \
                all(np.linalg.norm(c_tm1 - c) > radius + r for c, r in placed_tm1)
            if ok:
                break
        else:
            raise ConfigError(f"could not place {n_obj} objects without overlap; enlarge the workspace")
        placed_t.append((c_t, radius))
        placed_tm1.append((c_tm1, radius))
        objects.append(SceneObject(i + 1, shapes[i], pts, colors,
                                   (geo.quat_canonical(q_t), c_t),
                                   (geo.quat_canonical(q_tm1), c_tm1), syms))

    if cfg.degenerate_trajectories and len(objects) >= 2:
        # second object copies the first trajectory (same center and translation)
        a, b = objects[0], objects[1]
        b.pose_t = (b.pose_t[0], a.center(FRAME_T).copy())
        b.pose_tm1 = (b.pose_tm1[0], a.center(FRAME_TM1).copy())

    floor_col = tuple(float(v) for v in 0.3 + 0.4 * rng.random(3))
    floor_col2 = tuple(float(0.8 * v) for v in floor_col)
    floor = Floor(cfg.floor_z, cfg.floor_extent, floor_col, floor_col2)
    return ScenePair(objects, floor, cam, seed, cfg.depth_noise)


# --------------------------------------------------------------------------
# rendering

def _floor_maps(scene: ScenePair):
    cam = scene.cam
    H, W = cam.height, cam.width
    vv, uu = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    P = geo.backproject(uu, vv, np.full((H, W), scene.floor.z), cam)
    inside = (np.abs(P[..., 0]) <= scene.floor.extent) & (np.abs(P[..., 1]) <= scene.floor.extent)
    I = np.empty((H, W, 3))
    I[:] = scene.floor.color
    if scene.floor.checker > 0:
        cell = (np.floor(P[..., 0] / scene.floor.checker) + np.floor(P[..., 1] / scene.floor.checker)) % 2
        I[cell == 1] = scene.floor.color2
    P[~inside] = 0.0
    I[~inside] = 0.0
    return P, I


def splat(points, colors, ids, cam: CameraIntrinsics):
    """Z-buffer point splat: nearest point per pixel wins, ties keep the earlier point.

    Returns ``(P, I, obj_id, hit)`` with ``hit`` marking pixels covered by a point.
    """
    H, W = cam.height, cam.width
    P = np.zeros((H, W, 3))
    I = np.zeros((H, W, 3))
    oid = np.zeros((H, W), dtype=np.int32)
    hit = np.zeros((H, W), dtype=bool)
    if len(points) == 0:
        return P, I, oid, hit
    z = points[:, 2]
    front = z > 1e-9
    idx = np.flatnonzero(front)
    u = cam.fx * points[idx, 0] / z[idx] + cam.cx
    v = cam.fy * points[idx, 1] / z[idx] + cam.cy
    col = np.floor(u).astype(np.int64)
    row = np.floor(v).astype(np.int64)
    inb = (col >= 0) & (col < W) & (row >= 0) & (row < H)
    idx, col, row = idx[inb], col[inb], row[inb]
    pix = row * W + col
    order = np.lexsort((np.arange(len(idx)), z[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = idx[order[first]]
    wpix = pix_sorted[first]
    P.reshape(-1, 3)[wpix] = points[win]
    I.reshape(-1, 3)[wpix] = colors[win]
    oid.reshape(-1)[wpix] = ids[win]
    hit.reshape(-1)[wpix] = True
    return P, I, oid, hit


def render_view(scene: ScenePair, frame: str = FRAME_T):
    """Render camera-frame XYZ, RGB and object ids for one frame.

    XYZ values are rounded to float32 precision, like a depth sensor would
    deliver them.
    """
    if frame not in (FRAME_T, FRAME_TM1):
        raise ValueError(f"frame must be {FRAME_T!r} or {FRAME_TM1!r}")
    pts = [o.world_points(frame) for o in scene.objects]
    cols = [o.colors for o in scene.objects]
    ids = [np.full(len(o.points), o.id, dtype=np.int32) for o in scene.objects]
    if pts:
        P, I, oid, hit = splat(np.concatenate(pts), np.concatenate(cols), np.concatenate(ids), scene.cam)
    else:
        P, I, oid, hit = splat(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.int32), scene.cam)
    fP, fI = _floor_maps(scene)
    P[~hit] = fP[~hit]
    I[~hit] = fI[~hit]
    if scene.depth_noise > 0:
        rng = np.random.default_rng([scene.seed, 0 if frame == FRAME_T else 1])
        valid = P[..., 2] > 0
        P[valid] *= (1.0 + scene.depth_noise * rng.standard_normal(int(valid.sum())) / P[valid, 2])[:, None]
    P = P.astype(np.float32).astype(np.float64)
    return P, I, oid


# --------------------------------------------------------------------------
# ground truth

def boundary_radii(xi, default_radius: float = 0.05):
    """Half the distance from each trajectory feature to its nearest other one."""
    xi = np.asarray(xi, dtype=float)
    K = len(xi)
    if K == 0:
        return np.zeros(0)
    if K == 1:
        return np.array([default_radius])
    diff = xi[:, None, :] - xi[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(d, np.inf)
    return 0.5 * d.min(axis=1)


def compute_boundary_radii(obj_id, xi_by_id: dict, default_radius: float = 0.05):
    """B map: per-object radius painted on that object's pixels, zero elsewhere."""
    ids = sorted(xi_by_id)
    radii = boundary_radii(np.array([xi_by_id[k] for k in ids]).reshape(len(ids), 6), default_radius)
    B = np.zeros(obj_id.shape + (1,))
    for k, r in zip(ids, radii):
        B[obj_id == k] = r
    return B


def compute_centroid_labels(obj_id, P, centers: dict, D: int = 300):
    """Label the ``D`` pixels of each object nearest its center with 1.

    Objects with at most ``D`` pixels are labeled entirely. Distance ties are
    broken by row-major pixel order.
    """
    if D < 1:
        raise ValueError("D must be >= 1")
    eta = np.zeros(obj_id.shape + (1,))
    flat_id = obj_id.reshape(-1)
    flat_P = np.asarray(P, float).reshape(-1, 3)
    flat_eta = eta.reshape(-1)
    for k, c in centers.items():
        pix = np.flatnonzero(flat_id == k)
        if pix.size <= D:
            flat_eta[pix] = 1.0
            continue
        dist = np.linalg.norm(flat_P[pix] - np.asarray(c, float), axis=1)
        order = np.argsort(dist, kind="stable")
        flat_eta[pix[order[:D]]] = 1.0
    return eta


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def compute_gt_maps(scene: ScenePair, D: int = 300, default_radius: float = 0.05,
                    views=None) -> PixelMaps:
    """Ground-truth pixel maps at frame t.

    Motion parameters are rounded to float32 before the scene flow is derived
    from them, so an archive round trip leaves flow and motion consistent.
    """
    P, I, oid = views[0] if views is not None else render_view(scene, FRAME_T)
    _, _, oid_prev = views[1] if views is not None else render_view(scene, FRAME_TM1)
    H, W = oid.shape
    Q = np.zeros((H, W, 3))
    T = np.zeros((H, W, 3))
    X = np.zeros((H, W, 3))
    both = np.zeros((H, W, 1))
    xi_by_id, centers = {}, {}
    visible_prev = set(np.unique(oid_prev).tolist())
    for o in scene.objects:
        m = o.motion()
        q_aa, t_v, x_v = _f32(m.Q), _f32(m.T), _f32(m.X)
        sel = oid == o.id
        Q[sel] = q_aa
        T[sel] = t_v
        X[sel] = x_v
        if o.id in visible_prev:
            both[sel] = 1.0
        xi_by_id[o.id] = np.concatenate([x_v, x_v + t_v])
        centers[o.id] = x_v
    mask = (oid > 0)[..., None].astype(float)
    _, S = geo.transport_point(P, Q, T, X)
    S = S * mask
    B = compute_boundary_radii(oid, xi_by_id, default_radius)
    eta = compute_centroid_labels(oid, P, centers, D)
    return PixelMaps(P=P, I=I, Q=Q, T=T, X=X, S=S, mask=mask, B=B, eta=eta,
                     obj_id=oid[..., None].astype(np.int32), both=both)


def object_trajectories(scene: ScenePair) -> dict:
    """Ground-truth trajectory feature per object id."""
    out = {}
    for o in scene.objects:
        m = o.motion()
        X, T = _f32(m.X), _f32(m.T)
        out[o.id] = np.concatenate([X, X + T])
    return out
