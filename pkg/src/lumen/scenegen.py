"""Procedural box-room lighting scenes.

A scene is an axis-aligned room ``[0, width] x [0, depth] x [0, height]``
whose six inner faces carry albedo and emission textures. Panoramas rendered
from different interior camera positions of the same room give
geometrically consistent variations of one lighting environment.

Random streams are derived with :func:`derive_rng`, which mixes a stream id
into the master seed, so every output depends only on ``(seed, stream)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .envmap import pixel_directions
from .errors import InvalidArgumentError

# face order: -x, +x, -y, +y, floor (-z), ceiling (+z)
FACES = ("x0", "x1", "y0", "y1", "floor", "ceiling")
_FACE_AXIS = (0, 0, 1, 1, 2, 2)
_FACE_SIDE = (0, 1, 0, 1, 0, 1)
# in-plane (u, v) axes of each face
_FACE_UV = ((1, 2), (1, 2), (0, 2), (0, 2), (0, 1), (0, 1))


def derive_rng(seed, *stream):
    """Independent generator for ``stream`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


@dataclass
class SceneParams:
    width: tuple = (3.0, 8.0)
    depth: tuple = (3.0, 8.0)
    height: tuple = (2.4, 4.0)
    lights: tuple = (1, 4)
    intensity: tuple = (10.0, 500.0)  # emission as a multiple of ambient
    light_size: tuple = (0.15, 0.4)  # fraction of the face edge
    wall_light_prob: float = 0.25
    ambient: float = 1.0
    texels: int = 32

    def validate(self):
        for name in ("width", "depth", "height", "intensity", "light_size"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise InvalidArgumentError(f"empty or non-positive range for {name}: {lo}..{hi}")
        lo, hi = self.lights
        if not (1 <= lo <= hi):
            raise InvalidArgumentError(f"light count range must satisfy 1 <= lo <= hi, got {lo}..{hi}")
        if self.ambient < 0 or self.texels < 1:
            raise InvalidArgumentError("ambient must be >= 0 and texels >= 1")
        return self

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


@dataclass
class Light:
    face: int
    rect: tuple  # (u0, u1, v0, v1) as fractions of the face
    color: np.ndarray


@dataclass
class BoxScene:
    extents: np.ndarray  # (width, depth, height) in meters
    albedo: list  # 6 arrays (n, n, 3), indexed [u, v]
    emission: list  # 6 arrays (n, n, 3)
    ambient: float
    lights: list = field(default_factory=list)

    def face_size(self, f):
        u, v = _FACE_UV[f]
        return self.extents[u], self.extents[v]

    def radiance(self, f):
        return self.emission[f] + self.albedo[f] * self.ambient

    @property
    def center(self):
        return self.extents / 2.0


def uniform_scene(extents, emission=1.0, albedo=0.0, ambient=0.0, texels=1):
    """Scene with the same emission and albedo on every face."""
    ext = np.asarray(extents, dtype=np.float64)
    em = [np.full((texels, texels, 3), float(emission)) for _ in FACES]
    al = [np.full((texels, texels, 3), float(albedo)) for _ in FACES]
    return BoxScene(ext, al, em, float(ambient))


def _smooth_noise(rng, n, terms=3):
    u = (np.arange(n) + 0.5) / n
    uu, vv = np.meshgrid(u, u, indexing="ij")
    out = np.zeros((n, n))
    for _ in range(terms):
        fu, fv = rng.integers(0, 3, size=2)
        ph = rng.uniform(0, 2 * np.pi, size=2)
        out += np.cos(2 * np.pi * fu * uu + ph[0]) * np.cos(2 * np.pi * fv * vv + ph[1])
    return out / terms


def sample_scene(seed, params=None):
    """Deterministic random room for ``seed``."""
    p = (params or SceneParams()).validate()
    rng = derive_rng(seed, 0)
    ext = np.array([rng.uniform(*p.width), rng.uniform(*p.depth), rng.uniform(*p.height)])
    n = p.texels
    albedo, emission = [], []
    for f in range(6):
        base = rng.uniform(0.25, 0.65)
        tint = rng.uniform(0.85, 1.15, size=3)
        noise = 0.15 * _smooth_noise(rng, n)
        a = np.clip((base + noise)[..., None] * tint, 0.0, 1.0)
        albedo.append(a)
        emission.append(np.zeros((n, n, 3)))
    count = int(rng.integers(p.lights[0], p.lights[1] + 1))
    lights = []
    for _ in range(count):
        face = 5 if rng.uniform() >= p.wall_light_prob else int(rng.integers(0, 4))
        su, sv = rng.uniform(*p.light_size, size=2)
        u0, v0 = rng.uniform(0.05, 0.95 - su), rng.uniform(0.05, 0.95 - sv)
        if face < 4:
            v0 = rng.uniform(0.45, 0.95 - sv)  # wall lights sit in the upper half
        color = rng.uniform(*p.intensity) * p.ambient * rng.uniform(0.8, 1.0, size=3)
        rect = (u0, u0 + su, v0, v0 + sv)
        _paint(emission[face], rect, color)
        lights.append(Light(face, rect, color))
    return BoxScene(ext, albedo, emission, p.ambient, lights)


def _paint(tex, rect, color):
    n = tex.shape[0]
    u0, u1, v0, v1 = rect
    iu = slice(int(np.floor(u0 * n)), max(int(np.ceil(u1 * n)), int(np.floor(u0 * n)) + 1))
    iv = slice(int(np.floor(v0 * n)), max(int(np.ceil(v1 * n)), int(np.floor(v0 * n)) + 1))
    tex[iu, iv] += color


def _check_inside(s, cam):
    cam = np.asarray(cam, dtype=np.float64)
    if cam.shape != (3,) or not (np.all(cam > 0) and np.all(cam < s.extents)):
        raise InvalidArgumentError(f"camera {cam} must be strictly inside the room {s.extents}")
    return cam


def trace_faces(s, cam, dirs):
    """Face index and (u, v) fractions hit by rays from ``cam``."""
    cam = _check_inside(s, cam)
    dirs = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (s.extents - cam) / dirs
        t_lo = (0.0 - cam) / dirs
    t_axis = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
    axis = np.argmin(t_axis, axis=-1)
    t = np.take_along_axis(t_axis, axis[..., None], axis=-1)[..., 0]
    side = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0] > 0
    face = 2 * axis + side.astype(int)
    hit = cam + t[..., None] * dirs
    frac = np.clip(hit / s.extents, 0.0, 1.0)
    uv_axes = np.array(_FACE_UV)[face]
    u = np.take_along_axis(frac, uv_axes[..., :1], axis=-1)[..., 0]
    v = np.take_along_axis(frac, uv_axes[..., 1:], axis=-1)[..., 0]
    return face, u, v


def render_panorama(s, cam, h, w):
    """Radiance seen from ``cam`` in every pixel direction, ``(h, w, 3)``."""
    face, u, v = trace_faces(s, cam, pixel_directions(h, w))
    out = np.zeros((h, w, 3))
    for f in range(6):
        sel = face == f
        if not np.any(sel):
            continue
        rad = s.radiance(f)
        n = rad.shape[0]
        iu = np.minimum((u[sel] * n).astype(int), n - 1)
        iv = np.minimum((v[sel] * n).astype(int), n - 1)
        out[sel] = rad[iu, iv]
    return out


def face_mask(s, cam, h, w, f):
    face, _, _ = trace_faces(s, cam, pixel_directions(h, w))
    return face == f


def sample_camera_pose(s, seed, margin=0.1):
    """Uniform position in the room shrunk by ``margin`` per axis."""
    rng = derive_rng(seed, 1)
    x = rng.uniform(margin, 1.0 - margin, size=3)
    return x * s.extents


def augment(s, n, h, w, seed, poses=None):
    """Render ``n`` panoramas at independently sampled poses.

    Returns ``(maps, poses)``. Pose ``i`` comes from stream ``(seed, i)`` so
    the result is independent of rendering order.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if poses is None:
        poses = [sample_camera_pose(s, int(derive_rng(seed, 2, i).integers(2**31))) for i in range(n)]
    poses = [np.asarray(p, dtype=np.float64) for p in poses]
    if len(poses) != n:
        raise InvalidArgumentError(f"expected {n} poses, got {len(poses)}")
    return [render_panorama(s, p, h, w) for p in poses], poses


@dataclass
class VPL:
    position: np.ndarray
    normal: np.ndarray
    color: np.ndarray
    scale: float


def _overlap(res, n):
    """Fraction of each of ``n`` texels covered by each of ``res`` cells."""
    a = np.arange(res + 1) / res
    b = np.arange(n + 1) / n
    lo = np.maximum(a[:-1, None], b[None, :-1])
    hi = np.minimum(a[1:, None], b[None, 1:])
    return np.maximum(hi - lo, 0.0) * res


def extract_vpls(s, res):
    """One VPL per cell of a ``res x res`` grid on every face.

    Cell color is the area average of the face radiance; ``scale`` is the cell
    area, so ``sum(color * scale)`` equals the integrated face radiance.
    """
    if res < 1:
        raise InvalidArgumentError(f"res must be >= 1, got {res}")
    out = []
    for f in range(6):
        rad = s.radiance(f)
        ov = _overlap(res, rad.shape[0])
        cell = np.einsum("in,nmc,jm->ijc", ov, rad, ov)
        su, sv = s.face_size(f)
        ua, va = _FACE_UV[f]
        axis, side = _FACE_AXIS[f], _FACE_SIDE[f]
        normal = np.zeros(3)
        normal[axis] = -1.0 if side else 1.0
        area = su * sv / res**2
        for i in range(res):
            for j in range(res):
                pos = np.zeros(3)
                pos[axis] = s.extents[axis] * side
                pos[ua] = (i + 0.5) / res * su
                pos[va] = (j + 0.5) / res * sv
                out.append(VPL(pos, normal.copy(), cell[i, j].copy(), area))
    return out


def face_energy(s):
    """Integrated radiance of every face: sum of texel radiance times texel area."""
    total = np.zeros(3)
    for f in range(6):
        su, sv = s.face_size(f)
        rad = s.radiance(f)
        total += rad.sum(axis=(0, 1)) * su * sv / (rad.shape[0] * rad.shape[1])
    return total


@dataclass
class PoseSample:
    theta: float  # azimuth, degrees in [-180, 180)
    phi: float  # polar angle, degrees in [0, 180]

    def rotation(self):
        """Rotation taking +z to the sampled axis."""
        from .envmap import rotation_y, rotation_z

        return rotation_z(np.radians(self.theta)) @ rotation_y(np.radians(self.phi))


def pose_from_uniforms(u_theta, x):
    theta = -180.0 + 360.0 * u_theta
    phi = np.degrees(np.arccos(2.0 * x - 1.0))
    return PoseSample(float(theta), float(phi))


def sample_object_rotation(seed):
    rng = derive_rng(seed, 3)
    u_theta, x = rng.uniform(size=2)
    return pose_from_uniforms(u_theta, x)
