"""Single-bounce object rendering under environment lighting.

Objects are described by camera-space normal maps (x right, y up, +z toward
an orthographic camera). Shading is Lambert plus normalized Phong with no
visibility term, so every rendered image is a linear function of the
environment map: ``image = T @ envmap``.

The camera frame relates to the environment (world, +z up) frame through
:data:`CAMERA_TO_WORLD`: the camera sits on the world +x axis looking toward
-x, with camera up along world +z.
"""

from dataclasses import dataclass

import numpy as np

from .envmap import pixel_directions, reexpose_ldr, solid_angle_weights
from .errors import InvalidArgumentError, ResourceError

CAMERA_TO_WORLD = np.array(
    [
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
    ]
)
VIEW = np.array([0.0, 0.0, 1.0])
DEFAULT_BUDGET_BYTES = 2 * 1024**3


@dataclass(frozen=True)
class Brdf:
    diffuse: float = 0.5
    specular: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if not (0 <= self.diffuse <= 1 and 0 <= self.specular <= 1):
            raise InvalidArgumentError("diffuse and specular weights must lie in [0, 1]")
        if self.diffuse + self.specular > 1 + 1e-12:
            raise InvalidArgumentError("diffuse + specular must not exceed 1")
        if self.exponent < 1:
            raise InvalidArgumentError("Phong exponent must be >= 1")


MATERIALS = {
    "diffuse": Brdf(0.5, 0.0, 1.0),
    "rough": Brdf(0.5, 0.3, 10.0),
    "glossy": Brdf(0.05, 0.9, 200.0),
}


def material(name):
    try:
        return MATERIALS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown material {name!r}; choose from {sorted(MATERIALS)}"
        ) from None


@dataclass
class NormalMap:
    normals: np.ndarray  # (S, S, 3), zero outside the mask
    mask: np.ndarray  # (S, S) bool

    @property
    def size(self):
        return self.mask.shape[0]

    @property
    def masked_normals(self):
        return self.normals[self.mask]

    def encoded(self):
        """Normals as ``(n + 1) / 2`` with background stored as 0."""
        out = np.where(self.mask[..., None], (self.normals + 1.0) / 2.0, 0.0)
        return out

    @classmethod
    def from_encoded(cls, img):
        img = np.asarray(img, dtype=np.float64)
        mask = img.sum(axis=-1) > 0
        n = np.where(mask[..., None], 2.0 * img - 1.0, 0.0)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        n = np.where(mask[..., None], n / np.where(norm > 0, norm, 1.0), 0.0)
        return cls(n, mask)


def _image_plane(size):
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    u, v = np.meshgrid(c, -c)  # v increases upward
    return u, v


def sphere_normal_map(size=128):
    if size < 2:
        raise InvalidArgumentError(f"size must be >= 2, got {size}")
    u, v = _image_plane(size)
    r2 = u * u + v * v
    mask = r2 <= 1.0
    n = np.stack([u, v, np.sqrt(np.maximum(0.0, 1.0 - r2))], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n[~mask] = 0.0
    return NormalMap(n, mask)


def _spiky_point(theta, phi, amplitude, freq):
    rho = 1.0 + amplitude * np.cos(freq * theta) * np.cos(freq * phi)
    st = np.sin(theta)
    # polar axis along object +y so the unrotated poles sit on the silhouette
    d = np.stack([st * np.sin(phi), np.cos(theta), st * np.cos(phi)], axis=-1)
    return rho[..., None] * d


def spiky_sphere_normal_map(size=128, amplitude=0.2, freq=6, rotation=None, step=1e-5):
    """Normals of a sphere with radius ``1 + a cos(k theta) cos(k phi)``.

    The displaced surface is sampled along the unit-sphere silhouette; normals
    come from central differences of its parameterization. ``rotation`` is
    an object-to-camera rotation.
    """
    if not (0 <= amplitude < 0.5) or freq < 1:
        raise InvalidArgumentError("need 0 <= amplitude < 0.5 and freq >= 1")
    base = sphere_normal_map(size)
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    p = base.normals[base.mask] @ R  # camera -> object frame
    theta = np.arccos(np.clip(p[:, 1], -1.0, 1.0))
    phi = np.arctan2(p[:, 0], p[:, 2])
    dt = _spiky_point(theta + step, phi, amplitude, freq) - _spiky_point(theta - step, phi, amplitude, freq)
    dp = _spiky_point(theta, phi + step, amplitude, freq) - _spiky_point(theta, phi - step, amplitude, freq)
    n = np.cross(dt, dp)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    n *= np.sign(np.sum(n * p, axis=-1, keepdims=True))
    out = np.zeros_like(base.normals)
    out[base.mask] = n @ R.T
    return NormalMap(out, base.mask)


@dataclass
class TransportMatrix:
    matrix: np.ndarray  # (P, Q)
    mask: np.ndarray  # (S, S) bool, P true entries
    env_shape: tuple  # (H, W)

    @property
    def shape(self):
        return self.matrix.shape


def env_directions_camera(h, w):
    """Environment pixel directions expressed in the camera frame, ``(H*W, 3)``."""
    return pixel_directions(h, w).reshape(-1, 3) @ CAMERA_TO_WORLD


def _shading(normals, dirs, brdf):
    """Integrand (without the solid angle) for normals ``(P,3)`` and dirs ``(Q,3)``."""
    cos = normals @ dirs.T
    out = (brdf.diffuse / np.pi) * np.maximum(cos, 0.0)
    if brdf.specular > 0:
        nv = normals @ VIEW
        refl = 2.0 * nv[:, None] * normals - VIEW
        lobe = np.maximum(refl @ dirs.T, 0.0) ** brdf.exponent
        out += brdf.specular * (brdf.exponent + 2.0) / (2.0 * np.pi) * lobe
    return out


def build_transport(nm, brdf, h, w, budget_bytes=DEFAULT_BUDGET_BYTES, block=2048):
    p = int(nm.mask.sum())
    q = h * w
    need = p * q * 8
    if need > budget_bytes:
        raise ResourceError(
            f"transport matrix needs {need} bytes ({p}x{q}), budget is {budget_bytes}", need
        )
    dirs = env_directions_camera(h, w)
    dw = solid_angle_weights(h, w).reshape(-1)
    normals = nm.masked_normals
    T = np.empty((p, q))
    for start in range(0, p, block):
        stop = min(start + block, p)
        T[start:stop] = _shading(normals[start:stop], dirs, brdf) * dw
    return TransportMatrix(T, nm.mask.copy(), (h, w))


def _to_image(values, mask):
    img = np.zeros(mask.shape + (values.shape[-1],))
    img[mask] = values
    return img


def render_with_transport(T, e):
    e = np.asarray(e, dtype=np.float64)
    if e.shape[:2] != tuple(T.env_shape) or e.ndim != 3:
        raise InvalidArgumentError(
            f"envmap shape {e.shape} does not match transport env shape {T.env_shape}"
        )
    return _to_image(T.matrix @ e.reshape(-1, e.shape[2]), T.mask)


def render_direct(nm, brdf, e):
    """Pixel-by-pixel render that never materializes the transport matrix."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 3:
        raise InvalidArgumentError(f"envmap must be (H, W, C), got {e.shape}")
    h, w = e.shape[:2]
    dirs = env_directions_camera(h, w)
    dw = solid_angle_weights(h, w).reshape(-1)
    flat = e.reshape(-1, e.shape[2])
    normals = nm.masked_normals
    values = np.empty((len(normals), e.shape[2]))
    for i, n in enumerate(normals):
        values[i] = (_shading(n[None, :], dirs, brdf)[0] * dw) @ flat
    return _to_image(values, nm.mask)


@dataclass
class ObjectObservation:
    rgb: np.ndarray  # (S, S, 3) in [0, 1]
    normals: NormalMap
    exposure: float = 1.0

    def to_input(self):
        """Six-channel ``(S, S, 6)`` network input: rgb then normal xyz."""
        x = np.concatenate([self.rgb, self.normals.normals], axis=-1)
        return np.where(self.normals.mask[..., None], x, 0.0)


def make_observation(nm, brdf, e, transport=None):
    """Render, re-expose over the object pixels and mask the background."""
    if transport is not None:
        hdr = render_with_transport(transport, e)
    else:
        hdr = render_direct(nm, brdf, e)
    ldr, scale = reexpose_ldr(hdr, mask=nm.mask)
    ldr[~nm.mask] = 0.0
    return ObjectObservation(ldr, nm, scale)
