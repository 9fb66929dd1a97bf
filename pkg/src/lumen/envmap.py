"""Equirectangular HDR environment maps.

Maps are ``(H, W, 3)`` float arrays with ``W == 2 * H``. Row ``r`` covers polar
angles ``[pi*r/H, pi*(r+1)/H]`` measured from +z (up); column ``c`` covers
azimuths ``[2*pi*c/W - pi, 2*pi*(c+1)/W - pi]`` measured from +x toward +y.
All sampling happens at pixel centers.
"""

import numpy as np

from .errors import DegenerateExposureError, InvalidArgumentError

DISPLAY_GAMMA = 1.4


def check_envmap(e, name="envmap"):
    """Validate an environment map and return it as a float array."""
    e = np.asarray(e)
    if e.ndim != 3 or e.shape[2] != 3:
        raise InvalidArgumentError(f"{name} must have shape (H, W, 3), got {e.shape}")
    h, w = e.shape[:2]
    if h < 1 or w != 2 * h:
        raise InvalidArgumentError(f"{name} must satisfy W == 2H, got {h}x{w}")
    if not np.all(np.isfinite(e)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    if np.any(e < 0):
        raise InvalidArgumentError(f"{name} contains negative radiance")
    return e


def _check_dims(h, w):
    if int(h) != h or int(w) != w or h < 1 or w < 1:
        raise InvalidArgumentError(f"dimensions must be positive integers, got {h}x{w}")
    return int(h), int(w)


def solid_angle_weights(h, w):
    """Per-pixel solid angles in steradians, shape ``(H, W)``.

    Uses the exact cosine difference per row so the total is 4*pi up to
    rounding.
    """
    h, w = _check_dims(h, w)
    edges = np.cos(np.pi * np.arange(h + 1) / h)
    row = (2.0 * np.pi / w) * (edges[:-1] - edges[1:])
    return np.repeat(row[:, None], w, axis=1)


def pixel_angles(h, w):
    """Polar and azimuth angles of every pixel center, each ``(H, W)``."""
    h, w = _check_dims(h, w)
    theta = np.pi * (np.arange(h) + 0.5) / h
    phi = 2.0 * np.pi * (np.arange(w) + 0.5) / w - np.pi
    return np.meshgrid(theta, phi, indexing="ij")


def angles_to_direction(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def pixel_directions(h, w):
    """Unit direction of every pixel center, shape ``(H, W, 3)``."""
    theta, phi = pixel_angles(h, w)
    return angles_to_direction(theta, phi)


def pixel_to_direction(r, c, h, w):
    h, w = _check_dims(h, w)
    if not (0 <= r < h and 0 <= c < w):
        raise InvalidArgumentError(f"pixel ({r}, {c}) outside a {h}x{w} map")
    theta = np.pi * (r + 0.5) / h
    phi = 2.0 * np.pi * (c + 0.5) / w - np.pi
    return angles_to_direction(theta, phi)


def direction_to_angles(d):
    d = np.asarray(d, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    return theta, phi


def direction_to_pixel(d, h, w):
    """Nearest pixel ``(row, col)`` for direction(s) ``d``."""
    h, w = _check_dims(h, w)
    theta, phi = direction_to_angles(d)
    r = np.clip(np.floor(theta * h / np.pi), 0, h - 1).astype(int)
    c = np.floor((phi + np.pi) * w / (2.0 * np.pi)).astype(int) % w
    if np.ndim(r) == 0:
        return int(r), int(c)
    return r, c


def _is_rotation(R, tol=1e-6):
    R = np.asarray(R, dtype=np.float64)
    return (
        R.shape == (3, 3)
        and np.allclose(R @ R.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def _snap(x, tol=1e-8):
    nearest = np.round(x)
    return np.where(np.abs(x - nearest) < tol, nearest, x)


def sample_bilinear(e, theta, phi):
    """Bilinear lookup at arbitrary angles; azimuth wraps, polar clamps."""
    h, w = e.shape[:2]
    y = _snap(theta * h / np.pi - 0.5)
    x = _snap((phi + np.pi) * w / (2.0 * np.pi) - 0.5)
    y = np.clip(y, 0.0, h - 1)
    y0 = np.floor(y).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = (y - y0)[..., None]
    x0f = np.floor(x)
    fx = (x - x0f)[..., None]
    x0 = x0f.astype(int) % w
    x1 = (x0 + 1) % w
    top = e[y0, x0] * (1 - fx) + e[y0, x1] * fx
    bot = e[y1, x0] * (1 - fx) + e[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def rotate_envmap(e, R):
    """Rotate an environment map: output direction d shows input at R^T d."""
    e = np.asarray(e)
    if not _is_rotation(R):
        raise InvalidArgumentError("R must be a proper rotation matrix")
    R = np.asarray(R, dtype=np.float64)
    if np.array_equal(R, np.eye(3)):
        return e.copy()
    h, w = e.shape[:2]
    d = pixel_directions(h, w)
    src = d @ R  # row-vector form of R^T d
    theta, phi = direction_to_angles(src)
    return sample_bilinear(e, theta, phi).astype(e.dtype, copy=False)


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def log_encode(e):
    e = np.asarray(e)
    if np.any(np.isnan(e)):
        raise InvalidArgumentError("log_encode input contains NaN")
    if np.any(e < 0):
        raise InvalidArgumentError("log_encode input must be nonnegative")
    return np.log1p(e)


def log_decode(y):
    y = np.asarray(y)
    if np.any(np.isnan(y)):
        raise InvalidArgumentError("log_decode input contains NaN")
    return np.maximum(0.0, np.expm1(y))


def reexpose_ldr(img, mask=None, target=0.8, percentile=90.0):
    """Scale so the 90th percentile maps to 0.8, then clip to [0, 1].

    The percentile is taken jointly over all channels, restricted to ``mask``
    pixels when given. Returns ``(ldr, scale)``.
    """
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)) or np.any(img < 0):
        raise InvalidArgumentError("re-exposure needs finite nonnegative values")
    values = img[mask] if mask is not None else img
    p = np.percentile(values, percentile) if values.size else 0.0
    if p <= 0:
        raise DegenerateExposureError("90th percentile is zero; image is too dark to expose")
    scale = target / p
    return np.clip(scale * img, 0.0, 1.0), scale


def tonemap_display(e, gamma=DISPLAY_GAMMA):
    """8-bit display image: ``round(255 * clip(v, 0, 1) ** (1/gamma))``."""
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma}")
    v = np.clip(np.asarray(e, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def write_png(path, img8):
    from PIL import Image

    Image.fromarray(np.ascontiguousarray(img8)).save(path)
