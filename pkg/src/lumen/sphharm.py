"""Real spherical harmonics on the sphere.

Coefficients are stored as an array of shape ``((L+1)**2, 3)``; row
``k = l*(l+1) + m`` holds band ``l``, order ``m``. The real basis is
orthonormal and carries no Condon-Shortley phase.
"""

import numpy as np

from .envmap import pixel_directions, solid_angle_weights
from .errors import FormatError, InvalidArgumentError


def num_coeffs(degree):
    if int(degree) != degree or degree < 0:
        raise InvalidArgumentError(f"degree must be a nonnegative integer, got {degree}")
    return (int(degree) + 1) ** 2


def degree_of(coeffs):
    n = np.shape(coeffs)[0]
    L = int(round(np.sqrt(n))) - 1
    if (L + 1) ** 2 != n:
        raise InvalidArgumentError(f"{n} is not a valid coefficient count")
    return L


def sh_index(l, m):
    return l * (l + 1) + m


def eval_sh_basis(d, degree, check_unit=True):
    """Evaluate all basis functions up to ``degree`` at unit direction(s).

    ``d`` has shape ``(..., 3)``; the result has shape ``(..., (L+1)**2)``.
    """
    d = np.asarray(d, dtype=np.float64)
    n = num_coeffs(degree)
    if d.shape[-1] != 3:
        raise InvalidArgumentError(f"directions must have a trailing axis of 3, got {d.shape}")
    if check_unit and not np.allclose(np.linalg.norm(d, axis=-1), 1.0, atol=1e-6):
        raise InvalidArgumentError("directions must be unit vectors")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    L = int(degree)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.arctan2(y, x)
    out = np.empty(d.shape[:-1] + (n,))

    # Fully normalized associated Legendre functions via the stable recurrence.
    p_mm = np.full(z.shape, 1.0 / np.sqrt(4.0 * np.pi))
    for m in range(L + 1):
        if m > 0:
            p_mm = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * sin_t * p_mm
        if m == 0:
            cos_m = sin_m = None
            scale = 1.0
        else:
            cos_m, sin_m = np.cos(m * phi), np.sin(m * phi)
            scale = np.sqrt(2.0)
        p_prev, p_cur = None, p_mm
        for l in range(m, L + 1):
            if l == m + 1:
                p_prev, p_cur = p_cur, np.sqrt(2.0 * m + 3.0) * z * p_cur
            elif l > m + 1:
                a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                p_prev, p_cur = p_cur, a * (z * p_cur - b * p_prev)
            if m == 0:
                out[..., sh_index(l, 0)] = p_cur
            else:
                out[..., sh_index(l, m)] = scale * p_cur * cos_m
                out[..., sh_index(l, -m)] = scale * p_cur * sin_m
    return out


def basis_matrix(h, w, degree):
    """Basis evaluated at every pixel center, shape ``(H*W, (L+1)**2)``."""
    return eval_sh_basis(pixel_directions(h, w).reshape(-1, 3), degree, check_unit=False)


def project(e, degree):
    """Solid-angle quadrature projection of a map onto the basis."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 3 or e.shape[1] != 2 * e.shape[0]:
        raise InvalidArgumentError(f"envmap must be (H, 2H, C), got {e.shape}")
    if not np.all(np.isfinite(e)):
        raise InvalidArgumentError("envmap contains non-finite values")
    h, w, c = e.shape
    B = basis_matrix(h, w, degree)
    wts = solid_angle_weights(h, w).reshape(-1, 1)
    return B.T @ (wts * e.reshape(-1, c))


def reconstruct(coeffs, h, w, clamped=False):
    """Evaluate the expansion at every pixel; ``clamped`` clips negatives."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    L = degree_of(coeffs)
    out = (basis_matrix(h, w, L) @ coeffs).reshape(h, w, -1)
    if clamped:
        out = np.maximum(out, 0.0)
    return out


def lowpass_window(degree):
    """Per-band sinc window ``sin(x)/x`` with ``x = pi*l / (2(L+1))``."""
    L = int(degree)
    x = np.pi * np.arange(L + 1) / (2.0 * (L + 1))
    return np.sinc(x / np.pi)


def windowed_lowpass(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    L = degree_of(coeffs)
    band = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    return coeffs * lowpass_window(L)[band][:, None]


def band_power(coeffs):
    """Energy per band, summed over orders: shape ``(L+1, C)``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    L = degree_of(coeffs)
    band = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    out = np.zeros((L + 1,) + coeffs.shape[1:])
    np.add.at(out, band, coeffs**2)
    return out


def format_coeffs(coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        coeffs = coeffs[:, None]
    L = degree_of(coeffs)
    lines = [f"SH {L} {coeffs.shape[1]}"]
    lines += [repr(float(v)) for v in coeffs.reshape(-1)]
    return "\n".join(lines) + "\n"


def parse_coeffs(text):
    lines = text.split("\n")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "SH":
        raise FormatError(f"bad SH header {lines[0]!r}", 0)
    L, channels = int(head[1]), int(head[2])
    values = [float(v) for v in lines[1:] if v.strip()]
    if len(values) != num_coeffs(L) * channels:
        raise FormatError(
            f"expected {num_coeffs(L) * channels} coefficients, found {len(values)}"
        )
    return np.array(values).reshape(num_coeffs(L), channels)


def save_coeffs(coeffs, path):
    with open(path, "w") as f:
        f.write(format_coeffs(coeffs))


def load_coeffs(path):
    with open(path) as f:
        return parse_coeffs(f.read())
