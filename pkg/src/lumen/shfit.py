"""Spherical-harmonics lighting from an object image via regularized least squares.

The design matrix maps SH coefficients to object pixels through a transport
matrix, ``A = T @ B`` with ``B[j, k] = Y_k(d_j)``. Each color channel solves

    min_c ||A c - img||^2 + lam ||c||^2

and the three channels share one factorization.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .envmap import pixel_directions
from .errors import IllConditionedError, InvalidArgumentError
from .sphharm import eval_sh_basis, num_coeffs, reconstruct

SOLVERS = ("cholesky", "svd")
DEFAULT_LAMBDA_FACTOR = 1e-6


@dataclass
class FitConfig:
    degree: int = 5
    lam: float | None = None  # None -> 1e-6 * mean diagonal of A^T A
    solver: str = "cholesky"

    def __post_init__(self):
        num_coeffs(self.degree)
        if self.lam is not None and self.lam < 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")
        if self.solver not in SOLVERS:
            raise InvalidArgumentError(f"solver must be one of {SOLVERS}, got {self.solver!r}")


@dataclass
class FitResult:
    coeffs: np.ndarray  # ((L+1)**2, C)
    residual: np.ndarray  # per channel ||A c - img||
    lam: float
    seconds: float

    @property
    def degree(self):
        return int(round(np.sqrt(self.coeffs.shape[0]))) - 1


def build_design_matrix(T, degree):
    h, w = T.env_shape
    if T.matrix.shape[1] != h * w:
        raise InvalidArgumentError(
            f"transport has {T.matrix.shape[1]} columns, expected {h * w} for {h}x{w}"
        )
    B = eval_sh_basis(pixel_directions(h, w).reshape(-1, 3), degree, check_unit=False)
    return T.matrix @ B


def _pixels(img, T):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        if img.shape[0] != T.matrix.shape[0]:
            raise InvalidArgumentError(f"{img.shape[0]} pixel rows, transport has {T.matrix.shape[0]}")
        b = img
    else:
        if img.shape[:2] != T.mask.shape:
            raise InvalidArgumentError(f"image {img.shape} does not match mask {T.mask.shape}")
        b = img[T.mask]
    if np.any(np.isnan(b)):
        raise InvalidArgumentError("image contains NaN")
    return b


def solve_ridge(A, b, lam, solver="cholesky"):
    """Ridge solution for every column of ``b``."""
    n = A.shape[1]
    if solver == "svd":
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        tol = s[0] * max(A.shape) * np.finfo(float).eps if s.size else 0.0
        if lam == 0 and (s.size < n or s[-1] <= tol):
            raise IllConditionedError("design matrix is rank deficient; use lambda > 0")
        filt = s / (s**2 + lam)
        return Vt.T @ (filt[:, None] * (U.T @ b))
    G = A.T @ A
    if lam == 0:
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > 1e14:
            raise IllConditionedError(
                f"normal equations are singular (cond {cond:.3g}); use lambda > 0"
            )
    G[np.diag_indices(n)] += lam
    try:
        factor = la.cho_factor(G, lower=True, check_finite=False)
    except la.LinAlgError:
        raise IllConditionedError("normal matrix is not positive definite; use lambda > 0") from None
    return la.cho_solve(factor, A.T @ b, check_finite=False)


def default_lambda(A):
    return DEFAULT_LAMBDA_FACTOR * float(np.mean(np.sum(A * A, axis=0)))


def fit_sh(img, T, cfg=None, A=None):
    """Fit SH lighting to ``img`` (full ``(S, S, C)`` image or ``(P, C)`` pixels)."""
    cfg = cfg or FitConfig()
    t0 = time.perf_counter()
    b = _pixels(img, T)
    if A is None:
        A = build_design_matrix(T, cfg.degree)
    lam = default_lambda(A) if cfg.lam is None else float(cfg.lam)
    c = solve_ridge(A, b, lam, cfg.solver)
    resid = np.linalg.norm(A @ c - b, axis=0)
    return FitResult(c, resid, lam, time.perf_counter() - t0)


def estimate_envmap_sh(img, T, cfg, h, w, clamped=True):
    fit = fit_sh(img, T, cfg)
    return reconstruct(fit.coeffs, h, w, clamped=clamped)
