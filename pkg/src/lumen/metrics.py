"""Solid-angle weighted lighting error metrics.

All map metrics take ``(H, W, C)`` prediction and ground truth plus ``(H, W)``
per-pixel weights (normally solid angles) and average over channels.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .render import render_direct, render_with_transport

MRE_EPS = 1e-3
_ALPHA_FLOOR = 1e-12


def _prep(pred, gt, w):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidArgumentError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    if w.shape != gt.shape[:-1]:
        raise InvalidArgumentError(f"weights {w.shape} do not match maps {gt.shape}")
    return pred, gt, w[..., None]


def _wmean(values, w):
    return float(np.sum(w * values) / (values.shape[-1] * np.sum(w)))


def rmse(pred, gt, w):
    pred, gt, w = _prep(pred, gt, w)
    return float(np.sqrt(_wmean((pred - gt) ** 2, w)))


def optimal_scale(pred, gt, w, per_channel=False):
    """Scale minimizing the weighted squared error of ``scale * pred``."""
    pred, gt, w = _prep(pred, gt, w)
    axes = tuple(range(pred.ndim - 1)) if per_channel else None
    num = np.sum(w * gt * pred, axis=axes)
    den = np.sum(w * pred * pred, axis=axes)
    return np.where(den < _ALPHA_FLOOR, 0.0, num / np.where(den < _ALPHA_FLOOR, 1.0, den))


def si_rmse(pred, gt, w, per_channel=False):
    """Scale-invariant RMSE; returns ``(value, alpha)``.

    ``alpha`` is one scalar shared by all channels unless ``per_channel``.
    """
    alpha = optimal_scale(pred, gt, w, per_channel)
    value = rmse(np.asarray(pred, dtype=np.float64) * alpha, gt, w)
    return value, (float(alpha) if np.ndim(alpha) == 0 else alpha)


def mae(pred, gt, w):
    pred, gt, w = _prep(pred, gt, w)
    return _wmean(np.abs(pred - gt), w)


def mre(pred, gt, w, eps=MRE_EPS):
    pred, gt, w = _prep(pred, gt, w)
    return _wmean(np.abs(pred - gt) / (gt + eps), w)


def image_rmse(a, b, mask):
    """Uniformly weighted RMSE over the masked pixels of two images."""
    a = np.asarray(a, dtype=np.float64)[mask]
    b = np.asarray(b, dtype=np.float64)[mask]
    return float(np.sqrt(np.mean((a - b) ** 2)))


def relight_error(pred, gt, nm, brdf, transport=None):
    """RMSE between the object relit by ``pred`` and by ``gt``.

    ``transport`` (built for ``nm`` and ``brdf``) is an optional shortcut that
    gives the same images as the direct renderer.
    """
    if transport is not None:
        a = render_with_transport(transport, pred)
        b = render_with_transport(transport, gt)
    else:
        a = render_direct(nm, brdf, pred)
        b = render_direct(nm, brdf, gt)
    return image_rmse(a, b, nm.mask)


@dataclass
class MetricsRecord:
    rmse: float
    si_rmse: float
    mae: float
    mre: float
    alpha: float
    relight_rmse: float | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def evaluate_map(pred, gt, w, meta=None):
    """All four map metrics; ``pred`` is clamped at zero first."""
    pred = np.maximum(np.asarray(pred, dtype=np.float64), 0.0)
    si, alpha = si_rmse(pred, gt, w)
    return MetricsRecord(
        rmse=rmse(pred, gt, w),
        si_rmse=si,
        mae=mae(pred, gt, w),
        mre=mre(pred, gt, w),
        alpha=alpha,
        meta=dict(meta or {}),
    )
