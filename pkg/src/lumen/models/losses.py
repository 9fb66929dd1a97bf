import numpy as np

from ..errors import InvalidArgumentError


def ae_loss(target_log, pred_log, weights):
    """Solid-angle weighted L1 between log-domain maps.

    ``target_log`` is ``log(e + 1)`` and ``pred_log`` the decoder output, both
    ``(N, H, W, C)``; ``weights`` is ``(H, W)``. Each map's weighted sum is
    divided by ``C * sum(weights)`` and the result is averaged over the batch.
    Returns ``(loss, grad_wrt_pred)``.
    """
    target_log = np.asarray(target_log)
    pred_log = np.asarray(pred_log)
    w = np.asarray(weights)
    if target_log.shape != pred_log.shape or target_log.ndim != 4:
        raise InvalidArgumentError(f"shape mismatch: {target_log.shape} vs {pred_log.shape}")
    if w.shape != target_log.shape[1:3]:
        raise InvalidArgumentError(f"weights {w.shape} do not match maps {target_log.shape[1:3]}")
    if np.any(w < 0):
        raise InvalidArgumentError("solid-angle weights must be nonnegative")
    n, _, _, c = target_log.shape
    norm = c * w.sum()
    diff = pred_log - target_log
    wb = w[None, :, :, None]
    loss = float(np.sum(wb * np.abs(diff), dtype=np.float64) / (norm * n))
    grad = (wb * np.sign(diff) / (norm * n)).astype(pred_log.dtype, copy=False)
    return loss, grad


def ip_loss(z_target, z_pred):
    """Mean over the batch of the Euclidean distance between latent codes.

    Returns ``(loss, grad_wrt_pred)``; the gradient is taken as zero where
    the distance is exactly zero.
    """
    z_target = np.asarray(z_target)
    z_pred = np.asarray(z_pred)
    if z_target.shape != z_pred.shape:
        raise InvalidArgumentError(f"latent shape mismatch: {z_target.shape} vs {z_pred.shape}")
    if z_pred.ndim == 1:
        z_target, z_pred = z_target[None], z_pred[None]
    n = z_pred.shape[0]
    diff = z_pred - z_target
    dist = np.sqrt(np.sum(diff.astype(np.float64) ** 2, axis=1))
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0) / n
    return float(dist.mean()), grad.astype(z_pred.dtype, copy=False)
