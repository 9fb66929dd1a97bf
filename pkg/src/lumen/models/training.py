"""Training loops for the autoencoder and the illumination predictor.

Both loops are deterministic for a fixed seed when BLAS runs on one thread:
initialization and batch order derive from ``cfg.seed`` only.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..envmap import log_encode, solid_angle_weights
from ..errors import DatasetError, InvalidArgumentError, StateError, TrainingDivergedError
from ..nn import Adam
from ..scenegen import derive_rng
from .losses import ae_loss, ip_loss
from .networks import Autoencoder, Predictor

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = math.inf
    steps: int = 0
    optimizer: object = None

    @property
    def train_losses(self):
        return [h["train_loss"] for h in self.history]


def _lr_at(cfg, step, total):
    if cfg.lr_final is None or total <= 1:
        return cfg.lr
    frac = min(step / (total - 1), 1.0)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        # a single-item batch has no batch statistics
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


class _Logger:
    def __init__(self, log_path, timing_path):
        self.files = [open(p, "w") if p else None for p in (log_path, timing_path)]

    def write(self, record, seconds):
        loss_f, time_f = self.files
        if loss_f:
            loss_f.write(json.dumps(record) + "\n")
            loss_f.flush()
        if time_f:
            time_f.write(json.dumps({"epoch": record["epoch"], "seconds": seconds}) + "\n")
            time_f.flush()

    def close(self):
        for f in self.files:
            if f:
                f.close()


def _fit(model, net_forward, net_backward, loss_fn, x, y, cfg, val, log_path, timing_path, eval_fn):
    n = len(x)
    if n < 2:
        raise DatasetError("training needs at least two items")
    batch = max(2, min(cfg.batch_size, n))
    per_epoch = len(_batches(n, batch, np.random.default_rng(0)))
    total = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    opt = Adam(lr=cfg.lr)
    result = TrainResult(model, optimizer=opt)
    best_tensors = None
    logger = _Logger(log_path, timing_path)
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            losses = []
            for idx in _batches(n, batch, derive_rng(cfg.seed, 300, epoch)):
                out = net_forward(x[idx], True)
                loss, grad = loss_fn(y[idx], out)
                if not math.isfinite(loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}", last_good_epoch=epoch - 1
                    )
                for _, m in model.named_modules():
                    m.zero_grad()
                net_backward(grad)
                opt.lr = _lr_at(cfg, step, total)
                for name, m in model.named_modules():
                    opt.step_module(m, name)
                losses.append(loss)
                step += 1
                if step >= total:
                    break
            train_loss = float(np.mean(losses))
            val_loss = eval_fn(*val) if val is not None else None
            record = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
            result.history.append(record)
            logger.write(record, time.perf_counter() - t0)
            score = val_loss if val_loss is not None else train_loss
            if score < result.best_loss:
                result.best_loss, result.best_epoch = score, epoch
                best_tensors = {k: v.copy() for k, v in model.tensors().items()}
            if step >= total:
                break
    except TrainingDivergedError:
        logger.close()
        raise
    logger.close()
    result.steps = step
    if best_tensors is not None:
        model.load_tensors(best_tensors)
    return result


def ae_eval_loss(ae, maps, batch_size=64):
    """Eval-mode loss over HDR ``maps``."""
    w = solid_angle_weights(ae.cfg.height, ae.cfg.width)
    t = log_encode(np.asarray(maps)).astype(ae.dtype)
    total = 0.0
    for i in range(0, len(t), batch_size):
        chunk = t[i : i + batch_size]
        pred = ae.decode_log(ae.encode_log(chunk))
        total += ae_loss(chunk, pred, w)[0] * len(chunk)
    return total / len(t)


def train_autoencoder(train_maps, cfg, val_maps=None, log_path=None, timing_path=None, model=None):
    """Fit the autoencoder on HDR maps ``(N, H, W, 3)`` with the weighted log-L1 loss."""
    train_maps = np.asarray(train_maps)
    if train_maps.ndim != 4 or train_maps.shape[1:] != (cfg.height, cfg.width, 3):
        raise InvalidArgumentError(
            f"training maps must be (N, {cfg.height}, {cfg.width}, 3), got {train_maps.shape}"
        )
    ae = model or Autoencoder(cfg)
    w = solid_angle_weights(cfg.height, cfg.width).astype(ae.dtype)
    t = log_encode(train_maps).astype(ae.dtype)

    def forward(xb, train):
        return ae.decoder.forward(ae.encoder.forward(xb, train), train)

    def backward(g):
        ae.encoder.backward(ae.decoder.backward(g))

    def loss_fn(target, out):
        return ae_loss(target, out, w)

    val = (np.asarray(val_maps),) if val_maps is not None and len(val_maps) else None
    return _fit(
        ae, forward, backward, loss_fn, t, t, cfg, val,
        log_path, timing_path, lambda maps: ae_eval_loss(ae, maps),
    )


def encode_targets(ae, maps, batch_size=64):
    maps = np.asarray(maps)
    return np.concatenate([ae.encode(maps[i : i + batch_size]) for i in range(0, len(maps), batch_size)])


def ip_eval_loss(ip, inputs, targets, batch_size=64):
    total = 0.0
    for i in range(0, len(inputs), batch_size):
        z = ip.forward(inputs[i : i + batch_size])
        total += ip_loss(targets[i : i + batch_size], z)[0] * len(z)
    return total / len(inputs)


def train_predictor(inputs, envmaps, ae, cfg, val=None, log_path=None, timing_path=None, model=None):
    """Fit the predictor to the frozen encoder's codes of the lighting maps.

    ``inputs`` is ``(N, S, S, 6)``; ``envmaps`` the matching HDR maps. ``val``
    is an optional ``(inputs, envmaps)`` pair.
    """
    inputs = np.asarray(inputs)
    if len(inputs) != len(envmaps):
        raise DatasetError(f"{len(inputs)} observations but {len(envmaps)} environment maps")
    if cfg.latent != ae.cfg.latent:
        raise InvalidArgumentError(f"predictor latent {cfg.latent} != autoencoder latent {ae.cfg.latent}")
    before = ae.params_hash()
    targets = encode_targets(ae, envmaps)
    ip = model or Predictor(cfg)
    x = inputs.astype(ip.dtype)

    def forward(xb, train):
        return ip.net.forward(xb, train)

    val_data = None
    if val is not None and len(val[0]):
        val_data = (np.asarray(val[0]).astype(ip.dtype), encode_targets(ae, val[1]))
    result = _fit(
        ip, forward, ip.net.backward, ip_loss, x, targets.astype(ip.dtype), cfg, val_data,
        log_path, timing_path, lambda xi, zi: ip_eval_loss(ip, xi, zi),
    )
    if ae.params_hash() != before:
        raise StateError("autoencoder parameters changed while training the predictor")
    return result
