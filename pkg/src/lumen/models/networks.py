"""Environment-map autoencoder and illumination predictor."""

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..envmap import log_decode, log_encode
from ..errors import ConfigError, InvalidArgumentError
from ..nn import (
    ELU,
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    Reshape,
    ResidualBlock,
    Sequential,
    UpsampleConv,
    iter_buffers,
    iter_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
    tensors_hash,
)
from ..scenegen import derive_rng

SEED_GRID = (4, 8)
LOG_CEILING = 700.0  # expm1 stays finite in float64 below ~709.78
_FULL_DECODER = (64, 64, 32, 16)


class _Config:
    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class AEConfig(_Config):
    height: int = 32
    width: int = 64
    latent: int = 32
    enc_channels: tuple = (32, 64)
    res_blocks: int = 4
    dec_channels: tuple = ()  # per upsample stage input width; () derives from resolution
    lr: float = 1e-3
    lr_final: float | None = None  # cosine decay target; None keeps lr constant
    batch_size: int = 16
    epochs: int = 50
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.latent < 1:
            raise ConfigError("latent size must be >= 1")
        if self.width != 2 * self.height:
            raise ConfigError("envmap width must be twice the height")
        if self.height % SEED_GRID[0] or self.height < SEED_GRID[0]:
            raise ConfigError(f"height must be a multiple of {SEED_GRID[0]}")
        stages = self.upsample_stages
        if 2**stages * SEED_GRID[0] != self.height:
            raise ConfigError(f"height {self.height} is not {SEED_GRID[0]} times a power of two")
        if self.height % 4:
            raise ConfigError("height must be divisible by 4 (two stride-2 convolutions)")
        if self.dec_channels and len(self.dec_channels) != stages:
            raise ConfigError(f"dec_channels needs {stages} entries for {self.height} rows")

    @property
    def upsample_stages(self):
        return int(round(math.log2(self.height / SEED_GRID[0])))

    @property
    def decoder_widths(self):
        if self.dec_channels:
            return tuple(self.dec_channels)
        n = self.upsample_stages
        if n <= len(_FULL_DECODER):
            return _FULL_DECODER[-n:] if n else ()
        return (_FULL_DECODER[0],) * (n - len(_FULL_DECODER)) + _FULL_DECODER


@dataclass
class IPConfig(_Config):
    size: int = 128
    latent: int = 32
    channels: tuple = (32, 64, 128, 256)
    hidden: int = 512
    lr: float = 1e-3
    lr_final: float | None = None
    batch_size: int = 16
    epochs: int = 50
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ConfigError("the predictor has exactly 4 convolutions")
        if self.size % 16:
            raise ConfigError("input size must be divisible by 16")
        if self.latent < 1:
            raise ConfigError("latent size must be >= 1")


def _conv_bn_elu(c_in, c_out, k, stride, rng):
    return [Conv2d(c_in, c_out, k, stride, rng, bias=False), BatchNorm(c_out), ELU()]


class _Network:
    """Shared checkpoint and dtype plumbing."""

    modules = ()

    def named_modules(self):
        return [(name, getattr(self, name)) for name in self.modules]

    def tensors(self):
        out = {}
        for mname, module in self.named_modules():
            for name, layer, key in iter_params(module):
                out[f"{mname}.{name}"] = layer.params[key]
            for name, layer, key in iter_buffers(module):
                out[f"{mname}.{name}"] = layer.buffers[key]
        return out

    def load_tensors(self, tensors):
        for mname, module in self.named_modules():
            for it, attr in ((iter_params, "params"), (iter_buffers, "buffers")):
                for name, layer, key in it(module):
                    full = f"{mname}.{name}"
                    if full not in tensors:
                        raise ConfigError(f"checkpoint is missing tensor {full}")
                    cur = getattr(layer, attr)[key]
                    val = tensors[full]
                    if val.shape != cur.shape:
                        raise ConfigError(f"tensor {full} has shape {val.shape}, expected {cur.shape}")
                    getattr(layer, attr)[key] = val.astype(cur.dtype).copy()

    def params_hash(self):
        return tensors_hash(self.tensors())

    def astype(self, dtype):
        for _, module in self.named_modules():
            module.astype(dtype)
        self.dtype = np.dtype(dtype)
        return self

    def param_count(self):
        return sum(param_count(m) for _, m in self.named_modules())

    def save(self, path, extra=None):
        tensors = dict(self.tensors())
        if extra:
            tensors.update(extra)
        save_checkpoint(tensors, path)

    @classmethod
    def load(cls, ckpt_path, config):
        net = cls(config)
        net.load_tensors(load_checkpoint(ckpt_path))
        return net


class Autoencoder(_Network):
    modules = ("encoder", "decoder")

    def __init__(self, cfg, dtype=np.float32):
        self.cfg = cfg
        rng = derive_rng(cfg.seed, 100)
        h, w = cfg.height, cfg.width
        c1, c2 = cfg.enc_channels
        enc = _conv_bn_elu(3, c1, 4, 2, rng) + _conv_bn_elu(c1, c2, 4, 2, rng)
        enc += [ResidualBlock(c2, rng) for _ in range(cfg.res_blocks)]
        enc += [Flatten(), Dense(c2 * (h // 4) * (w // 4), cfg.latent, rng)]
        self.encoder = Sequential(enc)

        widths = cfg.decoder_widths
        gh, gw = SEED_GRID
        c0 = widths[0] if widths else 3
        dec = [Dense(cfg.latent, gh * gw * c0, rng), BatchNorm(gh * gw * c0), ELU(), Reshape((gh, gw, c0))]
        for i, c_in in enumerate(widths):
            if i + 1 < len(widths):
                dec += [UpsampleConv(c_in, widths[i + 1], rng, bias=False), BatchNorm(widths[i + 1]), ELU()]
            else:
                dec += [UpsampleConv(c_in, 3, rng, bias=True)]
        self.decoder = Sequential(dec)
        self.astype(dtype)

    def _check_maps(self, x):
        exp = (self.cfg.height, self.cfg.width, 3)
        if x.ndim != 4 or x.shape[1:] != exp:
            raise InvalidArgumentError(f"expected envmaps of shape (N, {exp}), got {x.shape}")

    def encode_log(self, t, train=False):
        t = np.asarray(t, dtype=self.dtype)
        self._check_maps(t)
        return self.encoder.forward(t, train)

    def decode_log(self, z, train=False):
        z = np.asarray(z, dtype=self.dtype)
        if z.ndim != 2 or z.shape[1] != self.cfg.latent:
            raise InvalidArgumentError(f"latent codes must be (N, {self.cfg.latent}), got {z.shape}")
        return self.decoder.forward(z, train)

    def encode(self, e):
        """Latent code(s) for HDR map(s) ``(H, W, 3)`` or ``(N, H, W, 3)``."""
        e = np.asarray(e)
        single = e.ndim == 3
        z = self.encode_log(log_encode(e[None] if single else e))
        return z[0] if single else z

    def decode(self, z):
        """Nonnegative HDR map(s) for latent code(s)."""
        z = np.asarray(z)
        single = z.ndim == 1
        y = self.decode_log(z[None] if single else z).astype(np.float64)
        out = log_decode(np.minimum(y, LOG_CEILING))
        return out[0] if single else out


class Predictor(_Network):
    modules = ("net",)

    def __init__(self, cfg, dtype=np.float32):
        self.cfg = cfg
        rng = derive_rng(cfg.seed, 200)
        layers, c_in = [], 6
        for c in cfg.channels:
            layers += _conv_bn_elu(c_in, c, 4, 2, rng)
            c_in = c
        s = cfg.size // 16
        layers += [Flatten(), Dense(c_in * s * s, cfg.hidden, rng), BatchNorm(cfg.hidden), ELU()]
        layers += [Dense(cfg.hidden, cfg.latent, rng)]
        self.net = Sequential(layers)
        self.astype(dtype)

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        s = self.cfg.size
        if x.ndim != 4 or x.shape[1:] != (s, s, 6):
            raise InvalidArgumentError(f"predictor input must be (N, {s}, {s}, 6), got {x.shape}")
        return self.net.forward(x, train)

    def predict_latent(self, obs):
        x = obs.to_input() if hasattr(obs, "to_input") else np.asarray(obs)
        single = x.ndim == 3
        z = self.forward(x[None] if single else x)
        return z[0] if single else z


def predict_lighting(ip, ae, obs):
    """Decode the latent code predicted from an observation."""
    if ip.cfg.latent != ae.cfg.latent:
        raise ConfigError(
            f"predictor latent size {ip.cfg.latent} does not match autoencoder {ae.cfg.latent}"
        )
    return ae.decode(ip.predict_latent(obs))
