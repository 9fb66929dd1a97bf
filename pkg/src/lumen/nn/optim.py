import numpy as np

from ..errors import InvalidArgumentError, TrainingDivergedError
from .layers import iter_params


class Adam:
    """Adam with bias correction; state is keyed by qualified parameter name."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Update ``params`` in place from ``grads`` (dicts keyed by name)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise InvalidArgumentError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

    def step_module(self, module, prefix=""):
        params, grads = {}, {}
        for name, layer, key in iter_params(module):
            name = f"{prefix}.{name}" if prefix else name
            params[name] = layer.params[key]
            grads[name] = layer.grads[key]
        self.step(params, grads)

    def state_tensors(self):
        out = {"adam.t": np.array([float(self.t)])}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors):
        self.t = int(tensors["adam.t"][0])
        for key, val in tensors.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m."):]] = val.copy()
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v."):]] = val.copy()
