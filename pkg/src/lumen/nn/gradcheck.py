"""Finite-difference verification of backward passes."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError
from .layers import iter_params


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    checked: int


def relative_error(analytic, numeric, floor=1e-8):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(network, x, loss_fn, h=1e-5, check_input=True, max_per_param=None, rng=None, noise_floor=1e-6):
    """Compare backprop against central differences for every parameter.

    ``loss_fn(out)`` returns ``(loss, dloss/dout)``. The network is run in
    train mode so batch statistics are part of the checked function. Requires
    64-bit parameters and input.

    Central differences carry roughly ``eps * |loss| / h`` of rounding noise,
    so denominators are floored at ``noise_floor * |loss|`` (and at 1e-8);
    gradients below that floor are compared in absolute terms.
    """
    if np.asarray(x).dtype != np.float64:
        raise InvalidArgumentError("gradient checking requires float64 input")
    params = list(iter_params(network))
    if any(layer.params[key].dtype != np.float64 for _, layer, key in params):
        raise InvalidArgumentError("gradient checking requires float64 parameters")

    def run():
        out = network.forward(x, train=True)
        return loss_fn(out)

    # running statistics drift with every forward; restore them afterwards
    saved = {id(layer): {k: v.copy() for k, v in layer.buffers.items()} for _, layer in network.named_layers()}
    loss0, dout = run()
    dx = network.backward(dout)
    floor = max(1e-8, noise_floor * abs(float(loss0)))
    analytic = {name: layer.grads[key].copy() for name, layer, key in params}

    worst, worst_name, checked = 0.0, "", 0
    targets = [(name, layer.params[key], analytic[name]) for name, layer, key in params]
    if check_input:
        targets.append(("input", x, dx))
    for name, arr, grad in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_per_param, replace=False)
        gflat = grad.reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = run()[0]
            flat[i] = orig - h
            fm = run()[0]
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            err = float(relative_error(gflat[i], num, floor))
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    for _, layer in network.named_layers():
        layer.buffers.update(saved[id(layer)])
    return GradCheckReport(worst, worst_name, checked)
