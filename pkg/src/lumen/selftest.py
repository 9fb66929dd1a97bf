"""Fast invariant checks run by ``lumen selftest``."""

import math
from dataclasses import dataclass

import numpy as np

from .envmap import solid_angle_weights
from .metrics import rmse, si_rmse
from .models import AEConfig, Autoencoder, IPConfig, Predictor, ae_loss, ip_loss
from .nn import Sequential, grad_check
from .pfm import decode_pfm, encode_pfm
from .render import MATERIALS, build_transport, render_direct, render_with_transport, sphere_normal_map
from .sphharm import basis_matrix


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_solid_angle():
    worst = 0.0
    for h in (1, 2, 7, 64, 256):
        total = solid_angle_weights(h, 2 * h).sum()
        worst = max(worst, abs(total - 4 * math.pi) / (4 * math.pi))
    return worst < 1e-9, f"max relative deviation from 4pi {worst:.2e}"


def check_sh_orthonormality():
    B = basis_matrix(128, 256, 8)
    w = solid_angle_weights(128, 256).reshape(-1, 1)
    G = B.T @ (w * B)
    off = np.abs(G - np.diag(np.diag(G))).max()
    diag = np.abs(np.diag(G) - 1.0).max()
    return off < 5e-3 and diag < 5e-3, f"off-diagonal {off:.2e}, diagonal {diag:.2e}"


def check_render_oracle():
    rng = np.random.default_rng(0)
    nm = sphere_normal_map(16)
    worst = 0.0
    for brdf in MATERIALS.values():
        e = rng.uniform(0, 2, size=(8, 16, 3))
        T = build_transport(nm, brdf, 8, 16)
        worst = max(worst, np.abs(render_with_transport(T, e) - render_direct(nm, brdf, e)).max())
    const = render_with_transport(build_transport(nm, MATERIALS["diffuse"], 64, 128), np.ones((64, 128, 3)))
    lam = np.abs(const[nm.mask] - 0.5).max()
    return worst < 1e-10 and lam < 1e-3, f"transport vs direct {worst:.1e}, constant-light Lambert error {lam:.1e}"


def check_pfm_roundtrip():
    img = np.random.default_rng(1).normal(size=(5, 7, 3)).astype(np.float32)
    back = decode_pfm(encode_pfm(img))
    return bool(np.array_equal(img, back)), "5x7 float32 image"


def check_metrics():
    rng = np.random.default_rng(2)
    w = solid_angle_weights(8, 16)
    e = rng.uniform(0, 3, size=(8, 16, 3))
    scale = max(si_rmse(k * e, e, w)[0] for k in (0.5, 2.0, 10.0))
    order = all(
        si_rmse(p, e, w)[0] <= rmse(p, e, w) + 1e-12 for p in rng.uniform(0, 3, size=(20, 8, 16, 3))
    )
    return scale < 1e-9 and order, f"scale invariance {scale:.1e}, si_rmse <= rmse on 20 pairs"


def check_gradients():
    ae = Autoencoder(AEConfig(height=8, width=16, latent=3, enc_channels=(2, 3), res_blocks=1, dec_channels=(3,)), np.float64)
    w = solid_angle_weights(8, 16)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, size=(2, 8, 16, 3))
    target = rng.uniform(0, 1, size=(2, 8, 16, 3))
    r_ae = grad_check(Sequential([ae.encoder, ae.decoder]), x, lambda out: ae_loss(target, out, w), max_per_param=6)
    ip = Predictor(IPConfig(size=16, latent=3, channels=(2, 2, 2, 2), hidden=4), np.float64)
    xi = rng.uniform(0, 1, size=(3, 16, 16, 6))
    zt = rng.normal(size=(3, 3))
    r_ip = grad_check(ip.net, xi, lambda out: ip_loss(zt, out), max_per_param=6)
    worst = max(r_ae.max_rel_error, r_ip.max_rel_error)
    return worst < 1e-4, f"max relative error {worst:.1e} over {r_ae.checked + r_ip.checked} entries"


CHECKS = (
    ("solid-angle weights sum to 4pi", check_solid_angle),
    ("SH basis orthonormal on 128x256", check_sh_orthonormality),
    ("transport render matches direct render", check_render_oracle),
    ("PFM round trip", check_pfm_roundtrip),
    ("metric scale invariance and ordering", check_metrics),
    ("network gradients match finite differences", check_gradients),
)


def run_checks():
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))
    return out
