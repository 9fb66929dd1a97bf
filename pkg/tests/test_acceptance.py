"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
happen; they are also collected in the terminal summary. The slow criteria
(8, 9, 10) together take about twenty minutes on one core.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from lumen import scenegen
from lumen.datasets import augment_dataset, generate_scenes, load_envmaps, load_observations, render_dataset
from lumen.envmap import rotation_y, rotation_z, solid_angle_weights
from lumen.evaluation import evaluate_dataset, win_rate
from lumen.metrics import mae, mre, rmse, si_rmse
from lumen.models import (
    AEConfig,
    Autoencoder,
    IPConfig,
    Predictor,
    ae_loss,
    ip_loss,
    predict_lighting,
    train_autoencoder,
    train_predictor,
)
from lumen.nn import (
    ELU,
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    Reshape,
    ResidualBlock,
    Sequential,
    Upsample2x,
    UpsampleConv,
    grad_check,
)
from lumen.render import (
    MATERIALS,
    build_transport,
    make_observation,
    render_direct,
    render_with_transport,
    sphere_normal_map,
    spiky_sphere_normal_map,
)
from lumen.shfit import FitConfig, build_design_matrix, fit_sh
from lumen.sphharm import basis_matrix, num_coeffs, project, reconstruct

pytestmark = pytest.mark.acceptance


def test_01_solid_angle_sums(criterion):
    t = time.perf_counter()
    worst = max(
        abs(solid_angle_weights(h, 2 * h).sum() - 4 * math.pi) / (4 * math.pi) for h in (1, 2, 7, 64, 256)
    )
    dt = time.perf_counter() - t
    ok = worst < 1e-9 and dt < 1.0
    assert criterion(1, "solid-angle weights sum to 4pi", ok, f"max rel dev {worst:.1e}, {dt:.3f} s")


def test_02_sh_orthonormality(criterion):
    t = time.perf_counter()
    B = basis_matrix(128, 256, 8)
    G = B.T @ (solid_angle_weights(128, 256).reshape(-1, 1) * B)
    off = np.abs(G - np.diag(np.diag(G))).max()
    diag = np.abs(np.diag(G) - 1.0).max()
    dt = time.perf_counter() - t
    ok = off < 5e-3 and diag < 5e-3 and dt < 30
    assert criterion(2, "SH Gram matrix", ok, f"off-diag {off:.1e}, diag {diag:.1e}, {dt:.1f} s")


def test_03_sh_round_trip(criterion):
    rng = np.random.default_rng(3)
    t = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        # magnitudes bounded away from zero keep the relative error meaningful
        c0 = rng.uniform(0.5, 1.0, size=(36, 3)) * rng.choice([-1.0, 1.0], size=(36, 3))
        c = project(reconstruct(c0, 64, 128), 5)
        worst = max(worst, float(np.max(np.abs(c - c0) / np.abs(c0))))
    dt = time.perf_counter() - t
    ok = worst < 0.01 and dt < 30
    assert criterion(3, "SH project/reconstruct round trip", ok, f"max rel coeff error {worst:.1e}, {dt:.1f} s")


def test_04_degree_coefficient_pairs(criterion):
    pairs = [(5, 36), (7, 64), (11, 144), (15, 256), (22, 529)]
    got = [(L, num_coeffs(L)) for L in (5, 7, 11, 15, 22)]
    assert criterion(4, "degree/coefficient pairs", got == pairs, str(got))


def test_05_render_oracle(criterion):
    rng = np.random.default_rng(5)
    t = time.perf_counter()
    worst = 0.0
    for _ in range(10):
        if rng.random() < 0.5:
            nm = sphere_normal_map(24)
        else:
            R = rotation_z(rng.uniform(0, 2 * np.pi)) @ rotation_y(rng.uniform(-1, 1))
            nm = spiky_sphere_normal_map(24, amplitude=rng.uniform(0.05, 0.3), freq=int(rng.integers(2, 8)), rotation=R)
        brdf = MATERIALS[rng.choice(sorted(MATERIALS))]
        e = rng.gamma(0.5, 2.0, size=(16, 32, 3))
        T = build_transport(nm, brdf, 16, 32)
        worst = max(worst, float(np.abs(render_with_transport(T, e) - render_direct(nm, brdf, e)).max()))
    nm = sphere_normal_map(32)
    lit = render_with_transport(build_transport(nm, MATERIALS["diffuse"], 64, 128), np.ones((64, 128, 3)))
    lam = float(np.abs(lit[nm.mask] - 0.5).max())
    dt = time.perf_counter() - t
    ok = worst < 1e-10 and lam < 1e-3 and dt < 120
    assert criterion(5, "transport render matches direct render", ok,
                     f"max abs diff {worst:.1e}, constant-light Lambert dev {lam:.1e}, {dt:.1f} s")


def test_06_sh_fit_exact_recovery(criterion):
    rng = np.random.default_rng(6)
    t = time.perf_counter()
    nm = sphere_normal_map(32)
    glossy = build_transport(nm, MATERIALS["glossy"], 32, 64)
    A = build_design_matrix(glossy, 5)
    worst_glossy = 0.0
    for _ in range(10):
        c0 = rng.uniform(0.5, 1.0, size=(36, 3)) * rng.choice([-1.0, 1.0], size=(36, 3))
        c = fit_sh(A @ c0, glossy, FitConfig(5, lam=1e-10), A=A).coeffs
        worst_glossy = max(worst_glossy, float(np.max(np.abs(c - c0) / np.abs(c0))))
    diffuse = build_transport(nm, MATERIALS["diffuse"], 32, 64)
    worst_diffuse = 0.0
    for _ in range(10):
        c0 = rng.uniform(0.5, 1.0, size=(9, 3)) * rng.choice([-1.0, 1.0], size=(9, 3))
        c0[0] = 4.0
        img = render_with_transport(diffuse, reconstruct(c0, 32, 64))
        c = fit_sh(img, diffuse, FitConfig(2, lam=1e-10)).coeffs
        worst_diffuse = max(worst_diffuse, float(np.max(np.abs(c - c0) / np.abs(c0))))
    dt = time.perf_counter() - t
    ok = worst_glossy < 0.01 and worst_diffuse < 0.02 and dt < 120
    assert criterion(6, "SH fit recovers known lighting", ok,
                     f"glossy L=5 {worst_glossy:.1e}, diffuse L=2 {worst_diffuse:.1e}, {dt:.1f} s")


def _sq_loss(target):
    def fn(out):
        d = out - target
        return 0.5 * float(np.sum(d * d)), d

    return fn


def _layer_cases():
    r = np.random.default_rng
    return {
        "Dense": (Dense(5, 3, r(1)), (4, 5)),
        "Conv2d stride 1": (Conv2d(2, 3, 3, 1, r(2)), (2, 5, 5, 2)),
        "Conv2d stride 2": (Conv2d(2, 3, 4, 2, r(3)), (2, 6, 8, 2)),
        "Upsample2x": (Upsample2x(), (2, 3, 4, 2)),
        "UpsampleConv": (UpsampleConv(2, 2, r(4)), (2, 3, 4, 2)),
        "ELU": (ELU(), (3, 7)),
        "BatchNorm dense": (BatchNorm(3), (5, 3)),
        "BatchNorm spatial": (BatchNorm(2), (3, 3, 3, 2)),
        "ResidualBlock": (ResidualBlock(2, r(5)), (2, 4, 4, 2)),
        "Flatten/Reshape": (Sequential([Flatten(), Dense(12, 12, r(6)), Reshape((2, 3, 2))]), (2, 2, 3, 2)),
    }


def test_07_gradient_checks(criterion):
    t = time.perf_counter()
    errors = {}
    for name, (net, shape) in _layer_cases().items():
        net.astype(np.float64)
        x = np.random.default_rng(9).normal(size=shape)
        target = np.random.default_rng(10).normal(size=net.forward(x).shape)
        errors[name] = grad_check(net, x, _sq_loss(target)).max_rel_error

    rng = np.random.default_rng(11)
    ae = Autoencoder(AEConfig(height=8, width=16, latent=3, enc_channels=(2, 3), res_blocks=1, dec_channels=(3,)), np.float64)
    w = solid_angle_weights(8, 16)
    target = rng.uniform(0, 1, size=(2, 8, 16, 3))
    errors["autoencoder + loss"] = grad_check(
        Sequential([ae.encoder, ae.decoder]), rng.uniform(0, 1, size=(2, 8, 16, 3)), lambda out: ae_loss(target, out, w)
    ).max_rel_error
    ip = Predictor(IPConfig(size=16, latent=3, channels=(2, 2, 2, 2), hidden=4), np.float64)
    zt = rng.normal(size=(3, 3))
    errors["predictor + loss"] = grad_check(
        ip.net, rng.uniform(0, 1, size=(3, 16, 16, 6)), lambda out: ip_loss(zt, out)
    ).max_rel_error
    dt = time.perf_counter() - t
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and dt < 120
    assert criterion(7, "finite-difference gradient checks", ok,
                     f"{len(errors)} cases, worst {worst} {errors[worst]:.1e}, {dt:.1f} s")


def _procedural_maps(seed0, rooms, views, h):
    out = []
    for i in range(rooms):
        scene = scenegen.sample_scene(seed0 + i)
        maps, _ = scenegen.augment(scene, views, h, 2 * h, seed0 + i)
        out.extend(maps)
    return np.array(out)


def test_08_overfit(criterion):
    t = time.perf_counter()
    maps = _procedural_maps(800, 8, 1, 16)
    ae_cfg = dict(height=16, width=32, latent=16, enc_channels=(16, 32), dec_channels=(64, 32),
                  batch_size=8, lr=1e-2, lr_final=1e-5)
    ae_run = train_autoencoder(maps, AEConfig(epochs=2000, **ae_cfg))
    ae_ratio = ae_run.train_losses[-1] / ae_run.train_losses[0]

    nm = sphere_normal_map(64)
    obs = np.array([make_observation(nm, MATERIALS["diffuse"], e).to_input() for e in maps])
    base = train_autoencoder(maps, AEConfig(epochs=200, **ae_cfg)).model
    ip_run = train_predictor(
        obs, maps, base,
        IPConfig(size=64, latent=16, channels=(8, 16, 32, 64), hidden=128, batch_size=8, epochs=2000,
                 lr=1e-2, lr_final=1e-5),
    )
    ip_ratio = ip_run.train_losses[-1] / ip_run.train_losses[0]
    dt = time.perf_counter() - t
    steps = (len(ae_run.history), len(ip_run.history))
    ok = ae_ratio < 0.05 and ip_ratio < 0.05 and max(steps) <= 2000 and dt < 600
    assert criterion(8, "overfit 8 maps / 8 observations", ok,
                     f"AE final/epoch-1 {ae_ratio:.2%}, predictor {ip_ratio:.2%}, {steps} steps, {dt:.0f} s")


def test_09_capacity_trend(criterion):
    t = time.perf_counter()
    train = _procedural_maps(1000, 96, 4, 32)
    held = _procedural_maps(5000, 32, 1, 32)
    w = solid_angle_weights(32, 64)
    scores = {}
    for z in (16, 64):
        cfg = AEConfig(latent=z, epochs=20, lr=2e-3, lr_final=1e-5, batch_size=16)
        ae = train_autoencoder(train, cfg, val_maps=held).model
        rec = ae.decode(ae.encode(held))
        scores[z] = float(np.mean([si_rmse(p, g, w)[0] for p, g in zip(rec, held)]))
    dt = time.perf_counter() - t
    ok = scores[64] < scores[16] and dt < 1200
    assert criterion(9, "AE capacity trend", ok,
                     f"val si-RMSE Z=16 {scores[16]:.3f}, Z=64 {scores[64]:.3f}, {dt:.0f} s")


E2E_AE = dict(latent=64, epochs=25, lr=2e-3, lr_final=1e-5)
E2E_IP = dict(channels=(16, 32, 64, 64), hidden=128, epochs=60, lr=2e-3, lr_final=1e-5)
E2E_SIZE = 64
E2E_VIEWS = 8  # camera positions per training room


def test_10_end_to_end(criterion, tmp_path):
    t = time.perf_counter()
    generate_scenes(tmp_path / "train_scenes", 256, seed=11)
    augment_dataset(tmp_path / "train_scenes", tmp_path / "train_views", E2E_VIEWS)
    generate_scenes(tmp_path / "test_scenes", 32, seed=12)
    render_dataset(tmp_path / "train_views", tmp_path / "train_obs", "sphere", "diffuse", size=E2E_SIZE)
    render_dataset(tmp_path / "test_scenes", tmp_path / "test_obs", "sphere", "diffuse", size=E2E_SIZE)

    maps, items = load_envmaps(tmp_path / "train_views")
    fit = np.array([it["split"] != "test" for it in items])
    x, env, _ = load_observations(tmp_path / "train_obs")
    ae = train_autoencoder(maps[fit], AEConfig(**E2E_AE), val_maps=maps[~fit]).model
    ip = train_predictor(x[fit], env[fit], ae, IPConfig(size=E2E_SIZE, latent=ae.cfg.latent, **E2E_IP),
                         val=(x[~fit], env[~fit])).model
    mean_map = maps[fit].astype(np.float64).mean(axis=0)
    report = evaluate_dataset(tmp_path / "test_obs", "predictor,mean", ae, ip, mean_map, split=None)
    si = win_rate(report.rows, "predictor", "mean", "si_rmse")
    relight = win_rate(report.rows, "predictor", "mean", "relight_rmse")
    dt = time.perf_counter() - t
    ok = si >= 0.75 and relight >= 0.75 and dt < 1800
    assert criterion(10, "predictor beats training-mean envmap", ok,
                     f"win rate si-RMSE {si:.2f}, relight {relight:.2f} over {len(report.rows) // 2} items, {dt:.0f} s")


def test_11_metric_properties(criterion):
    rng = np.random.default_rng(11)
    t = time.perf_counter()
    w = solid_angle_weights(16, 32)
    e = rng.uniform(0.1, 3.0, size=(16, 32, 3))
    scale = max(si_rmse(k * e, e, w)[0] for k in (0.5, 2.0, 10.0))
    pairs = rng.uniform(0, 3, size=(100, 2, 16, 32, 3))
    order = all(si_rmse(p, g, w)[0] <= rmse(p, g, w) + 1e-12 for p, g in pairs)

    # scalar loops over a 2x4 map as the oracle
    ww = solid_angle_weights(2, 4)
    g = rng.uniform(0, 2, size=(2, 4, 3))
    p = rng.uniform(0, 2, size=(2, 4, 3))
    num_a = num_r = den = 0.0
    for i in range(2):
        for j in range(4):
            for c in range(3):
                num_a += ww[i, j] * abs(p[i, j, c] - g[i, j, c])
                num_r += ww[i, j] * abs(p[i, j, c] - g[i, j, c]) / (g[i, j, c] + 1e-3)
                den += ww[i, j]
    hand = max(abs(mae(p, g, ww) - num_a / den), abs(mre(p, g, ww) - num_r / den),
               abs(mae(np.full((2, 4, 3), 1.5), np.ones((2, 4, 3)), ww) - 0.5),
               abs(mre(np.full((2, 4, 3), 1.5), np.ones((2, 4, 3)), ww) - 0.5 / 1.001))
    dt = time.perf_counter() - t
    ok = scale < 1e-9 and order and hand < 1e-12 and dt < 10
    assert criterion(11, "metric properties", ok,
                     f"scale {scale:.1e}, si<=rmse on 100 pairs {order}, hand cases {hand:.1e}, {dt:.1f} s")


def _cli(*argv):
    cmd = [sys.executable, "-m", "lumen.cli", *map(str, argv), "--threads", "1"]
    return subprocess.run(cmd, capture_output=True, text=True).returncode


def test_12_determinism(criterion, tmp_path):
    config = tmp_path / "ae.json"
    config.write_text('{"enc_channels": [8, 16], "res_blocks": 1, "latent": 8, "batch_size": 8}')
    for run in ("a", "b"):
        root = tmp_path / run
        codes = [
            _cli("gen-scenes", "--count", 12, "--seed", 4, "--height", 16, "--out", root / "scenes"),
            _cli("augment", "--scenes", root / "scenes", "--per-scene", 3, "--out", root / "views"),
            _cli("train-ae", "--data", root / "views", "--config", config, "--epochs", 3, "--out", root / "ae"),
        ]
        assert codes == [0, 0, 0], codes
    files = ["scenes/manifest.json", "views/manifest.json", "ae/loss.jsonl", "ae/weights.lpck"]
    diff = [f for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    assert criterion(12, "CLI rerun is byte-identical", not diff, f"compared {files}, differing {diff}")


def test_13_runtime(criterion):
    ip = Predictor(IPConfig())
    ae = Autoencoder(AEConfig(latent=ip.cfg.latent))
    x = np.random.default_rng(13).uniform(size=(1, ip.cfg.size, ip.cfg.size, 6)).astype(np.float32)
    predict_lighting(ip, ae, x)
    times = []
    for _ in range(20):
        t = time.perf_counter()
        predict_lighting(ip, ae, x)
        times.append(time.perf_counter() - t)
    ms = 1000 * float(np.median(times))

    T = build_transport(sphere_normal_map(128), MATERIALS["glossy"], 32, 64)
    img = np.random.default_rng(14).uniform(size=(128, 128, 3))
    t = time.perf_counter()
    fit_sh(img, T, FitConfig(11))
    fit_s = time.perf_counter() - t
    ok = ms < 50 and fit_s < 1.0
    assert criterion(13, "runtime sanity", ok,
                     f"predict_lighting {ms:.1f} ms at {ip.cfg.size}px, fit-sh L=11 32x64 {fit_s:.2f} s")
