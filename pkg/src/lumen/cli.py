"""Command-line pipeline: datasets, training, inference, SH baselines and evaluation.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .datasets import (
    augment_dataset,
    file_sha256,
    generate_scenes,
    load_envmaps,
    load_observations,
    object_normals,
    read_json,
    render_dataset,
    write_json,
)
from .envmap import reexpose_ldr, tonemap_display, write_png
from .errors import ConfigError, LumenError
from .pfm import read_pfm, write_pfm
from .render import NormalMap, build_transport, material, render_with_transport
from .scenegen import SceneParams

log = logging.getLogger("lumen")

AE_FILES = ("config.json", "weights.lpck")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _hashes(paths):
    out = {}
    for p in paths:
        if os.path.isfile(p):
            out[p] = file_sha256(p)
    return out


def _dir_outputs(out_dir):
    files = []
    for root, _, names in os.walk(out_dir):
        for n in names:
            if n != "run.json":
                files.append(os.path.join(root, n))
    return {os.path.relpath(p, out_dir): file_sha256(p) for p in sorted(files)}


def write_run(out_dir, args, config=None, inputs=(), results=None, seconds=None):
    """Describe an output directory: resolved arguments, config, hashes."""
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
        "config": config,
        "seed": getattr(args, "seed", None),
        "threads": args.threads,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "inputs": _hashes(inputs),
        "outputs": _dir_outputs(out_dir),
        "results": results or {},
        "wall_seconds": seconds,
    }
    write_json(os.path.join(out_dir, "run.json"), record)
    return record


def _overrides(args, names):
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _load_config(cls, path, overrides):
    # validate only the merged result; the file alone may lack dataset-derived sizes
    base = read_json(path) if path else {}
    base.update(overrides)
    return cls.from_dict(base)


def _model_paths(model_dir):
    cfg, weights = (os.path.join(model_dir, f) for f in AE_FILES)
    for p in (cfg, weights):
        if not os.path.exists(p):
            raise ConfigError(f"model directory {model_dir} has no {os.path.basename(p)}")
    return cfg, weights


def load_autoencoder(model_dir):
    from .models import AEConfig, Autoencoder

    cfg, weights = _model_paths(model_dir)
    return Autoencoder.load(weights, AEConfig.load(cfg))


def load_predictor(model_dir):
    from .models import IPConfig, Predictor

    cfg, weights = _model_paths(model_dir)
    return Predictor.load(weights, IPConfig.load(cfg))


def _save_model(model, out_dir, optimizer=None):
    model.save(os.path.join(out_dir, "weights.lpck"), optimizer.state_tensors() if optimizer else None)
    write_json(os.path.join(out_dir, "config.json"), model.cfg.to_dict())


def _read_code(path):
    with open(path) as f:
        data = json.load(f)
    code = data["code"] if isinstance(data, dict) else data
    return np.asarray(code, dtype=np.float64)


# ---------------------------------------------------------------- commands


def cmd_gen_scenes(args):
    params = SceneParams.from_dict(read_json(args.params)) if args.params else SceneParams()
    t0 = time.perf_counter()
    m = generate_scenes(args.out, args.count, args.seed, args.height, 2 * args.height, params)
    write_run(args.out, args, params.to_dict(), [args.params] if args.params else (),
              {"items": len(m["items"])}, time.perf_counter() - t0)
    print(f"wrote {len(m['items'])} rooms to {args.out}")


def cmd_augment(args):
    t0 = time.perf_counter()
    h = args.height
    m = augment_dataset(args.scenes, args.out, args.per_scene, args.seed, h, 2 * h if h else None)
    inputs = [os.path.join(args.scenes, "scenes.json"), os.path.join(args.scenes, "manifest.json")]
    write_run(args.out, args, None, inputs, {"items": len(m["items"])}, time.perf_counter() - t0)
    print(f"wrote {len(m['items'])} envmaps to {args.out}")


def cmd_render_dataset(args):
    t0 = time.perf_counter()
    splits = args.splits.split(",") if args.splits else None
    m = render_dataset(args.envmaps, args.out, args.object, args.material, args.size, args.seed, splits)
    inputs = [os.path.join(args.envmaps, "manifest.json")]
    if os.path.isfile(args.object):
        inputs.append(args.object)
    write_run(args.out, args, None, inputs, {"items": len(m["items"])}, time.perf_counter() - t0)
    print(f"wrote {len(m['items'])} observations to {args.out}")


AE_FLAGS = ("latent", "epochs", "lr", "lr_final", "batch_size", "max_steps", "seed")


def cmd_train_ae(args):
    from .models import AEConfig, train_autoencoder
    from .plotting import plot_loss_curve

    manifest = read_json(os.path.join(args.data, "manifest.json"))
    over = _overrides(args, AE_FLAGS)
    over.setdefault("height", manifest["height"])
    over.setdefault("width", manifest["width"])
    cfg = _load_config(AEConfig, args.config, over)
    train, _ = load_envmaps(args.data, "train")
    val, _ = load_envmaps(args.data, "val")
    if len(train) == 0:
        raise LumenError(f"{args.data} has no training envmaps")
    os.makedirs(args.out, exist_ok=True)
    log.info("autoencoder: %d upsample stages, decoder widths %s", cfg.upsample_stages, cfg.decoder_widths)
    t0 = time.perf_counter()
    res = train_autoencoder(
        train, cfg, val if len(val) else None,
        os.path.join(args.out, "loss.jsonl"), os.path.join(args.out, "timing.jsonl"),
    )
    seconds = time.perf_counter() - t0
    _save_model(res.model, args.out, res.optimizer)
    plot_loss_curve(res.history, os.path.join(args.out, "loss.png"), "autoencoder")
    results = {
        "best_epoch": res.best_epoch,
        "best_loss": res.best_loss,
        "final_train_loss": res.history[-1]["train_loss"],
        "steps": res.steps,
        "upsample_stages": cfg.upsample_stages,
        "params_hash": res.model.params_hash(),
    }
    write_run(args.out, args, cfg.to_dict(), [os.path.join(args.data, "manifest.json"), args.config or ""],
              results, seconds)
    print(f"best epoch {res.best_epoch}, loss {res.best_loss:.6g}; saved {args.out}")


def cmd_encode(args):
    ae = load_autoencoder(args.model)
    z = ae.encode(read_pfm(args.envmap).astype(np.float64))
    text = json.dumps({"code": [float(v) for v in z]})
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def cmd_decode(args):
    ae = load_autoencoder(args.model)
    z = _read_code(args.code)
    write_pfm(ae.decode(z), args.out)
    print(f"wrote {args.out}")


IP_FLAGS = ("latent", "epochs", "lr", "lr_final", "batch_size", "max_steps", "seed", "hidden")


def cmd_train_ip(args):
    from .models import IPConfig, train_predictor
    from .plotting import plot_loss_curve

    ae = load_autoencoder(args.ae)
    manifest = read_json(os.path.join(args.data, "manifest.json"))
    over = _overrides(args, IP_FLAGS)
    over.setdefault("size", manifest["size"])
    over.setdefault("latent", ae.cfg.latent)
    if args.channels:
        over["channels"] = [int(c) for c in args.channels.split(",")]
    cfg = _load_config(IPConfig, args.config, over)
    x, e, _ = load_observations(args.data, "train")
    xv, ev, _ = load_observations(args.data, "val")
    if len(x) == 0:
        raise LumenError(f"{args.data} has no training observations")
    os.makedirs(args.out, exist_ok=True)
    t0 = time.perf_counter()
    res = train_predictor(
        x, e, ae, cfg, (xv, ev) if len(xv) else None,
        os.path.join(args.out, "loss.jsonl"), os.path.join(args.out, "timing.jsonl"),
    )
    seconds = time.perf_counter() - t0
    _save_model(res.model, args.out, res.optimizer)
    plot_loss_curve(res.history, os.path.join(args.out, "loss.png"), "predictor")
    results = {
        "best_epoch": res.best_epoch,
        "best_loss": res.best_loss,
        "final_train_loss": res.history[-1]["train_loss"],
        "steps": res.steps,
        "autoencoder_hash": ae.params_hash(),
        "params_hash": res.model.params_hash(),
    }
    inputs = [os.path.join(args.data, "manifest.json"), os.path.join(args.ae, "weights.lpck")]
    write_run(args.out, args, cfg.to_dict(), inputs, results, seconds)
    print(f"best epoch {res.best_epoch}, loss {res.best_loss:.6g}; saved {args.out}")


def cmd_predict(args):
    from .models import predict_lighting
    from .render import ObjectObservation

    ae, ip = load_autoencoder(args.ae), load_predictor(args.ip)
    rgb = read_pfm(args.rgb).astype(np.float64)
    nm = NormalMap.from_encoded(read_pfm(args.nrm))
    t0 = time.perf_counter()
    e = predict_lighting(ip, ae, ObjectObservation(rgb, nm))
    ms = 1000 * (time.perf_counter() - t0)
    write_pfm(e, args.out)
    print(f"wrote {args.out} ({ms:.1f} ms)")


def cmd_project_sh(args):
    from .sphharm import project, reconstruct, save_coeffs, windowed_lowpass

    e = read_pfm(args.envmap).astype(np.float64)
    c = project(e, args.degree)
    save_coeffs(c, args.out)
    if args.preview:
        shown = windowed_lowpass(c) if args.window else c
        h, w = e.shape[:2]
        write_pfm(reconstruct(shown, h, w, clamped=True), args.preview)
    print(f"wrote {args.out}")


def cmd_fit_sh(args):
    from .shfit import FitConfig, fit_sh
    from .sphharm import save_coeffs

    rgb = read_pfm(args.image).astype(np.float64)
    nm = NormalMap.from_encoded(read_pfm(args.normals))
    if rgb.shape[:2] != nm.mask.shape:
        raise LumenError(f"image {rgb.shape[:2]} and normal map {nm.mask.shape} differ in size")
    T = build_transport(nm, material(args.material), args.height, 2 * args.height)
    cfg = FitConfig(degree=args.degree, lam=args.lam, solver=args.solver)
    t0 = time.perf_counter()
    fit = fit_sh(rgb / args.exposure, T, cfg)
    seconds = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    save_coeffs(fit.coeffs, os.path.join(args.out, "coeffs.txt"))
    record = {
        "degree": fit.degree,
        "lambda": fit.lam,
        "residual": [float(r) for r in fit.residual],
        "seconds": seconds,
    }
    write_json(os.path.join(args.out, "fit.json"), record)
    write_run(args.out, args, cfg.__dict__, [args.image, args.normals], record, seconds)
    print(f"degree {fit.degree}, lambda {fit.lam:.3g}, {seconds * 1000:.1f} ms")


def cmd_eval(args):
    from .evaluation import evaluate_dataset, parse_methods
    from .plotting import plot_metric_bars

    methods = parse_methods(args.methods)
    ae = ip = None
    missing = []
    if any(m[0] == "predictor" for m in methods):
        for flag, loader in (("ae", load_autoencoder), ("ip", load_predictor)):
            path = getattr(args, flag)
            try:
                model = loader(path) if path else None
            except (ConfigError, OSError) as exc:
                model, _ = None, missing.append(str(exc))
            if flag == "ae":
                ae = model
            else:
                ip = model
    mean_map = read_pfm(args.mean_envmap).astype(np.float64) if args.mean_envmap else None
    t0 = time.perf_counter()
    report = evaluate_dataset(args.test, methods, ae, ip, mean_map, args.split, args.relight_material,
                              args.limit, args.lam, args.sh_input)
    report.provenance["load_errors"] = missing
    csv_path, json_path = report.write(args.out)
    plot_metric_bars(report.summary, os.path.join(args.out, "metrics.png"))
    _eval_grid(args, report, ae, ip, mean_map, os.path.join(args.out, "envmaps.png"))
    write_run(args.out, args, None, [os.path.join(args.test, "manifest.json")],
              report.summary, time.perf_counter() - t0)
    for label, stats in report.summary.items():
        si = stats["si_rmse"]["median"]
        print(f"{label}: median si_rmse {si if si is None else f'{si:.4g}'} ({stats['failed']} failed)")
    print(f"wrote {csv_path} and {json_path}")


def _eval_grid(args, report, ae, ip, mean_map, path, n_items=4):
    from .evaluation import _estimate, _TransportCache, mean_training_map, method_label, parse_methods
    from .plotting import plot_envmap_grid

    methods = parse_methods(args.methods)
    manifest = read_json(os.path.join(args.test, "manifest.json"))
    rows = [r for r in manifest["items"] if args.split is None or r["split"] == args.split][:n_items]
    if not rows:
        return
    if mean_map is None and any(m[0] == "mean" for m in methods):
        mean_map = mean_training_map(args.test, manifest)
    cache = _TransportCache(manifest["envmap_height"], manifest["envmap_width"])
    grid = []
    for r in rows:
        rgb = read_pfm(os.path.join(args.test, r["rgb"])).astype(np.float64)
        nm = NormalMap.from_encoded(read_pfm(os.path.join(args.test, r["nrm"])))
        gt = read_pfm(os.path.join(args.test, r["envmap"])).astype(np.float64)
        line = [gt]
        for m in methods:
            try:
                line.append(_estimate(m, rgb, nm, r, gt, ae, ip, mean_map, cache, args.lam, args.sh_input))
            except LumenError:
                line.append(None)
        grid.append(line)
    plot_envmap_grid(grid, path, ["ground truth"] + [method_label(m) for m in methods])


def cmd_relight(args):
    e = read_pfm(args.envmap).astype(np.float64)
    nm = object_normals(args.object, args.size)
    T = build_transport(nm, material(args.material), *e.shape[:2])
    hdr = render_with_transport(T, e)
    if args.exposure is None:
        img, _ = reexpose_ldr(hdr, nm.mask)
    else:
        img = hdr * args.exposure
    img[~nm.mask] = 0.0
    write_png(args.out, tonemap_display(img))
    print(f"wrote {args.out}")


def cmd_selftest(args):
    from .selftest import run_checks

    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------- parser


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="BLAS threads (default: $LUMEN_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lumen", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--version", action="version", version=f"lumen {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-scenes", cmd_gen_scenes, "sample box rooms and render their center panoramas")
    sp.add_argument("--count", type=_positive_int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--height", type=_positive_int, default=32, help="panorama rows; width is twice this")
    sp.add_argument("--params", help="JSON file overriding room sampling parameters")

    sp = add("augment", cmd_augment, "render rooms from random interior camera positions")
    sp.add_argument("--scenes", required=True, help="gen-scenes output directory")
    sp.add_argument("--per-scene", type=_positive_int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None, help="default: the gen-scenes seed")
    sp.add_argument("--height", type=_positive_int, default=None)

    sp = add("render-dataset", cmd_render_dataset, "render object observations for every envmap")
    sp.add_argument("--envmaps", required=True)
    sp.add_argument("--object", default="sphere", help="sphere, spiky or an encoded normal-map PFM")
    sp.add_argument("--material", default="diffuse", choices=("diffuse", "rough", "glossy"))
    sp.add_argument("--size", type=_positive_int, default=128)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--splits", help="comma-separated subset of train,val,test")
    sp.add_argument("--out", required=True)

    sp = add("train-ae", cmd_train_ae, "train the envmap autoencoder")
    sp.add_argument("--data", required=True, help="envmap dataset directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="AE config JSON; flags override it")
    sp.add_argument("--latent", type=_positive_int)
    sp.add_argument("--epochs", type=_positive_int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-final", type=float)
    sp.add_argument("--batch-size", type=_positive_int)
    sp.add_argument("--max-steps", type=_positive_int)
    sp.add_argument("--seed", type=int)

    sp = add("encode", cmd_encode, "latent code of an envmap")
    sp.add_argument("--model", required=True)
    sp.add_argument("--envmap", required=True)
    sp.add_argument("--out", help="JSON output (default: stdout)")

    sp = add("decode", cmd_decode, "envmap from a latent code")
    sp.add_argument("--model", required=True)
    sp.add_argument("--code", required=True, help="JSON file written by encode")
    sp.add_argument("--out", required=True)

    sp = add("train-ip", cmd_train_ip, "train the illumination predictor against a frozen autoencoder")
    sp.add_argument("--data", required=True, help="observation dataset directory")
    sp.add_argument("--ae", required=True, help="autoencoder model directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="predictor config JSON; flags override it")
    sp.add_argument("--latent", type=_positive_int)
    sp.add_argument("--channels", help="four comma-separated conv widths")
    sp.add_argument("--hidden", type=_positive_int)
    sp.add_argument("--epochs", type=_positive_int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-final", type=float)
    sp.add_argument("--batch-size", type=_positive_int)
    sp.add_argument("--max-steps", type=_positive_int)
    sp.add_argument("--seed", type=int)

    sp = add("predict", cmd_predict, "estimate lighting from one observation")
    sp.add_argument("--ae", required=True)
    sp.add_argument("--ip", required=True)
    sp.add_argument("--rgb", required=True)
    sp.add_argument("--nrm", required=True)
    sp.add_argument("--out", required=True)

    sp = add("project-sh", cmd_project_sh, "project an envmap onto real SH")
    sp.add_argument("--envmap", required=True)
    sp.add_argument("--degree", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--preview", help="also write the clamped reconstruction as PFM")
    sp.add_argument("--window", action="store_true", help="low-pass window the preview")

    sp = add("fit-sh", cmd_fit_sh, "fit SH lighting to an object image")
    sp.add_argument("--image", required=True, help="object RGB PFM")
    sp.add_argument("--normals", required=True, help="encoded normal-map PFM")
    sp.add_argument("--material", default="diffuse", choices=("diffuse", "rough", "glossy"))
    sp.add_argument("--degree", type=int, required=True)
    sp.add_argument("--lambda", dest="lam", type=float, default=None,
                    help="ridge weight (default: 1e-6 times the mean diagonal of A^T A)")
    sp.add_argument("--solver", default="cholesky", choices=("cholesky", "svd"))
    sp.add_argument("--height", type=_positive_int, default=32, help="envmap rows of the transport")
    sp.add_argument("--exposure", type=float, default=1.0, help="divide the image by this gain first")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "metrics table for estimation methods on an observation dataset")
    sp.add_argument("--methods", required=True, help="comma list of predictor, sh:L, mean, oracle")
    sp.add_argument("--test", required=True, help="observation dataset directory")
    sp.add_argument("--ae")
    sp.add_argument("--ip")
    sp.add_argument("--mean-envmap", help="PFM for the mean baseline (default: mean of train items)")
    sp.add_argument("--split", default="test")
    sp.add_argument("--relight-material", default="diffuse", choices=("diffuse", "rough", "glossy"))
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--sh-input", default="hdr", choices=("hdr", "ldr"),
                    help="fit SH to the unclipped render (hdr) or the clipped observation (ldr)")
    sp.add_argument("--limit", type=_positive_int)
    sp.add_argument("--out", required=True)

    sp = add("relight", cmd_relight, "render an object under an envmap to PNG")
    sp.add_argument("--envmap", required=True)
    sp.add_argument("--object", default="sphere")
    sp.add_argument("--material", default="diffuse", choices=("diffuse", "rough", "glossy"))
    sp.add_argument("--size", type=_positive_int, default=128)
    sp.add_argument("--exposure", type=float, default=None, help="fixed gain (default: auto re-exposure)")
    sp.add_argument("--out", required=True)

    add("selftest", cmd_selftest, "run the built-in invariant checks")
    return p


def _resolve_threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LUMEN_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"LUMEN_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"LUMEN_THREADS must be a positive integer, got {n}")
        return n
    return 1


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.threads = _resolve_threads(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lumen: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            code = args.func(args)
    except (LumenError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"lumen {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
