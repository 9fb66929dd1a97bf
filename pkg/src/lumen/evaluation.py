"""Per-item lighting evaluation across estimation methods.

Method specs:

- ``predictor``: learned predictor followed by the decoder
- ``sh:L``: degree-L SH lighting fitted through the object's transport
  matrix, either to the unclipped linear render (``sh_input="hdr"``, the
  best case for the fit) or to the clipped LDR observation (``"ldr"``)
- ``mean``: the mean training envmap, whatever the input
- ``oracle``: the ground truth itself

A method that cannot run on an item (missing checkpoint, failed fit) yields
a row with empty metrics and a message in the ``errors`` column.
"""

import csv
import hashlib
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .datasets import MANIFEST, read_json, write_json
from .envmap import solid_angle_weights
from .errors import InvalidArgumentError, LumenError
from .metrics import evaluate_map, relight_error
from .pfm import read_pfm
from .render import NormalMap, TransportMatrix, build_transport, material, render_with_transport
from .shfit import FitConfig, build_design_matrix, fit_sh
from .sphharm import reconstruct

CSV_FIELDS = ("object", "material", "method", "rmse", "si_rmse", "mae", "mre", "relight_rmse", "alpha", "errors")
METRICS = ("rmse", "si_rmse", "mae", "mre", "relight_rmse")
CLIP_LEVEL = 1.0 - 1e-6
SH_INPUTS = ("hdr", "ldr")


def parse_methods(spec):
    """``"predictor,sh:5"`` -> ``[("predictor", None), ("sh", 5)]``."""
    out = []
    for token in (t.strip() for t in spec.split(",")):
        if not token:
            continue
        name, _, arg = token.partition(":")
        if name == "sh":
            try:
                degree = int(arg)
            except ValueError:
                raise InvalidArgumentError(f"sh method needs an integer degree, got {token!r}") from None
            if degree < 0:
                raise InvalidArgumentError(f"SH degree must be >= 0, got {degree}")
            out.append(("sh", degree))
        elif name in ("predictor", "mean", "oracle") and not arg:
            out.append((name, None))
        else:
            raise InvalidArgumentError(f"unknown method {token!r}")
    if not out:
        raise InvalidArgumentError("no methods given")
    return out


def method_label(method):
    name, arg = method
    return f"{name}:{arg}" if arg is not None else name


@dataclass
class EvalReport:
    rows: list
    summary: dict
    provenance: dict = field(default_factory=dict)

    def write(self, out_dir, stem="metrics"):
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, stem + ".csv")
        with open(csv_path, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=CSV_FIELDS, lineterminator="\n")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({k: _csv_value(r.get(k)) for k in CSV_FIELDS})
        json_path = os.path.join(out_dir, stem + ".json")
        write_json(json_path, {"rows": self.rows, "summary": self.summary, "provenance": self.provenance})
        return csv_path, json_path


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def sh_estimate(rgb, exposure, T, degree, lam=None):
    """Clamped SH lighting fitted to the unclipped pixels of an LDR image.

    Pixel values are divided by ``exposure`` to undo the re-exposure gain.
    """
    pix = np.asarray(rgb, dtype=np.float64)[T.mask]
    keep = np.all(pix < CLIP_LEVEL, axis=1)
    if keep.sum() < 1:
        raise LumenError("every object pixel is clipped")
    sub = TransportMatrix(T.matrix[keep], T.mask, T.env_shape)
    cfg = FitConfig(degree=degree, lam=lam)
    A = build_design_matrix(sub, degree)
    fit = fit_sh(pix[keep] / exposure, sub, cfg, A=A)
    h, w = T.env_shape
    return reconstruct(fit.coeffs, h, w, clamped=True)


def mean_training_map(obs_dir, manifest=None):
    manifest = manifest or read_json(os.path.join(obs_dir, MANIFEST))
    files = [r["envmap"] for r in manifest["items"] if r["split"] == "train"]
    if not files:
        return None
    total = None
    for f in files:
        e = read_pfm(os.path.join(obs_dir, f)).astype(np.float64)
        total = e if total is None else total + e
    return total / len(files)


def _hash_array(a):
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


class _TransportCache:
    def __init__(self, h, w):
        self.h, self.w = h, w
        self.cache = {}

    def get(self, nm, brdf):
        key = (_hash_array(nm.normals), brdf)
        if key not in self.cache:
            if len(self.cache) > 8:
                self.cache.clear()
            self.cache[key] = build_transport(nm, brdf, self.h, self.w)
        return self.cache[key]


def evaluate_dataset(obs_dir, methods, ae=None, ip=None, mean_map=None, split="test",
                     relight_material="diffuse", limit=None, lam=None, sh_input="hdr"):
    """Evaluate every ``split`` item of an observation dataset."""
    if sh_input not in SH_INPUTS:
        raise InvalidArgumentError(f"sh_input must be one of {SH_INPUTS}, got {sh_input!r}")
    methods = parse_methods(methods) if isinstance(methods, str) else list(methods)
    manifest = read_json(os.path.join(obs_dir, MANIFEST))
    h, w = manifest["envmap_height"], manifest["envmap_width"]
    weights = solid_angle_weights(h, w)
    relight_brdf = material(relight_material)
    if mean_map is None and any(m[0] == "mean" for m in methods):
        mean_map = mean_training_map(obs_dir, manifest)
    transports = _TransportCache(h, w)
    items = [(i, r) for i, r in enumerate(manifest["items"]) if split is None or r["split"] == split]
    if limit is not None:
        items = items[:limit]
    rows, latency = [], []
    for idx, r in items:
        rgb = read_pfm(os.path.join(obs_dir, r["rgb"])).astype(np.float64)
        nm = NormalMap.from_encoded(read_pfm(os.path.join(obs_dir, r["nrm"])))
        gt = read_pfm(os.path.join(obs_dir, r["envmap"])).astype(np.float64)
        t_relight = transports.get(nm, relight_brdf)
        for method in methods:
            row = {
                "object": f"{manifest['object']}#{idx:06d}",
                "material": r["material"],
                "method": method_label(method),
                "errors": "",
            }
            try:
                t0 = time.perf_counter()
                pred = _estimate(method, rgb, nm, r, gt, ae, ip, mean_map, transports, lam, sh_input)
                if method[0] == "predictor":
                    latency.append(time.perf_counter() - t0)
                rec = evaluate_map(pred, gt, weights)
                row.update(
                    rmse=rec.rmse, si_rmse=rec.si_rmse, mae=rec.mae, mre=rec.mre, alpha=rec.alpha,
                    relight_rmse=relight_error(np.maximum(pred, 0.0), gt, nm, relight_brdf, t_relight),
                )
            except LumenError as exc:
                row.update({k: None for k in METRICS + ("alpha",)})
                row["errors"] = str(exc)
            rows.append(row)
    provenance = {
        "dataset": os.path.abspath(obs_dir),
        "split": split,
        "methods": [method_label(m) for m in methods],
        "relight_material": relight_material,
        "sh_input": sh_input,
        "autoencoder_hash": ae.params_hash() if ae is not None else None,
        "predictor_hash": ip.params_hash() if ip is not None else None,
        "predictor_seconds_per_item": float(np.mean(latency)) if latency else None,
    }
    return EvalReport(rows, summarize(rows), provenance)


def _estimate(method, rgb, nm, row, gt, ae, ip, mean_map, transports, lam, sh_input):
    name, arg = method
    if name == "oracle":
        return gt
    if name == "mean":
        if mean_map is None:
            raise LumenError("no training envmaps for the mean baseline")
        return mean_map
    if name == "predictor":
        if ae is None or ip is None:
            raise LumenError("predictor needs both autoencoder and predictor checkpoints")
        x = np.concatenate([rgb, nm.normals], axis=-1)
        x = np.where(nm.mask[..., None], x, 0.0)
        if ip.cfg.latent != ae.cfg.latent:
            raise LumenError("predictor and autoencoder latent sizes differ")
        return ae.decode(ip.predict_latent(x))
    T = transports.get(nm, material(row["material"]))
    if sh_input == "hdr":
        fit = fit_sh(render_with_transport(T, gt), T, FitConfig(degree=arg, lam=lam))
        return reconstruct(fit.coeffs, *T.env_shape, clamped=True)
    return sh_estimate(rgb, row["exposure"], T, arg, lam)


def summarize(rows):
    """Mean and median of every metric per method, ignoring failed rows."""
    out = {}
    for label in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == label and not r["errors"]]
        stats = {"count": len(sel), "failed": sum(1 for r in rows if r["method"] == label and r["errors"])}
        for m in METRICS:
            vals = [r[m] for r in sel if r[m] is not None and math.isfinite(r[m])]
            stats[m] = {
                "mean": float(np.mean(vals)) if vals else None,
                "median": float(np.median(vals)) if vals else None,
            }
        out[label] = stats
    return out


def win_rate(rows, method, baseline, metric):
    """Fraction of items where ``method`` has a strictly lower ``metric`` than ``baseline``."""
    a = {r["object"]: r[metric] for r in rows if r["method"] == method and not r["errors"]}
    b = {r["object"]: r[metric] for r in rows if r["method"] == baseline and not r["errors"]}
    common = sorted(set(a) & set(b))
    if not common:
        return float("nan")
    return sum(a[k] < b[k] for k in common) / len(common)
