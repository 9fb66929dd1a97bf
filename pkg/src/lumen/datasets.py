"""On-disk envmap and observation datasets.

Layouts::

    scenes dir:   scenes.json, envmaps/NNNNNN.pfm, manifest.json
    envmap dir:   envmaps/NNNNNN.pfm, manifest.json
    obs dir:      obs/NNNNNN_rgb.pfm, obs/NNNNNN_nrm.pfm, manifest.json

Manifests are written with sorted keys and no timestamps so identical
inputs give byte-identical files. Splits are assigned per scene, so every
view of one room lands in the same split.
"""

import hashlib
import json
import os

import numpy as np

from .errors import DatasetError, DegenerateExposureError, InvalidArgumentError
from .pfm import read_pfm, write_pfm
from .render import (
    NormalMap,
    build_transport,
    make_observation,
    material,
    sphere_normal_map,
    spiky_sphere_normal_map,
)
from .scenegen import SceneParams, augment, derive_rng, render_panorama, sample_scene, sample_object_rotation

SPLITS = ("train", "val", "test")
# train/val/test room proportions 1044/159/100
SPLIT_WEIGHTS = (1044, 159, 100)
MANIFEST = "manifest.json"
SCENES = "scenes.json"


def write_json(path, data):
    with open(path, "w") as f:
        f.write(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise DatasetError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path} is not valid JSON: {exc}") from None


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def split_counts(n):
    """Room counts per split; train and val round, test takes the rest."""
    total = sum(SPLIT_WEIGHTS)
    n_train = round(n * SPLIT_WEIGHTS[0] / total)
    n_val = round(n * SPLIT_WEIGHTS[1] / total)
    if n >= 3:
        n_train = min(max(n_train, 1), n - 2)
        n_val = min(max(n_val, 1), n - n_train - 1)
    return n_train, n_val, n - n_train - n_val


def assign_splits(n, seed):
    """Split label for each of ``n`` rooms, shuffled by ``seed``."""
    n_train, n_val, _ = split_counts(n)
    order = derive_rng(seed, 20).permutation(n)
    labels = [""] * n
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return labels


def scene_seeds(count, seed):
    return [int(derive_rng(seed, 10, i).integers(2**31)) for i in range(count)]


def _envmap_name(i):
    return f"envmaps/{i:06d}.pfm"


def generate_scenes(out, count, seed, height=32, width=64, params=None):
    """Sample ``count`` rooms and render each from its center.

    Returns the manifest dict.
    """
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    params = (params or SceneParams()).validate()
    os.makedirs(os.path.join(out, "envmaps"), exist_ok=True)
    seeds = scene_seeds(count, seed)
    splits = assign_splits(count, seed)
    scenes, items = [], []
    for i, (s_seed, split) in enumerate(zip(seeds, splits)):
        scene = sample_scene(s_seed, params)
        write_pfm(render_panorama(scene, scene.center, height, width), os.path.join(out, _envmap_name(i)))
        scenes.append({"index": i, "seed": s_seed, "split": split})
        items.append({
            "file": _envmap_name(i),
            "scene": i,
            "scene_seed": s_seed,
            "pose": [float(v) for v in scene.center],
            "split": split,
        })
    write_json(os.path.join(out, SCENES), {"seed": seed, "params": params.to_dict(), "scenes": scenes})
    manifest = {"height": height, "width": width, "items": items}
    write_json(os.path.join(out, MANIFEST), manifest)
    return manifest


def augment_dataset(scenes_dir, out, per_scene, seed=None, height=None, width=None):
    """Render ``per_scene`` panoramas at random interior poses of every room."""
    meta = read_json(os.path.join(scenes_dir, SCENES))
    base = read_json(os.path.join(scenes_dir, MANIFEST))
    params = SceneParams.from_dict(meta["params"])
    seed = meta["seed"] if seed is None else seed
    height = height or base["height"]
    width = width or base["width"]
    os.makedirs(os.path.join(out, "envmaps"), exist_ok=True)
    items = []
    for entry in meta["scenes"]:
        scene = sample_scene(entry["seed"], params)
        view_seed = int(derive_rng(seed, 30, entry["index"]).integers(2**31))
        maps, poses = augment(scene, per_scene, height, width, view_seed)
        for e, pose in zip(maps, poses):
            name = _envmap_name(len(items))
            write_pfm(e, os.path.join(out, name))
            items.append({
                "file": name,
                "scene": entry["index"],
                "scene_seed": entry["seed"],
                "pose": [float(v) for v in pose],
                "split": entry["split"],
            })
    manifest = {"height": height, "width": width, "items": items}
    write_json(os.path.join(out, MANIFEST), manifest)
    return manifest


def load_envmaps(root, split=None):
    """``(maps, items)`` for an envmap directory, optionally one split only."""
    manifest = read_json(os.path.join(root, MANIFEST))
    items = [it for it in manifest["items"] if split is None or it["split"] == split]
    maps = []
    for row, it in enumerate(items):
        path = os.path.join(root, it["file"])
        if not os.path.exists(path):
            raise DatasetError(f"manifest row {row}: missing envmap {it['file']}")
        e = read_pfm(path)
        if e.shape[:2] != (manifest["height"], manifest["width"]):
            raise DatasetError(f"manifest row {row}: {it['file']} has shape {e.shape}")
        maps.append(e)
    shape = (0, manifest["height"], manifest["width"], 3)
    return (np.stack(maps) if maps else np.zeros(shape, np.float32)), items


def object_normals(obj, size, rotation=None):
    """Normal map for ``sphere``, ``spiky`` or a path to an encoded normal PFM."""
    if obj == "sphere":
        return sphere_normal_map(size)
    if obj == "spiky":
        return spiky_sphere_normal_map(size, rotation=rotation)
    if os.path.exists(obj):
        return NormalMap.from_encoded(read_pfm(obj))
    raise InvalidArgumentError(f"object must be sphere, spiky or a normal-map PFM, got {obj!r}")


def render_dataset(envmap_dir, out, obj="sphere", material_name="diffuse", size=128, seed=0, splits=None):
    """Render one observation per envmap of ``envmap_dir``.

    Spiky objects get a random orientation per item; the transport matrix is
    otherwise shared by every item.
    """
    brdf = material(material_name)
    src = read_json(os.path.join(envmap_dir, MANIFEST))
    h, w = src["height"], src["width"]
    os.makedirs(os.path.join(out, "obs"), exist_ok=True)
    rotates = obj == "spiky"
    shared = None
    if not rotates:
        nm = object_normals(obj, size)
        shared = build_transport(nm, brdf, h, w)
    rows = []
    for i, it in enumerate(src["items"]):
        if splits is not None and it["split"] not in splits:
            continue
        path = os.path.join(envmap_dir, it["file"])
        if not os.path.exists(path):
            raise DatasetError(f"manifest row {i}: missing envmap {it['file']}")
        e = read_pfm(path).astype(np.float64)
        rotation = None
        if rotates:
            pose = sample_object_rotation(int(derive_rng(seed, 40, i).integers(2**31)))
            rotation = [pose.theta, pose.phi]
            nm = object_normals(obj, size, pose.rotation())
            transport = build_transport(nm, brdf, h, w)
        else:
            transport = shared
        try:
            ob = make_observation(nm, brdf, e, transport)
        except DegenerateExposureError as exc:
            raise DatasetError(f"manifest row {i}: {exc}") from None
        stem = f"obs/{len(rows):06d}"
        write_pfm(ob.rgb, os.path.join(out, stem + "_rgb.pfm"))
        write_pfm(nm.encoded(), os.path.join(out, stem + "_nrm.pfm"))
        rows.append({
            "rgb": stem + "_rgb.pfm",
            "nrm": stem + "_nrm.pfm",
            "envmap": os.path.relpath(path, out),
            "material": material_name,
            "rotation": rotation,
            "split": it["split"],
            "exposure": float(ob.exposure),
        })
    manifest = {
        "object": obj,
        "material": material_name,
        "size": size,
        "envmap_height": h,
        "envmap_width": w,
        "seed": seed,
        "items": rows,
    }
    write_json(os.path.join(out, MANIFEST), manifest)
    return manifest


def load_observations(root, split=None):
    """``(inputs, envmaps, rows)`` with inputs ``(N, S, S, 6)``."""
    manifest = read_json(os.path.join(root, MANIFEST))
    rows = [r for r in manifest["items"] if split is None or r["split"] == split]
    h, w = manifest["envmap_height"], manifest["envmap_width"]
    inputs, maps = [], []
    for i, r in enumerate(rows):
        try:
            rgb = read_pfm(os.path.join(root, r["rgb"]))
            nm = NormalMap.from_encoded(read_pfm(os.path.join(root, r["nrm"])))
            e = read_pfm(os.path.join(root, r["envmap"]))
        except FileNotFoundError as exc:
            raise DatasetError(f"manifest row {i}: missing file {exc.filename}") from None
        if rgb.shape[:2] != nm.mask.shape or e.shape[:2] != (h, w):
            raise DatasetError(f"manifest row {i}: image or envmap size does not match the manifest")
        x = np.concatenate([rgb, nm.normals], axis=-1)
        inputs.append(np.where(nm.mask[..., None], x, 0.0))
        maps.append(e)
    if not rows:
        s = manifest["size"]
        return np.zeros((0, s, s, 6)), np.zeros((0, h, w, 3)), rows
    return np.stack(inputs), np.stack(maps), rows
