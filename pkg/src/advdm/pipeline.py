"""Experiment orchestration: train models, run (attack, defense, seed)
cells, score them, and emit CSV results plus a hashed run manifest.

A run executes up to three routes per seed: the clean baseline, the
configured attack undefended, and (when a defense is configured) the
attack followed by the defense. Routes within one seed are paired: the
inversion and generation streams are tagged by (seed, class) only, so
every route shares initialization and sampling noise and differences
between rows isolate the attack/defense effect.

Cells are independent; a stage error marks the cell failed and the run
continues. All writes go through this orchestrator thread (single
writer), and artifact files never embed wall-clock data, so reruns with
identical config and seeds reproduce every manifest hash bit for bit.
Timings live only in the manifest, outside the hashed set.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .attacks import (AttackConfig, advdm, embedding_attack, pgd_classifier,
                      pgd_dm)
from .checkpoint import file_sha256, save_checkpoint
from .classifier import Classifier, ClassifierTrainConfig, train_classifier
from .codec import CodecTrainConfig, LatentCodec, train_codec
from .config import validate_config
from .datasets import Dataset, load_dataset
from .defenses import DefenseConfig, apply_defense
from .diffusion import (Denoiser, DiffusionSchedule, TrainConfig,
                        train_denoiser)
from .errors import ConfigError
from .inversion import (InversionConfig, generate_from_inversion, invert,
                        style_transfer)
from .metrics import embed, frechet, precision_recall
from .tensor import Float, RngStream, Tensor

log = logging.getLogger("advdm.pipeline")

SCENARIOS = ("text2img_inversion", "style_transfer", "img2img")

# Per-seed roots live in a namespace disjoint from the small literal
# seeds used by unit-test fixtures.
SEED_OFFSET = 1000


def _seed_root(seed: int) -> RngStream:
    return RngStream(SEED_OFFSET + int(seed))


# ---------------------------------------------------------------------------
# model bundle


@dataclass
class ModelBundle:
    """Everything one seed needs: data, codec, diffusion model, classifier,
    per-class groups and reference features."""

    seed: int
    dataset: Dataset
    codec: LatentCodec | None
    sched: DiffusionSchedule
    denoiser: Denoiser
    classifier: Classifier | None
    groups: dict
    refs: dict


def make_schedule(model_cfg: dict) -> DiffusionSchedule:
    ctor = {"linear": DiffusionSchedule.linear,
            "quadratic": DiffusionSchedule.quadratic}[model_cfg["schedule"]]
    return ctor(model_cfg["timesteps"], model_cfg["beta_start"],
                model_cfg["beta_end"])


def build_bundle(cfg: dict, seed: int) -> ModelBundle:
    """Train every model for one seed under the validated stream tags."""
    root = _seed_root(seed)
    ds = load_dataset(cfg["dataset"], root.child("data"))
    X = ds.flat
    mc, tc = cfg["model"], cfg["train"]

    use_codec = cfg["dataset"]["kind"] != "gaussian_mixture_2d"
    codec = None
    if use_codec:
        codec = LatentCodec(X.shape[1], mc["latent_dim"],
                            root.child("codec_init"), hidden=mc["codec_hidden"])
        train_codec(codec, X,
                    CodecTrainConfig(steps=tc["codec_steps"], lr=tc["codec_lr"]),
                    root.child("codec_train"))
        space = codec.encode(Tensor(X)).data
    else:
        space = X

    sched = make_schedule(mc)
    den = Denoiser(space.shape[1], root.child("den_init"),
                   cond_dim=mc["cond_dim"], time_dim=mc["time_dim"],
                   hidden=mc["denoiser_hidden"], depth=mc["denoiser_depth"],
                   n_classes=ds.n_classes)
    train_denoiser(den, sched, space, ds.labels,
                   TrainConfig(steps=tc["diffusion_steps"],
                               batch_size=tc["batch_size"],
                               lr=tc["diffusion_lr"],
                               uncond_prob=tc["uncond_prob"],
                               cond_noise=tc["cond_noise"],
                               ema_decay=tc["ema_decay"]),
                   root.child("den_train"))

    clf = None
    if ds.n_classes >= 2:
        clf = Classifier(X.shape[1], ds.n_classes, root.child("clf_init"),
                         hidden=mc["classifier_hidden"],
                         depth=mc["classifier_depth"])
        train_classifier(clf, X, ds.labels,
                         ClassifierTrainConfig(steps=tc["classifier_steps"],
                                               lr=tc["classifier_lr"]),
                         root.child("clf_train"))

    gsize = cfg["group"]["size"]
    groups = {k: ds.class_indices(k)[:gsize] for k in range(ds.n_classes)}
    for k, idx in groups.items():
        if idx.size < gsize:
            raise ConfigError(
                f"class {k} has {idx.size} items, group size {gsize}")
    refs = {k: embed(codec, X[ds.class_indices(k)]) for k in range(ds.n_classes)}
    return ModelBundle(seed, ds, codec, sched, den, clf, groups, refs)


def save_bundle(bundle: ModelBundle, out_dir) -> dict:
    """Checkpoint every model; returns {relname: sha256}."""
    os.makedirs(out_dir, exist_ok=True)
    hashes = {}
    den_path = os.path.join(out_dir, "denoiser.ckpt")
    save_checkpoint(den_path, bundle.denoiser, bundle.sched)
    hashes["denoiser.ckpt"] = file_sha256(den_path)
    if bundle.codec is not None:
        p = os.path.join(out_dir, "codec.ckpt")
        save_checkpoint(p, bundle.codec)
        hashes["codec.ckpt"] = file_sha256(p)
    if bundle.classifier is not None:
        p = os.path.join(out_dir, "classifier.ckpt")
        save_checkpoint(p, bundle.classifier)
        hashes["classifier.ckpt"] = file_sha256(p)
    return hashes


# ---------------------------------------------------------------------------
# cells


ATTACK_FNS = {
    "advdm": advdm,
    "pgd_dm": pgd_dm,
    "embedding_attack": embedding_attack,
    "pgd_classifier": pgd_classifier,
}


@dataclass
class CellResult:
    scenario: str
    attack: str
    defense: str
    seed: int
    epsilon: float
    alpha: float
    n_steps: int
    fid: float | None = None
    fid_per_class: list = field(default_factory=list)
    precision: float | None = None
    recall: float | None = None
    status: str = "ok"
    error: str = ""
    # adversarial (original, perturbed) pairs per class, for budget audits
    adversarial: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def attack_config_from(acfg: dict, pixel_data: bool) -> AttackConfig:
    # point data has no codec and no clamping range; diffusion runs on it
    # directly, so latent mode only applies to image datasets
    return AttackConfig(epsilon=acfg["epsilon"], alpha=acfg["alpha"],
                        n_steps=acfg["n_steps"],
                        mode=acfg["mode"] if pixel_data else "pixel",
                        data_range=(0.0, 1.0) if pixel_data else None)


def run_attack(name: str, bundle: ModelBundle, x0: np.ndarray, k: int,
                acfg: AttackConfig, conditional: bool, root: RngStream):
    rng = root.child(f"atk_{name}_c{k}")
    if name in ("advdm", "pgd_dm"):
        c = bundle.denoiser.class_embedding(k) if conditional else None
        fn = ATTACK_FNS[name]
        return fn(bundle.denoiser, bundle.sched, bundle.codec, x0, c, acfg, rng)
    if name == "embedding_attack":
        if bundle.codec is None:
            raise ConfigError("embedding_attack needs a codec")
        return embedding_attack(bundle.codec, x0, acfg, rng)
    if name == "pgd_classifier":
        if bundle.classifier is None:
            raise ConfigError("pgd_classifier needs a trained classifier")
        labels = np.full(x0.shape[0], k, dtype=np.int64)
        return pgd_classifier(bundle.classifier, x0, labels, acfg, rng)
    raise ConfigError(f"unknown attack {name!r}")


def _tile_to(x: np.ndarray, count: int) -> np.ndarray:
    reps = int(np.ceil(count / x.shape[0]))
    return np.concatenate([x] * reps, axis=0)[:count]


def run_cell(cfg: dict, bundle: ModelBundle, attack: str, defense: str) -> CellResult:
    """One (attack, defense, seed) cell: perturb each class group, defend,
    extract the condition, generate, and score against class references."""
    acfg_d = cfg["attack"]
    res = CellResult(scenario=cfg["scenario"], attack=attack, defense=defense,
                     seed=bundle.seed,
                     epsilon=acfg_d["epsilon"] if attack != "none" else 0.0,
                     alpha=acfg_d["alpha"], n_steps=acfg_d["n_steps"])
    root = _seed_root(bundle.seed)
    pixel = bundle.dataset.kind != "gaussian_mixture_2d"
    acfg = attack_config_from(acfg_d, pixel)
    icfg = InversionConfig(**cfg["inversion"])
    dcfg = DefenseConfig(kind=defense, quality=cfg["defense"]["quality"],
                         tv_weight=cfg["defense"]["tv_weight"],
                         tv_iters=cfg["defense"]["tv_iters"],
                         factor=cfg["defense"]["factor"],
                         t_star=cfg["defense"]["t_star"])
    count = cfg["generation"]["count"]
    strength = cfg["generation"]["strength"]

    gen_feats, fids = [], []
    t_stage = {"attack": 0.0, "defense": 0.0, "invert": 0.0,
               "generate": 0.0, "metrics": 0.0}
    for k in sorted(bundle.groups):
        x0 = bundle.dataset.flat[bundle.groups[k]]

        t0 = time.perf_counter()
        if attack == "none":
            x_adv = x0.copy()
        else:
            out = run_attack(attack, bundle, x0, k, acfg,
                              acfg_d["conditional"], root)
            x_adv = out.x_adv
            res.adversarial.append((k, x0, x_adv))
        t_stage["attack"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        if defense == "none":
            x_in = x_adv
        else:
            x_in = apply_defense(x_adv, dcfg, model=bundle.denoiser,
                                 sched=bundle.sched, codec=bundle.codec,
                                 rng=root.child(f"def_{defense}_c{k}"))
            x_in = x_in.reshape(x_adv.shape)
        t_stage["defense"] += time.perf_counter() - t0

        scenario = cfg["scenario"]
        t0 = time.perf_counter()
        if scenario in ("text2img_inversion", "style_transfer"):
            inv = invert(bundle.denoiser, bundle.sched, bundle.codec, x_in,
                         icfg, root.child(f"inv_c{k}"))
            cond = inv.embedding
        else:  # img2img: the prompt is the known class
            cond = bundle.denoiser.class_embedding(k).data
        t_stage["invert"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        if scenario == "text2img_inversion":
            gen = generate_from_inversion(bundle.denoiser, bundle.sched,
                                          bundle.codec, cond, count,
                                          root.child(f"gen_c{k}"))
        else:
            sources = _tile_to(x_in, count)
            gen = style_transfer(bundle.denoiser, bundle.sched, bundle.codec,
                                 cond, sources, root.child(f"gen_c{k}"),
                                 strength=strength)
        t_stage["generate"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        ge = embed(bundle.codec, gen)
        fids.append(frechet(ge, bundle.refs[k]))
        gen_feats.append(ge)
        t_stage["metrics"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    all_refs = np.vstack([bundle.refs[k] for k in sorted(bundle.groups)])
    prec, rec = precision_recall(all_refs, np.vstack(gen_feats),
                                 k=cfg["metrics"]["knn_k"])
    t_stage["metrics"] += time.perf_counter() - t0

    res.fid = float(np.mean(fids))
    res.fid_per_class = [float(f) for f in fids]
    res.precision = prec
    res.recall = rec
    res.timings = {k: round(v, 3) for k, v in t_stage.items()}
    return res


def plan_routes(cfg: dict) -> list:
    """Clean baseline, then the configured attack, then attack+defense."""
    routes = [("none", "none")]
    if cfg["attack"]["name"] != "none":
        routes.append((cfg["attack"]["name"], "none"))
        if cfg["defense"]["kind"] != "none":
            routes.append((cfg["attack"]["name"], cfg["defense"]["kind"]))
    elif cfg["defense"]["kind"] != "none":
        routes.append(("none", cfg["defense"]["kind"]))
    return routes


# ---------------------------------------------------------------------------
# run-level orchestration


@dataclass
class RunManifest:
    config_sha256: str
    checkpoints: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    n_cells: int = 0
    n_failed: int = 0

    def hash_set(self) -> dict:
        """Everything criterion-level determinism compares."""
        out = {"config": self.config_sha256}
        out.update({f"checkpoint:{k}": v for k, v in self.checkpoints.items()})
        out.update({f"artifact:{k}": v for k, v in self.artifacts.items()})
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"config_sha256": self.config_sha256,
             "checkpoints": self.checkpoints,
             "artifacts": self.artifacts,
             "timings": self.timings,
             "n_cells": self.n_cells,
             "n_failed": self.n_failed},
            indent=2, sort_keys=True)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


RESULT_COLUMNS = [
    ("scenario", "str", "generation scenario the cell ran"),
    ("attack", "str", "attack op applied to the image group (none = clean)"),
    ("defense", "str", "preprocessing defense applied after the attack"),
    ("seed", "int", "cell seed"),
    ("epsilon", "float", "L-infinity budget (0 for the clean route)"),
    ("alpha", "float", "attack step size"),
    ("n_steps", "int", "attack iterations"),
    ("fid", "float", "macro-mean Frechet distance, generated vs class references"),
    ("fid_per_class", "str", "per-class Frechet distances, pipe-joined"),
    ("precision", "float", "k-NN precision of pooled generations"),
    ("recall", "float", "k-NN recall of pooled generations"),
    ("status", "str", "ok, or error when the cell aborted"),
    ("error", "str", "first stage error message for failed cells"),
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(rows: list, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c[0] for c in RESULT_COLUMNS])
        for r in rows:
            w.writerow([
                r.scenario, r.attack, r.defense, r.seed, _fmt(r.epsilon),
                _fmt(r.alpha), r.n_steps, _fmt(r.fid),
                "|".join(repr(f) for f in r.fid_per_class),
                _fmt(r.precision), _fmt(r.recall), r.status, r.error,
            ])


def write_sidecar_schema(csv_path, columns: list):
    path = str(csv_path) + ".schema.json"
    doc = {"file": os.path.basename(str(csv_path)),
           "columns": [{"name": n, "type": t, "description": d}
                       for n, t, d in columns]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return path


def run_scenario(cfg: dict, out_dir=None, bundles: dict | None = None):
    """Execute every (route, seed) cell; returns (results, manifest).

    cfg is validated (or re-validated) first. With `bundles`, pretrained
    per-seed ModelBundles are reused; otherwise each seed trains fresh.
    Writes results.csv (+ sidecar schema), per-seed checkpoints, and
    manifest.json under out_dir when given.
    """
    cfg = validate_config(cfg)
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg['scenario']!r}")
    out_dir = cfg["output_dir"] if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)

    manifest = RunManifest(config_sha256=config_hash(cfg))
    routes = plan_routes(cfg)
    rows = []
    t_run = time.perf_counter()
    for seed in cfg["seeds"]:
        t_seed = time.perf_counter()
        try:
            bundle = bundles[seed] if bundles and seed in bundles \
                else build_bundle(cfg, seed)
        except Exception as exc:
            log.exception("seed %d: model build failed", seed)
            for attack, defense in routes:
                rows.append(CellResult(
                    scenario=cfg["scenario"], attack=attack, defense=defense,
                    seed=seed, epsilon=cfg["attack"]["epsilon"],
                    alpha=cfg["attack"]["alpha"],
                    n_steps=cfg["attack"]["n_steps"], status="error",
                    error=f"bundle: {exc}"))
            continue
        ck = save_bundle(bundle, os.path.join(out_dir, f"checkpoints/seed{seed}"))
        manifest.checkpoints.update(
            {f"seed{seed}/{name}": sha for name, sha in ck.items()})
        manifest.timings[f"seed{seed}/train_s"] = round(
            time.perf_counter() - t_seed, 3)

        for attack, defense in routes:
            t_cell = time.perf_counter()
            try:
                res = run_cell(cfg, bundle, attack, defense)
            except Exception as exc:
                log.exception("cell (%s, %s, seed %d) failed",
                              attack, defense, seed)
                res = CellResult(
                    scenario=cfg["scenario"], attack=attack, defense=defense,
                    seed=seed, epsilon=cfg["attack"]["epsilon"],
                    alpha=cfg["attack"]["alpha"],
                    n_steps=cfg["attack"]["n_steps"], status="error",
                    error=str(exc))
            res.timings["cell_s"] = round(time.perf_counter() - t_cell, 3)
            manifest.timings[f"seed{seed}/{attack}+{defense}"] = res.timings
            rows.append(res)

    csv_path = os.path.join(out_dir, "results.csv")
    write_results_csv(rows, csv_path)
    schema_path = write_sidecar_schema(csv_path, RESULT_COLUMNS)
    manifest.artifacts["results.csv"] = file_sha256(csv_path)
    manifest.artifacts["results.csv.schema.json"] = file_sha256(schema_path)
    manifest.n_cells = len(rows)
    manifest.n_failed = sum(1 for r in rows if r.status != "ok")
    manifest.timings["run_s"] = round(time.perf_counter() - t_run, 3)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    return rows, manifest


SWEEP_AXES = {
    "steps": ("n_steps", [10, 40, 100]),
    "budget": ("epsilon", [2.0 / 255, 4.0 / 255, 8.0 / 255, 16.0 / 255]),
}


def run_sweep(cfg: dict, axis: str, values=None, out_dir=None,
              bundles: dict | None = None):
    """Ablate one attack knob; one clean cell per seed plus one attacked
    cell per (seed, value). Bundles are shared across values, so models
    train once per seed. Returns (rows, manifest)."""
    cfg = validate_config(cfg)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; want steps|budget")
    key, default_values = SWEEP_AXES[axis]
    values = list(default_values) if values is None else list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if cfg["attack"]["name"] == "none":
        raise ConfigError("sweep needs an attack to ablate")
    out_dir = cfg["output_dir"] if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)

    manifest = RunManifest(config_sha256=config_hash(cfg))
    rows = []
    t_run = time.perf_counter()
    for seed in cfg["seeds"]:
        t_seed = time.perf_counter()
        bundle = bundles[seed] if bundles and seed in bundles \
            else build_bundle(cfg, seed)
        ck = save_bundle(bundle, os.path.join(out_dir, f"checkpoints/seed{seed}"))
        manifest.checkpoints.update(
            {f"seed{seed}/{name}": sha for name, sha in ck.items()})
        manifest.timings[f"seed{seed}/train_s"] = round(
            time.perf_counter() - t_seed, 3)

        cells = [(dict(cfg["attack"]), "none", True)]
        for v in values:
            acfg = dict(cfg["attack"])
            acfg[key] = float(v) if key == "epsilon" else int(v)
            cells.append((acfg, acfg["name"], False))
        for acfg, attack, _is_clean in cells:
            sub = copy.deepcopy(cfg)
            sub["attack"] = acfg
            try:
                res = run_cell(sub, bundle, attack, "none")
            except Exception as exc:
                log.exception("sweep cell (%s=%s, seed %d) failed",
                              key, acfg[key], seed)
                res = CellResult(scenario=cfg["scenario"], attack=attack,
                                 defense="none", seed=seed,
                                 epsilon=acfg["epsilon"], alpha=acfg["alpha"],
                                 n_steps=acfg["n_steps"], status="error",
                                 error=str(exc))
            manifest.timings[f"seed{seed}/{attack}:{key}={acfg[key]}"] = \
                res.timings
            rows.append(res)

    csv_path = os.path.join(out_dir, "results.csv")
    write_results_csv(rows, csv_path)
    schema_path = write_sidecar_schema(csv_path, RESULT_COLUMNS)
    manifest.artifacts["results.csv"] = file_sha256(csv_path)
    manifest.artifacts["results.csv.schema.json"] = file_sha256(schema_path)
    for p in emit_plot_data(rows, out_dir):
        manifest.artifacts[os.path.basename(p)] = file_sha256(p)
        manifest.artifacts[os.path.basename(p) + ".schema.json"] = \
            file_sha256(p + ".schema.json")
    manifest.n_cells = len(rows)
    manifest.n_failed = sum(1 for r in rows if r.status != "ok")
    manifest.timings["run_s"] = round(time.perf_counter() - t_run, 3)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    return rows, manifest


# ---------------------------------------------------------------------------
# figure data


PLOT_SPECS = {
    "fid_vs_steps.csv": {
        "x": "n_steps",
        "y": "fid",
        "description": "attack-iteration ablation of generation damage",
    },
    "precision_vs_steps.csv": {
        "x": "n_steps",
        "y": "precision",
        "description": "attack-iteration ablation of generation precision",
    },
    "fid_vs_budget.csv": {
        "x": "epsilon",
        "y": "fid",
        "description": "perturbation-budget ablation of generation damage",
    },
}


def emit_plot_data(rows: list, out_dir) -> list:
    """One CSV per figure analog, rows sorted by the x column then seed.

    Only attacked, undefended cells that completed feed the figures; an
    empty selection still writes the header so downstream parsing is
    uniform.
    """
    os.makedirs(out_dir, exist_ok=True)
    usable = [r for r in rows
              if r.status == "ok" and r.attack != "none" and r.defense == "none"]
    paths = []
    for fname, spec in PLOT_SPECS.items():
        cols = [spec["x"], "seed", "attack", spec["y"]]
        sel = sorted(usable, key=lambda r: (getattr(r, spec["x"]), r.seed,
                                            r.attack))
        path = os.path.join(out_dir, fname)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in sel:
                w.writerow([_fmt(getattr(r, c)) if not isinstance(
                    getattr(r, c), str) else getattr(r, c) for c in cols])
        schema_cols = [
            (spec["x"], "float" if spec["x"] == "epsilon" else "int",
             "swept value: " + spec["description"]),
            ("seed", "int", "cell seed"),
            ("attack", "str", "attack op"),
            (spec["y"], "float", "cell metric"),
        ]
        write_sidecar_schema(path, schema_cols)
        paths.append(path)
    return paths


def read_plot_csv(path) -> list:
    """Parse-back helper: list of row dicts with numeric fields restored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            parsed = {}
            for key, val in row.items():
                try:
                    parsed[key] = int(val)
                except ValueError:
                    try:
                        parsed[key] = float(val)
                    except ValueError:
                        parsed[key] = val
            out.append(parsed)
        return out
