"""Command-line front end.

Every subcommand accepts --config (YAML, schema-validated) and --seed
(overrides the config's seed list with a single seed). Training commands
write checkpoints plus loss-curve artifacts; evaluate/sweep write the
delimited results, figure data with sidecar schemas, rendered figures,
and the hashed run manifest.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import ClassifierTrainConfig, train_classifier, accuracy
from .codec import CodecTrainConfig, LatentCodec, train_codec, reconstruction_mse
from .config import default_config, load_config
from .datasets import load_dataset
from .defenses import DefenseConfig, apply_defense
from .diffusion import Denoiser, TrainConfig, train_denoiser
from .errors import ConfigError
from .inversion import InversionConfig, generate_from_inversion, invert
from .attacks import verify_budget
from .metrics import embed
from .pipeline import (ModelBundle, _seed_root, attack_config_from,
                       build_bundle, emit_plot_data, make_schedule, run_attack,
                       run_scenario, run_sweep, SWEEP_AXES)
from .plots import image_grid, plot_loss_curve, render_run_figures
from .tensor import Tensor


def _load_cfg(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if getattr(args, "out", None):
        cfg["output_dir"] = args.out
    return cfg


def _outdir(cfg) -> str:
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _loss_artifacts(curve, out, stem):
    np.savetxt(os.path.join(out, f"{stem}_loss.csv"), np.asarray(curve),
               header="loss", comments="")
    plot_loss_curve(curve, os.path.join(out, f"{stem}_loss.png"),
                    title=f"{stem} training loss")


def _bundle(cfg, seed, models_dir=None) -> ModelBundle:
    """Load a checkpointed bundle when a models directory is given,
    otherwise train one from scratch."""
    if models_dir:
        den_path = os.path.join(models_dir, "denoiser.ckpt")
        if not os.path.exists(den_path):
            raise ConfigError(f"{den_path} not found")
        den, sched = load_checkpoint(den_path)
        codec = clf = None
        cpath = os.path.join(models_dir, "codec.ckpt")
        if os.path.exists(cpath):
            codec = load_checkpoint(cpath)
        fpath = os.path.join(models_dir, "classifier.ckpt")
        if os.path.exists(fpath):
            clf = load_checkpoint(fpath)
        root = _seed_root(seed)
        ds = load_dataset(cfg["dataset"], root.child("data"))
        gsize = cfg["group"]["size"]
        groups = {k: ds.class_indices(k)[:gsize] for k in range(ds.n_classes)}
        refs = {k: embed(codec, ds.flat[ds.class_indices(k)])
                for k in range(ds.n_classes)}
        return ModelBundle(seed, ds, codec, sched, den, clf, groups, refs)
    return build_bundle(cfg, seed)


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_train_codec(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    for seed in cfg["seeds"]:
        root = _seed_root(seed)
        ds = load_dataset(cfg["dataset"], root.child("data"))
        if cfg["dataset"]["kind"] == "gaussian_mixture_2d":
            raise ConfigError("point data uses no codec")
        codec = LatentCodec(ds.item_dim, cfg["model"]["latent_dim"],
                            root.child("codec_init"),
                            hidden=cfg["model"]["codec_hidden"])
        curve = train_codec(codec, ds.flat,
                            CodecTrainConfig(steps=cfg["train"]["codec_steps"],
                                             lr=cfg["train"]["codec_lr"]),
                            root.child("codec_train"))
        path = os.path.join(out, f"seed{seed}_codec.ckpt")
        save_checkpoint(path, codec)
        _loss_artifacts(curve, out, f"seed{seed}_codec")
        mse = reconstruction_mse(codec, ds.flat)
        print(f"seed {seed}: codec -> {path}  reconstruction mse {mse:.5f}")
    return 0


def cmd_train_diffusion(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    for seed in cfg["seeds"]:
        root = _seed_root(seed)
        ds = load_dataset(cfg["dataset"], root.child("data"))
        codec = None
        if cfg["dataset"]["kind"] != "gaussian_mixture_2d":
            if args.codec:
                codec = load_checkpoint(args.codec)
            else:
                codec = LatentCodec(ds.item_dim, cfg["model"]["latent_dim"],
                                    root.child("codec_init"),
                                    hidden=cfg["model"]["codec_hidden"])
                train_codec(codec, ds.flat,
                            CodecTrainConfig(steps=cfg["train"]["codec_steps"],
                                             lr=cfg["train"]["codec_lr"]),
                            root.child("codec_train"))
                cpath = os.path.join(out, f"seed{seed}_codec.ckpt")
                save_checkpoint(cpath, codec)
                print(f"seed {seed}: codec -> {cpath}")
            space = codec.encode(Tensor(ds.flat)).data
        else:
            space = ds.flat
        sched = make_schedule(cfg["model"])
        mc, tc = cfg["model"], cfg["train"]
        den = Denoiser(space.shape[1], root.child("den_init"),
                       cond_dim=mc["cond_dim"], time_dim=mc["time_dim"],
                       hidden=mc["denoiser_hidden"], depth=mc["denoiser_depth"],
                       n_classes=ds.n_classes)
        curve = train_denoiser(den, sched, space, ds.labels,
                               TrainConfig(steps=tc["diffusion_steps"],
                                           batch_size=tc["batch_size"],
                                           lr=tc["diffusion_lr"],
                                           uncond_prob=tc["uncond_prob"],
                                           cond_noise=tc["cond_noise"],
                                           ema_decay=tc["ema_decay"]),
                               root.child("den_train"))
        path = os.path.join(out, f"seed{seed}_denoiser.ckpt")
        save_checkpoint(path, den, sched)
        _loss_artifacts(curve, out, f"seed{seed}_diffusion")
        tail = float(np.mean(curve[-max(1, len(curve) // 10):]))
        print(f"seed {seed}: denoiser -> {path}  tail loss {tail:.4f}")
    return 0


def cmd_train_classifier(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    for seed in cfg["seeds"]:
        root = _seed_root(seed)
        ds = load_dataset(cfg["dataset"], root.child("data"))
        from .classifier import Classifier
        clf = Classifier(ds.item_dim, ds.n_classes, root.child("clf_init"),
                         hidden=cfg["model"]["classifier_hidden"],
                         depth=cfg["model"]["classifier_depth"])
        curve = train_classifier(
            clf, ds.flat, ds.labels,
            ClassifierTrainConfig(steps=cfg["train"]["classifier_steps"],
                                  lr=cfg["train"]["classifier_lr"]),
            root.child("clf_train"))
        path = os.path.join(out, f"seed{seed}_classifier.ckpt")
        save_checkpoint(path, clf)
        _loss_artifacts(curve, out, f"seed{seed}_classifier")
        acc = accuracy(clf, ds.flat, ds.labels)
        print(f"seed {seed}: classifier -> {path}  train accuracy {acc:.3f}")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    failures = 0
    for seed in cfg["seeds"]:
        bundle = _bundle(cfg, seed, args.models)
        root = _seed_root(seed)
        pixel = bundle.dataset.kind != "gaussian_mixture_2d"
        acfg = attack_config_from(cfg["attack"], pixel)
        name = cfg["attack"]["name"]
        if name == "none":
            raise ConfigError("attack subcommand needs attack.name != none")
        arrays = {}
        for k in sorted(bundle.groups):
            x0 = bundle.dataset.flat[bundle.groups[k]]
            res = run_attack(name, bundle, x0, k, acfg,
                             cfg["attack"]["conditional"], root)
            arrays[f"class{k}_x0"] = x0
            arrays[f"class{k}_adv"] = res.x_adv
            report = verify_budget(x0, res.x_adv, acfg.epsilon,
                                   data_range=acfg.data_range)
            status = "ok" if report.passed else "BUDGET VIOLATION"
            print(f"seed {seed} class {k}: {name} max|delta| "
                  f"{report.max_abs_delta:.6f} <= {acfg.epsilon:.6f}  {status}")
            failures += 0 if report.passed else 1
        path = os.path.join(out, f"seed{seed}_adversarial.ckpt")
        save_checkpoint(path, arrays)
        print(f"seed {seed}: adversarial groups -> {path}")
    return 1 if failures else 0


def cmd_invert(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    icfg = InversionConfig(**cfg["inversion"])
    for seed in cfg["seeds"]:
        bundle = _bundle(cfg, seed, args.models)
        root = _seed_root(seed)
        inputs = load_checkpoint(args.inputs) if args.inputs else None
        arrays = {}
        for k in sorted(bundle.groups):
            if inputs is not None:
                group = inputs[f"class{k}_adv"]
            else:
                group = bundle.dataset.flat[bundle.groups[k]]
            res = invert(bundle.denoiser, bundle.sched, bundle.codec, group,
                         icfg, root.child(f"inv_c{k}"))
            arrays[f"class{k}_embedding"] = res.embedding
            arrays[f"class{k}_losses"] = res.losses
            first = float(np.mean(res.losses[:max(1, len(res.losses) // 10)]))
            last = float(np.mean(res.losses[-max(1, len(res.losses) // 10):]))
            print(f"seed {seed} class {k}: inversion loss {first:.4f} -> {last:.4f}")
        path = os.path.join(out, f"seed{seed}_embeddings.ckpt")
        save_checkpoint(path, arrays)
        print(f"seed {seed}: embeddings -> {path}")
    return 0


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    count = args.count or cfg["generation"]["count"]
    for seed in cfg["seeds"]:
        bundle = _bundle(cfg, seed, args.models)
        root = _seed_root(seed)
        if args.embeddings:
            emb = load_checkpoint(args.embeddings)
            conds = {k: emb[f"class{k}_embedding"]
                     for k in sorted(bundle.groups)
                     if f"class{k}_embedding" in emb}
        else:
            conds = {k: bundle.denoiser.class_embedding(k).data
                     for k in sorted(bundle.groups)}
        arrays = {}
        for k, cond in conds.items():
            gen = generate_from_inversion(bundle.denoiser, bundle.sched,
                                          bundle.codec, cond, count,
                                          root.child(f"gen_c{k}"))
            arrays[f"class{k}"] = gen
            if bundle.dataset.kind != "gaussian_mixture_2d":
                png = os.path.join(out, f"seed{seed}_class{k}_samples.png")
                image_grid(gen[:50], png, title=f"class {k} samples")
                print(f"seed {seed} class {k}: {count} samples, grid -> {png}")
            else:
                print(f"seed {seed} class {k}: {count} samples")
        path = os.path.join(out, f"seed{seed}_generated.ckpt")
        save_checkpoint(path, arrays)
        print(f"seed {seed}: generations -> {path}")
    return 0


def cmd_defend(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    kind = cfg["defense"]["kind"]
    if kind == "none":
        raise ConfigError("defend subcommand needs defense.kind != none")
    dcfg = DefenseConfig(kind=kind, quality=cfg["defense"]["quality"],
                         tv_weight=cfg["defense"]["tv_weight"],
                         tv_iters=cfg["defense"]["tv_iters"],
                         factor=cfg["defense"]["factor"],
                         t_star=cfg["defense"]["t_star"])
    for seed in cfg["seeds"]:
        needs_model = kind == "diffpure"
        bundle = _bundle(cfg, seed, args.models) if needs_model or not args.inputs \
            else None
        root = _seed_root(seed)
        if args.inputs:
            inputs = {name: arr for name, arr in load_checkpoint(args.inputs).items()
                      if not name.endswith("_x0")}
        else:
            inputs = {f"class{k}_adv": bundle.dataset.flat[bundle.groups[k]]
                      for k in sorted(bundle.groups)}
        arrays = {}
        for name, arr in sorted(inputs.items()):
            rng = root.child(f"def_{kind}_{name}")
            defended = apply_defense(
                arr, dcfg,
                model=bundle.denoiser if bundle else None,
                sched=bundle.sched if bundle else None,
                codec=bundle.codec if bundle else None,
                rng=rng)
            arrays[name] = defended.reshape(np.asarray(arr).shape)
            delta = float(np.mean(np.abs(arrays[name] - np.asarray(arr))))
            print(f"seed {seed} {name}: {kind} mean|change| {delta:.5f}")
        path = os.path.join(out, f"seed{seed}_defended.ckpt")
        save_checkpoint(path, arrays)
        print(f"seed {seed}: defended -> {path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    rows, manifest = run_scenario(cfg, out_dir=out)
    emit_plot_data(rows, out)
    render_run_figures(out)
    for r in rows:
        fid = "-" if r.fid is None else f"{r.fid:.4f}"
        prec = "-" if r.precision is None else f"{r.precision:.3f}"
        print(f"seed {r.seed} {r.attack:>16}+{r.defense:<9} fid {fid:>8} "
              f"precision {prec:>6}  {r.status}{' ' + r.error if r.error else ''}")
    print(f"{manifest.n_cells} cells, {manifest.n_failed} failed; "
          f"results + manifest in {out}")
    return 1 if manifest.n_failed else 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    values = None
    if args.values:
        from .config import parse_budget
        raw = args.values.split(",")
        values = [parse_budget(v) if args.axis == "budget" else int(v)
                  for v in raw]
    rows, manifest = run_sweep(cfg, args.axis, values, out_dir=out)
    render_run_figures(out)
    key = SWEEP_AXES[args.axis][0]
    for r in rows:
        if r.attack == "none":
            continue
        fid = "-" if r.fid is None else f"{r.fid:.4f}"
        print(f"seed {r.seed} {key}={getattr(r, key)}: fid {fid}  {r.status}")
    print(f"{manifest.n_cells} cells, {manifest.n_failed} failed; "
          f"sweep artifacts in {out}")
    return 1 if manifest.n_failed else 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advdm",
        description="Desk-scale lab for protective perturbations against "
                    "latent diffusion models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None,
                       help="YAML experiment config (defaults otherwise)")
        p.add_argument("--seed", type=int, default=None,
                       help="run a single seed instead of the config's list")
        p.add_argument("--out", type=str, default=None,
                       help="output directory (overrides config output_dir)")

    def with_models(p):
        p.add_argument("--models", type=str, default=None,
                       help="directory of denoiser/codec/classifier checkpoints; "
                            "trains from scratch when omitted")

    p = sub.add_parser("train-codec", help="train the pixel<->latent codec")
    common(p)
    p.set_defaults(fn=cmd_train_codec)

    p = sub.add_parser("train-diffusion", help="train the latent denoiser")
    common(p)
    p.add_argument("--codec", type=str, default=None,
                   help="codec checkpoint to reuse (otherwise trains one)")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("train-classifier",
                       help="train the victim classifier baseline")
    common(p)
    p.set_defaults(fn=cmd_train_classifier)

    p = sub.add_parser("attack", help="perturb each class group")
    common(p)
    with_models(p)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("invert",
                       help="recover condition embeddings for image groups")
    common(p)
    with_models(p)
    p.add_argument("--inputs", type=str, default=None,
                   help="adversarial checkpoint from the attack subcommand "
                        "(clean groups otherwise)")
    p.set_defaults(fn=cmd_invert)

    p = sub.add_parser("generate", help="sample conditioned on embeddings")
    common(p)
    with_models(p)
    p.add_argument("--embeddings", type=str, default=None,
                   help="embeddings checkpoint from invert (class table otherwise)")
    p.add_argument("--count", type=int, default=None,
                   help="samples per class (config generation.count otherwise)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("defend", help="preprocess perturbed inputs")
    common(p)
    with_models(p)
    p.add_argument("--inputs", type=str, default=None,
                   help="checkpoint of arrays to defend (clean groups otherwise)")
    p.set_defaults(fn=cmd_defend)

    p = sub.add_parser("evaluate",
                       help="full scenario: attack, defend, invert, generate, score")
    common(p)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="ablate attack iterations or budget")
    common(p)
    p.add_argument("--axis", choices=sorted(SWEEP_AXES), default="steps",
                   help="which attack knob to sweep")
    p.add_argument("--values", type=str, default=None,
                   help="comma-separated values (axis defaults otherwise); "
                        "budget accepts fractions like 8/255")
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
