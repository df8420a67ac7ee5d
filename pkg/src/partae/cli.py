"""Command-line surface: dataset synthesis, training, latent editing,
generation, evaluation, and serving.

Every command validates its inputs, writes outputs atomically, records a
resolved key=value config (including the seed) next to its outputs, and exits
nonzero with a one-line diagnostic on failure. Config files are flat
``key = value`` text; command-line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from .data import (Dataset, LabeledCloud, SynthSpec, chair_spec,
                   load_cloud_json, load_manifest, save_cloud_json,
                   save_pts_seg, split_dataset, synth_dataset, write_dataset)
from .generative import (GanConfig, LatentGan, VaeHead, VaeTrainConfig,
                         encode_dataset_latents, train_gan, train_vae)
from .latent import EditOp, PartFeatureSet, compose, exchange_part, fuse_global, interpolate, remove_part
from .metrics import evaluate
from .model import (LpmModel, ModelConfig, TrainConfig, train)


def read_config_file(path: str) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_resolved_config(out_dir: str, command: str, resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in sorted(resolved.items())]
    ckpt.write_atomic(os.path.join(out_dir, f"{command}.resolved.cfg"),
                      ("\n".join(lines) + "\n").encode())


def _merge(args: argparse.Namespace, keys: list[str]) -> dict:
    """File config overridden by explicitly passed CLI flags."""
    file_cfg = read_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
    return resolved


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.spec:
        with open(args.spec) as fh:
            spec = SynthSpec.from_json_dict(json.load(fh))
    else:
        spec = chair_spec(points=args.points, seed=args.seed)
    spec.seed = args.seed
    ds = synth_dataset(spec, args.count)
    train_ds, val_ds, test_ds = split_dataset(ds, tuple(args.ratios), seed=args.seed)
    manifest = write_dataset(args.out, {"train": train_ds, "val": val_ds,
                                        "test": test_ds},
                             category=ds.category, k=ds.k,
                             extra_meta={"seed": args.seed,
                                         "spec": spec.to_json_dict()})
    write_resolved_config(args.out, "synth", {
        "spec": args.spec or "built-in chair", "count": args.count,
        "points": spec.points, "seed": args.seed,
        "ratios": ",".join(map(str, args.ratios))})
    print(manifest)
    return 0


def cmd_train(args) -> int:
    merged = _merge(args, ["feature_size", "parts", "points", "epochs",
                           "batch_size", "learning_rate", "metric", "pooling",
                           "seg_weight", "seed", "batchnorm"])
    train_ds = load_manifest(args.manifest, split="train")
    mc = ModelConfig(
        feature_size=int(merged.get("feature_size", 64)),
        parts=int(merged.get("parts", train_ds.k)),
        points=int(merged.get("points", train_ds.samples[0].n)),
        pooling=str(merged.get("pooling", "max")),
        batchnorm=str(merged.get("batchnorm", "true")).lower() != "false",
    )
    tc = TrainConfig(
        learning_rate=float(merged.get("learning_rate", 5e-4)),
        epochs=int(merged.get("epochs", 200)),
        batch_size=int(merged.get("batch_size", 32)),
        metric=str(merged.get("metric", "cd")),
        seg_weight=float(merged.get("seg_weight", 1.0)),
        seed=int(merged.get("seed", 0)),
    )
    model = LpmModel(mc, seed=tc.seed)
    history = train(model, train_ds, tc)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "model.lpmn"))
    ckpt.write_atomic(os.path.join(args.out, "history.json"),
                      json.dumps(history.to_json_dict(), indent=1).encode())

    if args.head:
        if args.head == "vae":
            head = VaeHead(mc.feature_size, mc.parts, beta=args.beta, seed=tc.seed)
            train_vae(model, head, train_ds,
                      VaeTrainConfig(beta=args.beta, epochs=max(1, tc.epochs // 2),
                                     batch_size=tc.batch_size, seed=tc.seed))
            head.save(os.path.join(args.out, "vae.lpmn"))
            model.save(os.path.join(args.out, "model_vae.lpmn"))
        else:
            objective = "wgan-gp" if args.head == "wgan" else "gan"
            gan = LatentGan(GanConfig(feature_size=mc.feature_size, parts=mc.parts,
                                      objective=objective, seed=tc.seed))
            latents = encode_dataset_latents(model, train_ds)
            train_gan(gan, latents, steps=args.gan_steps,
                      batch_size=tc.batch_size, seed=tc.seed)
            gan.save(os.path.join(args.out, f"{args.head}.lpmn"))

    resolved = {"manifest": args.manifest, "out": args.out,
                "head": args.head or "none", "beta": args.beta}
    resolved.update({k: str(v) for k, v in merged.items()})
    write_resolved_config(args.out, "train", resolved)
    print(os.path.join(args.out, "model.lpmn"))
    return 0


def _load_inputs(paths: list[str]) -> list[LabeledCloud]:
    return [load_cloud_json(p) for p in paths]


def _write_cloud(out_dir: str, name: str, points: np.ndarray,
                 labels: np.ndarray, pts_seg: bool = False) -> str:
    cloud = LabeledCloud(points, labels, k=int(labels.max(initial=1)))
    path = os.path.join(out_dir, f"{name}.json")
    save_cloud_json(path, cloud)
    if pts_seg:
        save_pts_seg(os.path.join(out_dir, f"{name}.pts"),
                     os.path.join(out_dir, f"{name}.seg"), cloud)
    return path


def _decode_with_labels(model: LpmModel, parts: PartFeatureSet | None,
                        global_feature: np.ndarray | None = None):
    g = fuse_global(parts) if parts is not None else global_feature
    points = model.decode(g)
    labels = model.predict_labels(points)
    return points, labels


def cmd_edit(args) -> int:
    model = LpmModel.load(args.checkpoint)
    with open(args.op) as fh:
        op = EditOp.from_json_dict(json.load(fh))
    inputs = _load_inputs(args.inputs)
    encoded = [model.encode(c) for c in inputs]
    os.makedirs(args.out, exist_ok=True)
    written = []

    if op.kind == "exchange":
        if len(encoded) < 2:
            raise ValueError("exchange needs two input clouds (target, donor)")
        edited = exchange_part(encoded[0].parts, encoded[1].parts, op.part_id)
        pts, lbl = _decode_with_labels(model, edited)
        written.append(_write_cloud(args.out, "exchange", pts, lbl, args.pts_seg))
    elif op.kind in ("interpolate-part", "interpolate-global"):
        if len(encoded) < 2:
            raise ValueError("interpolation needs two input clouds")
        ts = ([i / (args.t_steps - 1) for i in range(args.t_steps)]
              if args.t_steps else [op.t])
        for i, t in enumerate(ts):
            if op.kind == "interpolate-part":
                edited = interpolate(encoded[0].parts, encoded[1].parts, t,
                                     part_id=op.part_id)
                pts, lbl = _decode_with_labels(model, edited)
            else:
                g = interpolate(encoded[0].parts, encoded[1].parts, t)
                pts, lbl = _decode_with_labels(model, None, g)
            written.append(_write_cloud(args.out, f"interp_{i:02d}", pts, lbl,
                                        args.pts_seg))
    elif op.kind == "compose":
        if op.sources is None:
            raise ValueError("compose op needs a sources list of "
                             "[input_index, part_id] pairs")
        pairs = [(encoded[int(i)].parts, int(p)) for i, p in op.sources]
        edited = compose(pairs)
        pts, lbl = _decode_with_labels(model, edited)
        written.append(_write_cloud(args.out, "compose", pts, lbl, args.pts_seg))
    elif op.kind == "remove":
        edited = remove_part(encoded[0].parts, op.part_id)
        pts, lbl = _decode_with_labels(model, edited)
        written.append(_write_cloud(args.out, "remove", pts, lbl, args.pts_seg))
    else:
        raise ValueError(f"edit kind {op.kind!r} is not available from the CLI "
                         "(regenerate-part needs a generative head; use the service)")

    write_resolved_config(args.out, "edit", {
        "checkpoint": args.checkpoint, "op": args.op,
        "inputs": ",".join(args.inputs), "seed": args.seed,
        "t_steps": args.t_steps or 0})
    for path in written:
        print(path)
    return 0


def cmd_generate(args) -> int:
    model = LpmModel.load(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    written = []

    if args.approach in ("exchange", "compose"):
        if not args.manifest:
            raise ValueError(f"{args.approach} generation needs --manifest "
                             "for source shapes")
        ds = load_manifest(args.manifest, split=args.split)
        encoded = [model.encode(c) for c in ds.samples]
        full = [e.parts for e in encoded if e.parts.present.all()]
        if len(full) < 2:
            raise ValueError("need at least two samples with all parts present")
        for i in range(args.count):
            if args.approach == "exchange":
                a, b = rng.choice(len(full), size=2, replace=False)
                part = int(rng.integers(1, model.config.parts + 1))
                edited = exchange_part(full[a], full[b], part)
            else:
                srcs = rng.integers(0, len(full), size=model.config.parts)
                edited = compose([(full[s], p + 1) for p, s in enumerate(srcs)])
            pts, lbl = _decode_with_labels(model, edited)
            written.append(_write_cloud(args.out, f"{args.approach}_{i:04d}",
                                        pts, lbl, args.pts_seg))
    else:
        if not args.head_checkpoint:
            raise ValueError(f"{args.approach} generation needs --head-checkpoint")
        if args.approach == "vae":
            head = VaeHead.load(args.head_checkpoint)
            latents = head.sample_prior(args.count, seed=args.seed)
        else:
            gan = LatentGan.load(args.head_checkpoint)
            latents = gan.sample(args.count, seed=args.seed)
        for i, parts in enumerate(latents):
            pts, lbl = _decode_with_labels(model, parts)
            written.append(_write_cloud(args.out, f"{args.approach}_{i:04d}",
                                        pts, lbl, args.pts_seg))

    write_resolved_config(args.out, "generate", {
        "checkpoint": args.checkpoint, "approach": args.approach,
        "count": args.count, "seed": args.seed,
        "head_checkpoint": args.head_checkpoint or "",
        "manifest": args.manifest or ""})
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    names = sorted(f for f in os.listdir(args.generated)
                   if f.endswith(".json") and not f.startswith("manifest"))
    if not names:
        raise ValueError(f"no cloud JSON files in {args.generated}")
    samples = [load_cloud_json(os.path.join(args.generated, f)).points
               for f in names]
    reference_ds = load_manifest(args.manifest, split=args.split)
    reference = [c.real_points() for c in reference_ds.samples]
    kinds = ("cd", "emd") if args.metric == "emd" else ("cd",)
    report = evaluate(samples, reference, metric_kinds=kinds,
                      resolution=args.grid_resolution)
    os.makedirs(args.out, exist_ok=True)
    ckpt.write_atomic(os.path.join(args.out, "metrics.json"),
                      report.to_json().encode())
    ckpt.write_atomic(os.path.join(args.out, "metrics.txt"),
                      (report.table() + "\n").encode())
    write_resolved_config(args.out, "eval", {
        "generated": args.generated, "manifest": args.manifest,
        "metric": args.metric, "grid_resolution": args.grid_resolution,
        "seed": args.seed})
    print(report.table())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    heads = {}
    if args.vae:
        heads["vae"] = VaeHead.load(args.vae)
    if args.gan:
        heads["gan"] = LatentGan.load(args.gan)
    if args.wgan:
        heads["wgan"] = LatentGan.load(args.wgan)
    app = create_app(LpmModel.load(args.checkpoint), heads=heads,
                     seed=args.seed, checkpoint_path=args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partae",
        description="part-aware point-cloud autoencoder toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--pts-seg", action="store_true",
                       help="also write .pts/.seg exports")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--spec", help="SynthSpec JSON (default: built-in chair)")
    p.add_argument("--count", type=int, default=640)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--ratios", type=float, nargs=3, default=(0.7, 0.1, 0.2))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the autoencoder (and optional head)")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--feature-size", dest="feature_size", type=int)
    p.add_argument("--parts", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--metric", choices=("cd", "emd"))
    p.add_argument("--pooling", choices=("max", "mean"))
    p.add_argument("--seg-weight", dest="seg_weight", type=float)
    p.add_argument("--no-batchnorm", dest="batchnorm", action="store_const",
                   const="false")
    p.add_argument("--head", choices=("vae", "gan", "wgan"))
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--gan-steps", type=int, default=500)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="apply a latent edit op to input clouds")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--op", required=True, help="EditOp JSON file")
    p.add_argument("--inputs", nargs="+", required=True,
                   help="input cloud JSON files")
    p.add_argument("--t-steps", dest="t_steps", type=int,
                   help="emit an interpolation sequence with this many steps")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("generate", help="generate new clouds")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("approach", choices=("exchange", "compose", "vae", "gan",
                                        "wgan"))
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--manifest", help="source shapes for exchange/compose")
    p.add_argument("--split", default="test")
    p.add_argument("--head-checkpoint", dest="head_checkpoint")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="evaluate generated clouds against a reference set")
    common(p)
    p.add_argument("--generated", required=True, help="directory of cloud JSONs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--metric", choices=("cd", "emd"), default="cd")
    p.add_argument("--grid-resolution", dest="grid_resolution", type=int,
                   default=28)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the edit HTTP API")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vae", help="VAE head checkpoint")
    p.add_argument("--gan", help="GAN head checkpoint")
    p.add_argument("--wgan", help="WGAN head checkpoint")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
