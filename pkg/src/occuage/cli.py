"""Command-line entry points: train, generate, eval, synth."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .autodiff import Tensor
from .config import load_config
from .data import (
    DatasetPools,
    default_profiles,
    denormalize_image,
    discover_manifest,
    load_manifest,
    load_png,
    manifest_pools,
    save_png,
    synth_pools,
    write_manifest,
    Manifest,
    ManifestEntry,
)
from .errors import DomainError, OccuageError
from .evaluate import evaluate_networks, human_summary, write_report
from .networks import generate, reconstruct
from .spectra import TextureClassifier
from .trainer import load_checkpoint, train_loop

PROG = "occuage"


def _add_config_flags(parser):
    parser.add_argument("--config", type=Path, default=None, help="config file (key = value lines)")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dot-path config override, repeatable (e.g. trainer.epochs=1)",
    )
    parser.add_argument("--seed", type=int, default=None, help="shorthand for trainer.seed")


def _load_config(args) -> Config:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"trainer.seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    last = {"step": 0}

    def progress(metrics):
        last.update(metrics)
        if int(metrics["step"]) % args.log_every == 0:
            print(
                f"step {int(metrics['step'])}: cycle {metrics['personalized']:.4f} "
                f"adv_g {metrics['adversarial_g']:.4f} adv_d {metrics['adversarial_d']:.4f} "
                f"triplet {metrics['triplet']:.4f}"
            )

    state = train_loop(config, out_dir=out_dir, progress=progress)
    from .plots import save_loss_curves

    figure = save_loss_curves(state.history_array(), out_dir / "figures" / "loss_curves.png")
    print(f"trained {state.step} steps; checkpoint {out_dir / 'final.ckpt'}; curves {figure}")
    return 0


def cmd_generate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    image = load_png(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    conditions = state.models.generator.conditions
    written = []
    for p in range(1, conditions + 1):
        aged = generate(state.models.generator, image, p)
        aged_path = out_dir / f"{stem}_occ{p}.png"
        save_png(aged, aged_path)
        written.append(aged_path)
        cycle = reconstruct(state.models.decoder, aged)
        cycle_path = out_dir / f"{stem}_cycle{p}.png"
        save_png(cycle, cycle_path)
        written.append(cycle_path)
    for path in written:
        print(path)
    return 0


def _eval_pools(args, state) -> tuple[DatasetPools, list[str]]:
    config = state.config
    if args.data is not None:
        manifest = load_manifest(args.data)
        root = args.root or Path(args.data).parent
        pools = manifest_pools(manifest, root, config.data.age_group, require_real=False)
        pools.eval_young = pools.young
        return pools, list(manifest.occupations)
    if config.data.source != "synth":
        raise DomainError("--data is required unless the checkpoint was trained on synth data")
    from .trainer import build_pools

    pools = build_pools(config)
    return pools, pools.occupation_names


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    pools, names = _eval_pools(args, state)
    eval_young = pools.eval_young or pools.young
    if not eval_young:
        raise DomainError("evaluation set is empty")
    eval_young = eval_young[: args.limit] if args.limit else eval_young

    conditions = state.models.generator.conditions
    classifier = None
    if len(pools.real) == conditions and all(pools.real.values()):
        classifier = TextureClassifier().fit(pools.real)

    report = evaluate_networks(
        state.models.generator,
        state.models.decoder,
        eval_young,
        conditions,
        names,
        classifier=classifier,
        metadata={
            "checkpoint": str(args.checkpoint),
            "step": str(state.step),
            "eval_inputs": str(len(eval_young)),
            "tool_version": __version__,
        },
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / "report.txt")
    summary = human_summary(report)
    (out_dir / "summary.txt").write_text(summary + "\n", encoding="utf-8")

    from .plots import save_sample_grid, save_separation_heatmap

    save_separation_heatmap(report.separation, report.occupations, out_dir / "separation.png")
    rows, labels = [], []

    for i, young in enumerate(eval_young[: args.grid_rows]):
        y = Tensor(young[None])
        row = [denormalize_image(young)]
        for p in range(1, conditions + 1):
            row.append(denormalize_image(generate(state.models.generator, y, p)))
        rows.append(row)
        labels.append(f"input {i}")
    save_sample_grid(
        rows, labels, ["input", *report.occupations], out_dir / "samples.png"
    )
    print(summary)
    print(f"report written to {out_dir / 'report.txt'}")
    return 0


def cmd_synth(args) -> int:
    config = _load_config(args)
    profiles = default_profiles(config.model.conditions, amplitude=config.data.amplitude)
    pools = synth_pools(
        profiles,
        young_count=config.data.young_count,
        aged_per_occupation=config.data.aged_per_occupation,
        eval_count=config.data.eval_count,
        size=config.model.image_size,
        seed=config.trainer.seed,
        age_group=config.data.age_group,
        clutter=config.data.clutter,
    )
    root = Path(args.out)
    age = config.data.age_group
    names = pools.occupation_names
    train_entries: list[ManifestEntry] = []
    eval_entries: list[ManifestEntry] = []

    def emit(image, rel: str):
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        save_png(image, path)
        return rel

    for i, img in enumerate(pools.young):
        rel = emit(img, f"young/{age}/y_{i:04d}.png")
        train_entries.append(ManifestEntry(rel, "young", None, age))
    for p in pools.occupations:
        name = names[p - 1]
        for i, img in enumerate(pools.real[p]):
            rel = emit(img, f"{name}/{age}/a_{i:04d}.png")
            entry = ManifestEntry(rel, "occupational", name, age)
            train_entries.append(entry)
            eval_entries.append(entry)
    for i, img in enumerate(pools.eval_young):
        rel = emit(img, f"young_eval/{age}/e_{i:04d}.png")
        eval_entries.append(ManifestEntry(rel, "young", None, age))

    write_manifest(Manifest(names, train_entries), root / "manifest.txt")
    write_manifest(Manifest(names, eval_entries), root / "manifest_eval.txt")
    total = len(train_entries) + len(pools.eval_young)
    print(f"wrote {total} images under {root}; manifests: manifest.txt, manifest_eval.txt")
    return 0


def cmd_discover(args) -> int:
    manifest = discover_manifest(args.root)
    write_manifest(manifest, args.out)
    print(f"{len(manifest.entries)} samples, {manifest.condition_count} occupations -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Occupation-conditioned face aging: train, generate, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop")
    _add_config_flags(p_train)
    p_train.add_argument("--out", required=True, help="output directory for checkpoints/metrics")
    p_train.add_argument("--log-every", type=int, default=100)
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="age one image under every condition")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--input", required=True, help="input PNG")
    p_gen.add_argument("--out", required=True, help="output directory")
    p_gen.set_defaults(func=cmd_generate)

    p_eval = sub.add_parser("eval", help="compute the evaluation report")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", type=Path, default=None, help="eval manifest file")
    p_eval.add_argument("--root", type=Path, default=None, help="image root for the manifest")
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.add_argument("--limit", type=int, default=0, help="cap the number of eval inputs")
    p_eval.add_argument("--grid-rows", type=int, default=4)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="materialize the synthetic dataset")
    _add_config_flags(p_synth)
    p_synth.add_argument("--out", required=True, help="dataset root directory")
    p_synth.set_defaults(func=cmd_synth)

    p_disc = sub.add_parser("discover", help="build a manifest from a directory tree")
    p_disc.add_argument("--root", required=True)
    p_disc.add_argument("--out", required=True)
    p_disc.set_defaults(func=cmd_discover)

    return parser


def main(argv=None) -> int:
    from .trainer import single_thread_blas

    args = build_parser().parse_args(argv)
    try:
        with single_thread_blas():
            return args.func(args)
    except OccuageError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
