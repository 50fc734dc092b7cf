"""Command-line entry point: gen-data, train, translate, evaluate.

Exit codes: 0 success, 2 config error, 3 data/checkpoint error, 4 non-finite loss.
Any config key can be overridden through ``STRUCTCYCLE_<SECTION>__<KEY>`` variables.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import METHODS, ExperimentConfig, config_hash, dump_experiment, load_experiment
from .data import Modality, build_unpaired_dataset, load_dataset, read_png, save_dataset, write_png
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .metrics import evaluate, train_probe
from .models import translate
from .trainer import fit, load_checkpoint, load_translator, read_meta

log = logging.getLogger("structcycle")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.method is not None:
        overrides["method"] = args.method
    return load_experiment(args.config, overrides)


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.data_dir)
    d = cfg.data
    ds = build_unpaired_dataset(cfg.phantom, d.n_train_tagged, d.n_train_cine, d.n_eval_pairs, cfg.seed,
                                n_val_pairs=d.n_val_pairs)
    try:
        save_dataset(ds, out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc
    dump_experiment(cfg, out / "resolved_config.yaml")
    print(f"wrote {len(ds.tagged_items)} tagged, {len(ds.cine_items)} cine, "
          f"{len(ds.eval_pairs)} eval pairs, {len(ds.val_pairs)} val pairs to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data_dir = Path(args.data or cfg.data_dir)
    out = Path(args.out or cfg.out_dir)
    ds = load_dataset(data_dir)
    state = None
    if args.resume:
        state = load_checkpoint(args.resume, expected_hash=config_hash(cfg.train), force=args.force)
        if args.force:
            # keep the checkpoint's trajectory but honour the requested schedule length
            state.config = replace(state.config, epochs=cfg.train.epochs)
    dump_experiment(cfg, out / "resolved_config.yaml")
    state, curve = fit(state.config if state else cfg.train, ds, out_dir=out, state=state)
    print(f"trained {cfg.method} for {state.epoch} epochs ({len(curve)} iterations this run); "
          f"checkpoints in {out}")
    return 0


def _inputs(paths: list[str]) -> list[Path]:
    files: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.png")))
        elif p.exists():
            files.append(p)
        else:
            raise DataError(f"input not found: {p}")
    return files


def cmd_translate(args) -> int:
    net = load_translator(args.checkpoint, which=args.which)
    side = read_meta(args.checkpoint)["config"]["image_side"]
    out = Path(args.out or "translated")
    files = _inputs(args.inputs)
    for path in files:
        img = read_png(path, Modality.TAGGED)
        if img.height != side or img.width != side:
            raise DataError(f"{path}: size {img.height}x{img.width} does not match training side {side}")
        write_png(translate(net, img), out / path.name)
    print(f"translated {len(files)} image(s) into {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ds = load_dataset(Path(args.data or cfg.data_dir))
    pairs = ds.require_eval_pairs()
    net = load_translator(args.checkpoint, which=args.which)
    out = Path(args.out or Path(cfg.out_dir) / "eval")
    out.mkdir(parents=True, exist_ok=True)
    probe = train_probe(cfg.phantom, cfg.eval.probe_images, cfg.eval.probe_epochs, seed=cfg.seed)
    report = evaluate(lambda x: translate(net, x), pairs, probe=probe, n_splits=cfg.eval.n_splits,
                      label=cfg.method, montage_dir=out / "montage" if cfg.eval.montage else None)
    report.to_json(out / "report.json")
    (out / "report.md").write_text(report.to_markdown())
    print(report.to_markdown())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--force", action="store_true", help="load checkpoints despite config-hash mismatch")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="structcycle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write a synthetic phantom dataset").set_defaults(
        func=cmd_gen_data)
    p = sub.add_parser("train", parents=[common], help="train a method on a dataset directory")
    p.add_argument("--data")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("translate", parents=[common], help="translate tagged PNGs with G_TC only")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--which", choices=("last", "best"), default="last")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_translate)
    p = sub.add_parser("evaluate", parents=[common], help="score G_TC on the dataset's eval pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--which", choices=("last", "best"), default="last")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
