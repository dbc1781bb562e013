"""Command-line surface: synth, train, eval, audit, gradcheck.

Each subcommand reads an optional config file (`key = value` lines under
`[section]` headers, `#` comments); flags override config keys. Exit code 0
on success; errors print one machine-parsable line to stderr. TIKAN_SEED in
the environment overrides any configured seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__


def _seed_override(seed: int) -> int:
    env = os.environ.get("TIKAN_SEED")
    return int(env) if env else seed


def _load_sections(path: str | None) -> dict[str, dict[str, str]]:
    from .config import load_config_file

    return load_config_file(path) if path else {}


def cmd_synth(args) -> int:
    from .config import synth_spec_from
    from .synthdata import SynthSpec, write_dataset

    sections = _load_sections(args.config)
    spec = synth_spec_from(sections.get("synth", {})) if "synth" in sections else SynthSpec()
    overrides = {}
    for key in ("height", "width", "seed"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.classes is not None:
        overrides["num_classes"] = args.classes
    if args.kinds is not None:
        overrides["class_kinds"] = tuple(k.strip() for k in args.kinds.split(","))
    if args.freqs is not None:
        overrides["frequencies"] = tuple(float(f) for f in args.freqs.split(","))
    spec = replace(spec, **overrides)
    spec = replace(spec, seed=_seed_override(spec.seed)).validate()
    out = write_dataset(spec, args.count, args.out)
    print(f"event=synth out={out} count={args.count} classes={spec.num_classes}")
    return 0


def cmd_train(args) -> int:
    from .config import loss_config_from, model_config_from, train_config_from
    from .synthdata import load_dataset
    from .trainer import train

    sections = _load_sections(args.config)
    mapping = dict(sections.get("model", {}))
    if args.variant is not None:
        mapping["variant"] = args.variant
    model_cfg = model_config_from(mapping)
    train_cfg = train_config_from(sections.get("train", {}))
    loss_cfg = loss_config_from(sections.get("loss", {}))
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    if args.batch_size is not None:
        train_cfg.batch_size = args.batch_size
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_cfg.seed = _seed_override(train_cfg.seed)

    dataset = load_dataset(args.data)
    if model_cfg.num_classes != dataset.num_classes:
        mapping["num_classes"] = str(dataset.num_classes)
        model_cfg = model_config_from(mapping)
    train(train_cfg, model_cfg, loss_cfg, dataset, args.out, log=print)
    return 0


def cmd_eval(args) -> int:
    from .synthdata import load_dataset
    from .trainer import evaluate, load_checkpoint

    model, cfg = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    metrics = evaluate(model, dataset.images, dataset.masks, dataset.num_classes)
    record = " ".join(f"{k}={v:.6f}" for k, v in metrics.as_dict().items())
    line = f"event=eval checkpoint={args.checkpoint} {record}"
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n")
    return 0


def cmd_audit(args) -> int:
    from .audit import format_report
    from .model import config_for_variant

    cfg = config_for_variant(args.variant, num_classes=args.classes)
    model = None
    if args.build:
        from .model import build_model

        model = build_model(cfg, seed=0)
    report = format_report(cfg, model, args.res, args.res)
    print(report)
    if args.out:
        Path(args.out).write_text(report + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import MODEL_TOL, OP_TOL, run

    results, ok = run(args.module, seed=args.seed if args.seed is not None else 0)
    for name, err in sorted(results.items()):
        tol = MODEL_TOL if name.startswith("model.") else OP_TOL
        status = "pass" if err < tol else "FAIL"
        print(f"check={name} rel_err={err:.3e} tol={tol:.0e} status={status}")
    print(f"event=gradcheck module={args.module} ok={ok}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="karma", description="KAN-based segmentation: data, training, audit"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--config")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--kinds", help="comma list: line,blob,ring")
    p.add_argument("--freqs", help="comma list of target class frequencies")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--variant", choices=("karma", "high", "flash"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("audit", help="parameter/FLOP/memory report")
    p.add_argument("--variant", default="karma", choices=("karma", "high", "flash"))
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--build", action="store_true", help="also build and cross-check counts")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--module", default="all", choices=("all", "tensor", "spline", "kan", "model"))
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 0
    except Exception as exc:  # surface as one machine-parsable line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
