"""Command-line entry point: ``focusdepth <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures print a single JSON line ``{"exit": n, "kind": ..., "reason": ...}``
on stderr. ``FOCUSDEPTH_LOG`` (error | info | debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError, load_run_config
from .data.io import DataError, read_manifest, write_pfm, write_png
from .data.render import DEFAULT_BLUR_GAIN, DEFAULT_R_MAX, generate_synthetic_dataset
from .gradcheck import SUITE_OPS, gradcheck_suite
from .metrics import format_table
from .model import FOCAL_PATHS, FUSIONS, parameter_report
from .tensor import NonFiniteError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-5
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("focusdepth")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, kind: str, reason: str) -> int:
    reason = " ".join(str(reason).split())
    sys.stderr.write(json.dumps({"exit": code, "kind": kind, "reason": reason}) + "\n")
    return code


def _setup_logging() -> None:
    level = os.environ.get("FOCUSDEPTH_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"FOCUSDEPTH_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    root = logging.getLogger("focusdepth")
    root.setLevel(LOG_LEVELS[level])
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    size = args.size
    manifest = generate_synthetic_dataset(args.count, size, size, args.slices, args.seed, args.out,
                                          split=args.split, blur_gain=args.blur_gain, r_max=args.r_max)
    print(f"wrote {len(manifest.scenes)} scenes to {Path(args.out) / (args.split + '.json')}")
    return EXIT_OK


def _config_flags(args) -> dict:
    keys = {"preset": "preset", "lr": "lr", "seed": "seed", "max_epochs": "max_epochs",
            "focal_path": "focal_path", "fusion": "fusion", "manifest": "manifest",
            "test_manifest": "test_manifest", "out": "out_dir", "augment": "augment"}
    return {dst: getattr(args, src, None) for src, dst in keys.items()}


def _match_slices(run, manifest):
    """Take the slice count from the data unless the configuration fixes it."""
    if "num_slices" in run.explicit or not manifest.scenes:
        return run
    return dataclasses.replace(run, model=dataclasses.replace(run.model, num_slices=len(manifest.scenes[0].slices)))


def cmd_train(args) -> int:
    from .trainer import train

    run = load_run_config(args.config, _config_flags(args))
    if not run.manifest:
        raise UsageError("train needs --manifest (or 'manifest' in the config file)")
    if not run.out_dir:
        raise UsageError("train needs --out (or 'out_dir' in the config file)")
    manifest = read_manifest(run.manifest)
    test = read_manifest(run.test_manifest) if run.test_manifest else None
    run = _match_slices(run, manifest)
    result = train(manifest, None, run.train, run.model, test, run.out_dir)
    counts = parameter_report(result.params)
    last = result.history[-1] if result.history else None
    print(f"trained {run.model.focal_path}/{run.model.fusion} ({counts['total']} parameters) "
          f"for {len(result.history)} epochs; checkpoint in {Path(run.out_dir) / 'checkpoint.bin'}")
    if last is not None:
        print(f"final train loss {last['train_loss']:.6f}")
    return EXIT_OK


def _write_metrics_json(path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_eval(args) -> int:
    from .trainer import evaluate

    sources = [args.checkpoint is not None, args.predictions is not None, args.baseline]
    if sum(sources) != 1:
        raise UsageError("eval needs exactly one of --checkpoint, --predictions, --baseline")
    manifest = read_manifest(args.manifest)
    report = evaluate(manifest, args.checkpoint, baseline=args.baseline, baseline_depth=args.baseline_depth,
                      predictions_dir=args.predictions)
    label = "baseline" if args.baseline else ("predictions" if args.predictions else "model")
    print(format_table([(label, report)]))
    if args.json:
        _write_metrics_json(args.json, report.to_dict())
    return EXIT_OK


def cmd_predict(args) -> int:
    from .data.io import load_scene
    from .trainer import model_from_checkpoint, predict_depth

    manifest = read_manifest(args.manifest)
    entry = manifest.entry(args.scene) if args.scene else manifest.scenes[0]
    sample = load_scene(entry, manifest.root)
    model_cfg, params, _ = model_from_checkpoint(args.checkpoint)
    if len(sample.stack) != model_cfg.num_slices:
        raise DataError(f"scene {entry.id} has {len(sample.stack)} slices, checkpoint expects "
                        f"{model_cfg.num_slices}")
    depth = predict_depth(params, model_cfg, sample)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pfm(out, depth)
    preview = out.with_suffix(".png")
    lo, hi = float(depth.min()), float(depth.max())
    scaled = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    write_png(preview, scaled)
    print(f"wrote {out} and {preview} (depth range {lo:.4f}..{hi:.4f})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seeds = list(range(args.seed, args.seed + args.seeds))
    ops = args.ops or list(SUITE_OPS)
    width = max(len(o) for o in ops)
    failed = []
    for op in ops:
        err = gradcheck_suite(seeds, ops=[op])[op]
        ok = err < GRADCHECK_TOLERANCE
        print(f"{op:<{width}}  max_rel_error={err:.3e}  {'ok' if ok else 'FAIL'}", flush=True)
        if not ok:
            failed.append(op)
    if failed:
        raise NumericalFailure(f"grad_check above {GRADCHECK_TOLERANCE:g} for {', '.join(failed)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import run_ablation
    from .data.io import load_split

    run = load_run_config(args.config, {**_config_flags(args), "preset": args.preset or "desk"})
    if not run.manifest or not run.test_manifest:
        raise UsageError("ablate needs --manifest and --test-manifest")
    manifest = read_manifest(run.manifest)
    run = _match_slices(run, manifest)
    train_set = load_split(manifest)
    test_set = load_split(read_manifest(run.test_manifest))
    seeds = list(range(run.train.seed, run.train.seed + args.seeds))
    result = run_ablation(train_set, test_set, seeds, run.model, run.train)
    print(result.table())
    if run.out_dir:
        _write_metrics_json(Path(run.out_dir) / "ablation.json", result.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_train_flags(p) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", choices=("full", "desk"))
    p.add_argument("--manifest")
    p.add_argument("--test-manifest", dest="test_manifest")
    p.add_argument("--out", help="output directory")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--augment", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="focusdepth", description="Depth from focal stacks: data, training, evaluation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic focal-stack dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--slices", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--blur-gain", dest="blur_gain", type=float, default=DEFAULT_BLUR_GAIN)
    p.add_argument("--r-max", dest="r_max", type=float, default=DEFAULT_R_MAX)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + epoch log")
    _add_train_flags(p)
    p.add_argument("--focal-path", dest="focal_path", choices=FOCAL_PATHS)
    p.add_argument("--fusion", choices=FUSIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, prediction files or the mean-depth baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of <scene_id>.pfm files")
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--baseline-depth", dest="baseline_depth", type=float)
    p.add_argument("--json", help="also write the metrics as JSON here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one scene's depth map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scene", help="scene id (default: first scene)")
    p.add_argument("--out", required=True, help="output .pfm path; a preview .png is written alongside")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operation")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds per operation")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--ops", nargs="+", choices=SUITE_OPS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train every focal-path and fusion arm over several seeds")
    _add_train_flags(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(list(sys.argv[1:] if argv is None else argv))
        if not getattr(args, "command", None):
            raise UsageError("missing subcommand (synth, train, eval, predict, gradcheck, ablate)")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (DataError, CheckpointError, FileNotFoundError, IsADirectoryError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    except (NonFiniteError, NumericalFailure, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, "data", exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
