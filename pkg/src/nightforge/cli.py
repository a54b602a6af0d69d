"""Command-line entry point: ``nightforge <subcommand> [flags]``.

Values come from a JSON config (``--config`` or ``$NIGHTFORGE_CONFIG``) with
flat keys; every flag mirrors a key in kebab case and overrides it. Logs go
to stderr, produced report paths to stdout. Failures exit 1 with a JSON
error object on stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .pipeline import (Settings, load_settings, run_pipeline, stage_assemble, stage_autolabel,
                       stage_compare, stage_evaluate, stage_finetune, stage_scenegen,
                       stage_train_style, stage_translate, write_resolved_config)

log = logging.getLogger("nightforge")


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _json_or_path(value: str):
    """Inline JSON, or a path to a JSON file (kept as a string)."""
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


# key -> (type, help); shared across subcommands that use the key
KEYS = {
    "day_dir": (str, "daytime image directory"),
    "night_dir": (str, "nighttime image pool for style training"),
    "night_real_dir": (str, "labeled real nighttime pool (images/, labels/)"),
    "eval_dir": (str, "held-out nighttime evaluation set (images/, labels/)"),
    "translated_dir": (str, "output directory of `translate`"),
    "real_dir": (str, "labeled real nighttime pool"),
    "augmented_dir": (str, "output directory of `autolabel`"),
    "checkpoint": (str, "style-model checkpoint or training run directory"),
    "detector": (str, "detector adapter: ultralytics or mock"),
    "detector_model": (str, "detector weights / model artifact"),
    "conf_threshold": (float, "auto-label confidence cutoff"),
    "workers": (int, "parallel inference workers (if the detector allows)"),
    "manifest": (str, "dataset manifest JSON"),
    "mix": (_json_or_path, "mix spec: inline JSON or a JSON file"),
    "stage_plan": (str, "'default' or a stage-plan JSON file"),
    "stage1_trains_all": (_bool, "train the whole detector in stage 1"),
    "stage_epochs": (int, "override every stage's epoch budget"),
    "keep_best": (_bool, "keep the best validation stage as the final model"),
    "preds": (str, "directory of prediction files (class cx cy w h conf)"),
    "gts": (str, "directory of ground-truth label files"),
    "class_names": (_csv, "comma-separated class row names"),
    "table_a": (str, "metrics JSON of the first model"),
    "table_b": (str, "metrics JSON of the second model"),
    "row_mapping": (str, "row alignment, e.g. car=Sedan,truck=SVP_BV"),
    "labels": (_csv, "column labels for the two models"),
    "simulator": (str, "simulator client: carla or mock"),
    "sim_host": (str, "simulator host"),
    "sim_port": (int, "simulator port"),
    "scenegen_target": (int, "total number of frames to capture"),
    "scene_width": (int, "capture width in pixels"),
    "scene_height": (int, "capture height in pixels"),
    "views": (_csv, "camera views (side,center,top)"),
    "directions": (_csv, "traffic directions (approaching,departing)"),
    "vehicle_counts": (lambda v: [int(x) for x in _csv(v)], "vehicle counts, e.g. 1,3"),
    "headlight_modes": (_csv, "headlight modes (low_beam,high_beam)"),
    "map_id": (str, "simulator map"),
    # style model
    "n_epochs": (int, "epochs at constant learning rate"),
    "n_epochs_decay": (int, "epochs of linear decay to zero"),
    "lr0": (float, "initial learning rate"),
    "beta1": (float, "Adam beta1"),
    "beta2": (float, "Adam beta2"),
    "input_size": (int, "training resolution"),
    "lambda_cyc": (float, "cycle-consistency weight"),
    "lambda_id": (float, "identity weight"),
    "batch_size": (int, "batch size"),
    "checkpoint_every": (int, "checkpoint period in epochs"),
    "fake_pool_size": (int, "discriminator history-pool size (0 disables)"),
    "flip": (_bool, "random horizontal flips"),
    "base_channels": (int, "generator width"),
    "n_residual_blocks": (int, "generator residual blocks"),
    "disc_channels": (int, "discriminator width"),
    "epochs": (int, "stop after this many epochs"),
}

STYLE_KEYS = ("n_epochs", "n_epochs_decay", "lr0", "beta1", "beta2", "input_size", "lambda_cyc",
              "lambda_id", "batch_size", "checkpoint_every", "fake_pool_size", "flip",
              "base_channels", "n_residual_blocks", "disc_channels", "epochs")
SCENE_KEYS = ("simulator", "sim_host", "sim_port", "scenegen_target", "scene_width",
              "scene_height", "views", "directions", "vehicle_counts", "headlight_modes", "map_id")

SUBCOMMANDS = {
    "scenegen": (stage_scenegen, SCENE_KEYS,
                 "capture synthetic night frames from a simulator"),
    "train-style": (stage_train_style, ("day_dir", "night_dir", *STYLE_KEYS),
                    "train the day->night translation model"),
    "translate": (stage_translate, ("checkpoint", "day_dir"),
                  "translate daytime images to nighttime"),
    "autolabel": (stage_autolabel, ("day_dir", "translated_dir", "detector", "detector_model",
                                    "conf_threshold", "workers"),
                  "label day images and transfer labels to translations"),
    "assemble": (stage_assemble, ("real_dir", "augmented_dir", "mix"),
                 "build and validate a train/val/test manifest"),
    "finetune": (stage_finetune, ("manifest", "detector", "detector_model", "stage_plan",
                                  "stage1_trains_all", "stage_epochs", "keep_best"),
                 "staged block-wise detector fine-tuning"),
    "evaluate": (stage_evaluate, ("preds", "gts", "eval_dir", "detector", "detector_model",
                                  "class_names"),
                 "precision, recall, mAP50 and mAP50-95"),
    "compare": (stage_compare, ("table_a", "table_b", "row_mapping", "labels"),
                "side-by-side comparison of two metrics tables"),
}
PIPELINE_KEYS = tuple(dict.fromkeys(
    ("day_dir", "night_dir", "night_real_dir", "eval_dir", "detector", "detector_model",
     "conf_threshold", "mix", "stage_plan", "stage1_trains_all", "stage_epochs",
     *STYLE_KEYS, *SCENE_KEYS)))
# commands whose out-dir may be omitted (artifacts go to the working directory)
OPTIONAL_OUT_DIR = {"evaluate", "compare"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (default: $NIGHTFORGE_CONFIG)")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")


def _add_keys(p: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        typ, help_ = KEYS[key]
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nightforge",
        description="Day-to-night augmentation and staged fine-tuning for night vehicle detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for name, (_, keys, help_) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        _add_common(p)
        _add_keys(p, keys)
    p = sub.add_parser("pipeline", help="run every stage with resume",
                       description="scenegen -> train-style -> translate -> autolabel -> "
                                   "assemble -> finetune -> evaluate -> compare")
    _add_common(p)
    _add_keys(p, PIPELINE_KEYS)
    p.add_argument("--demo", action="store_true",
                   help="build the bundled tiny fixture under OUT_DIR/fixture and run on it")
    p.add_argument("--restart", action="store_true", help="ignore completion markers")
    return parser


def _error(exc: BaseException, code: int = 1) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key:
        payload["key"] = key
    print(json.dumps(payload), file=sys.stderr)
    return code


def _setup_logging(args) -> None:
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose", "quiet", "demo", "restart")}
    try:
        if args.command == "pipeline":
            return _pipeline(args, overrides)
        settings = load_settings(args.config, overrides)
        runner = SUBCOMMANDS[args.command][0]
        if args.command in OPTIONAL_OUT_DIR:
            out_dir = settings.path("out_dir", ".")
        else:
            out_dir = settings.path("out_dir")
        write_resolved_config(settings, out_dir)
        result = runner(settings, out_dir)
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        log.debug("%s", traceback.format_exc())
        return _error(exc)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable summary
        log.error("%s", traceback.format_exc())
        return _error(exc)
    print(result)
    return 0


def _pipeline(args, overrides) -> int:
    config = args.config
    if args.demo:
        from .fixtures import build_tiny_fixture
        out = Path(overrides.get("out_dir") or "nightforge_demo")
        config = str(build_tiny_fixture(out / "fixture", seed=overrides.get("seed") or 0))
        overrides["out_dir"] = str(out)
    settings: Settings = load_settings(config, overrides)
    out_dir = settings.path("out_dir")
    result = run_pipeline(settings, out_dir, restart=args.restart)
    print(result)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
