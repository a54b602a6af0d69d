"""Stage functions behind the command line, and the resumable full pipeline.

Every stage reads a flat ``Settings`` mapping (config file values with
command-line overrides folded in) and writes its artifacts under an output
directory. ``run_pipeline`` chains the stages and drops a ``.done`` marker
after each, so an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Callable, Mapping

from .autolabel import (DEFAULT_CONF_THRESHOLD, autolabel_corpus, predict, write_augmented_set,
                        write_predictions)
from .core import CLASS_NAMES, Domain, ImageRecord, label_path_for, list_images, read_labels
from .dataset_forge import (MANIFEST_NAME, DatasetManifest, MixSpec, assemble,
                            composition_stats, load_pool, validate)
from .detectors import load_detector
from .errors import ConfigError
from .evaluator import (compare, load_corpus, load_table, map_summary, write_comparison,
                        write_report)
from .finetune import load_stage_plan
from .finetune import run as run_finetune
from .scenegen import ScenegenConfig, make_simulator, run_plan
from .stylegan import TrainConfig, read_translations, translate
from .stylegan import train as train_style

log = logging.getLogger(__name__)

CONFIG_ENV = "NIGHTFORGE_CONFIG"
PATH_KEYS = frozenset({
    "out_dir", "day_dir", "night_dir", "night_real_dir", "eval_dir", "translated_dir",
    "augmented_dir", "real_dir", "checkpoint", "detector_model", "manifest", "preds", "gts",
    "images", "table_a", "table_b",
})
RAW_CLASS_NAMES = ("car", "truck")
RAW_ROW_MAPPING = {"all": "all", "car": "Sedan", "truck": "SVP_BV"}


class Settings(dict):
    """Flat configuration mapping with key-naming errors."""

    def require(self, key: str) -> Any:
        if self.get(key) is None:
            raise ConfigError(f"missing required config key {key!r}", key=key)
        return self[key]

    def path(self, key: str, default: str | Path | None = None) -> Path:
        value = self.get(key)
        if value is None:
            if default is None:
                raise ConfigError(f"missing required config key {key!r}", key=key)
            return Path(default)
        return Path(value)

    def with_defaults(self, defaults: Mapping[str, Any]) -> Settings:
        out = Settings(defaults)
        out.update({k: v for k, v in self.items() if v is not None})
        return out


def load_settings(config_path: str | Path | None, overrides: Mapping[str, Any]) -> Settings:
    """Read the JSON config (falling back to ``$NIGHTFORGE_CONFIG``) and fold
    in non-``None`` overrides. Relative paths in the file are resolved
    against the file's directory."""
    data: dict = {}
    config_path = config_path or os.environ.get(CONFIG_ENV)
    if config_path:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigError(f"config file {config_path} not found", key="config")
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}",
                              key="config") from None
        base = config_path.resolve().parent
        for key in PATH_KEYS & data.keys():
            if data[key] is not None and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
    settings = Settings(data)
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return settings


def write_resolved_config(settings: Mapping, out_dir: Path, name: str = "resolved_config.json"
                          ) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(Path(v).resolve()) if k in PATH_KEYS and v is not None else v)
                for k, v in sorted(settings.items())}
    path = out_dir / name
    path.write_text(json.dumps(resolved, indent=2, default=str), encoding="utf-8")
    return path


def _records(directory: Path, domain: Domain) -> list[ImageRecord]:
    image_dir = directory / "images" if (directory / "images").is_dir() else directory
    if not image_dir.is_dir():
        raise ConfigError(f"image directory {image_dir} does not exist")
    return [ImageRecord.from_file(p, domain) for p in list_images(image_dir)]


def _detector(settings: Settings, model_key: str = "detector_model"):
    return load_detector(settings.get("detector", "ultralytics"), settings.path(model_key))


# ---------------------------------------------------------------------------
# stages

def stage_scenegen(settings: Settings, out_dir: Path) -> Path:
    cfg = ScenegenConfig.from_dict({
        **{k: settings[k] for k in ("views", "directions", "vehicle_counts", "headlight_modes",
                                    "map_id", "fixed_delta", "ticks_per_frame")
           if settings.get(k) is not None},
        "target_images": int(settings.get("scenegen_target", 413)),
        "width": int(settings.get("scene_width", 256)),
        "height": int(settings.get("scene_height", 256)),
        "seed": int(settings.get("seed", 0)),
        "host": settings.get("sim_host", "localhost"),
        "port": int(settings.get("sim_port", 2000)),
    })
    sim = make_simulator(settings.get("simulator", "carla"), seed=cfg.seed)
    summary = run_plan(sim, cfg, out_dir)
    log.info("captured %d frames across %d scenarios", len(summary.records),
             len(summary.scenarios))
    return out_dir / "captures.json"


def stage_train_style(settings: Settings, out_dir: Path) -> Path:
    cfg = TrainConfig.from_dict({**settings, "seed": int(settings.get("seed", 0))})
    epochs = settings.get("epochs")
    result = train_style(cfg, settings.path("day_dir"), settings.path("night_dir"), out_dir,
                         epochs=int(epochs) if epochs is not None else None)
    return result.final_checkpoint


def stage_translate(settings: Settings, out_dir: Path) -> Path:
    images = _records(settings.path("day_dir"), Domain.DAY_REAL)
    report = translate(settings.path("checkpoint"), images, out_dir)
    if report.errors:
        log.warning("%d images failed to translate", len(report.errors))
    return out_dir / "translations.json"


def stage_autolabel(settings: Settings, out_dir: Path) -> Path:
    days = _records(settings.path("day_dir"), Domain.DAY_REAL)
    translated = read_translations(settings.path("translated_dir"))
    threshold = float(settings.get("conf_threshold", DEFAULT_CONF_THRESHOLD))
    augmented, day_labeled, report = autolabel_corpus(
        _detector(settings), days, translated, conf_threshold=threshold,
        workers=int(settings.get("workers", 1)))
    write_augmented_set(augmented, out_dir, day_labeled)
    return report.write(out_dir / "autolabel_report.json")


def _mix(settings: Settings) -> MixSpec:
    mix = settings.require("mix")
    if isinstance(mix, str):
        mix = json.loads(Path(mix).read_text(encoding="utf-8")) if Path(mix).exists() \
            else json.loads(mix)
    return MixSpec.from_dict(mix, seed=int(settings.get("seed", 0)))


def stage_assemble(settings: Settings, out_dir: Path) -> Path:
    real = load_pool(settings.path("real_dir"), Domain.NIGHT_REAL)
    aug = load_pool(settings.path("augmented_dir"), Domain.NIGHT_TRANSFERRED)
    manifest = assemble(real, aug, _mix(settings))
    path = manifest.save(out_dir / MANIFEST_NAME)
    report = validate(manifest)
    (out_dir / "validation.json").write_text(json.dumps(report.to_dict(), indent=2),
                                             encoding="utf-8")
    (out_dir / "composition.json").write_text(
        json.dumps(composition_stats(manifest), indent=2), encoding="utf-8")
    if not report.ok:
        raise ConfigError(f"assembled manifest has {len(report.violations)} violations; "
                          f"see {out_dir / 'validation.json'}", key="mix")
    return path


def stage_finetune(settings: Settings, out_dir: Path) -> Path:
    plan = load_stage_plan(settings.get("stage_plan", "default"),
                           bool(settings.get("stage1_trains_all", False)))
    if settings.get("stage_epochs") is not None:
        plan = plan.with_epochs(int(settings["stage_epochs"]))
    manifest = DatasetManifest.load(settings.path("manifest"))
    result = run_finetune(_detector(settings), manifest, plan, out_dir,
                          keep_best=bool(settings.get("keep_best", True)))
    return result.artifact


def stage_evaluate(settings: Settings, out_dir: Path, name: str = "metrics",
                   title: str | None = None) -> Path:
    """Score prediction files against labels, or run a detector first.

    With ``preds`` set, ``<stem>.txt`` prediction files are read directly;
    otherwise the detector predicts on ``eval_dir`` and its files are written
    to ``out_dir/predictions``.
    """
    names = settings.get("class_names") or CLASS_NAMES
    if isinstance(names, str):
        names = tuple(n.strip() for n in names.split(","))
    if settings.get("preds") is not None:
        gts_dir = settings.path("gts")
        _, preds, gts = load_corpus(settings.path("preds"), gts_dir)
    else:
        eval_dir = settings.path("eval_dir")
        images = _records(eval_dir, Domain.NIGHT_REAL)
        preds = predict(_detector(settings), images)
        write_predictions(preds, images, out_dir / "predictions")
        gts = [read_labels(label_path_for(r.path)) for r in images]
    table = map_summary(preds, gts, class_names=tuple(names))
    return write_report(table, out_dir, name, title=title, extra={"n_images": len(gts)})


def stage_compare(settings: Settings, out_dir: Path) -> Path:
    a = load_table(settings.path("table_a"))
    b = load_table(settings.path("table_b"))
    mapping = settings.get("row_mapping")
    if isinstance(mapping, str):
        mapping = dict(pair.split("=", 1) for pair in mapping.split(",") if pair)
    labels = settings.get("labels") or ("original", "fine-tuned")
    if isinstance(labels, str):
        labels = tuple(labels.split(","))
    return write_comparison(compare(a, b, mapping, tuple(labels)), out_dir)


# ---------------------------------------------------------------------------
# pipeline

STAGES = ("scenegen", "train-style", "translate", "autolabel", "assemble", "finetune",
          "evaluate-raw", "evaluate-finetuned", "compare")


def _marker(root: Path, stage: str) -> Path:
    return root / ".stages" / f"{stage}.done"


def completed_stages(root: str | Path) -> list[str]:
    return [s for s in STAGES if _marker(Path(root), s).exists()]


def run_pipeline(settings: Settings, out_dir: str | Path, restart: bool = False,
                 stop_after: str | None = None,
                 on_stage: Callable[[str], None] | None = None) -> Path:
    """Run every stage in order, skipping those already marked done.

    ``night_dir`` (the night pool for style training) defaults to the
    scenegen captures; giving it explicitly skips the simulator stage.
    Returns the comparison report path.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    if restart:
        for s in STAGES:
            _marker(root, s).unlink(missing_ok=True)
    for key in ("day_dir", "night_real_dir", "eval_dir", "detector_model", "mix"):
        settings.require(key)
    write_resolved_config(settings, root)

    d = {s: root / s.replace("-", "_") for s in STAGES}
    night_dir = settings.get("night_dir") or d["scenegen"]
    derived = {
        "scenegen": {},
        "train-style": {"night_dir": str(night_dir)},
        "translate": {"checkpoint": str(d["train-style"])},
        "autolabel": {"translated_dir": str(d["translate"])},
        "assemble": {"real_dir": settings["night_real_dir"], "augmented_dir": str(d["autolabel"])},
        "finetune": {"manifest": str(d["assemble"] / MANIFEST_NAME)},
        "evaluate-raw": {"class_names": RAW_CLASS_NAMES},
        "evaluate-finetuned": {"detector_model": str(d["finetune"] / "model"),
                               "class_names": CLASS_NAMES},
        "compare": {"table_a": str(d["evaluate-raw"] / "metrics.json"),
                    "table_b": str(d["evaluate-finetuned"] / "metrics.json"),
                    "row_mapping": RAW_ROW_MAPPING},
    }
    runners: dict[str, Callable[[Settings, Path], Path]] = {
        "scenegen": stage_scenegen,
        "train-style": stage_train_style,
        "translate": stage_translate,
        "autolabel": stage_autolabel,
        "assemble": stage_assemble,
        "finetune": stage_finetune,
        "evaluate-raw": lambda s, o: stage_evaluate(s, o, title="original detector"),
        "evaluate-finetuned": lambda s, o: stage_evaluate(s, o, title="fine-tuned detector"),
        "compare": stage_compare,
    }
    result = None
    for stage in STAGES:
        if stage == "scenegen" and settings.get("night_dir"):
            continue
        marker = _marker(root, stage)
        if marker.exists():
            log.info("stage %s already done, skipping", stage)
            result = Path(json.loads(marker.read_text(encoding="utf-8"))["output"])
            continue
        log.info("stage %s", stage)
        if on_stage is not None:
            on_stage(stage)
        stage_settings = Settings({**settings, **derived[stage]})
        start = time.perf_counter()
        result = runners[stage](stage_settings, d[stage])
        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text(json.dumps({"output": str(result),
                                      "seconds": round(time.perf_counter() - start, 3)}),
                          encoding="utf-8")
        if stage == stop_after:
            break
    return result

