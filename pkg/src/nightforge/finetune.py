"""Staged, block-wise fine-tuning of a detector through its adapter."""

from __future__ import annotations

import csv
import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .autolabel import predict
from .core import ImageRecord, read_labels
from .dataset_forge import DatasetManifest, materialize
from .detectors import BLOCKS, DetectorAdapter
from .evaluator import map_summary

log = logging.getLogger(__name__)

DEFAULT_LRS = (1e-4, 5e-5, 1e-5)
DEFAULT_EPOCHS = 50
STAGE_LOG_COLUMNS = ("stage", "lr", "epochs", "wall_time", "val_mAP50")
FAILED_MARKER = "FAILED"


class PlanError(ValueError):
    pass


class FineTuneError(RuntimeError):
    pass


@dataclass(frozen=True)
class Stage:
    """One fine-tuning stage.

    ``trainable`` blocks are updated; every other block is frozen for the
    stage. ``locked`` names the frozen blocks that earlier stages already
    tuned (the blocks the protocol deliberately keeps fixed); it is a subset
    of the frozen set and is informational.
    """

    trainable: frozenset[str]
    lr: float
    epochs: int
    locked: frozenset[str] = frozenset()
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "trainable", frozenset(self.trainable))
        object.__setattr__(self, "locked", frozenset(self.locked))
        if not self.trainable:
            raise PlanError("a stage must train at least one block")
        if not self.lr > 0:
            raise PlanError(f"stage lr must be > 0, got {self.lr}")
        if not isinstance(self.epochs, int) or self.epochs <= 0:
            raise PlanError(f"stage epochs must be a positive integer, got {self.epochs!r}")
        if self.locked & self.trainable:
            raise PlanError(f"blocks {sorted(self.locked & self.trainable)} are both locked "
                            "and trainable")

    def frozen(self, blocks: Sequence[str]) -> frozenset[str]:
        return frozenset(blocks) - self.trainable

    def to_dict(self) -> dict:
        return {"name": self.name, "trainable": sorted(self.trainable), "lr": self.lr,
                "epochs": self.epochs, "locked": sorted(self.locked)}


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]
    blocks: tuple[str, ...] = BLOCKS

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.stages:
            raise PlanError("a stage plan needs at least one stage")
        for s in self.stages:
            unknown = (s.trainable | s.locked) - set(self.blocks)
            if unknown:
                raise PlanError(f"stage names unknown blocks {sorted(unknown)}")

    def with_epochs(self, epochs: int) -> StagePlan:
        """Same plan with every stage's epoch budget replaced (smoke runs)."""
        return StagePlan(tuple(Stage(s.trainable, s.lr, epochs, s.locked, s.name)
                               for s in self.stages), self.blocks)

    def to_dict(self) -> dict:
        return {"blocks": list(self.blocks), "stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, data: Mapping) -> StagePlan:
        stages = tuple(Stage(frozenset(s["trainable"]), float(s["lr"]), int(s["epochs"]),
                             frozenset(s.get("locked", ())), s.get("name", ""))
                       for s in data.get("stages", ()))
        return cls(stages, tuple(data.get("blocks", BLOCKS)))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path


def default_stage_plan(stage1_trains_all: bool = False, epochs: int = DEFAULT_EPOCHS,
                       lrs: Sequence[float] = DEFAULT_LRS) -> StagePlan:
    """Backbone, then neck, then head, with decreasing learning rates.

    Stage 1 trains the backbone alone unless ``stage1_trains_all`` is set,
    in which case it trains the whole model.
    """
    first = frozenset(BLOCKS) if stage1_trains_all else frozenset({"backbone"})
    return StagePlan((
        Stage(first, lrs[0], epochs, frozenset(), "backbone"),
        Stage(frozenset({"neck"}), lrs[1], epochs, frozenset({"backbone"}), "neck"),
        Stage(frozenset({"head"}), lrs[2], epochs, frozenset({"backbone", "neck"}), "head"),
    ))


def load_stage_plan(ref: str | Path | Mapping, stage1_trains_all: bool = False) -> StagePlan:
    """``"default"``, a JSON file path, or an already-parsed mapping."""
    if isinstance(ref, Mapping):
        return StagePlan.from_dict(ref)
    if str(ref) == "default":
        return default_stage_plan(stage1_trains_all)
    return StagePlan.from_dict(json.loads(Path(ref).read_text(encoding="utf-8")))


@dataclass
class StageResult:
    index: int
    stage: Stage
    wall_time: float
    val_mAP50: float | None
    artifact: Path


@dataclass
class FineTuneResult:
    artifact: Path
    log_path: Path
    stages: list[StageResult] = field(default_factory=list)
    best_stage: int | None = None


def _val_mAP50(adapter: DetectorAdapter, manifest: DatasetManifest | None) -> float | None:
    if manifest is None or not manifest.splits.get("val"):
        return None
    entries = manifest.splits["val"]
    images = [ImageRecord.from_file(e.image, e.domain, e.source_of) for e in entries]
    preds = predict(adapter, images)
    gts = [read_labels(e.label) for e in entries]
    return map_summary(preds, gts).rows["all"].mAP50


def _write_log(path: Path, results: Sequence[StageResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STAGE_LOG_COLUMNS)
        for r in results:
            w.writerow([r.index, repr(r.stage.lr), r.stage.epochs, f"{r.wall_time:.3f}",
                        "" if r.val_mAP50 is None else repr(r.val_mAP50)])


def run(adapter: DetectorAdapter, dataset: DatasetManifest | str | Path, plan: StagePlan,
        out_dir: str | Path, keep_best: bool = True) -> FineTuneResult:
    """Execute ``plan`` stage by stage and persist the fine-tuned detector.

    Args:
        adapter: detector to tune in place.
        dataset: a manifest (materialized under ``out_dir/dataset``), a
            manifest JSON path, or an existing ``data.yaml``.
        plan: stages to run in order.
        out_dir: receives ``stage_log.csv``, per-stage artifacts under
            ``stages/`` and the final artifact under ``model/``.
        keep_best: the final artifact is the stage with the best validation
            mAP50 (ties go to the later stage); otherwise the last stage.

    Raises:
        PlanError: the adapter lacks a block the plan names.
        FineTuneError: ``fit`` failed; a ``FAILED`` marker is written and the
            stages completed so far are kept.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    missing = set(plan.blocks) - set(adapter.list_blocks())
    if missing:
        raise PlanError(f"adapter has no blocks {sorted(missing)}")

    manifest = None
    if isinstance(dataset, DatasetManifest):
        manifest = dataset
        data_config = materialize(manifest, out_dir / "dataset")
    elif Path(dataset).suffix == ".json":
        manifest = DatasetManifest.load(dataset)
        data_config = materialize(manifest, out_dir / "dataset")
    else:
        data_config = Path(dataset)

    (out_dir / FAILED_MARKER).unlink(missing_ok=True)
    log_path = out_dir / "stage_log.csv"
    results: list[StageResult] = []
    for i, stage in enumerate(plan.stages, start=1):
        log.info("stage %d: train %s at lr %g for %d epochs", i, sorted(stage.trainable),
                 stage.lr, stage.epochs)
        adapter.set_trainable(stage.trainable)
        start = time.perf_counter()
        try:
            adapter.fit(data_config, stage.lr, stage.epochs)
        except Exception as exc:
            (out_dir / FAILED_MARKER).write_text(
                json.dumps({"stage": i, "error": f"{type(exc).__name__}: {exc}"}, indent=2),
                encoding="utf-8")
            _write_log(log_path, results)
            raise FineTuneError(f"stage {i} failed: {exc}") from exc
        wall = time.perf_counter() - start
        artifact = adapter.save(out_dir / "stages" / f"stage_{i}")
        results.append(StageResult(i, stage, wall, _val_mAP50(adapter, manifest), artifact))
        _write_log(log_path, results)

    best = len(results)
    if keep_best:
        scored = [(r.val_mAP50, r.index) for r in results if r.val_mAP50 is not None]
        if scored:
            best = max(scored)[1]
    final = out_dir / "model"
    if final.exists():
        shutil.rmtree(final)
    shutil.copytree(results[best - 1].artifact, final)
    meta = {"plan": plan.to_dict(), "selected_stage": best, "keep_best": keep_best,
            "data_config": str(data_config),
            "stages": [{"stage": r.index, "val_mAP50": r.val_mAP50} for r in results]}
    (final / "finetune.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return FineTuneResult(final, log_path, results, best)
