"""Auto-labeling of daytime images and label transfer onto translated images."""

from __future__ import annotations

import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .core import (CLASS_NAMES, VALID_CLASSES, Annotation, ImageRecord, LabeledImage,
                   serialize_annotation_file, write_labels)
from .detectors import DetectorAdapter

log = logging.getLogger(__name__)

DEFAULT_CONF_THRESHOLD = 0.25
COCO_CAR, COCO_BUS, COCO_TRUCK = 2, 5, 7
PROVENANCE_FILE = "provenance.json"


class ProvenanceError(ValueError):
    """A night image was paired with a day image it was not translated from."""


class AnnotateError(RuntimeError):
    """Detector failure, carrying the offending image path."""

    def __init__(self, path: Path, cause: BaseException):
        super().__init__(f"{path}: detector failed: {cause}")
        self.path = path


@dataclass(frozen=True)
class ClassMap:
    """Source-vocabulary id -> two-class index; ids not in the map are dropped."""

    mapping: Mapping[int, int]

    def __post_init__(self) -> None:
        bad = {k: v for k, v in self.mapping.items() if v not in VALID_CLASSES}
        if bad:
            raise ValueError(f"class map targets must be in {{0, 1}}, got {bad}")
        object.__setattr__(self, "mapping", dict(self.mapping))

    def __call__(self, class_id: int) -> int | None:
        return self.mapping.get(int(class_id))

    def to_dict(self) -> dict[str, int]:
        return {str(k): v for k, v in sorted(self.mapping.items())}

    @classmethod
    def from_dict(cls, data: Mapping) -> ClassMap:
        return cls({int(k): int(v) for k, v in data.items()})


def default_class_map() -> ClassMap:
    """COCO car -> Sedan, bus and truck -> SVP_BV."""
    return ClassMap({COCO_CAR: 0, COCO_BUS: 1, COCO_TRUCK: 1})


def identity_class_map() -> ClassMap:
    """For detectors that already speak the two-class scheme."""
    return ClassMap({c: c for c in VALID_CLASSES})


@dataclass
class _Tally:
    kept: list[Annotation]
    below_threshold: int = 0
    unmapped: dict[int, int] = field(default_factory=dict)


def _annotate(detector: DetectorAdapter, image: ImageRecord, class_map: ClassMap,
              conf_threshold: float) -> _Tally:
    try:
        raw = detector.detect(image)
    except Exception as exc:
        raise AnnotateError(image.path, exc) from exc
    tally = _Tally([])
    for det in raw:
        if det.confidence < conf_threshold:
            tally.below_threshold += 1
            continue
        target = class_map(det.class_id)
        if target is None:
            tally.unmapped[det.class_id] = tally.unmapped.get(det.class_id, 0) + 1
            continue
        tally.kept.append(Annotation(target, det.box, det.confidence))
    tally.kept.sort(key=lambda a: -a.confidence)
    return tally


def annotate(detector: DetectorAdapter, image: ImageRecord, class_map: ClassMap | None = None,
             conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> list[Annotation]:
    """Detect, drop low-confidence and unmapped classes, remap the rest.

    Results are ordered by descending confidence.

    Raises:
        AnnotateError: the detector raised; the image path is attached.
    """
    return _annotate(detector, image, class_map or default_class_map(), conf_threshold).kept


def _same_file(a: Path, b: Path) -> bool:
    return Path(a).resolve() == Path(b).resolve()


def transfer_labels(day: LabeledImage, night_image: ImageRecord) -> LabeledImage:
    """Copy ``day``'s annotations onto its translated counterpart unchanged.

    Raises:
        ProvenanceError: ``night_image`` was not translated from ``day.image``.
    """
    if night_image.source_of is None or not _same_file(night_image.source_of, day.image.path):
        raise ProvenanceError(
            f"{night_image.path} comes from {night_image.source_of}, not {day.image.path}")
    return LabeledImage(night_image, tuple(day.annotations))


@dataclass
class AutolabelReport:
    conf_threshold: float
    per_class: dict[int, int] = field(default_factory=dict)
    per_image: dict[str, int] = field(default_factory=dict)
    dropped_below_threshold: int = 0
    dropped_unmapped: dict[int, int] = field(default_factory=dict)
    skipped: list[dict] = field(default_factory=list)

    @property
    def n_labeled(self) -> int:
        return len(self.per_image)

    def to_dict(self) -> dict:
        return {
            "conf_threshold": self.conf_threshold,
            "n_labeled": self.n_labeled,
            "per_class": {CLASS_NAMES[c]: n for c, n in sorted(self.per_class.items())},
            "per_class_index": {str(c): n for c, n in sorted(self.per_class.items())},
            "per_image": dict(sorted(self.per_image.items())),
            "dropped": {
                "below_threshold": self.dropped_below_threshold,
                "unmapped_class": sum(self.dropped_unmapped.values()),
                "unmapped_by_source_class": {str(k): v for k, v in
                                             sorted(self.dropped_unmapped.items())},
            },
            "skipped": list(self.skipped),
        }

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path


def autolabel_corpus(detector: DetectorAdapter, day_images: Sequence[ImageRecord],
                     translated_images: Sequence[ImageRecord], class_map: ClassMap | None = None,
                     conf_threshold: float = DEFAULT_CONF_THRESHOLD, workers: int = 1,
                     ) -> tuple[list[LabeledImage], list[LabeledImage], AutolabelReport]:
    """Label every day image and transfer the labels to its translation.

    Day images without a translation partner are skipped and listed in the
    report. Inference fans out over ``workers`` threads only when the
    detector declares ``concurrent_safe``.

    Returns:
        ``(augmented, day_labeled, report)``: the labeled night images in
        day-image order, the labeled day images they came from, and the
        summary report.
    """
    class_map = class_map or default_class_map()
    report = AutolabelReport(conf_threshold)
    partners: dict[Path, ImageRecord] = {}
    for rec in translated_images:
        if rec.source_of is None:
            raise ProvenanceError(f"{rec.path} has no source_of; not a translated image")
        partners.setdefault(Path(rec.source_of).resolve(), rec)

    paired, skipped = [], []
    for day in day_images:
        night = partners.get(day.path.resolve())
        if night is None:
            skipped.append({"image": str(day.path), "reason": "missing translation partner"})
        else:
            paired.append((day, night))
    report.skipped = skipped

    def run(pair):
        return _annotate(detector, pair[0], class_map, conf_threshold)

    if workers > 1 and getattr(detector, "concurrent_safe", False):
        with ThreadPoolExecutor(workers) as pool:
            tallies = list(pool.map(run, paired))
    else:
        tallies = [run(p) for p in paired]

    augmented, day_labeled = [], []
    for (day, night), tally in zip(paired, tallies):
        labeled_day = LabeledImage(day, tuple(tally.kept))
        augmented.append(transfer_labels(labeled_day, night))
        day_labeled.append(labeled_day)
        report.per_image[day.stem] = len(tally.kept)
        for a in tally.kept:
            report.per_class[a.class_index] = report.per_class.get(a.class_index, 0) + 1
        report.dropped_below_threshold += tally.below_threshold
        for k, v in tally.unmapped.items():
            report.dropped_unmapped[k] = report.dropped_unmapped.get(k, 0) + v
    for s in skipped:
        log.warning("skipping %s: %s", s["image"], s["reason"])
    return augmented, day_labeled, report


def write_augmented_set(augmented: Sequence[LabeledImage], out_dir: str | Path,
                        day_labeled: Sequence[LabeledImage] = (),
                        copy_images: bool = True) -> Path:
    """Persist the augmented set as ``out_dir/{images,labels}`` plus provenance.

    Day labels, when given, go to ``out_dir/day_labels`` so the transfer can
    be audited file-for-file. ``provenance.json`` maps each image file name
    to its daytime source (relative to ``out_dir``).
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    provenance = {}
    for item in augmented:
        src = item.image.path
        dst = out_dir / "images" / src.name
        if copy_images and not _same_file(src, dst):
            shutil.copyfile(src, dst)
        write_labels(out_dir / "labels" / f"{src.stem}.txt", item.annotations)
        provenance[src.name] = _relative(item.image.source_of, out_dir)
    for item in day_labeled:
        write_labels(out_dir / "day_labels" / f"{item.image.stem}.txt", item.annotations)
    (out_dir / PROVENANCE_FILE).write_text(json.dumps(provenance, indent=1, sort_keys=True),
                                           encoding="utf-8")
    return out_dir


def _relative(path: Path, base: Path) -> str:
    return Path(os.path.relpath(Path(path).resolve(), base.resolve())).as_posix()


def label_bytes(item: LabeledImage) -> bytes:
    """Exact bytes of the label file ``item`` would be written as."""
    return serialize_annotation_file(item.annotations).encode("utf-8")


def predict(detector: DetectorAdapter, images: Sequence[ImageRecord],
            class_map: ClassMap | None = None, conf_threshold: float = 0.001,
            ) -> list[list[Annotation]]:
    """Remapped detections for each image, for evaluation.

    ``class_map`` defaults to identity when the detector already reports the
    two-class vocabulary and to the COCO remap otherwise. The low default
    threshold keeps the full precision-recall curve.
    """
    if class_map is None:
        two_class = tuple(getattr(detector, "class_names", ())) == CLASS_NAMES
        class_map = identity_class_map() if two_class else default_class_map()
    return [_annotate(detector, rec, class_map, conf_threshold).kept for rec in images]


def write_predictions(predictions: Sequence[Sequence[Annotation]],
                      images: Sequence[ImageRecord], out_dir: str | Path) -> Path:
    """One ``<stem>.txt`` per image with a trailing confidence column."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec, anns in zip(images, predictions):
        write_labels(out_dir / f"{rec.stem}.txt", anns, with_confidence=True)
    return out_dir
