"""Detection metrics: IoU, greedy matching, 101-point AP, mAP50 / mAP50-95,
and side-by-side comparison reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import CLASS_NAMES, Annotation, read_labels, to_pixel

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_POINTS = np.arange(101) / 100
RECALL_TOL = 1e-9
METRICS = ("precision", "recall", "mAP50", "mAP50-95")


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two ``(x_min, y_min, x_max, y_max)`` boxes; 0 if either has no area."""
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one image at one IoU threshold.

    ``matched_gt[i]`` is the ground-truth index taken by prediction ``i``
    (input order), or ``None`` for a false positive.
    """

    matched_gt: tuple[int | None, ...]
    n_gt: int

    @property
    def tp(self) -> tuple[bool, ...]:
        return tuple(m is not None for m in self.matched_gt)

    @property
    def unmatched_gt(self) -> int:
        return self.n_gt - sum(self.tp)


def _confidence_order(preds: Sequence[Annotation]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: -(preds[i].confidence or 0.0))


def match(preds: Sequence[Annotation], gts: Sequence[Annotation], iou_threshold: float,
          dims: tuple[int, int] = (1, 1)) -> MatchResult:
    """Highest-confidence prediction first takes the best-IoU unmatched
    same-class ground truth (ties -> lower index) at or above the threshold."""
    w, h = dims
    gt_px = [to_pixel(g.box, w, h) for g in gts]
    taken = [False] * len(gts)
    matched: list[int | None] = [None] * len(preds)
    for i in _confidence_order(preds):
        p = preds[i]
        p_px = to_pixel(p.box, w, h)
        best, best_iou = None, iou_threshold
        for j, g in enumerate(gts):
            if taken[j] or g.class_index != p.class_index:
                continue
            v = iou(p_px, gt_px[j])
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
            matched[i] = best
    return MatchResult(tuple(matched), len(gts))


@dataclass(frozen=True)
class PRCurve:
    confidences: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    n_gt: int


def pr_curve(preds_per_image: Sequence[Sequence[Annotation]],
             gts_per_image: Sequence[Sequence[Annotation]], iou_threshold: float,
             dims: Sequence[tuple[int, int]] | None = None) -> PRCurve:
    """Cumulative precision/recall over all predictions in descending confidence."""
    confs, flags = [], []
    n_gt = 0
    for k, (preds, gts) in enumerate(zip(preds_per_image, gts_per_image)):
        res = match(preds, gts, iou_threshold, dims[k] if dims else (1, 1))
        confs.extend(p.confidence or 0.0 for p in preds)
        flags.extend(res.tp)
        n_gt += len(gts)
    confs_a = np.asarray(confs, dtype=float)
    order = np.argsort(-confs_a, kind="stable")
    tp = np.asarray(flags, dtype=float)[order]
    ctp, cfp = np.cumsum(tp), np.cumsum(1 - tp)
    precision = ctp / np.maximum(ctp + cfp, 1)
    recall = ctp / n_gt if n_gt else np.zeros_like(ctp)
    return PRCurve(confs_a[order], precision, recall, n_gt)


def ap_from_curve(curve: PRCurve) -> float | None:
    """101-point interpolated AP; ``None`` when there is nothing to score."""
    if curve.n_gt == 0:
        return None if len(curve.precision) == 0 else 0.0
    if len(curve.precision) == 0:
        return 0.0
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    idx = np.searchsorted(curve.recall, RECALL_POINTS - RECALL_TOL, side="left")
    interp = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(interp.mean())


def average_precision(preds_per_image, gts_per_image, iou_threshold: float,
                      dims=None) -> float | None:
    return ap_from_curve(pr_curve(preds_per_image, gts_per_image, iou_threshold, dims))


def best_f1_point(curve: PRCurve) -> tuple[float, float, float | None]:
    """(precision, recall, confidence threshold) maximizing F1.

    Cut points sit at distinct confidences so tied predictions are kept or
    dropped together.
    """
    n = len(curve.precision)
    if n == 0 or curve.n_gt == 0:
        return 0.0, 0.0, None
    last_of_conf = np.append(curve.confidences[1:] != curve.confidences[:-1], True)
    cuts = np.nonzero(last_of_conf)[0]
    p, r = curve.precision[cuts], curve.recall[cuts]
    f1 = np.where(p + r > 0, 2 * p * r / np.where(p + r > 0, p + r, 1), 0.0)
    k = int(np.argmax(f1))
    if f1[k] == 0:
        return 0.0, 0.0, None
    return float(p[k]), float(r[k]), float(curve.confidences[cuts[k]])


@dataclass
class MetricsRow:
    precision: float | None
    recall: float | None
    mAP50: float | None
    mAP50_95: float | None
    conf_threshold: float | None = None

    def values(self) -> dict[str, float | None]:
        return {"precision": self.precision, "recall": self.recall,
                "mAP50": self.mAP50, "mAP50-95": self.mAP50_95}


@dataclass
class MetricsTable:
    rows: dict[str, MetricsRow] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {name: {**row.values(), "conf_threshold": row.conf_threshold}
                for name, row in self.rows.items()}

    @classmethod
    def from_dict(cls, data: Mapping) -> MetricsTable:
        rows = data.get("rows", data)
        return cls({name: MetricsRow(r.get("precision"), r.get("recall"), r.get("mAP50"),
                                     r.get("mAP50-95"), r.get("conf_threshold"))
                    for name, r in rows.items()})

    def render(self, title: str | None = None) -> str:
        lines = [title] if title else []
        lines.append(f"{'Class':<10}" + "".join(f"{m:>11}" for m in METRICS))
        for name, row in self.rows.items():
            lines.append(f"{name:<10}" + "".join(f"{_fmt(v):>11}" for v in row.values().values()))
        return "\n".join(lines)


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def map_summary(preds_per_image: Sequence[Sequence[Annotation]],
                gts_per_image: Sequence[Sequence[Annotation]],
                class_names: Sequence[str] = CLASS_NAMES, dims=None) -> MetricsTable:
    """Per-class and ``all`` rows of precision, recall, mAP50 and mAP50-95.

    Classes with neither predictions nor ground truth are undefined (``None``)
    and left out of the ``all`` means. ``all`` precision/recall are the
    per-class means, each taken at that class's max-F1 confidence.
    """
    if len(preds_per_image) != len(gts_per_image):
        raise ValueError("predictions and ground truth must cover the same images")
    per_class: dict[str, MetricsRow] = {}
    for c, name in enumerate(class_names):
        cp = [[p for p in preds if p.class_index == c] for preds in preds_per_image]
        cg = [[g for g in gts if g.class_index == c] for gts in gts_per_image]
        aps = [average_precision(cp, cg, t, dims) for t in IOU_THRESHOLDS]
        if aps[0] is None:
            per_class[name] = MetricsRow(None, None, None, None)
            continue
        p, r, thr = best_f1_point(pr_curve(cp, cg, 0.5, dims))
        per_class[name] = MetricsRow(p, r, aps[0], float(np.mean(aps)), thr)
    rows = list(per_class.values())
    table = MetricsTable({"all": MetricsRow(
        _mean(r.precision for r in rows), _mean(r.recall for r in rows),
        _mean(r.mAP50 for r in rows), _mean(r.mAP50_95 for r in rows))})
    table.rows.update(per_class)
    return table


# ---------------------------------------------------------------------------
# files and reports

def load_corpus(preds_dir: str | Path, gts_dir: str | Path):
    """Pair ``<stem>.txt`` prediction files (6 columns) with ground-truth files.

    Every ground-truth stem is an image; a missing prediction file means no
    detections. Returns ``(stems, preds_per_image, gts_per_image)``.
    """
    preds_dir, gts_dir = Path(preds_dir), Path(gts_dir)
    stems = sorted(p.stem for p in gts_dir.glob("*.txt"))
    preds, gts = [], []
    for stem in stems:
        gts.append(read_labels(gts_dir / f"{stem}.txt"))
        pf = preds_dir / f"{stem}.txt"
        preds.append(read_labels(pf, with_confidence=True) if pf.exists() else [])
    return stems, preds, gts


def write_report(table: MetricsTable, out_dir: str | Path, name: str = "metrics",
                 title: str | None = None, extra: Mapping | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.txt").write_text(table.render(title) + "\n", encoding="utf-8")
    payload = {"rows": table.to_dict(), **(extra or {})}
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def load_table(path: str | Path) -> MetricsTable:
    return MetricsTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class ClassSchemaError(ValueError):
    pass


@dataclass
class Comparison:
    label_a: str
    label_b: str
    rows: list[tuple[str, str, MetricsRow, MetricsRow]]

    def deltas(self) -> dict[str, dict[str, float | None]]:
        out = {}
        for name_a, name_b, ra, rb in self.rows:
            va, vb = ra.values(), rb.values()
            out[name_b] = {m: (None if va[m] is None or vb[m] is None else vb[m] - va[m])
                           for m in METRICS}
        return out

    def render(self) -> str:
        head = f"{'Model':<14}{'Class':<10}" + "".join(f"{m:>11}" for m in METRICS)
        lines = [head, "-" * len(head)]
        for label, idx in ((self.label_a, 2), (self.label_b, 3)):
            for i, row in enumerate(self.rows):
                name = row[0] if idx == 2 else row[1]
                vals = row[idx].values().values()
                lines.append(f"{label if i == 0 else '':<14}{name:<10}"
                             + "".join(f"{_fmt(v):>11}" for v in vals))
        lines.append("-" * len(head))
        for i, (cls, d) in enumerate(self.deltas().items()):
            lines.append(f"{'delta' if i == 0 else '':<14}{cls:<10}"
                         + "".join(f"{'n/a' if v is None else f'{v:+.3f}':>11}" for v in d.values()))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "models": [self.label_a, self.label_b],
            "rows": [{"row_a": a, "row_b": b, self.label_a: ra.values(), self.label_b: rb.values()}
                     for a, b, ra, rb in self.rows],
            "deltas": self.deltas(),
        }


def compare(table_a: MetricsTable, table_b: MetricsTable,
            row_mapping: Mapping[str, str] | None = None,
            labels: tuple[str, str] = ("original", "fine-tuned")) -> Comparison:
    """Align rows of ``table_a`` to ``table_b`` (``row_mapping``: a-name ->
    b-name, identity otherwise) and compute b - a deltas."""
    mapping = dict(row_mapping or {})
    rows = []
    for name_a, ra in table_a.rows.items():
        name_b = mapping.get(name_a, name_a)
        if name_b not in table_b.rows:
            raise ClassSchemaError(
                f"row {name_a!r} has no counterpart in the second table; pass a row mapping")
        rows.append((name_a, name_b, ra, table_b.rows[name_b]))
    matched_b = {r[1] for r in rows}
    missing = set(table_b.rows) - matched_b
    if missing:
        raise ClassSchemaError(f"rows {sorted(missing)} of the second table are unmatched")
    return Comparison(labels[0], labels[1], rows)


def write_comparison(comp: Comparison, out_dir: str | Path, name: str = "comparison") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.txt").write_text(comp.render() + "\n", encoding="utf-8")
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(comp.to_dict(), indent=2), encoding="utf-8")
    return path
