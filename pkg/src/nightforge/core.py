"""Domain types, label-file format and box geometry shared across the pipeline."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from PIL import Image

EPS = 1e-6

CLASS_NAMES = ("Sedan", "SVP_BV")
SEDAN, SVP_BV = 0, 1
VALID_CLASSES = frozenset((SEDAN, SVP_BV))

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class AnnotationParseError(ValueError):
    """Raised for a syntactically malformed label line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class AnnotationValidationError(ValueError):
    """Raised when a parsed label violates the two-class scheme."""


class Domain(str, enum.Enum):
    DAY_REAL = "DAY_REAL"
    NIGHT_REAL = "NIGHT_REAL"
    NIGHT_SIM = "NIGHT_SIM"
    NIGHT_TRANSFERRED = "NIGHT_TRANSFERRED"


@dataclass(frozen=True)
class BoundingBox:
    """Center-format box, normalized by image width/height."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @classmethod
    def clamped(cls, cx: float, cy: float, w: float, h: float) -> BoundingBox:
        """Clip a possibly out-of-frame box to the unit square.

        Boxes that overhang by less than ``EPS`` are left untouched so that a
        serialize/parse round trip is exact.
        """
        x0, x1 = cx - w / 2, cx + w / 2
        y0, y1 = cy - h / 2, cy + h / 2
        if x0 < -EPS or x1 > 1 + EPS:
            x0, x1 = max(x0, 0.0), min(x1, 1.0)
            cx, w = (x0 + x1) / 2, x1 - x0
        if y0 < -EPS or y1 > 1 + EPS:
            y0, y1 = max(y0, 0.0), min(y1, 1.0)
            cy, h = (y0 + y1) / 2, y1 - y0
        return cls(cx, cy, w, h)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class Annotation:
    class_index: int
    box: BoundingBox
    confidence: float | None = None


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    width_px: int
    height_px: int
    domain: Domain
    source_of: Path | None = None

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"{self.path}: non-positive dimensions")
        transferred = self.domain is Domain.NIGHT_TRANSFERRED
        if transferred != (self.source_of is not None):
            raise ValueError(
                f"{self.path}: source_of must be set exactly for NIGHT_TRANSFERRED images")

    @classmethod
    def from_file(cls, path: str | Path, domain: Domain,
                  source_of: str | Path | None = None) -> ImageRecord:
        path = Path(path)
        with Image.open(path) as im:
            width, height = im.size
        return cls(path, width, height, domain,
                   Path(source_of) if source_of is not None else None)

    @property
    def stem(self) -> str:
        return self.path.stem


@dataclass(frozen=True)
class LabeledImage:
    image: ImageRecord
    annotations: tuple[Annotation, ...] = field(default_factory=tuple)


def parse_annotation_file(text: str, image_dims: tuple[int, int] | None = None,
                          with_confidence: bool = False) -> list[Annotation]:
    """Parse ``class cx cy w h`` lines into annotations.

    Args:
        text: file contents.
        image_dims: ``(width, height)`` of the image; accepted for interface
            symmetry with pixel-based formats, normalized coordinates do not
            need it.
        with_confidence: expect a sixth confidence column (predictions files).

    Raises:
        AnnotationParseError: wrong arity or non-numeric field.
        AnnotationValidationError: class index outside the two-class scheme.
    """
    arity = 6 if with_confidence else 5
    out: list[Annotation] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != arity:
            raise AnnotationParseError(line_no, f"expected {arity} fields, got {len(fields)}")
        try:
            cls_f = float(fields[0])
            values = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise AnnotationParseError(line_no, str(exc)) from None
        if not cls_f.is_integer():
            raise AnnotationParseError(line_no, f"class index {fields[0]!r} is not an integer")
        cls = int(cls_f)
        if cls not in VALID_CLASSES:
            raise AnnotationValidationError(f"line {line_no}: class {cls} not in {{0, 1}}")
        cx, cy, w, h = values[:4]
        try:
            box = BoundingBox.clamped(cx, cy, w, h)
        except ValueError as exc:
            raise AnnotationParseError(line_no, str(exc)) from None
        conf = values[4] if with_confidence else None
        out.append(Annotation(cls, box, conf))
    return out


def serialize_annotation_file(annotations: Iterable[Annotation],
                              with_confidence: bool = False) -> str:
    lines = []
    for a in annotations:
        b = a.box
        line = f"{a.class_index:d} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"
        if with_confidence:
            line += f" {a.confidence:.6f}"
        lines.append(line)
    return "\n".join(lines)


def read_labels(path: str | Path, with_confidence: bool = False) -> list[Annotation]:
    return parse_annotation_file(Path(path).read_text(encoding="utf-8"),
                                 with_confidence=with_confidence)


def write_labels(path: str | Path, annotations: Iterable[Annotation],
                 with_confidence: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_annotation_file(annotations, with_confidence), encoding="utf-8")


def to_pixel(box: BoundingBox, width_px: int, height_px: int) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box.corners()
    return (x0 * width_px, y0 * height_px, x1 * width_px, y1 * height_px)


def to_normalized(corners: Sequence[float], width_px: int, height_px: int) -> BoundingBox:
    x0, y0, x1, y1 = corners
    return BoundingBox((x0 + x1) / 2 / width_px, (y0 + y1) / 2 / height_px,
                       (x1 - x0) / width_px, (y1 - y0) / height_px)


def label_path_for(image_path: str | Path) -> Path:
    """Map ``root/images/<split>/a.png`` to ``root/labels/<split>/a.txt``.

    Falls back to a sibling ``.txt`` when the path has no ``images`` component.
    """
    image_path = Path(image_path)
    parts = list(image_path.parts)
    for i in range(len(parts) - 1, -1, -1):
        if parts[i] == "images":
            parts[i] = "labels"
            return Path(*parts).with_suffix(".txt")
    return image_path.with_suffix(".txt")


def list_images(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def scan_corpus_classes(label_files: Iterable[str | Path]) -> dict[int, int]:
    """Count classes across label files, failing on any out-of-scheme index."""
    counts = {c: 0 for c in sorted(VALID_CLASSES)}
    for path in label_files:
        try:
            anns = read_labels(path)
        except (AnnotationParseError, AnnotationValidationError) as exc:
            raise AnnotationValidationError(f"{path}: {exc}") from None
        for a in anns:
            counts[a.class_index] += 1
    return counts
