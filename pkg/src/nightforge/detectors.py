"""Detector adapters.

The pipeline never looks inside a detector; it talks to this small surface:
``detect`` for auto-labeling and evaluation, and ``list_blocks`` /
``set_trainable`` / ``fit`` / ``save`` for staged fine-tuning.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .core import CLASS_NAMES, BoundingBox, ImageRecord

log = logging.getLogger(__name__)

COCO_NAMES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
)
BLOCKS = ("backbone", "neck", "head")


@dataclass(frozen=True)
class RawDetection:
    """A detection in the detector's own class vocabulary, box normalized."""

    class_id: int
    confidence: float
    box: BoundingBox


class DetectorError(RuntimeError):
    pass


@runtime_checkable
class DetectorAdapter(Protocol):
    class_names: Sequence[str]
    concurrent_safe: bool

    def detect(self, image: ImageRecord) -> list[RawDetection]: ...

    def list_blocks(self) -> list[str]: ...

    def set_trainable(self, blocks: Sequence[str]) -> None: ...

    def fit(self, data_config: Path, lr: float, epochs: int) -> dict: ...

    def save(self, path: str | Path) -> Path: ...


def read_detection_fixture(path: str | Path) -> list[RawDetection]:
    """Parse a scripted-detections file: ``{"detections": [{class_id,
    confidence, cx, cy, w, h}, ...]}`` (a bare list is accepted too)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = data["detections"] if isinstance(data, dict) else data
    return [RawDetection(int(d["class_id"]), float(d["confidence"]),
                         BoundingBox.clamped(d["cx"], d["cy"], d["w"], d["h"]))
            for d in items]


class MockDetector:
    """Deterministic stand-in detector driven by fixture files.

    ``model_dir`` holds ``raw/<stem>.json`` (pretrained behaviour, COCO ids)
    and optionally ``finetuned/<stem>.json`` (two-class ids), used once the
    detector has been fitted. Images without a fixture yield no detections.

    Each block owns a small parameter vector; ``fit`` nudges only trainable
    blocks, so frozen-block guarantees can be checked through
    ``parameter_hashes``. Every adapter call is appended to ``calls``.
    """

    concurrent_safe = True

    def __init__(self, model_dir: str | Path, blocks: Sequence[str] = BLOCKS, seed: int = 0,
                 fail_on_fit: int | None = None):
        self.model_dir = Path(model_dir)
        self.blocks = list(blocks)
        rng = np.random.default_rng(seed)
        self.params = {b: rng.standard_normal(16) for b in self.blocks}
        self.trainable: set[str] = set(self.blocks)
        self.fitted = False
        self.fit_count = 0
        self.fail_on_fit = fail_on_fit
        self.calls: list[tuple] = []

    @property
    def class_names(self) -> tuple[str, ...]:
        return CLASS_NAMES if self.fitted else COCO_NAMES

    def detect(self, image: ImageRecord) -> list[RawDetection]:
        sub = "finetuned" if self.fitted else "raw"
        path = self.model_dir / sub / f"{image.stem}.json"
        self.calls.append(("detect", image.stem))
        if not path.exists():
            return []
        return read_detection_fixture(path)

    def list_blocks(self) -> list[str]:
        return list(self.blocks)

    def set_trainable(self, blocks: Sequence[str]) -> None:
        unknown = set(blocks) - set(self.blocks)
        if unknown:
            raise DetectorError(f"unknown blocks {sorted(unknown)}")
        self.trainable = set(blocks)
        self.calls.append(("set_trainable", frozenset(blocks)))

    def fit(self, data_config: Path, lr: float, epochs: int) -> dict:
        self.calls.append(("fit", lr, epochs))
        self.fit_count += 1
        if self.fail_on_fit is not None and self.fit_count == self.fail_on_fit:
            raise DetectorError(f"scripted failure on fit #{self.fit_count}")
        for b in sorted(self.trainable):
            rng = np.random.default_rng([self.fit_count, self.blocks.index(b)])
            self.params[b] = self.params[b] - lr * epochs * rng.standard_normal(16)
        self.fitted = True
        return {"epochs": epochs, "lr": lr}

    def parameter_hashes(self) -> dict[str, str]:
        return {b: hashlib.sha256(p.tobytes()).hexdigest() for b, p in self.params.items()}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        state = {"kind": "mock", "model_dir": str(self.model_dir.resolve()), "blocks": self.blocks,
                 "fitted": self.fitted, "params": {b: p.tolist() for b, p in self.params.items()}}
        (path / "mock_detector.json").write_text(json.dumps(state, indent=1), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> MockDetector:
        """Open a saved artifact, or a fixture directory as a fresh detector."""
        path = Path(path)
        state_file = path / "mock_detector.json"
        if not state_file.exists():
            return cls(path)
        state = json.loads(state_file.read_text(encoding="utf-8"))
        det = cls(state["model_dir"], state["blocks"])
        det.fitted = state["fitted"]
        det.params = {b: np.asarray(v) for b, v in state["params"].items()}
        return det


class UltralyticsAdapter:
    """Adapter over an Ultralytics YOLO model (optional dependency).

    Blocks map to layer-index ranges of the model's ``model.model``
    sequence; by default the YOLO11 layout (backbone 0-10, neck 11-22,
    detection head from 23 on). Fine-tuning freezes everything outside the
    trainable blocks and trains at a constant learning rate.
    """

    concurrent_safe = False
    DEFAULT_LAYOUT = {"backbone": (0, 11), "neck": (11, 23), "head": (23, None)}

    def __init__(self, weights: str | Path, layout: dict | None = None, imgsz: int = 640,
                 device: str | None = None, conf: float = 0.001):
        try:
            from ultralytics import YOLO
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise DetectorError("the 'ultralytics' package is required for this adapter") from exc
        self.model = YOLO(str(weights))
        self.layout = dict(layout or self.DEFAULT_LAYOUT)
        self.imgsz = imgsz
        self.device = device
        self.conf = conf
        self.trainable = set(self.layout)
        self.last_run: Path | None = None

    @property
    def class_names(self) -> tuple[str, ...]:
        names = self.model.names
        return tuple(names[i] for i in sorted(names))

    def detect(self, image: ImageRecord) -> list[RawDetection]:
        result = self.model.predict(str(image.path), imgsz=self.imgsz, conf=self.conf,
                                    device=self.device, verbose=False)[0]
        out = []
        for cls, conf, xywhn in zip(result.boxes.cls.tolist(), result.boxes.conf.tolist(),
                                    result.boxes.xywhn.tolist()):
            out.append(RawDetection(int(cls), float(conf), BoundingBox.clamped(*xywhn)))
        return out

    def list_blocks(self) -> list[str]:
        return list(self.layout)

    def set_trainable(self, blocks: Sequence[str]) -> None:
        unknown = set(blocks) - set(self.layout)
        if unknown:
            raise DetectorError(f"unknown blocks {sorted(unknown)}")
        self.trainable = set(blocks)

    def _frozen_layers(self) -> list[int]:
        n_layers = len(self.model.model.model)
        frozen = []
        for block, (start, stop) in self.layout.items():
            if block not in self.trainable:
                frozen += list(range(start, n_layers if stop is None else stop))
        return sorted(frozen)

    def fit(self, data_config: Path, lr: float, epochs: int) -> dict:
        results = self.model.train(data=str(data_config), epochs=epochs, lr0=lr, lrf=1.0,
                                   optimizer="Adam", warmup_epochs=0, imgsz=self.imgsz,
                                   freeze=self._frozen_layers(), device=self.device,
                                   verbose=False)
        trainer = getattr(self.model, "trainer", None)
        if trainer is not None and getattr(trainer, "best", None):
            from ultralytics import YOLO
            self.model = YOLO(str(trainer.best))
            self.last_run = Path(trainer.save_dir)
        return dict(getattr(results, "results_dict", {}) or {})

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        self.model.save(str(path / "model.pt"))
        return path


def load_detector(kind: str, model: str | Path, **kwargs) -> DetectorAdapter:
    if kind == "mock":
        return MockDetector.load(model)
    if kind in ("ultralytics", "yolo"):
        model = Path(model)
        if model.is_dir() and (model / "model.pt").exists():
            model = model / "model.pt"
        return UltralyticsAdapter(model, **kwargs)
    raise DetectorError(f"unknown detector kind {kind!r} (expected 'mock' or 'ultralytics')")
