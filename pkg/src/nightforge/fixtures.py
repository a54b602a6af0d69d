"""Synthetic toy data: two-tone day/night squares and a tiny end-to-end fixture.

Usage: ``python -m nightforge.fixtures OUT_DIR`` writes the tiny pipeline
fixture plus a ready-to-run ``config.json``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Annotation, BoundingBox, write_labels

DAY_BG = (0.70, 0.85)
DAY_FG = (0.15, 0.30)
NIGHT_BG = (0.03, 0.12)
NIGHT_FG = (0.85, 1.00)


def _two_tone(rng: np.random.Generator, size: tuple[int, int], bg_range, fg_range,
              box_frac=(0.25, 0.5)):
    """One background tone plus one rectangle of another tone -> (uint8 HxWx3, box)."""
    w, h = size
    bg = rng.uniform(*bg_range)
    fg = rng.uniform(*fg_range)
    img = np.full((h, w, 3), bg, dtype=np.float64)
    bw = max(2, int(round(rng.uniform(*box_frac) * w)))
    bh = max(2, int(round(rng.uniform(*box_frac) * h)))
    x0 = int(rng.integers(0, w - bw + 1))
    y0 = int(rng.integers(0, h - bh + 1))
    img[y0:y0 + bh, x0:x0 + bw] = fg
    arr = (img * 255).round().astype(np.uint8)
    box = BoundingBox((x0 + bw / 2) / w, (y0 + bh / 2) / h, bw / w, bh / h)
    return arr, box


def make_toy_domain(out_dir: str | Path, n: int, kind: str, size: int = 32, seed: int = 0,
                    prefix: str | None = None) -> list[Path]:
    """Write ``n`` two-tone ``kind`` ("day" or "night") squares of ``size`` px."""
    ranges = {"day": (DAY_BG, DAY_FG), "night": (NIGHT_BG, NIGHT_FG)}[kind]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0 if kind == "day" else 1])
    paths = []
    for i in range(n):
        arr, _ = _two_tone(rng, (size, size), *ranges)
        p = out_dir / f"{prefix or kind}_{i:04d}.png"
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths


def mean_brightness(paths) -> float:
    vals = []
    for p in paths:
        with Image.open(p) as im:
            vals.append(np.asarray(im.convert("RGB"), dtype=np.float64).mean() / 255.0)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# tiny end-to-end fixture

COCO_CAR, COCO_TRUCK, COCO_PERSON = 2, 7, 0


def _scene(rng, size, bg_range, fg_range, n_vehicles):
    w, h = size
    img = np.full((h, w, 3), rng.uniform(*bg_range), dtype=np.float64)
    boxes = []
    for _ in range(n_vehicles):
        for _attempt in range(20):
            bw, bh = int(rng.integers(w // 6, w // 3)), int(rng.integers(h // 6, h // 3))
            x0, y0 = int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh))
            if all(x0 + bw <= a or a + c <= x0 or y0 + bh <= b or b + d <= y0
                   for a, b, c, d in boxes):
                break
        boxes.append((x0, y0, bw, bh))
        img[y0:y0 + bh, x0:x0 + bw] = rng.uniform(*fg_range)
    arr = (img * 255).round().astype(np.uint8)
    norm = [BoundingBox((x0 + bw / 2) / w, (y0 + bh / 2) / h, bw / w, bh / h)
            for x0, y0, bw, bh in boxes]
    return arr, norm


def _det(class_id, conf, box: BoundingBox, jitter=0.0, rng=None):
    cx, cy = box.cx, box.cy
    if jitter and rng is not None:
        cx += rng.uniform(-jitter, jitter) * box.w
        cy += rng.uniform(-jitter, jitter) * box.h
    return {"class_id": int(class_id), "confidence": round(float(conf), 4),
            "cx": cx, "cy": cy, "w": box.w, "h": box.h}


def _write_dets(path: Path, dets) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"detections": dets}, indent=1), encoding="utf-8")


def build_tiny_fixture(root: str | Path, seed: int = 0, n_day: int = 12, n_night_real: int = 8,
                       n_eval: int = 6, size: tuple[int, int] = (64, 48)) -> Path:
    """Lay out a miniature corpus for the whole pipeline.

    ``day/`` daytime images, ``night_real/{images,labels}`` hand-labeled
    nighttime images, ``eval/{images,labels}`` the held-out nighttime test
    set, and ``detector/`` scripted detections for the mock detector:
    ``raw/`` (COCO ids, weak at night) and ``finetuned/`` (two-class ids).
    Returns the path of the generated ``config.json``.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    det_raw, det_ft = root / "detector" / "raw", root / "detector" / "finetuned"

    for i in range(n_day):
        arr, boxes = _scene(rng, size, DAY_BG, DAY_FG, int(rng.integers(1, 3)))
        stem = f"day_{i:03d}"
        (root / "day").mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(root / "day" / f"{stem}.png")
        dets = [_det(COCO_CAR if j % 2 == 0 else COCO_TRUCK, rng.uniform(0.6, 0.95), b)
                for j, b in enumerate(boxes)]
        dets.append(_det(COCO_PERSON, 0.9, BoundingBox(0.1, 0.1, 0.05, 0.1)))
        _write_dets(det_raw / f"{stem}.json", dets)

    def night_set(sub: str, n: int, start: int):
        for i in range(n):
            arr, boxes = _scene(rng, size, NIGHT_BG, NIGHT_FG, int(rng.integers(1, 3)))
            stem = f"{sub}_{start + i:03d}"
            img_dir = root / sub / "images"
            img_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(arr).save(img_dir / f"{stem}.png")
            anns = [Annotation(j % 2, b) for j, b in enumerate(boxes)]
            write_labels(root / sub / "labels" / f"{stem}.txt", anns)
            raw = [_det(COCO_CAR if a.class_index == 0 else COCO_TRUCK, rng.uniform(0.05, 0.4),
                        a.box, jitter=0.4, rng=rng)
                   for a in anns if rng.random() < 0.5]
            raw.append(_det(COCO_CAR, rng.uniform(0.2, 0.5),
                            BoundingBox(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1)))
            _write_dets(det_raw / f"{stem}.json", raw)
            ft = [_det(a.class_index, rng.uniform(0.6, 0.95), a.box, jitter=0.05, rng=rng)
                  for a in anns]
            ft.append(_det(0, rng.uniform(0.05, 0.3),
                           BoundingBox(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.1, 0.1)))
            _write_dets(det_ft / f"{stem}.json", ft)

    night_set("night_real", n_night_real, 0)
    night_set("eval", n_eval, 0)

    n_train_real = n_night_real - 3
    config = {
        "seed": seed,
        "day_dir": "day",
        "night_real_dir": "night_real",
        "eval_dir": "eval",
        "detector": "mock",
        "detector_model": "detector",
        "simulator": "mock",
        "scenegen_target": 24,
        "scene_width": 32,
        "scene_height": 32,
        "input_size": 32,
        "base_channels": 8,
        "n_residual_blocks": 2,
        "disc_channels": 16,
        "n_epochs": 2,
        "n_epochs_decay": 2,
        "batch_size": 4,
        "checkpoint_every": 2,
        "stage_plan": "default",
        "stage_epochs": 1,
        "mix": {
            "train": {"real": n_train_real, "augmented": n_day - 4},
            "val": {"real": 2, "augmented": 2},
            "test": {"real": 1, "augmented": 2},
        },
    }
    path = root / "config.json"
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m nightforge.fixtures OUT_DIR", file=sys.stderr)
        return 2
    print(build_tiny_fixture(argv[0]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
