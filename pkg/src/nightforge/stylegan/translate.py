from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from ..core import Domain, ImageRecord
from .data import load_image, to_pil
from .networks import Generator
from .train import load_checkpoint

log = logging.getLogger(__name__)

SIDECAR = "translations.json"


@dataclass
class TranslationReport:
    outputs: list[ImageRecord] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)


def resolve_checkpoint(path: str | Path) -> Path:
    """Accept a checkpoint dir, a run dir, or its ``checkpoints/`` dir."""
    path = Path(path)
    for cand in (path, path / "checkpoints"):
        if (cand / "meta.json").exists():
            return cand
        latest = cand / "latest.txt"
        if latest.exists():
            return cand / latest.read_text(encoding="utf-8").strip()
    raise FileNotFoundError(f"no checkpoint found under {path}")


def load_generator(checkpoint: str | Path) -> Generator:
    model, _, _ = load_checkpoint(resolve_checkpoint(checkpoint), nets=("G",))
    model.G.eval()
    return model.G


@torch.no_grad()
def translate(checkpoint: str | Path | Generator, images: Sequence[ImageRecord],
              out_dir: str | Path, suffix: str = "_night") -> TranslationReport:
    """Run day->night translation on ``images``, writing PNGs to ``out_dir``.

    Each output keeps its source's pixel size and is tagged
    ``NIGHT_TRANSFERRED`` with ``source_of`` pointing at the input. Failures
    are collected per file in the report. A ``translations.json`` sidecar
    maps output names to sources.
    """
    gen = checkpoint if isinstance(checkpoint, Generator) else load_generator(checkpoint)
    gen.eval()
    size = gen.cfg.input_size
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = TranslationReport()
    for rec in images:
        try:
            x = load_image(rec.path, size).unsqueeze(0)
            y, _ = gen(x)
            out_path = out_dir / f"{rec.stem}{suffix}.png"
            to_pil(y[0], (rec.width_px, rec.height_px)).save(out_path)
        except Exception as exc:  # noqa: BLE001 - collected per file, run continues
            log.warning("translation failed for %s: %s", rec.path, exc)
            report.errors[str(rec.path)] = f"{type(exc).__name__}: {exc}"
            continue
        report.outputs.append(ImageRecord(out_path, rec.width_px, rec.height_px,
                                          Domain.NIGHT_TRANSFERRED, source_of=rec.path))
    sidecar = {
        "outputs": [{"image": r.path.name, "source_of": str(r.source_of),
                     "width_px": r.width_px, "height_px": r.height_px} for r in report.outputs],
        "errors": report.errors,
    }
    (out_dir / SIDECAR).write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    return report


def read_translations(out_dir: str | Path) -> list[ImageRecord]:
    out_dir = Path(out_dir)
    data = json.loads((out_dir / SIDECAR).read_text(encoding="utf-8"))
    return [ImageRecord(out_dir / e["image"], e["width_px"], e["height_px"],
                        Domain.NIGHT_TRANSFERRED, source_of=Path(e["source_of"]))
            for e in data["outputs"]]
