"""Train/val/test manifests mixing real and style-transferred nighttime images."""

from __future__ import annotations

import json
import os
import random
import shutil
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .autolabel import PROVENANCE_FILE
from .core import (CLASS_NAMES, AnnotationParseError, AnnotationValidationError, Domain,
                   label_path_for, list_images, read_labels)

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.json"


class ForgeError(ValueError):
    pass


class InsufficientPoolError(ForgeError):
    pass


class DuplicateStemError(ForgeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    """Requested composition of one split.

    Give ``real`` and ``augmented`` counts, or a ``size`` and a
    ``real_fraction``; counts win when both are present.
    """

    real: int | None = None
    augmented: int | None = None
    size: int | None = None
    real_fraction: float | None = None

    def __post_init__(self) -> None:
        for name in ("real", "augmented", "size"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 0):
                raise ForgeError(f"{name} must be a non-negative integer, got {v!r}")
        if self.real_fraction is not None and not 0.0 <= self.real_fraction <= 1.0:
            raise ForgeError(f"real_fraction must be in [0, 1], got {self.real_fraction}")
        has_counts = self.real is not None or self.augmented is not None
        if not has_counts and (self.size is None or self.real_fraction is None):
            raise ForgeError("split spec needs real/augmented counts or size + real_fraction")

    def counts(self) -> tuple[int, int]:
        if self.real is not None or self.augmented is not None:
            return self.real or 0, self.augmented or 0
        real = int(round(self.size * self.real_fraction))
        return real, self.size - real

    def to_dict(self) -> dict:
        return {k: v for k, v in (("real", self.real), ("augmented", self.augmented),
                                  ("size", self.size), ("real_fraction", self.real_fraction))
                if v is not None}


@dataclass(frozen=True)
class MixSpec:
    splits: Mapping[str, SplitSpec] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "splits", dict(self.splits))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "splits": {k: v.to_dict() for k, v in self.splits.items()}}

    @classmethod
    def from_dict(cls, data: Mapping, seed: int | None = None) -> MixSpec:
        """Accept ``{"seed": s, "splits": {...}}`` or a bare split mapping."""
        data = dict(data)
        splits = data.pop("splits", None)
        file_seed = data.pop("seed", 0)
        if splits is None:
            splits = data
        return cls({name: SplitSpec(**spec) for name, spec in splits.items()},
                   file_seed if seed is None else seed)


def reference_mix(seed: int = 0) -> MixSpec:
    """The published split sizes: 124+163 / 43+20 / 20+10 (real + augmented)."""
    return MixSpec({"train": SplitSpec(124, 163), "val": SplitSpec(43, 20),
                    "test": SplitSpec(20, 10)}, seed)


@dataclass(frozen=True)
class Entry:
    """One image of a pool or manifest split."""

    image: Path
    label: Path
    domain: Domain
    source_of: Path | None = None

    @property
    def is_augmented(self) -> bool:
        return self.domain is Domain.NIGHT_TRANSFERRED


def load_pool(directory: str | Path, domain: Domain) -> list[Entry]:
    """Read ``directory/{images,labels}``; a ``provenance.json`` supplies sources."""
    directory = Path(directory)
    image_dir = directory / "images" if (directory / "images").is_dir() else directory
    provenance = {}
    if (directory / PROVENANCE_FILE).exists():
        provenance = json.loads((directory / PROVENANCE_FILE).read_text(encoding="utf-8"))
    entries = []
    for img in list_images(image_dir):
        src = provenance.get(img.name)
        if domain is Domain.NIGHT_TRANSFERRED and src is None:
            raise ForgeError(f"{img}: transferred image missing from {PROVENANCE_FILE}")
        entries.append(Entry(img, label_path_for(img), domain,
                             (directory / src) if src is not None else None))
    return entries


@dataclass
class DatasetManifest:
    splits: dict[str, list[Entry]]
    metadata: dict = field(default_factory=dict)

    def entries(self) -> Iterable[tuple[str, Entry]]:
        for split, items in self.splits.items():
            for e in items:
                yield split, e

    def mix(self) -> MixSpec | None:
        data = self.metadata.get("mix")
        return MixSpec.from_dict(data) if data is not None else None

    def to_dict(self, base: str | Path) -> dict:
        base = Path(base)

        def rel(p):
            return None if p is None else Path(os.path.relpath(Path(p).absolute(),
                                                               base.absolute())).as_posix()

        return {
            "schema_version": SCHEMA_VERSION,
            "class_names": list(CLASS_NAMES),
            "metadata": self.metadata,
            "splits": {s: [{"image": rel(e.image), "label": rel(e.label), "domain": e.domain.value,
                            "source_of": rel(e.source_of)} for e in items]
                       for s, items in self.splits.items()},
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(path.parent), indent=1) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ForgeError(f"{path}: unsupported manifest schema_version {version!r}")
        base = path.parent

        def absolute(p):
            return None if p is None else Path(os.path.normpath(base / p))

        splits = {s: [Entry(absolute(e["image"]), absolute(e["label"]), Domain(e["domain"]),
                            absolute(e.get("source_of"))) for e in items]
                  for s, items in data["splits"].items()}
        return cls(splits, data.get("metadata", {}))


def _check_unique_stems(pools: Iterable[Entry]) -> None:
    stems = Counter(e.image.stem for e in pools)
    dupes = sorted(s for s, n in stems.items() if n > 1)
    if dupes:
        raise DuplicateStemError(f"duplicate image stems across pools: {dupes[:10]}")


def assemble(real: Sequence[Entry], augmented: Sequence[Entry], spec: MixSpec) -> DatasetManifest:
    """Draw each split's real and augmented images from the pools.

    Pure in (pools, spec): pools are sorted before the seeded shuffle, so
    input order does not matter. All augmented images sharing a daytime
    source are kept in one split.

    Raises:
        InsufficientPoolError: a pool cannot cover the request; the message
            names the shortfall.
        DuplicateStemError: two pool images share a file stem.
    """
    _check_unique_stems([*real, *augmented])
    wants = {name: s.counts() for name, s in spec.splits.items()}
    need_real = sum(r for r, _ in wants.values())
    need_aug = sum(a for _, a in wants.values())
    shortfalls = []
    if need_real > len(real):
        shortfalls.append(f"real: need {need_real}, pool has {len(real)} "
                          f"(short by {need_real - len(real)})")
    if need_aug > len(augmented):
        shortfalls.append(f"augmented: need {need_aug}, pool has {len(augmented)} "
                          f"(short by {need_aug - len(augmented)})")
    if shortfalls:
        raise InsufficientPoolError("insufficient pool: " + "; ".join(shortfalls))

    rng = random.Random(spec.seed)
    real_sorted = sorted(real, key=lambda e: e.image.as_posix())
    rng.shuffle(real_sorted)

    groups: dict[str, list[Entry]] = defaultdict(list)
    for e in sorted(augmented, key=lambda e: e.image.as_posix()):
        key = e.source_of.as_posix() if e.source_of is not None else e.image.as_posix()
        groups[key].append(e)
    keys = sorted(groups)
    rng.shuffle(keys)
    keys.sort(key=lambda k: -len(groups[k]))  # stable: larger groups placed first

    splits: dict[str, list[Entry]] = {}
    cursor = 0
    for name, (n_real, _) in wants.items():
        splits[name] = real_sorted[cursor:cursor + n_real]
        cursor += n_real
    remaining = {name: n_aug for name, (_, n_aug) in wants.items()}
    for k in keys:
        group = groups[k]
        for name in wants:
            if remaining[name] >= len(group):
                splits[name] = splits[name] + group
                remaining[name] -= len(group)
                break
    short = {n: r for n, r in remaining.items() if r}
    if short:
        raise InsufficientPoolError(
            f"insufficient pool: cannot fill augmented slots {short} without splitting "
            "a daytime source's derivatives across splits")

    for name in splits:
        splits[name] = sorted(splits[name], key=lambda e: e.image.as_posix())
    metadata = {"seed": spec.seed, "mix": spec.to_dict(), "tool_version": __version__}
    return DatasetManifest(splits, metadata)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    split: str | None = None
    path: str | None = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [v.__dict__ for v in self.violations]}


def validate(manifest: DatasetManifest | str | Path) -> ValidationReport:
    """Check files, labels, class scheme, disjointness, leakage and composition."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    report = ValidationReport()
    add = report.violations.append

    where: dict[Path, list[str]] = defaultdict(list)
    for split, e in manifest.entries():
        where[e.image].append(split)
        if not e.image.exists():
            add(Violation("missing_file", "image not found", split, str(e.image)))
        if e.label is None:
            add(Violation("missing_label_ref", "no label reference", split, str(e.image)))
            continue
        if not e.label.exists():
            add(Violation("missing_file", "label not found", split, str(e.label)))
            continue
        try:
            read_labels(e.label)
        except AnnotationValidationError as exc:
            add(Violation("class_scheme", str(exc), split, str(e.label)))
        except (AnnotationParseError, UnicodeDecodeError) as exc:
            add(Violation("label_parse", str(exc), split, str(e.label)))

    for image, splits in where.items():
        if len(splits) > 1:
            add(Violation("disjointness", f"image listed in {sorted(splits)}", None, str(image)))

    source_splits: dict[Path, dict[Path, set[str]]] = defaultdict(lambda: defaultdict(set))
    for split, e in manifest.entries():
        if e.source_of is not None:
            source_splits[e.source_of][e.image].add(split)
    for src, images in source_splits.items():
        if len(images) > 1 and len(set().union(*images.values())) > 1:
            add(Violation("leakage", "derivatives of one daytime source span splits "
                          f"{sorted(set().union(*images.values()))}", None, str(src)))

    mix = manifest.mix()
    if mix is not None:
        stats = composition_stats(manifest)
        for name, spec in mix.splits.items():
            want_real, want_aug = spec.counts()
            got = stats.get(name, {"real_count": 0, "augmented_count": 0})
            if (abs(got["real_count"] - want_real) > 1
                    or abs(got["augmented_count"] - want_aug) > 1):
                add(Violation("composition", f"expected {want_real}+{want_aug}, found "
                              f"{got['real_count']}+{got['augmented_count']}", name))
    return report


def _ratio(real: int, aug: int) -> float | None:
    return real / (real + aug) if real + aug else None


def composition_stats(manifest: DatasetManifest) -> dict[str, dict]:
    """Per split and ``overall``: real/augmented counts and the real ratio.

    An empty split has ratio ``None``.
    """
    out = {}
    tot_real = tot_aug = 0
    for split, items in manifest.splits.items():
        aug = sum(e.is_augmented for e in items)
        real = len(items) - aug
        out[split] = {"real_count": real, "augmented_count": aug, "ratio": _ratio(real, aug)}
        tot_real += real
        tot_aug += aug
    out["overall"] = {"real_count": tot_real, "augmented_count": tot_aug,
                      "ratio": _ratio(tot_real, tot_aug)}
    return out


def write_data_yaml(root: Path, splits: Iterable[str]) -> Path:
    """Detector-training description in the YOLO ``data.yaml`` convention."""
    lines = [f"path: {root.absolute().as_posix()}"]
    lines += [f"{s}: images/{s}" for s in splits]
    lines.append(f"nc: {len(CLASS_NAMES)}")
    lines.append("names: [" + ", ".join(json.dumps(n) for n in CLASS_NAMES) + "]")
    path = root / "data.yaml"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def materialize(manifest: DatasetManifest, root: str | Path) -> Path:
    """Copy files to ``root/{images,labels}/<split>/`` and write ``data.yaml``.

    A manifest referencing the copies is saved as ``root/manifest.json``.
    Returns the ``data.yaml`` path.
    """
    root = Path(root)
    copied: dict[str, list[Entry]] = {}
    for split, items in manifest.splits.items():
        copied[split] = []
        for e in items:
            img = root / "images" / split / e.image.name
            lbl = root / "labels" / split / f"{e.image.stem}.txt"
            img.parent.mkdir(parents=True, exist_ok=True)
            lbl.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(e.image, img)
            shutil.copyfile(e.label, lbl)
            copied[split].append(Entry(img, lbl, e.domain, e.source_of))
    DatasetManifest(copied, dict(manifest.metadata)).save(root / MANIFEST_NAME)
    return write_data_yaml(root, [s for s in SPLITS if s in copied] +
                           [s for s in copied if s not in SPLITS])
