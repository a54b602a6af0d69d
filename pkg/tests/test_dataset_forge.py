import json

import pytest
from hypothesis import given, settings, strategies as st

from nightforge.core import Annotation, BoundingBox, Domain, write_labels
from nightforge.dataset_forge import (DatasetManifest, DuplicateStemError, Entry,
                                      InsufficientPoolError, MixSpec, SplitSpec, assemble,
                                      composition_stats, load_pool, materialize, reference_mix,
                                      validate)


def make_pool(root, n, kind, sources_per_group=1):
    """Write ``n`` images+labels; augmented images get daytime sources."""
    entries = []
    domain = Domain.NIGHT_REAL if kind == "real" else Domain.NIGHT_TRANSFERRED
    for i in range(n):
        img = root / kind / "images" / f"{kind}_{i:04d}.png"
        img.parent.mkdir(parents=True, exist_ok=True)
        img.write_bytes(b"png")  # content is never decoded by the forge
        lbl = root / kind / "labels" / f"{kind}_{i:04d}.txt"
        write_labels(lbl, [Annotation(i % 2, BoundingBox(0.5, 0.5, 0.1, 0.1))])
        src = root / "day" / f"day_{i // sources_per_group:04d}.png" if kind == "aug" else None
        entries.append(Entry(img, lbl, domain, src))
    return entries


@pytest.fixture(scope="module")
def reference_pools(tmp_path_factory):
    root = tmp_path_factory.mktemp("pools")
    return root, make_pool(root, 187, "real"), make_pool(root, 193, "aug")


def test_reference_mix_reconstruction(reference_pools, tmp_path):
    _, real, aug = reference_pools
    m = assemble(real, aug, reference_mix(seed=3))
    stats = composition_stats(m)
    assert [len(m.splits[s]) for s in ("train", "val", "test")] == [287, 63, 30]
    assert {s: (stats[s]["real_count"], stats[s]["augmented_count"])
            for s in ("train", "val", "test")} == {"train": (124, 163), "val": (43, 20),
                                                   "test": (20, 10)}
    assert stats["train"]["ratio"] == pytest.approx(124 / 287)
    assert round(stats["train"]["ratio"], 3) == 0.432
    assert stats["overall"]["ratio"] == pytest.approx(187 / 380)
    assert round(stats["overall"]["ratio"], 3) == 0.492
    assert validate(m).violations == []
    path = m.save(tmp_path / "m.json")
    assert validate(path).ok


def test_assemble_deterministic_and_order_independent(reference_pools, tmp_path):
    _, real, aug = reference_pools
    a = assemble(real, aug, reference_mix(seed=7)).save(tmp_path / "a.json")
    b = assemble(list(reversed(real)), aug[::-1], reference_mix(seed=7)).save(tmp_path / "b.json")
    assert a.read_bytes() == b.read_bytes()
    c = assemble(real, aug, reference_mix(seed=8)).save(tmp_path / "c.json")
    assert a.read_bytes() != c.read_bytes()


def test_manifest_paths_relative_and_round_trip(reference_pools, tmp_path):
    _, real, aug = reference_pools
    m = assemble(real[:5], aug[:5], MixSpec({"train": SplitSpec(3, 3), "val": SplitSpec(2, 2)}))
    path = m.save(tmp_path / "sub" / "m.json")
    data = json.loads(path.read_text())
    assert data["schema_version"] == 1 and data["class_names"] == ["Sedan", "SVP_BV"]
    assert all(not e["image"].startswith("/") for e in data["splits"]["train"])
    back = DatasetManifest.load(path)
    assert {s: [e.image.resolve() for e in v] for s, v in back.splits.items()} == \
        {s: [e.image.resolve() for e in v] for s, v in m.splits.items()}


def test_empty_spec_gives_empty_manifest():
    m = assemble([], [], MixSpec({}))
    assert m.splits == {}
    assert composition_stats(m)["overall"]["ratio"] is None


def test_insufficient_pool_names_shortfall(reference_pools):
    _, real, aug = reference_pools
    with pytest.raises(InsufficientPoolError, match="short by 3"):
        assemble(real[:10], aug, MixSpec({"train": SplitSpec(13, 0)}))


def test_duplicate_stems_rejected(reference_pools, tmp_path):
    _, real, aug = reference_pools
    clash = Entry(tmp_path / "x" / real[0].image.name, real[0].label, Domain.NIGHT_REAL)
    with pytest.raises(DuplicateStemError):
        assemble([*real[:3], clash], [], MixSpec({"train": SplitSpec(1, 0)}))


def test_ratio_spec_and_counts_win():
    assert SplitSpec(size=100, real_fraction=0.44).counts() == (44, 56)
    assert SplitSpec(real=3, augmented=4, size=100, real_fraction=0.5).counts() == (3, 4)
    with pytest.raises(ValueError):
        SplitSpec(real=-1)
    with pytest.raises(ValueError):
        SplitSpec(size=3, real_fraction=1.5)


def test_composition_all_real_split(reference_pools):
    _, real, _ = reference_pools
    m = assemble(real, [], MixSpec({"train": SplitSpec(5, 0), "val": SplitSpec(0, 0)}))
    stats = composition_stats(m)
    assert stats["train"]["ratio"] == 1.0 and stats["val"]["ratio"] is None


def test_validate_deleted_label(tmp_path):
    real = make_pool(tmp_path, 4, "real")
    m = assemble(real, [], MixSpec({"train": SplitSpec(3, 0)}))
    m.splits["train"][0].label.unlink()
    v = validate(m).violations
    assert len(v) == 1 and v[0].kind == "missing_file"


def test_validate_injected_duplicate(tmp_path):
    real = make_pool(tmp_path, 6, "real")
    m = assemble(real, [], MixSpec({"train": SplitSpec(3, 0), "val": SplitSpec(3, 0)}))
    m.splits["val"].append(m.splits["train"][0])
    m.metadata.pop("mix")
    v = validate(m).violations
    assert [x.kind for x in v] == ["disjointness"]


def test_validate_bad_class_and_composition(tmp_path):
    real = make_pool(tmp_path, 6, "real")
    m = assemble(real, [], MixSpec({"train": SplitSpec(4, 0)}))
    m.splits["train"][0].label.write_text("7 0.5 0.5 0.1 0.1")
    m.splits["train"] = m.splits["train"][:2]
    kinds = sorted(x.kind for x in validate(m).violations)
    assert kinds == ["class_scheme", "composition"]


def test_leakage_rule_keeps_sources_together(tmp_path):
    real = make_pool(tmp_path, 10, "real")
    aug = make_pool(tmp_path, 12, "aug", sources_per_group=2)
    m = assemble(real, aug, MixSpec({"train": SplitSpec(4, 6), "val": SplitSpec(3, 4),
                                     "test": SplitSpec(3, 2)}, seed=1))
    where = {}
    for split, e in m.entries():
        if e.source_of is not None:
            where.setdefault(e.source_of, set()).add(split)
    assert all(len(s) == 1 for s in where.values())
    assert validate(m).ok
    # moving one sibling breaks the rule
    moved = next(e for e in m.splits["train"] if e.source_of is not None)
    m.splits["train"].remove(moved)
    m.splits["val"].append(moved)
    m.metadata.pop("mix")
    assert [x.kind for x in validate(m).violations] == ["leakage"]


def test_odd_group_cannot_fill_split(tmp_path):
    aug = make_pool(tmp_path, 4, "aug", sources_per_group=2)
    with pytest.raises(InsufficientPoolError):
        assemble([], aug, MixSpec({"train": SplitSpec(0, 3), "val": SplitSpec(0, 1)}))


@pytest.fixture(scope="module")
def random_pools(tmp_path_factory):
    root = tmp_path_factory.mktemp("rand")
    return make_pool(root, 30, "real"), make_pool(root, 30, "aug")


@settings(deadline=None, max_examples=40)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 10)), min_size=0, max_size=3),
       st.integers(0, 2**16))
def test_validate_assemble_property(random_pools, counts, seed):
    real, aug = random_pools
    spec = MixSpec({name: SplitSpec(r, a) for name, (r, a) in zip(("train", "val", "test"), counts)},
                   seed)
    m = assemble(real, aug, spec)
    assert validate(m).ok
    chosen = [e.image for _, e in m.entries()]
    assert len(chosen) == len(set(chosen)) == sum(r + a for r, a in counts)


def test_materialize_layout(tmp_path):
    real = make_pool(tmp_path, 5, "real")
    aug = make_pool(tmp_path, 5, "aug")
    m = assemble(real, aug, MixSpec({"train": SplitSpec(2, 2), "val": SplitSpec(1, 1),
                                     "test": SplitSpec(1, 1)}))
    data_yaml = materialize(m, tmp_path / "ds")
    text = data_yaml.read_text()
    assert "train: images/train" in text and 'names: ["Sedan", "SVP_BV"]' in text
    assert len(list((tmp_path / "ds" / "images" / "train").iterdir())) == 4
    assert len(list((tmp_path / "ds" / "labels" / "val").iterdir())) == 2
    copy = DatasetManifest.load(tmp_path / "ds" / "manifest.json")
    assert validate(copy).ok


def test_load_pool_reads_provenance(tmp_path):
    d = tmp_path / "aug"
    (d / "images").mkdir(parents=True)
    (d / "images" / "a_night.png").write_bytes(b"x")
    write_labels(d / "labels" / "a_night.txt", [])
    (d / "provenance.json").write_text(json.dumps({"a_night.png": "../day/a.png"}))
    [e] = load_pool(d, Domain.NIGHT_TRANSFERRED)
    assert e.source_of.resolve() == (tmp_path / "day" / "a.png").resolve()
    assert e.label == d / "labels" / "a_night.txt"
