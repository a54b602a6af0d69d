import pytest
from hypothesis import given, strategies as st
from PIL import Image

from nightforge.core import (Annotation, AnnotationParseError, AnnotationValidationError,
                             BoundingBox, Domain, ImageRecord, label_path_for,
                             parse_annotation_file, scan_corpus_classes,
                             serialize_annotation_file, to_normalized, to_pixel, write_labels)


def test_parse_single_line():
    assert parse_annotation_file("0 0.5 0.5 0.2 0.1", (640, 480)) == [
        Annotation(0, BoundingBox(0.5, 0.5, 0.2, 0.1))]


def test_parse_empty():
    assert parse_annotation_file("", (10, 10)) == []
    assert parse_annotation_file("\n  \n", (10, 10)) == []


def test_parse_wrong_arity_names_line():
    with pytest.raises(AnnotationParseError, match="line 2") as exc:
        parse_annotation_file("0 0.5 0.5 0.2 0.1\n1 0.5 0.5 0.2", (10, 10))
    assert exc.value.line_no == 2


@pytest.mark.parametrize("text", ["a 0.5 0.5 0.2 0.1", "0.5 0.5 0.5 0.2 0.1", "0 x 0.5 0.2 0.1",
                                  "0 0.5 0.5 0 0.1"])
def test_parse_rejects_garbage(text):
    with pytest.raises(AnnotationParseError):
        parse_annotation_file(text)


def test_parse_rejects_out_of_scheme_class():
    with pytest.raises(AnnotationValidationError):
        parse_annotation_file("2 0.5 0.5 0.2 0.1")


def test_parse_clamps_to_frame():
    [a] = parse_annotation_file("1 0.05 0.5 0.2 0.2")
    x0, y0, x1, y1 = a.box.corners()
    assert x0 == pytest.approx(0.0) and x1 == pytest.approx(0.15)
    assert (y0, y1) == pytest.approx((0.4, 0.6))


def test_serialize_examples():
    assert serialize_annotation_file([]) == ""
    one = Annotation(0, BoundingBox(0.5, 0.5, 0.2, 0.1))
    assert serialize_annotation_file([one]) == "0 0.500000 0.500000 0.200000 0.100000"
    two = Annotation(1, BoundingBox(0.25, 0.75, 0.1, 0.1))
    assert serialize_annotation_file([one, two]).splitlines() == [
        "0 0.500000 0.500000 0.200000 0.100000",
        "1 0.250000 0.750000 0.100000 0.100000"]


def test_prediction_format_has_confidence_column():
    a = Annotation(1, BoundingBox(0.5, 0.5, 0.2, 0.1), 0.875)
    text = serialize_annotation_file([a], with_confidence=True)
    assert text == "1 0.500000 0.500000 0.200000 0.100000 0.875000"
    assert parse_annotation_file(text, with_confidence=True) == [a]


micro = st.integers(0, 1_000_000).map(lambda i: i / 1_000_000)


@st.composite
def boxes(draw):
    x0, x1 = sorted(draw(st.lists(micro, min_size=2, max_size=2, unique=True)))
    y0, y1 = sorted(draw(st.lists(micro, min_size=2, max_size=2, unique=True)))
    # quantize to the 6-decimal file precision
    vals = [round(v, 6) for v in ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)]
    if vals[2] <= 0 or vals[3] <= 0:
        vals[2], vals[3] = max(vals[2], 1e-6), max(vals[3], 1e-6)
    return BoundingBox(*vals)


annotations = st.lists(st.builds(Annotation, st.sampled_from([0, 1]), boxes()), max_size=8)


@given(annotations)
def test_parse_serialize_round_trip(anns):
    text = serialize_annotation_file(anns)
    assert parse_annotation_file(text) == anns
    assert serialize_annotation_file(parse_annotation_file(text)) == text
    assert all(line == line.rstrip() for line in text.splitlines())


def test_to_pixel_examples():
    assert to_pixel(BoundingBox(0.5, 0.5, 1.0, 1.0), 100, 100) == (0, 0, 100, 100)
    assert to_pixel(BoundingBox(0.5, 0.5, 0.2, 0.1), 640, 480) == pytest.approx((256, 216, 384, 264))


@given(boxes(), st.integers(1, 4000), st.integers(1, 4000))
def test_pixel_normalized_inverse(box, w, h):
    back = to_normalized(to_pixel(box, w, h), w, h)
    for a, b in zip((back.cx, back.cy, back.w, back.h), (box.cx, box.cy, box.w, box.h)):
        assert a == pytest.approx(b, abs=1e-6)
    assert to_pixel(back, w, h) == pytest.approx(to_pixel(box, w, h), abs=1e-6 * max(w, h))


def test_image_record_provenance_invariant(tmp_path):
    Image.new("RGB", (7, 5)).save(tmp_path / "a.png")
    rec = ImageRecord.from_file(tmp_path / "a.png", Domain.DAY_REAL)
    assert (rec.width_px, rec.height_px) == (7, 5)
    with pytest.raises(ValueError):
        ImageRecord(tmp_path / "b.png", 7, 5, Domain.NIGHT_TRANSFERRED)
    with pytest.raises(ValueError):
        ImageRecord(tmp_path / "b.png", 7, 5, Domain.NIGHT_REAL, source_of=rec.path)
    ImageRecord(tmp_path / "b.png", 7, 5, Domain.NIGHT_TRANSFERRED, source_of=rec.path)


def test_label_path_for():
    assert label_path_for("/d/images/train/x.png").as_posix() == "/d/labels/train/x.txt"
    assert label_path_for("/d/x.jpg").as_posix() == "/d/x.txt"


def test_scan_corpus_classes(tmp_path):
    write_labels(tmp_path / "a.txt", [Annotation(0, BoundingBox(0.5, 0.5, 0.1, 0.1)),
                                      Annotation(1, BoundingBox(0.5, 0.5, 0.1, 0.1))])
    write_labels(tmp_path / "b.txt", [])
    assert scan_corpus_classes([tmp_path / "a.txt", tmp_path / "b.txt"]) == {0: 1, 1: 1}
    (tmp_path / "c.txt").write_text("5 0.5 0.5 0.1 0.1")
    with pytest.raises(AnnotationValidationError, match="c.txt"):
        scan_corpus_classes([tmp_path / "c.txt"])
