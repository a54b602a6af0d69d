import csv
import importlib

import pytest
import torch
from PIL import Image

from nightforge.core import Domain, ImageRecord
from nightforge.errors import ConfigError, NonFiniteLossError
from nightforge.fixtures import make_toy_domain
from nightforge.stylegan import (LOG_COLUMNS, GeneratorConfig, TrainConfig, load_checkpoint,
                                 read_loss_log, read_translations, train, translate)
from nightforge.stylegan.data import ImagePool

train_mod = importlib.import_module("nightforge.stylegan.train")

TINY = GeneratorConfig(input_size=16, base_channels=4, n_residual_blocks=1, disc_channels=4,
                       disc_layers=2)


def tiny_cfg(**kw):
    base = dict(n_epochs=1, n_epochs_decay=1, batch_size=2, checkpoint_every=1,
                fake_pool_size=4, generator=TINY)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def domains(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_toy_domain(root / "x", 6, "day", size=16)
    make_toy_domain(root / "y", 4, "night", size=16)
    return root / "x", root / "y"


def test_train_writes_log_and_checkpoints(domains, tmp_path):
    res = train(tiny_cfg(), *domains, tmp_path)
    with open(tmp_path / "loss_log.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert len(rows) == 3
    assert [c.name for c in res.checkpoints] == ["epoch_0001", "epoch_0002"]
    for name in ("G.pt", "F.pt", "D_X.pt", "D_Y.pt", "meta.json"):
        assert (res.final_checkpoint / name).exists()
    model, cfg, epoch = load_checkpoint(res.final_checkpoint)
    assert epoch == 2 and cfg == tiny_cfg()
    assert torch.equal(model.G.head[1].weight, res.model.G.head[1].weight)
    log = read_loss_log(res.log_path)
    assert [r["lr"] for r in log] == [0.0002, 0.0]


def test_train_is_bitwise_reproducible(domains, tmp_path):
    train(tiny_cfg(seed=5), *domains, tmp_path / "a")
    train(tiny_cfg(seed=5), *domains, tmp_path / "b")
    assert (tmp_path / "a" / "loss_log.csv").read_bytes() == (tmp_path / "b" / "loss_log.csv").read_bytes()


def test_zero_lambdas_total_is_gan_sum(domains, tmp_path):
    res = train(tiny_cfg(lambda_cyc=0.0, lambda_id=0.0), *domains, tmp_path)
    for row in read_loss_log(res.log_path):
        assert row["loss_total"] == row["loss_G_gan"] + row["loss_F_gan"]


def test_empty_domain_is_config_error(domains, tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ConfigError):
        train(tiny_cfg(), domains[0], tmp_path / "empty", tmp_path / "out")


def test_non_finite_loss_aborts_naming_term(domains, tmp_path, monkeypatch):
    monkeypatch.setattr(train_mod, "loss_cycle", lambda *a: torch.tensor(float("nan")))
    with pytest.raises(NonFiniteLossError) as exc:
        train(tiny_cfg(), *domains, tmp_path)
    assert exc.value.term == "loss_cyc"


def test_image_pool_behaviour():
    pool = ImagePool(2, seed=0)
    a = torch.zeros(1, 3, 2, 2)
    assert torch.equal(pool.query(a), a)
    assert len(pool.images) == 1
    assert torch.equal(ImagePool(0).query(a), a)
    pool.query(torch.ones(3, 3, 2, 2))
    assert len(pool.images) == 2


def test_translate_outputs(domains, tmp_path):
    res = train(tiny_cfg(n_epochs=1, n_epochs_decay=0), *domains, tmp_path / "run")
    src = tmp_path / "src"
    src.mkdir()
    Image.new("RGB", (40, 24), (200, 180, 160)).save(src / "a.png")
    Image.new("RGB", (20, 30), (220, 220, 220)).save(src / "b.png")
    (src / "broken.png").write_bytes(b"not an image")
    recs = [ImageRecord.from_file(src / n, Domain.DAY_REAL) for n in ("a.png", "b.png")]
    recs.append(ImageRecord(src / "broken.png", 8, 8, Domain.DAY_REAL))

    rep = translate(tmp_path / "run", recs, tmp_path / "out")
    assert [r.path.name for r in rep.outputs] == ["a_night.png", "b_night.png"]
    assert list(rep.errors) == [str(src / "broken.png")]
    for out, rec in zip(rep.outputs, recs):
        assert out.domain is Domain.NIGHT_TRANSFERRED and out.source_of == rec.path
        with Image.open(out.path) as im:
            assert im.size == (rec.width_px, rec.height_px)
    assert read_translations(tmp_path / "out") == rep.outputs

    first = (tmp_path / "out" / "a_night.png").read_bytes()
    translate(res.final_checkpoint, recs[:1], tmp_path / "out2")
    assert (tmp_path / "out2" / "a_night.png").read_bytes() == first
