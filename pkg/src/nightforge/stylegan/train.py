"""Alternating generator/discriminator training for the day<->night model."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..errors import ConfigError, NonFiniteLossError
from .config import GeneratorConfig, TrainConfig, lr_schedule
from .data import ImageDomain, ImagePool, resolve_images
from .losses import (LossParts, loss_cycle, loss_gan_discriminator, loss_gan_generator,
                     loss_identity, total_objective)
from .networks import TranslationModel

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "loss_G_gan", "loss_F_gan", "loss_D_X", "loss_D_Y",
               "loss_cyc", "loss_id", "loss_total")
CHECKPOINT_FORMAT = 1


@dataclass
class TrainResult:
    model: TranslationModel
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    log_path: Path | None = None

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints[-1]


def save_checkpoint(model: TranslationModel, cfg: TrainConfig, epoch: int, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in ("G", "F", "D_X", "D_Y"):
        torch.save(getattr(model, name).state_dict(), path / f"{name}.pt")
    meta = {"format": CHECKPOINT_FORMAT, "epoch": epoch, "config": cfg.to_dict()}
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path, nets: Sequence[str] = ("G", "F", "D_X", "D_Y")):
    """Rebuild a model from a checkpoint directory -> ``(model, TrainConfig, epoch)``."""
    path = Path(path)
    meta_file = path / "meta.json"
    if not meta_file.exists():
        raise FileNotFoundError(f"{path} is not a checkpoint directory (no meta.json)")
    meta = json.loads(meta_file.read_text(encoding="utf-8"))
    cfg = TrainConfig.from_dict(meta["config"])
    model = TranslationModel(cfg.generator)
    for name in nets:
        state = torch.load(path / f"{name}.pt", map_location="cpu", weights_only=True)
        getattr(model, name).load_state_dict(state)
    return model, cfg, meta["epoch"]


def _epoch_order(n_x: int, n_y: int, batch_size: int, rng: np.random.Generator):
    steps = math.ceil(max(n_x, n_y) / batch_size)
    total = steps * batch_size

    def stream(n):
        reps = math.ceil(total / n)
        return np.concatenate([rng.permutation(n) for _ in range(reps)])[:total]

    xs, ys = stream(n_x), stream(n_y)
    for s in range(steps):
        sl = slice(s * batch_size, (s + 1) * batch_size)
        yield xs[sl].tolist(), ys[sl].tolist()


def _check_finite(values: dict[str, torch.Tensor], epoch: int, it: int) -> None:
    for term, v in values.items():
        f = float(v.detach())
        if not math.isfinite(f):
            raise NonFiniteLossError(term, epoch, it, f)


def train(cfg: TrainConfig, domain_x, domain_y, out_dir: str | Path,
          epochs: int | None = None) -> TrainResult:
    """Train the translation model.

    Args:
        cfg: hyperparameters; ``cfg.total_epochs`` epochs are run unless
            ``epochs`` caps it.
        domain_x: day images (directory or list of paths).
        domain_y: night images.
        out_dir: receives ``loss_log.csv``, ``train_config.json`` and
            ``checkpoints/epoch_XXXX`` directories.
    """
    paths_x, paths_y = resolve_images(domain_x), resolve_images(domain_y)
    if not paths_x:
        raise ConfigError("domain X (day) has no images", key="domain_x")
    if not paths_y:
        raise ConfigError("domain Y (night) has no images", key="domain_y")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    gcfg: GeneratorConfig = cfg.generator
    size = gcfg.input_size
    dom_x, dom_y = ImageDomain(paths_x, size), ImageDomain(paths_y, size)

    model = TranslationModel(gcfg, seed=cfg.seed)
    model.train()
    betas = (cfg.beta1, cfg.beta2)
    opt_g = torch.optim.Adam(model.generator_parameters(), lr=cfg.lr0, betas=betas)
    opt_d = torch.optim.Adam(model.discriminator_parameters(), lr=cfg.lr0, betas=betas)
    pool_x = ImagePool(cfg.fake_pool_size, seed=cfg.seed)
    pool_y = ImagePool(cfg.fake_pool_size, seed=cfg.seed + 1)

    n_epochs = cfg.total_epochs if epochs is None else min(epochs, cfg.total_epochs)
    result = TrainResult(model=model, log_path=out_dir / "loss_log.csv")
    with open(result.log_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for epoch in range(1, n_epochs + 1):
            lr = lr_schedule(epoch, cfg)
            for opt in (opt_g, opt_d):
                for group in opt.param_groups:
                    group["lr"] = lr
            rng = np.random.default_rng([cfg.seed, epoch])
            sums = dict.fromkeys(LOG_COLUMNS[2:-1], 0.0)
            steps = 0
            for it, (ix, iy) in enumerate(_epoch_order(len(dom_x), len(dom_y), cfg.batch_size, rng)):
                fx = rng.random(len(ix)) < 0.5 if cfg.flip else None
                fy = rng.random(len(iy)) < 0.5 if cfg.flip else None
                x, y = dom_x.batch(ix, fx), dom_y.batch(iy, fy)
                terms = _train_step(model, cfg, opt_g, opt_d, pool_x, pool_y, x, y, epoch, it)
                for k, v in terms.items():
                    sums[k] += v
                steps += 1
            row = {k: v / steps for k, v in sums.items()}
            row["loss_total"] = float(total_objective(
                LossParts(row["loss_G_gan"], row["loss_F_gan"], row["loss_cyc"], row["loss_id"]),
                cfg.lambda_cyc, cfg.lambda_id))
            row = {"epoch": epoch, "lr": lr, **row}
            result.history.append(row)
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in LOG_COLUMNS])
            fh.flush()
            log.info("epoch %d lr=%.3g cyc=%.4f total=%.4f", epoch, lr, row["loss_cyc"],
                     row["loss_total"])
            if (cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0) or epoch == n_epochs:
                ckpt = save_checkpoint(model, cfg, epoch, out_dir / "checkpoints" / f"epoch_{epoch:04d}")
                result.checkpoints.append(ckpt)
    if n_epochs == 0:
        result.checkpoints.append(
            save_checkpoint(model, cfg, 0, out_dir / "checkpoints" / "epoch_0000"))
    (out_dir / "checkpoints" / "latest.txt").write_text(result.final_checkpoint.name, encoding="utf-8")
    return result


def _train_step(model, cfg, opt_g, opt_d, pool_x, pool_y, x, y, epoch, it) -> dict[str, float]:
    for p in model.discriminator_parameters():
        p.requires_grad_(False)
    fake_y = model.forward_x(x)
    rec_x = model.reconstruct_x(fake_y)
    fake_x = model.forward_y(y)
    rec_y = model.reconstruct_y(fake_x)
    idt_y, _ = model.G(y)
    idt_x, _ = model.F(x)
    parts = LossParts(
        gan_g=loss_gan_generator(model.D_Y(fake_y)),
        gan_f=loss_gan_generator(model.D_X(fake_x)),
        cyc=loss_cycle(x, rec_x, y, rec_y),
        idt=loss_identity(y, idt_y, x, idt_x),
    )
    total = total_objective(parts, cfg.lambda_cyc, cfg.lambda_id)
    _check_finite({"loss_G_gan": parts.gan_g, "loss_F_gan": parts.gan_f,
                   "loss_cyc": parts.cyc, "loss_id": parts.idt}, epoch, it)
    opt_g.zero_grad(set_to_none=True)
    total.backward()
    opt_g.step()

    for p in model.discriminator_parameters():
        p.requires_grad_(True)
    pooled_y = pool_y.query(fake_y.detach())
    pooled_x = pool_x.query(fake_x.detach())
    d_y = loss_gan_discriminator(model.D_Y(y), model.D_Y(pooled_y))
    d_x = loss_gan_discriminator(model.D_X(x), model.D_X(pooled_x))
    _check_finite({"loss_D_X": d_x, "loss_D_Y": d_y}, epoch, it)
    opt_d.zero_grad(set_to_none=True)
    (d_x + d_y).backward()
    opt_d.step()
    values = {"loss_G_gan": parts.gan_g, "loss_F_gan": parts.gan_f, "loss_D_X": d_x,
              "loss_D_Y": d_y, "loss_cyc": parts.cyc, "loss_id": parts.idt}
    return {k: float(v.detach()) for k, v in values.items()}


def read_loss_log(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]
