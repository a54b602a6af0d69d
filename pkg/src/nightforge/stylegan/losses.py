"""Least-squares adversarial, cycle and identity losses plus the weighted total.

All terms are batch/patch means so they stay comparable across input sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


def _check_shapes(a: torch.Tensor, b: torch.Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_gan_generator(fake_scores: torch.Tensor) -> torch.Tensor:
    return ((fake_scores - 1) ** 2).mean()


def loss_gan_discriminator(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return ((real_scores - 1) ** 2).mean() + (fake_scores ** 2).mean()


def loss_cycle(x: torch.Tensor, rec_x: torch.Tensor,
               y: torch.Tensor, rec_y: torch.Tensor) -> torch.Tensor:
    """Mean L1 of both reconstructions, ``F(G(x))`` against ``x`` and ``G(F(y))`` against ``y``."""
    _check_shapes(x, rec_x, "cycle x")
    _check_shapes(y, rec_y, "cycle y")
    return (rec_x - x).abs().mean() + (rec_y - y).abs().mean()


def loss_identity(y: torch.Tensor, g_y: torch.Tensor,
                  x: torch.Tensor, f_x: torch.Tensor) -> torch.Tensor:
    _check_shapes(y, g_y, "identity y")
    _check_shapes(x, f_x, "identity x")
    return (g_y - y).abs().mean() + (f_x - x).abs().mean()


@dataclass
class LossParts:
    """Per-batch components of the full objective (tensors or floats)."""

    gan_g: object
    gan_f: object
    cyc: object
    idt: object


def total_objective(parts: LossParts, lambda_cyc: float, lambda_id: float):
    return parts.gan_g + parts.gan_f + lambda_cyc * parts.cyc + lambda_id * parts.idt
