"""Attention-sharing unpaired day->night translation model."""

from .attention import EfficientAttention, attend, efficient_attention
from .config import GeneratorConfig, TrainConfig, lr_schedule
from .losses import (LossParts, loss_cycle, loss_gan_discriminator, loss_gan_generator,
                     loss_identity, total_objective)
from .networks import (AttentionCache, AttentionCacheError, Generator, PatchDiscriminator,
                       TranslationModel, generator_forward)
from .train import LOG_COLUMNS, load_checkpoint, read_loss_log, save_checkpoint, train
from .translate import read_translations, translate

__all__ = [
    "AttentionCache", "AttentionCacheError", "EfficientAttention", "Generator",
    "GeneratorConfig", "LOG_COLUMNS", "LossParts", "PatchDiscriminator", "TrainConfig",
    "TranslationModel", "attend", "efficient_attention", "generator_forward",
    "load_checkpoint", "loss_cycle", "loss_gan_discriminator", "loss_gan_generator",
    "loss_identity", "lr_schedule", "read_loss_log", "read_translations", "save_checkpoint",
    "total_objective", "train", "translate",
]
