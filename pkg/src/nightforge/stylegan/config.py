from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass(frozen=True)
class GeneratorConfig:
    """Generator shape.

    ``attention_positions`` lists encoder depths (0 = after the stem,
    ``n_downsampling`` = bottleneck) carrying an efficient-attention block.
    Each one is paired with the decoder block at the same resolution, so the
    layout is symmetric by construction.
    """

    input_size: int = 256
    in_channels: int = 3
    base_channels: int = 64
    n_residual_blocks: int = 9
    n_downsampling: int = 2
    attention_positions: tuple[int, ...] = (2,)
    attention_heads: int = 1
    disc_channels: int = 64
    disc_layers: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "attention_positions", tuple(self.attention_positions))
        if len(set(self.attention_positions)) != len(self.attention_positions):
            raise ValueError("attention_positions must be unique")
        for pos in self.attention_positions:
            if not 0 <= pos <= self.n_downsampling:
                raise ValueError(f"attention position {pos} outside [0, {self.n_downsampling}]")
        if self.input_size % (2 ** self.n_downsampling):
            raise ValueError("input_size must be divisible by 2**n_downsampling")


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 100
    n_epochs_decay: int = 100
    lr0: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_cyc: float = 10.0
    lambda_id: float = 0.5
    batch_size: int = 1
    seed: int = 0
    checkpoint_every: int = 10
    fake_pool_size: int = 50
    flip: bool = False
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self) -> None:
        if self.lambda_cyc < 0 or self.lambda_id < 0:
            raise ValueError("loss weights must be non-negative")
        if self.n_epochs < 0 or self.n_epochs_decay < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if isinstance(self.generator, dict):
            object.__setattr__(self, "generator", GeneratorConfig(**self.generator))

    @property
    def total_epochs(self) -> int:
        return self.n_epochs + self.n_epochs_decay

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator"]["attention_positions"] = list(self.generator.attention_positions)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        """Build from a nested dict or a flat one using Table-2 style keys.

        Generator keys (``input_size``, ``base_channels``...) may sit at the
        top level; unknown keys are ignored so a whole pipeline config can be
        passed in.
        """
        gen_names = {f.name for f in fields(GeneratorConfig)}
        train_names = {f.name for f in fields(cls)} - {"generator"}
        gen_kwargs = dict(data.get("generator") or {})
        gen_kwargs.update({k: v for k, v in data.items() if k in gen_names})
        kwargs = {k: v for k, v in data.items() if k in train_names}
        return cls(generator=GeneratorConfig(**gen_kwargs), **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> TrainConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def lr_schedule(t: int, cfg: TrainConfig) -> float:
    """Learning rate for 1-based epoch ``t``: constant, then linear decay to 0."""
    if t < 1:
        raise ValueError(f"epoch index must be >= 1, got {t}")
    if t <= cfg.n_epochs:
        return cfg.lr0
    if cfg.n_epochs_decay == 0 or t > cfg.n_epochs + cfg.n_epochs_decay:
        return 0.0
    return cfg.lr0 * (1 - (t - cfg.n_epochs) / cfg.n_epochs_decay)
