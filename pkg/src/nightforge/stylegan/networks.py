"""Generators with encoder/decoder attention sharing, patch discriminators,
and the four-network translation model."""

from __future__ import annotations

import torch
from torch import nn

from .attention import EfficientAttention
from .config import GeneratorConfig


class AttentionCacheError(RuntimeError):
    pass


class AttentionCache:
    """Holds encoder attention contexts between a translation and its reconstruction.

    Entries are keyed by the producing generator's tag; ``consume`` pops the
    whole per-pass dict so nothing lingers once the cycle is closed.
    """

    def __init__(self) -> None:
        self._entries: dict[str, dict[int, torch.Tensor]] = {}

    def store(self, tag: str, contexts: dict[int, torch.Tensor]) -> None:
        if tag in self._entries:
            raise AttentionCacheError(f"cache entry {tag!r} stored twice without being consumed")
        self._entries[tag] = contexts

    def consume(self, tag: str) -> dict[int, torch.Tensor]:
        try:
            return self._entries.pop(tag)
        except KeyError:
            raise AttentionCacheError(
                f"reconstruction pass requested context {tag!r} but the cache is empty") from None

    def clear(self) -> None:
        self._entries.clear()

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def __contains__(self, tag: str) -> bool:
        return tag in self._entries


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3), nn.InstanceNorm2d(channels),
            nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(channels, channels, 3), nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """ResNet-style translator (7x7 stem, strided downsampling, residual
    bottleneck, transposed-conv upsampling, 7x7 tanh head) with efficient
    attention at the configured encoder depths and their decoder mirrors."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        ngf, n_down = cfg.base_channels, cfg.n_downsampling
        width = [ngf * 2 ** d for d in range(n_down + 1)]
        self.stem = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(cfg.in_channels, ngf, 7),
            nn.InstanceNorm2d(ngf), nn.ReLU(True))
        self.down = nn.ModuleList(
            nn.Sequential(nn.Conv2d(width[d], width[d + 1], 3, stride=2, padding=1),
                          nn.InstanceNorm2d(width[d + 1]), nn.ReLU(True))
            for d in range(n_down))
        self.blocks = nn.Sequential(*[ResidualBlock(width[-1]) for _ in range(cfg.n_residual_blocks)])
        self.up = nn.ModuleList(
            nn.Sequential(nn.ConvTranspose2d(width[d], width[d - 1], 3, stride=2, padding=1,
                                             output_padding=1),
                          nn.InstanceNorm2d(width[d - 1]), nn.ReLU(True))
            for d in range(n_down, 0, -1))
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(ngf, cfg.in_channels, 7), nn.Tanh())
        self.enc_attn = nn.ModuleDict(
            {str(p): EfficientAttention(width[p], heads=cfg.attention_heads)
             for p in cfg.attention_positions})
        self.dec_attn = nn.ModuleDict(
            {str(p): EfficientAttention(width[p], heads=cfg.attention_heads)
             for p in cfg.attention_positions})

    def _encoder_attention(self, h, depth, contexts):
        key = str(depth)
        if key in self.enc_attn:
            h, contexts[depth] = self.enc_attn[key](h)
        return h

    def _decoder_attention(self, h, depth, contexts, shared):
        key = str(depth)
        if key not in self.dec_attn:
            return h
        if shared is None:
            ctx = contexts[depth]
        else:
            if depth not in shared:
                raise AttentionCacheError(f"shared context missing attention position {depth}")
            ctx = shared[depth]
        h, _ = self.dec_attn[key](h, context=ctx)
        return h

    def forward(self, x: torch.Tensor, shared_context: dict[int, torch.Tensor] | None = None):
        """Translate ``x`` (values in [-1, 1]).

        Returns ``(image, contexts)`` where ``contexts`` maps attention depth
        to the encoder context. Decoder attention uses ``shared_context``
        when given (reconstruction pass), otherwise this pass's own encoder
        contexts.
        """
        contexts: dict[int, torch.Tensor] = {}
        n_down = self.cfg.n_downsampling
        h = self._encoder_attention(self.stem(x), 0, contexts)
        for d, layer in enumerate(self.down, start=1):
            h = self._encoder_attention(layer(h), d, contexts)
        h = self.blocks(h)
        h = self._decoder_attention(h, n_down, contexts, shared_context)
        for i, layer in enumerate(self.up):
            depth = n_down - i - 1
            h = self._decoder_attention(layer(h), depth, contexts, shared_context)
        return self.head(h), contexts


def generator_forward(gen: Generator, image: torch.Tensor,
                      shared_context: dict[int, torch.Tensor] | None = None):
    return gen(image, shared_context)


class PatchDiscriminator(nn.Module):
    """Convolutional discriminator emitting a grid of realism scores (70x70
    receptive field at the default three layers)."""

    def __init__(self, in_channels: int = 3, ndf: int = 64, n_layers: int = 3):
        super().__init__()
        layers: list[nn.Module] = [nn.Conv2d(in_channels, ndf, 4, 2, 1), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, n_layers):
            prev, mult = mult, min(2 ** n, 8)
            layers += [nn.Conv2d(ndf * prev, ndf * mult, 4, 2, 1),
                       nn.InstanceNorm2d(ndf * mult), nn.LeakyReLU(0.2, True)]
        prev, mult = mult, min(2 ** n_layers, 8)
        layers += [nn.Conv2d(ndf * prev, ndf * mult, 4, 1, 1),
                   nn.InstanceNorm2d(ndf * mult), nn.LeakyReLU(0.2, True),
                   nn.Conv2d(ndf * mult, 1, 4, 1, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


def init_weights(module: nn.Module, gain: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, gain)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class TranslationModel(nn.Module):
    """``G``: day -> night, ``F``: night -> day, with discriminators ``D_X``
    (day) and ``D_Y`` (night)."""

    def __init__(self, cfg: GeneratorConfig, seed: int | None = None):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        self.cfg = cfg
        self.G = Generator(cfg)
        self.F = Generator(cfg)
        self.D_X = PatchDiscriminator(cfg.in_channels, cfg.disc_channels, cfg.disc_layers)
        self.D_Y = PatchDiscriminator(cfg.in_channels, cfg.disc_channels, cfg.disc_layers)
        for net in (self.G, self.F, self.D_X, self.D_Y):
            init_weights(net)
        self.cache = AttentionCache()

    def forward_x(self, x: torch.Tensor) -> torch.Tensor:
        """``G(x)``; caches G's encoder contexts for the ``F`` reconstruction."""
        fake_y, ctx = self.G(x)
        self.cache.store("G", ctx)
        return fake_y

    def reconstruct_x(self, fake_y: torch.Tensor) -> torch.Tensor:
        rec_x, _ = self.F(fake_y, shared_context=self.cache.consume("G"))
        return rec_x

    def forward_y(self, y: torch.Tensor) -> torch.Tensor:
        fake_x, ctx = self.F(y)
        self.cache.store("F", ctx)
        return fake_x

    def reconstruct_y(self, fake_x: torch.Tensor) -> torch.Tensor:
        rec_y, _ = self.G(fake_x, shared_context=self.cache.consume("F"))
        return rec_y

    def generator_parameters(self):
        return list(self.G.parameters()) + list(self.F.parameters())

    def discriminator_parameters(self):
        return list(self.D_X.parameters()) + list(self.D_Y.parameters())
