from __future__ import annotations

import random
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from ..core import list_images

PRELOAD_LIMIT = 1 << 26  # floats


def load_image(path: str | Path, size: int) -> torch.Tensor:
    """Read an RGB image, resize to ``size`` x ``size`` and scale to [-1, 1] -> (3, S, S)."""
    with Image.open(path) as im:
        im = im.convert("RGB").resize((size, size), Image.BICUBIC)
        arr = np.asarray(im, dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1) / 127.5 - 1.0


def to_pil(image: torch.Tensor, size: tuple[int, int] | None = None) -> Image.Image:
    """Map a (3, H, W) tensor in [-1, 1] to an 8-bit image, optionally resized to (width, height)."""
    arr = ((image.detach().clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    im = Image.fromarray(arr.permute(1, 2, 0).cpu().numpy(), mode="RGB")
    if size is not None and im.size != tuple(size):
        im = im.resize(tuple(size), Image.BICUBIC)
    return im


def resolve_images(source: str | Path | Sequence[str | Path]) -> list[Path]:
    if isinstance(source, (str, Path)):
        return list_images(source)
    return [Path(p) for p in source]


class ImageDomain:
    """An indexable pool of images for one domain, decoded on demand.

    Small pools are decoded once and kept in memory.
    """

    def __init__(self, paths: Sequence[str | Path], size: int):
        self.paths = [Path(p) for p in paths]
        self.size = size
        self._cache: dict[int, torch.Tensor] | None = (
            {} if len(self.paths) * 3 * size * size <= PRELOAD_LIMIT else None)

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, i: int) -> torch.Tensor:
        if self._cache is not None and i in self._cache:
            return self._cache[i]
        t = load_image(self.paths[i], self.size)
        if self._cache is not None:
            self._cache[i] = t
        return t

    def batch(self, indices: Sequence[int], flips: Sequence[bool] | None = None) -> torch.Tensor:
        imgs = [self[i] for i in indices]
        if flips is not None:
            imgs = [im.flip(-1) if f else im for im, f in zip(imgs, flips)]
        return torch.stack(imgs)


class ImagePool:
    """History buffer of generated images shown to the discriminators.

    Once full, each query returns (with probability 1/2) a stored image in
    place of the fresh one and swaps the fresh one into the buffer.
    """

    def __init__(self, size: int, seed: int = 0):
        self.size = size
        self.images: list[torch.Tensor] = []
        self.rng = random.Random(seed)

    def query(self, images: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return images
        out = []
        for image in images:
            image = image.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(image)
                out.append(image)
            elif self.rng.random() > 0.5:
                idx = self.rng.randrange(self.size)
                out.append(self.images[idx].clone())
                self.images[idx] = image
            else:
                out.append(image)
        return torch.cat(out, 0)
