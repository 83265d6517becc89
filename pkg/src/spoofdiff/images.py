"""8-bit RGB images <-> model-space tensors, plus PNG IO.

Model space is float32, channel-first (3, H, W), values in [-1, 1]
(0 maps to -1, 255 maps to +1).  All generation and training code works in
model space; files on disk are always 8-bit RGB PNG.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataError


def to_model_space(rgb: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, 3) array -> float32 (3, H, W) tensor in [-1, 1]."""
    arr = np.asarray(rgb, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def from_model_space(img: torch.Tensor) -> np.ndarray:
    """float (3, H, W) tensor in [-1, 1] -> uint8 (H, W, 3), clamped and rounded."""
    arr = img.detach().to(torch.float32).clamp(-1.0, 1.0).permute(1, 2, 0).numpy()
    return np.round((arr + 1.0) * 127.5).astype(np.uint8)


def load_rgb(path: str | Path) -> np.ndarray:
    """Read an image file as a uint8 (H, W, 3) array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def load_image_tensor(path: str | Path, size: int | None = None) -> torch.Tensor:
    """Load a file into model space, optionally bilinear-resized to size x size."""
    rgb = load_rgb(path)
    if size is not None and rgb.shape[:2] != (size, size):
        with Image.fromarray(rgb) as im:
            rgb = np.asarray(im.resize((size, size), Image.BILINEAR))
    return to_model_space(rgb)
