"""Regenerate the bundled grayscale corpus from scikit-image sample data.

Every source is CC0 or public domain according to scikit-image's own notes.
Train images are 224x224 (2x area-downsampled 448x448 crops); val and test
images are 160x160 crops from regions that do not overlap the train crops.
"""

from pathlib import Path

import numpy as np
import skimage.data
from skimage.color import rgb2gray

from vcnet.dataset import GrayImage, write_pgm

OUT = Path(__file__).resolve().parents[1] / "src" / "vcnet" / "data" / "corpus"

# name: (split, source, top, left, side, downsample)
CROPS = {
    "camera": ("train", "camera", 0, 32, 448, 2),
    "astronaut": ("train", "astronaut", 0, 0, 448, 2),
    "brick": ("train", "brick", 32, 32, 448, 2),
    "grass": ("train", "grass", 0, 0, 448, 2),
    "chelsea": ("train", "chelsea", 0, 0, 300, 1),
    "coffee": ("train", "coffee", 0, 0, 400, 1),
    "rocket": ("train", "rocket", 120, 230, 224, 1),
    "hubble": ("train", "hubble_deep_field", 0, 0, 448, 2),
    "camera_b": ("val", "camera", 350, 340, 160, 1),
    "coffee_b": ("val", "coffee", 240, 420, 160, 1),
    "coins": ("test", "coins", 100, 120, 160, 1),
    "text": ("test", "text", 0, 40, 160, 1),
    "gravel": ("test", "gravel", 100, 200, 160, 1),
    "chelsea_b": ("test", "chelsea", 100, 260, 160, 1),
    "hubble_b": ("test", "hubble_deep_field", 520, 560, 160, 1),
}


def gray(name: str) -> np.ndarray:
    img = getattr(skimage.data, name)()
    if img.ndim == 3:
        img = rgb2gray(img[..., :3]) * 255.0
    return img.astype(np.float64)


def main() -> None:
    for name, (split, src, top, left, side, down) in CROPS.items():
        img = gray(src)[top : top + side, left : left + side]
        if down > 1:
            h, w = img.shape[0] // down, img.shape[1] // down
            img = img[: h * down, : w * down].reshape(h, down, w, down).mean(axis=(1, 3))
        target = 224 if split == "train" else 160
        img = img[:target, :target]
        assert img.shape[0] >= 160 and img.shape[1] >= 160, (name, img.shape)
        out = OUT / split
        out.mkdir(parents=True, exist_ok=True)
        write_pgm(out / f"{name}.pgm", GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8), name))
        print(split, name, img.shape)


if __name__ == "__main__":
    main()
