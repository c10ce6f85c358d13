"""Shared fixtures: a folder of small synthetic images and a seeded trunk."""

import numpy as np
import pytest
from PIL import Image

from vagfeat.features import build_trunk


def _photo_like(rng, width=500, height=375):
    # smooth multi-scale structure plus texture noise
    yy, xx = np.mgrid[0:height, 0:width]
    base = np.sin(xx / 40.0) + np.cos(yy / 55.0) + np.sin((xx + yy) / 90.0)
    arr = np.stack([base * 40 + 120, base * 25 + 100, -base * 30 + 140],
                   axis=-1)
    arr += rng.normal(0.0, 12.0, arr.shape)
    return Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8), "RGB")


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(7)
    _photo_like(rng).save(root / "photo.png")
    Image.new("RGB", (500, 375), (128, 128, 128)).save(root / "gray.png")
    noise = rng.integers(0, 256, (300, 400, 3), dtype=np.uint8)
    Image.fromarray(noise, "RGB").save(root / "noise.png")
    (root / "gray_copy.png").write_bytes((root / "gray.png").read_bytes())
    Image.new("L", (80, 120), 90).save(root / "grayscale.png")
    Image.new("P", (64, 48)).save(root / "palette.png")
    Image.new("RGB", (50, 40), (10, 200, 30)).save(root / "tiny.png")
    return root


@pytest.fixture(scope="session")
def list_file(image_dir):
    names = ("photo.png", "gray.png", "gray_copy.png", "noise.png",
             "grayscale.png", "palette.png", "tiny.png")
    path = image_dir / "images.txt"
    path.write_text("".join(name + "\n" for name in names), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def trunk():
    return build_trunk("random", seed=0)
