"""Pooled convnet features for image lists, written as VAGF files.

The trunk is a ResNet50 with its classifier removed: each image passes
through the convolutional stages and global average pooling, giving one
2048-d vector.  The final activation before pooling is a ReLU, so every
emitted value is nonnegative.  Preprocessing follows the usual ImageNet
evaluation recipe: resize the shorter side to 256, center-crop 224, then
per-channel mean/std normalization.

Feature files ("VAGF") hold a dense float32 matrix:

    magic  b"VAGF" | version u32 | count u32 | dim u32 | payload f32 LE

All integers little-endian; the payload is row-major, one row per image.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn
from torchvision import transforms
from torchvision.models import resnet50

from .errors import ConfigError, InputError, NumericError

FEATURE_MAGIC = b"VAGF"
FEATURE_VERSION = 1
FEATURE_DIM = 2048

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_PREPROCESS = transforms.Compose([
    transforms.Resize(256),
    transforms.CenterCrop(224),
    transforms.ToTensor(),
    transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
])


def build_trunk(weights: str = "imagenet", seed: int = 0,
                device: str = "cpu") -> nn.Module:
    """Return the pooled ResNet50 trunk in inference mode.

    ``weights`` selects the parameters: "imagenet" loads the torchvision
    pretrained checkpoint (from cache or download), "random" draws a fresh
    initialization from ``seed`` (deterministic, for exercising pipelines
    when no checkpoint is at hand; the features carry no image semantics),
    and any other value is read as a path to a saved resnet50 state dict.
    """
    if weights == "random":
        torch.manual_seed(seed)
        net = resnet50(weights=None)
    elif weights == "imagenet":
        try:
            from torchvision.models import ResNet50_Weights
            net = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ConfigError(
                "pretrained weights unavailable (no cache and download "
                f"failed); use --weights PATH or --weights random: {exc}")
    else:
        path = Path(weights)
        if not path.is_file():
            raise ConfigError(f"{weights}: weights file not found")
        net = resnet50(weights=None)
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except Exception as exc:
            raise ConfigError(
                f"{weights}: not a resnet50 state dict: {exc}")
    trunk = nn.Sequential(*list(net.children())[:-1])
    trunk.eval()
    trunk.requires_grad_(False)
    return trunk.to(device)


def load_image(path) -> torch.Tensor:
    """Read one image and return its normalized 3x224x224 tensor.

    Decoding failures report the offending path: a bad image must abort
    the run, because silently skipping a row would misalign every feature
    after it with the parallel corpus.
    """
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: cannot read image: {exc}")
    return _PREPROCESS(rgb)


def extract(paths, trunk: nn.Module, batch_size: int = 16,
            device: str = "cpu") -> np.ndarray:
    """Embed every image, stacking vectors in the order given.

    Batching exists purely for throughput: the trunk runs in inference
    mode with no cross-image operations, so the batch split cannot change
    any row's value.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    paths = [str(p) for p in paths]
    out = []
    for start in range(0, len(paths), batch_size):
        chunk = paths[start:start + batch_size]
        batch = torch.stack([load_image(p) for p in chunk]).to(device)
        with torch.no_grad():
            pooled = trunk(batch)
        out.append(pooled.reshape(len(chunk), -1).cpu().numpy()
                   .astype(np.float32, copy=False))
    rows = (np.concatenate(out) if out
            else np.zeros((0, FEATURE_DIM), dtype=np.float32))
    if not np.isfinite(rows).all():
        raise NumericError("non-finite feature values; check the weights")
    if rows.size and rows.min() < 0:
        raise NumericError(
            "negative feature values; the trunk must end in ReLU + pooling")
    return rows


def read_image_list(path) -> list[str]:
    """Read one image path per line; relative entries resolve next to the list.

    Line order defines feature row order, which must match the sentence
    order of the parallel corpus, so blank lines are errors rather than
    rows to skip.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"{path}: cannot read image list: {exc}")
    if not lines:
        raise InputError(f"{path}: image list is empty")
    base = Path(path).parent
    paths = []
    for number, line in enumerate(lines, start=1):
        entry = line.strip()
        if not entry:
            raise InputError(f"{path}:{number}: blank line in image list")
        p = Path(entry)
        paths.append(str(p if p.is_absolute() else base / p))
    return paths


def write_features(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise InputError(f"write_features: need a matrix, got {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, matrix.shape[0],
                             matrix.shape[1]))
        fh.write(matrix.tobytes())


def extract_to_file(images, out, weights: str = "imagenet", seed: int = 0,
                    batch_size: int = 16, device: str = "cpu") -> int:
    """List file in, VAGF file out; returns the number of rows written."""
    paths = read_image_list(images)
    trunk = build_trunk(weights, seed=seed, device=device)
    rows = extract(paths, trunk, batch_size=batch_size, device=device)
    write_features(out, rows)
    return rows.shape[0]
