"""Corpus loading, the binary feature-file format, and synthetic tasks.

Feature files ("VAGF") hold a dense float32 matrix:

    magic  b"VAGF" | version u32 | count u32 | dim u32 | payload f32 LE

All integers little-endian; the payload is row-major, one row per image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

FEATURE_MAGIC = b"VAGF"
FEATURE_VERSION = 1

AMBIGUOUS_TOKEN = "bat"
SENSE_WORDS = ("animal", "club")
SYNTH_TASKS = ("copy", "reverse", "ambiguous")


def write_features(path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise InputError(f"write_features: need a matrix, got {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, matrix.shape[0],
                             matrix.shape[1]))
        fh.write(matrix.tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a feature file (bad magic)")
    version, count, dim = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature version {version}")
    expected = 16 + 4 * count * dim
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {count}x{dim}, got {len(blob)}")
    matrix = np.frombuffer(blob[16:], dtype="<f4").reshape(count, dim).copy()
    if not np.all(np.isfinite(matrix)):
        raise InputError(f"{path}: features contain NaN or Inf")
    return matrix


def read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8 ({exc})") from exc


@dataclass
class ParallelCorpus:
    src_lines: list[str]
    tgt_lines: list[str]
    features: np.ndarray | None  # (N, feature_dim) float32, or None

    def __len__(self) -> int:
        return len(self.src_lines)

    @property
    def feature_dim(self) -> int | None:
        return None if self.features is None else self.features.shape[1]


def load_corpus(src_path, tgt_path, feat_path=None) -> ParallelCorpus:
    """Aligned text sides plus (optionally) one feature row per pair."""
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise InputError(
            f"corpus misaligned: {src_path} has {len(src)} lines, "
            f"{tgt_path} has {len(tgt)}")
    features = None
    if feat_path is not None:
        features = read_features(feat_path)
        if features.shape[0] != len(src):
            raise InputError(
                f"corpus misaligned: {len(src)} sentence pairs vs "
                f"{features.shape[0]} feature rows in {feat_path}")
    return ParallelCorpus(src_lines=src, tgt_lines=tgt, features=features)


def _balanced_senses(rng: np.random.Generator, n: int) -> np.ndarray:
    """Exactly balanced 0/1 senses in shuffled order (odd n: extra 0)."""
    senses = np.array([i % 2 for i in range(n)], dtype=np.int64)
    rng.shuffle(senses)
    return senses


def synthesize_corpus(out_dir, task: str, n_train: int, n_valid: int,
                      n_test: int, vocab_size: int = 30, min_len: int = 4,
                      max_len: int = 8, clusters: int = 4,
                      feature_dim: int = 2048, noise: float = 0.1,
                      seed: int = 0) -> dict:
    """Write {split}.src.txt / {split}.tgt.txt / {split}.feat.vagf.

    copy       target repeats the source
    reverse    target is the source reversed
    ambiguous  one source slot holds a fixed ambiguous token whose target
               word is decided by the feature cluster (cluster id mod 2);
               senses are exactly balanced per split and independent of the
               text, so no text-only model can beat 50% on that slot

    Returns {split: size}.  Everything is a pure function of the arguments.
    """
    if task not in SYNTH_TASKS:
        raise InputError(f"unknown task {task!r}, have {SYNTH_TASKS}")
    if vocab_size < 2:
        raise InputError(f"vocab_size must be >= 2, got {vocab_size}")
    if not 1 <= min_len <= max_len:
        raise InputError(f"bad length range [{min_len}, {max_len}]")
    if clusters < 1 or (task == "ambiguous" and clusters % 2 != 0):
        raise InputError(
            f"clusters must be positive (and even for 'ambiguous'), got {clusters}")
    if noise < 0:
        raise InputError(f"noise must be >= 0, got {noise}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    # one centroid set shared by all splits, otherwise the feature->sense
    # mapping could not generalize from train to test
    centroids = rng.normal(size=(clusters, feature_dim))

    sizes = {"train": n_train, "valid": n_valid, "test": n_test}
    for split, n in sizes.items():
        if n < 1:
            raise InputError(f"split {split!r} needs at least 1 pair, got {n}")
        senses = _balanced_senses(rng, n) if task == "ambiguous" else None
        src_rows, tgt_rows = [], []
        feats = np.empty((n, feature_dim), dtype=np.float32)
        for i in range(n):
            length = int(rng.integers(min_len, max_len + 1))
            tokens = [words[int(k)] for k in rng.integers(0, vocab_size, length)]
            if task == "copy":
                src, tgt = tokens, list(tokens)
                cluster = int(rng.integers(clusters))
            elif task == "reverse":
                src, tgt = tokens, tokens[::-1]
                cluster = int(rng.integers(clusters))
            else:
                sense = int(senses[i])
                slot = int(rng.integers(length))
                src = list(tokens)
                src[slot] = AMBIGUOUS_TOKEN
                tgt = list(src)
                tgt[slot] = SENSE_WORDS[sense]
                # any cluster with matching parity encodes this sense
                cluster = sense + 2 * int(rng.integers(clusters // 2))
            src_rows.append(" ".join(src))
            tgt_rows.append(" ".join(tgt))
            feats[i] = centroids[cluster] + rng.normal(scale=noise,
                                                       size=feature_dim)
        (out_dir / f"{split}.src.txt").write_text("\n".join(src_rows) + "\n",
                                                  encoding="utf-8")
        (out_dir / f"{split}.tgt.txt").write_text("\n".join(tgt_rows) + "\n",
                                                  encoding="utf-8")
        write_features(out_dir / f"{split}.feat.vagf", feats)
    return sizes


def load_split(data_dir, split: str, need_features: bool = True) -> ParallelCorpus:
    data_dir = Path(data_dir)
    feat = data_dir / f"{split}.feat.vagf"
    return load_corpus(data_dir / f"{split}.src.txt",
                       data_dir / f"{split}.tgt.txt",
                       feat if need_features and feat.exists() else None)
