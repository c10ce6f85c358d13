"""Self-contained binary checkpoints ("VAGC").

Layout, all integers little-endian:

    magic b"VAGC" | version u32 | tensor_count u32
    per tensor, sorted by name:
        name_len u16 | name utf-8 | rank u8 | dims u32 x rank | data f32 LE
    trailer_len u32 | trailer JSON utf-8

The trailer holds the config, both vocabularies, both merge tables, and the
training counters, so a checkpoint alone is enough to translate with.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import TrainConfig
from .errors import FormatError
from .model import Model, init_params
from .text import BpeModel, Vocabulary

CHECKPOINT_MAGIC = b"VAGC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: Model, epoch: int = 0, step: int = 0,
                    best_val_bleu: float = 0.0) -> None:
    tensors = model.named_parameters()
    chunks = [CHECKPOINT_MAGIC,
              struct.pack("<II", CHECKPOINT_VERSION, len(tensors))]
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name].data, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    trailer = json.dumps({
        "config": model.config.to_dict(),
        "src_vocab": list(model.src_vocab.tokens),
        "tgt_vocab": list(model.tgt_vocab.tokens),
        "src_merges": [list(m) for m in model.src_bpe.merges],
        "tgt_merges": [list(m) for m in model.tgt_bpe.merges],
        "epoch": epoch,
        "step": step,
        "best_val_bleu": best_val_bleu,
    }, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(trailer)))
    chunks.append(trailer)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a translating model; returns (model, counters)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    pos = 12
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            end = pos + 4 * size
            if end > len(blob):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            arrays[name] = np.frombuffer(
                blob[pos:end], dtype="<f4").reshape(dims).copy()
            pos = end
        (trailer_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        trailer = json.loads(blob[pos:pos + trailer_len].decode("utf-8"))
        pos += trailer_len
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    if len(arrays) != count:
        raise FormatError(f"{path}: duplicate tensor names")

    for key in ("config", "src_vocab", "tgt_vocab", "src_merges",
                "tgt_merges", "epoch", "step", "best_val_bleu"):
        if key not in trailer:
            raise FormatError(f"{path}: trailer missing {key!r}")
    config = TrainConfig.from_dict(trailer["config"])
    src_vocab = Vocabulary(trailer["src_vocab"])
    tgt_vocab = Vocabulary(trailer["tgt_vocab"])
    src_bpe = BpeModel([tuple(m) for m in trailer["src_merges"]])
    tgt_bpe = BpeModel([tuple(m) for m in trailer["tgt_merges"]])

    params = init_params(config, len(src_vocab.tokens), len(tgt_vocab.tokens),
                         np.random.default_rng(0))
    model = Model(config, *params, src_bpe, tgt_bpe, src_vocab, tgt_vocab)
    tensors = model.named_parameters()
    if set(tensors) != set(arrays):
        missing = sorted(set(tensors) ^ set(arrays))
        raise FormatError(f"{path}: tensor names do not match model: {missing}")
    for name, tensor in tensors.items():
        if tensor.data.shape != arrays[name].shape:
            raise FormatError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, "
                f"model expects {tensor.data.shape}")
        tensor.data = arrays[name]
    counters = {"epoch": trailer["epoch"], "step": trailer["step"],
                "best_val_bleu": trailer["best_val_bleu"]}
    return model, counters
