"""Checkpoint round-trips and corruption handling."""

import struct

import numpy as np
import pytest

from vagnmt.checkpoint import load_checkpoint, save_checkpoint
from vagnmt.errors import FormatError

from tests.test_model import tiny_config, tiny_model


def test_round_trip_is_bit_exact(tmp_path):
    mdl = tiny_model(seed=5)
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl, epoch=7, step=123, best_val_bleu=0.375)
    back, counters = load_checkpoint(path)
    assert counters == {"epoch": 7, "step": 123, "best_val_bleu": 0.375}
    want = mdl.named_parameters()
    got = back.named_parameters()
    assert set(want) == set(got)
    for name in want:
        assert np.array_equal(want[name].data, got[name].data), name
    assert back.config.to_dict() == mdl.config.to_dict()
    assert back.src_vocab.tokens == mdl.src_vocab.tokens
    assert back.tgt_bpe.merges == mdl.tgt_bpe.merges


def test_save_is_deterministic(tmp_path):
    mdl = tiny_model(seed=5)
    save_checkpoint(tmp_path / "a.vagc", mdl)
    save_checkpoint(tmp_path / "b.vagc", mdl)
    assert (tmp_path / "a.vagc").read_bytes() == (tmp_path / "b.vagc").read_bytes()


def test_header_layout(tmp_path):
    mdl = tiny_model()
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl)
    blob = path.read_bytes()
    assert blob[:4] == b"VAGC"
    version, count = struct.unpack("<II", blob[4:12])
    assert version == 1
    assert count == len(mdl.named_parameters())
    # first tensor name is the lexicographically smallest
    (name_len,) = struct.unpack("<H", blob[12:14])
    first = blob[14:14 + name_len].decode()
    assert first == min(mdl.named_parameters())


def test_loaded_model_translates_identically(tmp_path):
    mdl = tiny_model(seed=9)
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl)
    back, _ = load_checkpoint(path)
    feat = np.random.default_rng(0).normal(size=16).astype(np.float32)
    assert back.translate_ids([4, 5, 6], feat) == mdl.translate_ids([4, 5, 6], feat)
    assert back.translate_line("a b", feat) == mdl.translate_line("a b", feat)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.vagc"
    path.write_bytes(b"XXXX" + b"\x00" * 30)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_wrong_version_rejected(tmp_path):
    mdl = tiny_model()
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl)
    blob = bytearray(path.read_bytes())
    blob[4] = 2
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path)


def test_truncation_rejected(tmp_path):
    mdl = tiny_model()
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl)
    blob = path.read_bytes()
    for cut in (20, len(blob) // 2, len(blob) - 3):
        path.write_bytes(blob[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    mdl = tiny_model()
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl)
    path.write_bytes(path.read_bytes() + b"\x00\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path)


def test_corrupt_trailer_rejected(tmp_path):
    mdl = tiny_model()
    path = tmp_path / "m.vagc"
    save_checkpoint(path, mdl)
    blob = bytearray(path.read_bytes())
    blob[-5] = ord("!")  # breaks the JSON syntax
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_checkpoint(path)
