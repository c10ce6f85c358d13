"""Parameter initialization and the assembled translation model.

A Model owns the three parameter groups plus the text pipeline needed to go
from raw lines to token ids and back, so a trained instance is self-contained
for translation, embedding, and checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .decoder import DecoderParams, beam_search, sequence_loss
from .encoder import EncodedSource, EncoderParams, GruParams, encode
from .errors import ConfigError, DimensionError, InputError
from .grounding import (GroundingParams, decoder_init, project_shared,
                        visual_attention)
from .text import (BpeModel, Vocabulary, apply_bpe, frame_target, numericalize,
                   postprocess, tokenize)

DTYPE = np.float32


def glorot(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Uniform(-a, a) with a = sqrt(6 / (rows + cols)); fan order does not
    matter since the limit is symmetric in the two fans."""
    a = np.sqrt(6.0 / (rows + cols))
    data = rng.uniform(-a, a, size=(rows, cols)).astype(DTYPE)
    return Tensor(data, requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=True)


def _glorot_vector(rng: np.random.Generator, dim: int) -> Tensor:
    a = np.sqrt(6.0 / (dim + 1))
    return Tensor(rng.uniform(-a, a, size=dim).astype(DTYPE), requires_grad=True)


def _init_gru(rng, in_dim: int, hidden: int) -> GruParams:
    return GruParams(
        W_z=glorot(rng, hidden, in_dim), U_z=glorot(rng, hidden, hidden),
        b_z=_zeros(hidden),
        W_r=glorot(rng, hidden, in_dim), U_r=glorot(rng, hidden, hidden),
        b_r=_zeros(hidden),
        W_h=glorot(rng, hidden, in_dim), U_h=glorot(rng, hidden, hidden),
        b_h=_zeros(hidden))


def init_params(config: TrainConfig, src_vocab_size: int, tgt_vocab_size: int,
                rng: np.random.Generator):
    """Fresh Glorot-initialized parameter groups (biases zero).

    The draw order is fixed, so one seed always yields the same weights.
    """
    if config.feature_dim is None:
        raise ConfigError("init_params: feature_dim is not set")
    state_dim = 2 * config.hidden_dim
    enc = EncoderParams(
        embedding=glorot(rng, src_vocab_size, config.embed_dim),
        forward=_init_gru(rng, config.embed_dim, config.hidden_dim),
        backward=_init_gru(rng, config.embed_dim, config.hidden_dim))
    grd = GroundingParams(
        W_v=glorot(rng, config.att_dim, config.feature_dim),
        W_h=glorot(rng, state_dim, config.att_dim),
        W_t_emb=glorot(rng, config.shared_dim, state_dim),
        b_t_emb=_zeros(config.shared_dim),
        W_v_emb=glorot(rng, config.shared_dim, config.feature_dim),
        b_v_emb=_zeros(config.shared_dim),
        W_init=glorot(rng, config.hidden_dim, state_dim))
    dec = DecoderParams(
        embedding=glorot(rng, tgt_vocab_size, config.embed_dim),
        gru1=_init_gru(rng, config.embed_dim, config.hidden_dim),
        gru2=_init_gru(rng, state_dim, config.hidden_dim),
        U_a=glorot(rng, config.att_dim, config.hidden_dim),
        W_a=glorot(rng, state_dim, config.att_dim),
        v_a=_glorot_vector(rng, config.att_dim),
        W_e=glorot(rng, config.out_dim, config.embed_dim),
        W_d=glorot(rng, config.out_dim, config.hidden_dim),
        W_c=glorot(rng, config.out_dim, state_dim),
        b_o=_zeros(config.out_dim),
        W_o=glorot(rng, tgt_vocab_size, config.out_dim),
        b_w=_zeros(tgt_vocab_size))
    return enc, grd, dec


@dataclass
class SentenceForward:
    """Everything one training sentence contributes to the joint objective."""
    loss: Tensor               # teacher-forced NLL, summed over positions
    t_emb: Tensor | None       # shared-space text embedding (None if text-only)
    v_emb: Tensor | None       # shared-space image embedding


class Model:
    def __init__(self, config: TrainConfig, encoder: EncoderParams,
                 grounding: GroundingParams, decoder: DecoderParams,
                 src_bpe: BpeModel, tgt_bpe: BpeModel,
                 src_vocab: Vocabulary, tgt_vocab: Vocabulary):
        self.config = config
        self.encoder = encoder
        self.grounding = grounding
        self.decoder = decoder
        self.src_bpe = src_bpe
        self.tgt_bpe = tgt_bpe
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab

    @property
    def grounded(self) -> bool:
        return not self.config.text_only

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.encoder.named())
        out.update(self.grounding.named())
        out.update(self.decoder.named())
        return out

    def _check_feature(self, feature) -> Tensor:
        if feature is None:
            raise InputError("grounded model needs an image feature vector")
        arr = np.asarray(feature, dtype=DTYPE)
        if arr.ndim != 1 or arr.shape[0] != self.config.feature_dim:
            raise DimensionError(
                f"feature shape {arr.shape}, expected ({self.config.feature_dim},)")
        return Tensor(arr)

    def _init_state(self, enc: EncodedSource, feature) -> tuple:
        """Returns (s0, t_emb, v_emb); the last two are None when text-only."""
        cfg = self.config
        if cfg.text_only:
            s0 = decoder_init(self.grounding, enc.mean, enc.mean, 0.0)
            return s0, None, None
        v = self._check_feature(feature)
        _, t = visual_attention(self.grounding, enc, v)
        t_for_embed = enc.mean if cfg.no_grounding_attention else t
        t_emb, v_emb = project_shared(self.grounding, t_for_embed, v)
        lam = 0.0 if cfg.no_attention_init else cfg.lam
        s0 = decoder_init(self.grounding, t, enc.mean, lam)
        return s0, t_emb, v_emb

    def forward_sentence(self, src_ids, tgt_ids, feature,
                         rng: np.random.Generator,
                         training: bool = True) -> SentenceForward:
        cfg = self.config
        enc = encode(self.encoder, src_ids, rng=rng, training=training,
                     embed_dropout=cfg.dropout_embedding)
        s0, t_emb, v_emb = self._init_state(enc, feature)
        loss = sequence_loss(self.decoder, enc, s0, frame_target(tgt_ids),
                             rng=rng, training=training,
                             ctx_dropout=cfg.dropout_context,
                             out_dropout=cfg.dropout_output)
        return SentenceForward(loss=loss, t_emb=t_emb, v_emb=v_emb)

    def translate_ids(self, src_ids, feature, beam_size: int | None = None,
                      max_len: int | None = None) -> list[int]:
        beam_size = self.config.valid_beam if beam_size is None else beam_size
        if max_len is None:
            max_len = 3 * len(list(src_ids)) + 5
        with ad.no_grad():
            enc = encode(self.encoder, src_ids)
            s0, _, _ = self._init_state(enc, feature)
            return beam_search(self.decoder, enc, s0, beam_size, max_len)

    def translate_line(self, line: str, feature=None,
                       beam_size: int | None = None,
                       max_len: int | None = None) -> str:
        subwords = apply_bpe(self.src_bpe, tokenize(line))
        if not subwords:
            return ""
        ids = numericalize(self.src_vocab, subwords)
        out_ids = self.translate_ids(ids, feature, beam_size, max_len)
        return postprocess([self.tgt_vocab.token(i) for i in out_ids])

    def embed_pair(self, src_ids, feature) -> tuple[np.ndarray, np.ndarray]:
        """Shared-space embeddings for retrieval; no dropout, no graph."""
        if self.config.text_only:
            raise ConfigError("text-only model has no shared embedding space")
        with ad.no_grad():
            enc = encode(self.encoder, src_ids)
            v = self._check_feature(feature)
            _, t = visual_attention(self.grounding, enc, v)
            t_for_embed = enc.mean if self.config.no_grounding_attention else t
            t_emb, v_emb = project_shared(self.grounding, t_for_embed, v)
        return t_emb.data.copy(), v_emb.data.copy()

    def src_ids_of_line(self, line: str) -> list[int]:
        return numericalize(self.src_vocab, apply_bpe(self.src_bpe, tokenize(line)))

    def tgt_ids_of_line(self, line: str) -> list[int]:
        return numericalize(self.tgt_vocab, apply_bpe(self.tgt_bpe, tokenize(line)))
