"""Conditional-GRU decoder with source attention, plus greedy/beam search.

One target step is GRU -> attend -> GRU: an intermediate state from the
previous token, a context vector from attending over the encoder states
with that intermediate state, and the final state from feeding the context
back through a second GRU.  The output layer mixes previous embedding,
state, and context before a log-softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncodedSource, GruParams, gru_cell
from .errors import InputError
from .text import BOS_ID, EOS_ID


@dataclass
class DecoderParams:
    """W_a is stored pre-transposed as (state_dim, att_dim); see grounding."""
    embedding: Tensor  # (vocab, embed_dim)
    gru1: GruParams    # embed_dim -> hidden
    gru2: GruParams    # state_dim -> hidden
    U_a: Tensor        # (att_dim, hidden)
    W_a: Tensor        # (state_dim, att_dim)
    v_a: Tensor        # (att_dim,)
    W_e: Tensor        # (out_dim, embed_dim)
    W_d: Tensor        # (out_dim, hidden)
    W_c: Tensor        # (out_dim, state_dim)
    b_o: Tensor        # (out_dim,)
    W_o: Tensor        # (vocab, out_dim)
    b_w: Tensor        # (vocab,)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def named(self) -> dict[str, Tensor]:
        out = {"decoder.embedding": self.embedding}
        for prefix, gru in (("decoder.gru1", self.gru1),
                            ("decoder.gru2", self.gru2)):
            for field in ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r",
                          "W_h", "U_h", "b_h"):
                out[f"{prefix}.{field}"] = getattr(gru, field)
        for field in ("U_a", "W_a", "v_a", "W_e", "W_d", "W_c", "b_o",
                      "W_o", "b_w"):
            out[f"decoder.{field}"] = getattr(self, field)
        return out


def _attention_energies(projected: Tensor, U_a: Tensor, s: Tensor,
                        v_a: Tensor) -> Tensor:
    """e_i = v_a . tanh(W_a h_i + U_a s), with W_a h_i precomputed for the
    whole sentence in `projected`.  Fused node with hand-derived backward."""
    q = U_a.data @ s.data
    m = np.tanh(projected.data + q)
    e = m @ v_a.data

    def backward(g):
        da = np.outer(g, v_a.data) * (1.0 - m * m)
        dq = da.sum(axis=0)
        return (da, ad.RankOneGrad(dq, s.data), U_a.data.T @ dq, m.T @ g)

    return ad.from_op(e, (projected, U_a, s, v_a), backward)


def project_states(params: DecoderParams, enc: EncodedSource) -> Tensor:
    """Per-sentence precomputation of W_a h_i for every position."""
    return ad.matmul(enc.H, params.W_a)


def cgru_step(params: DecoderParams, s_prev: Tensor, y_prev: int,
              enc: EncodedSource, projected: Tensor = None,
              rng: np.random.Generator = None, training: bool = False,
              ctx_dropout: float = 0.0) -> tuple[Tensor, Tensor, Tensor]:
    """One conditional-GRU step; returns (new state, context, attention weights)."""
    if not 0 <= y_prev < params.vocab_size:
        raise InputError(
            f"cgru_step: token id {y_prev} outside vocabulary of {params.vocab_size}")
    if projected is None:
        projected = project_states(params, enc)
    emb = ad.row(params.embedding, y_prev)
    s_mid = gru_cell(params.gru1, emb, s_prev)
    weights = ad.softmax(_attention_energies(projected, params.U_a, s_mid,
                                             params.v_a))
    context = ad.matvec(ad.transpose(enc.H), weights)
    if training and ctx_dropout > 0.0:
        context = ad.dropout(context, ctx_dropout, rng, training)
    s_new = gru_cell(params.gru2, context, s_mid)
    return s_new, context, weights


def output_distribution(params: DecoderParams, e_prev: Tensor, s: Tensor,
                        context: Tensor, rng: np.random.Generator = None,
                        training: bool = False,
                        out_dropout: float = 0.0) -> Tensor:
    """Log-probabilities over the target vocabulary for one step."""
    W_e, W_d, W_c, b_o = params.W_e, params.W_d, params.W_c, params.b_o
    pre = (W_e.data @ e_prev.data + W_d.data @ s.data
           + W_c.data @ context.data + b_o.data)
    o_val = np.tanh(pre)

    def backward(g):
        dp = g * (1.0 - o_val * o_val)
        return (ad.RankOneGrad(dp, e_prev.data), W_e.data.T @ dp,
                ad.RankOneGrad(dp, s.data), W_d.data.T @ dp,
                ad.RankOneGrad(dp, context.data), W_c.data.T @ dp, dp)

    o = ad.from_op(o_val, (W_e, e_prev, W_d, s, W_c, context, b_o), backward)
    if training and out_dropout > 0.0:
        o = ad.dropout(o, out_dropout, rng, training)
    logits = ad.add(ad.matvec(params.W_o, o), params.b_w)
    return ad.log_softmax(logits)


def sequence_loss(params: DecoderParams, enc: EncodedSource, s0: Tensor,
                  framed_target, rng: np.random.Generator = None,
                  training: bool = False, ctx_dropout: float = 0.0,
                  out_dropout: float = 0.0) -> Tensor:
    """Teacher-forced negative log-likelihood, summed over every position
    after the leading BOS (so EOS, when present, is scored too)."""
    framed = list(framed_target)
    if len(framed) < 2:
        raise InputError("sequence_loss: target has no prediction positions")
    bad = [t for t in framed if not 0 <= t < params.vocab_size]
    if bad:
        raise InputError(
            f"sequence_loss: token id {bad[0]} outside vocabulary of "
            f"{params.vocab_size}")

    projected = project_states(params, enc)
    s = s0
    total = None
    for j in range(1, len(framed)):
        y_prev, y_true = framed[j - 1], framed[j]
        s, context, _ = cgru_step(params, s, y_prev, enc, projected,
                                  rng=rng, training=training,
                                  ctx_dropout=ctx_dropout)
        log_probs = output_distribution(params, ad.row(params.embedding, y_prev),
                                        s, context, rng=rng, training=training,
                                        out_dropout=out_dropout)
        term = ad.scale(ad.pick(log_probs, y_true), -1.0)
        total = term if total is None else ad.add(total, term)
    return total


def greedy_decode(params: DecoderParams, enc: EncodedSource, s0: Tensor,
                  max_len: int) -> list[int]:
    """Argmax decoding until EOS or max_len; ties go to the lowest token id."""
    if max_len < 1:
        raise InputError(f"greedy_decode: max_len must be >= 1, got {max_len}")
    with ad.no_grad():
        projected = project_states(params, enc)
        s, y_prev = s0, BOS_ID
        out: list[int] = []
        for _ in range(max_len):
            s, context, _ = cgru_step(params, s, y_prev, enc, projected)
            log_probs = output_distribution(
                params, ad.row(params.embedding, y_prev), s, context)
            y_prev = int(np.argmax(log_probs.data))
            if y_prev == EOS_ID:
                break
            out.append(y_prev)
    return out


class _Hypothesis:
    __slots__ = ("tokens", "score", "state")

    def __init__(self, tokens, score, state):
        self.tokens = tokens
        self.score = score
        self.state = state


def beam_search(params: DecoderParams, enc: EncodedSource, s0: Tensor,
                beam_size: int, max_len: int,
                return_score: bool = False):
    """Length-normalized beam search.

    Candidates are ranked by cumulative log-probability during search; the
    returned hypothesis maximizes score / length among finished hypotheses
    (EOS counts toward length), falling back to the best normalized
    unfinished hypothesis if nothing finished within max_len.  All ties
    break deterministically, so the result is reproducible.
    """
    if beam_size < 1:
        raise InputError(f"beam_search: beam size must be >= 1, got {beam_size}")
    if max_len < 1:
        raise InputError(f"beam_search: max_len must be >= 1, got {max_len}")

    with ad.no_grad():
        projected = project_states(params, enc)
        live = [_Hypothesis((), 0.0, s0)]
        finished: list[tuple[float, tuple[int, ...]]] = []
        for _ in range(max_len):
            candidates = []
            for idx, hyp in enumerate(live):
                y_prev = hyp.tokens[-1] if hyp.tokens else BOS_ID
                s, context, _ = cgru_step(params, hyp.state, y_prev, enc,
                                          projected)
                log_probs = output_distribution(
                    params, ad.row(params.embedding, y_prev), s, context)
                for tok in range(params.vocab_size):
                    candidates.append(
                        (hyp.score + float(log_probs.data[tok]), idx, tok, s))
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            next_live = []
            for score, idx, tok, s in candidates[:beam_size]:
                tokens = live[idx].tokens + (tok,)
                if tok == EOS_ID:
                    finished.append((score / len(tokens), tokens[:-1]))
                else:
                    next_live.append(_Hypothesis(tokens, score, s))
            live = next_live
            if not live:
                break

        if finished:
            best = max(enumerate(finished), key=lambda e: (e[1][0], -e[0]))
            norm, tokens = best[1]
            result, done = list(tokens), True
        else:
            best = max(enumerate(live),
                       key=lambda e: (e[1].score / len(e[1].tokens), -e[0]))
            norm = best[1].score / len(best[1].tokens)
            result, done = list(best[1].tokens), False
    if return_score:
        return result, norm, done
    return result
