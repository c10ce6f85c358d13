"""Conditional GRU decoder, output layer, sequence loss, beam search."""

import itertools

import numpy as np
import pytest

import vagnmt.autodiff as ad
from vagnmt.autodiff import Tensor
from vagnmt.decoder import (DecoderParams, beam_search, cgru_step,
                            greedy_decode, output_distribution,
                            project_states, sequence_loss)
from vagnmt.encoder import EncodedSource
from vagnmt.errors import InputError
from vagnmt.text import BOS_ID, EOS_ID

from helpers import assert_grads_match, rand_tensor
from test_encoder import make_gru, zero_gru


def make_decoder(rng, vocab=6, embed=3, hidden=4, state=6, att=4, out=3,
                 scale=0.6):
    return DecoderParams(
        embedding=rand_tensor(rng, vocab, embed, scale=scale),
        gru1=make_gru(rng, embed, hidden, scale=scale),
        gru2=make_gru(rng, state, hidden, scale=scale),
        U_a=rand_tensor(rng, att, hidden, scale=scale),
        W_a=rand_tensor(rng, state, att, scale=scale),
        v_a=rand_tensor(rng, att, scale=scale),
        W_e=rand_tensor(rng, out, embed, scale=scale),
        W_d=rand_tensor(rng, out, hidden, scale=scale),
        W_c=rand_tensor(rng, out, state, scale=scale),
        b_o=rand_tensor(rng, out, scale=scale),
        W_o=rand_tensor(rng, vocab, out, scale=scale),
        b_w=rand_tensor(rng, vocab, scale=scale))


def zero_decoder(vocab=5, embed=3, hidden=4, state=6, att=4, out=3):
    z = lambda *s: Tensor(np.zeros(s))
    return DecoderParams(embedding=z(vocab, embed),
                         gru1=zero_gru(embed, hidden),
                         gru2=zero_gru(state, hidden),
                         U_a=z(att, hidden), W_a=z(state, att), v_a=z(att),
                         W_e=z(out, embed), W_d=z(out, hidden),
                         W_c=z(out, state), b_o=z(out),
                         W_o=z(vocab, out), b_w=z(vocab))


def make_source(rng, n=4, state=6):
    H = rand_tensor(rng, n, state)
    return EncodedSource(H=H, mean=ad.mean_rows(H))


def test_cgru_step_shapes_and_simplex():
    rng = np.random.default_rng(1)
    params = make_decoder(rng)
    enc = make_source(rng)
    s0 = rand_tensor(rng, 4)
    s, context, weights = cgru_step(params, s0, BOS_ID, enc)
    assert s.shape == (4,)
    assert context.shape == (6,)
    assert weights.shape == (4,)
    assert abs(weights.data.sum() - 1.0) < 1e-9
    assert np.all(weights.data >= 0)


def test_cgru_step_rejects_bad_token():
    rng = np.random.default_rng(2)
    params = make_decoder(rng, vocab=6)
    with pytest.raises(InputError):
        cgru_step(params, rand_tensor(rng, 4), 6, make_source(rng))


def test_cgru_step_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    params = make_decoder(rng)
    H = rand_tensor(rng, 3, 6)
    s0 = rand_tensor(rng, 4)
    probe = rand_tensor(rng, 4)
    leaves = [params.embedding, *params.gru1.tensors(), *params.gru2.tensors(),
              params.U_a, params.W_a, params.v_a, H, s0]

    def loss():
        enc = EncodedSource(H=H, mean=ad.mean_rows(H))
        s, _, _ = cgru_step(params, s0, 2, enc)
        return ad.dot(s, probe)

    assert_grads_match(loss, leaves)


def test_output_distribution_is_normalized():
    rng = np.random.default_rng(4)
    params = make_decoder(rng)
    log_probs = output_distribution(params, rand_tensor(rng, 3),
                                    rand_tensor(rng, 4), rand_tensor(rng, 6))
    assert abs(np.exp(log_probs.data).sum() - 1.0) < 1e-9


def test_output_distribution_uniform_under_zero_params():
    params = zero_decoder(vocab=5)
    rng = np.random.default_rng(5)
    log_probs = output_distribution(params, rand_tensor(rng, 3),
                                    rand_tensor(rng, 4), rand_tensor(rng, 6))
    np.testing.assert_allclose(log_probs.data, -np.log(5) * np.ones(5),
                               rtol=1e-12)


def test_output_distribution_gradients():
    rng = np.random.default_rng(6)
    params = make_decoder(rng)
    e_prev = rand_tensor(rng, 3)
    s = rand_tensor(rng, 4)
    context = rand_tensor(rng, 6)
    leaves = [params.W_e, params.W_d, params.W_c, params.b_o, params.W_o,
              params.b_w, e_prev, s, context]
    assert_grads_match(
        lambda: ad.pick(output_distribution(params, e_prev, s, context), 2),
        leaves)


# Under an all-zero model every step is uniform, so the loss is just
# (number of scored positions) * ln(vocab).
def test_sequence_loss_uniform_reference_values():
    params = zero_decoder(vocab=5)
    rng = np.random.default_rng(7)
    enc = make_source(rng)
    s0 = Tensor(np.zeros(4))
    one = sequence_loss(params, enc, s0, [BOS_ID, 4])
    assert abs(one.item() - np.log(5)) < 1e-9
    full = sequence_loss(params, enc, s0, [BOS_ID, 4, EOS_ID])
    assert abs(full.item() - 2 * np.log(5)) < 1e-9


def test_sequence_loss_rejects_degenerate_targets():
    rng = np.random.default_rng(8)
    params = make_decoder(rng)
    enc = make_source(rng)
    s0 = rand_tensor(rng, 4)
    with pytest.raises(InputError):
        sequence_loss(params, enc, s0, [BOS_ID])
    with pytest.raises(InputError):
        sequence_loss(params, enc, s0, [])
    with pytest.raises(InputError):
        sequence_loss(params, enc, s0, [BOS_ID, 97, EOS_ID])


def test_sequence_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    params = make_decoder(rng, vocab=5, embed=2, hidden=3, state=4, att=3, out=2)
    H = rand_tensor(rng, 3, 4)
    s0 = rand_tensor(rng, 3)
    leaves = [params.embedding, *params.gru1.tensors(), *params.gru2.tensors(),
              params.U_a, params.W_a, params.v_a, params.W_e, params.W_d,
              params.W_c, params.b_o, params.W_o, params.b_w, H, s0]

    def loss():
        enc = EncodedSource(H=H, mean=ad.mean_rows(H))
        return sequence_loss(params, enc, s0, [BOS_ID, 4, 3, EOS_ID])

    assert_grads_match(loss, leaves)


def test_greedy_equals_beam_one():
    rng = np.random.default_rng(10)
    for trial in range(10):
        params = make_decoder(rng, vocab=7, scale=1.0)
        enc = make_source(rng, n=int(rng.integers(2, 6)))
        s0 = rand_tensor(rng, 4)
        greedy = greedy_decode(params, enc, s0, max_len=12)
        beam1 = beam_search(params, enc, s0, beam_size=1, max_len=12)
        assert greedy == beam1, f"trial {trial}: {greedy} vs {beam1}"


def _exhaustive_best(params, enc, s0, max_len):
    """Enumerate every hypothesis and return the best by the same
    normalization convention the beam uses (EOS counts toward length)."""
    vocab = params.vocab_size

    def score_steps(tokens):
        s, y_prev, total = s0, BOS_ID, 0.0
        with ad.no_grad():
            projected = project_states(params, enc)
            for tok in tokens:
                s, context, _ = cgru_step(params, s, y_prev, enc, projected)
                log_probs = output_distribution(
                    params, ad.row(params.embedding, y_prev), s, context)
                total += float(log_probs.data[tok])
                y_prev = tok
        return total

    non_eos = [t for t in range(vocab) if t != EOS_ID]
    best = None
    for length in range(1, max_len + 1):
        for prefix in itertools.product(non_eos, repeat=length - 1):
            seq = (*prefix, EOS_ID)
            norm = score_steps(seq) / length
            if best is None or norm > best[0]:
                best = (norm, list(prefix))
    return best


def test_beam_matches_exhaustive_enumeration_on_toy():
    rng = np.random.default_rng(11)
    params = make_decoder(rng, vocab=4, scale=1.2)
    enc = make_source(rng, n=3)
    s0 = rand_tensor(rng, 4)
    want_norm, want_tokens = _exhaustive_best(params, enc, s0, max_len=4)
    # 256 >= 4^4 candidates per step, so nothing is ever pruned
    tokens, norm, done = beam_search(params, enc, s0, beam_size=256,
                                     max_len=4, return_score=True)
    assert done
    assert tokens == want_tokens
    assert abs(norm - want_norm) < 1e-9


def test_beam_score_monotone_in_width_on_toys():
    # Comparable scores need comparable outcomes, so the toys carry a small
    # EOS bias that lets every width finish within max_len.
    rng = np.random.default_rng(12)
    for _ in range(5):
        params = make_decoder(rng, vocab=4, scale=1.2)
        params.b_w.data[EOS_ID] += 1.5
        enc = make_source(rng, n=3)
        s0 = rand_tensor(rng, 4)
        prev = -np.inf
        for width in (1, 2, 4, 8, 32, 256):
            _, norm, done = beam_search(params, enc, s0, beam_size=width,
                                        max_len=4, return_score=True)
            assert done
            assert norm >= prev - 1e-12, f"width {width} degraded the score"
            prev = norm


def test_beam_deterministic_and_validates_args():
    rng = np.random.default_rng(13)
    params = make_decoder(rng)
    enc = make_source(rng)
    s0 = rand_tensor(rng, 4)
    assert beam_search(params, enc, s0, 3, 10) == beam_search(params, enc, s0, 3, 10)
    with pytest.raises(InputError):
        beam_search(params, enc, s0, 0, 10)
    with pytest.raises(InputError):
        beam_search(params, enc, s0, 2, 0)


def test_eos_biased_model_translates_to_empty():
    params = zero_decoder()
    params.b_w.data[EOS_ID] = 50.0
    rng = np.random.default_rng(14)
    enc = make_source(rng)
    s0 = Tensor(np.zeros(4))
    assert greedy_decode(params, enc, s0, max_len=8) == []
    assert beam_search(params, enc, s0, beam_size=4, max_len=8) == []


def test_unfinished_hypothesis_returned_at_max_len():
    params = zero_decoder(vocab=5)
    params.b_w.data[EOS_ID] = -50.0  # EOS effectively unreachable
    rng = np.random.default_rng(15)
    enc = make_source(rng)
    s0 = Tensor(np.zeros(4))
    tokens, _, done = beam_search(params, enc, s0, beam_size=2, max_len=5,
                                  return_score=True)
    assert not done
    assert len(tokens) == 5
