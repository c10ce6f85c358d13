"""Visual grounding: image-conditioned attention over encoder states, the
shared text/image embedding space, its pairwise ranking loss, and the
image-aware decoder initialization.

Retrieval scoring lives here too since it ranks the same embeddings the
ranking loss trains; it is pure numpy because no gradients flow through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncodedSource
from .errors import DimensionError, InputError, NumericError


@dataclass
class GroundingParams:
    """Attention, shared-space, and decoder-init transforms.

    W_h is stored pre-transposed as (state_dim, att_dim) so the per-sentence
    projection of all encoder states is a single matmul without a copy.
    """
    W_v: Tensor      # (att_dim, feat_dim)
    W_h: Tensor      # (state_dim, att_dim)
    W_t_emb: Tensor  # (shared_dim, state_dim)
    b_t_emb: Tensor  # (shared_dim,)
    W_v_emb: Tensor  # (shared_dim, feat_dim)
    b_v_emb: Tensor  # (shared_dim,)
    W_init: Tensor   # (dec_hidden, state_dim)

    def named(self) -> dict[str, Tensor]:
        return {f"grounding.{name}": getattr(self, name)
                for name in ("W_v", "W_h", "W_t_emb", "b_t_emb",
                             "W_v_emb", "b_v_emb", "W_init")}


def visual_attention(params: GroundingParams, enc: EncodedSource,
                     v: Tensor) -> tuple[Tensor, Tensor]:
    """Score each source state against the image and pool.

    z_i = tanh(W_v v) . tanh(W_h h_i), beta = softmax(z), t = sum_i beta_i h_i.
    Returns (beta, t).
    """
    if v.data.ndim != 1 or v.shape[0] != params.W_v.shape[1]:
        raise DimensionError(
            f"visual_attention: feature shape {v.shape}, "
            f"expected ({params.W_v.shape[1]},)")
    query = ad.tanh(ad.matvec(params.W_v, v))
    projected = ad.tanh(ad.matmul(enc.H, params.W_h))
    beta = ad.softmax(ad.matvec(projected, query))
    t = ad.matvec(ad.transpose(enc.H), beta)
    return beta, t


def project_shared(params: GroundingParams, t: Tensor,
                   v: Tensor) -> tuple[Tensor, Tensor]:
    """Map the attended text vector and the raw image feature into the
    shared space; tanh keeps every coordinate in [-1, 1]."""
    t_emb = ad.tanh(ad.add(ad.matvec(params.W_t_emb, t), params.b_t_emb))
    v_emb = ad.tanh(ad.add(ad.matvec(params.W_v_emb, v), params.b_v_emb))
    return t_emb, v_emb


def ranking_loss(v_embs, t_embs, margin: float) -> Tensor:
    """Bidirectional max-margin loss over in-batch negatives, summed.

    For every pair p and contrastive index k != p both hinge directions
    contribute, so a batch of B yields 2*B*(B-1) terms.
    """
    if len(v_embs) != len(t_embs):
        raise InputError(
            f"ranking_loss: {len(v_embs)} image vs {len(t_embs)} text embeddings")
    b = len(v_embs)
    if b < 2:
        raise InputError(f"ranking_loss: need at least 2 pairs, got {b}")

    sims = [[ad.cosine_similarity(v_embs[p], t_embs[k]) for k in range(b)]
            for p in range(b)]
    total = None
    for p in range(b):
        for k in range(b):
            if k == p:
                continue
            image_side = ad.relu((sims[p][k] - sims[p][p]) + margin)
            text_side = ad.relu((sims[p][k] - sims[k][k]) + margin)
            term = ad.add(image_side, text_side)
            total = term if total is None else ad.add(total, term)
    return total


def decoder_init(params: GroundingParams, t: Tensor, mean: Tensor,
                 lam: float) -> Tensor:
    """s0 = tanh(W_init (lam * t + (1 - lam) * mean)).

    lam = 0 never touches t, so the result is bitwise independent of the
    image; that is what the no-attention-init ablation relies on.
    """
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"decoder_init: lam must be in [0, 1], got {lam}")
    if lam == 0.0:
        combined = mean
    elif lam == 1.0:
        combined = t
    else:
        combined = ad.add(ad.scale(t, lam), ad.scale(mean, 1.0 - lam))
    return ad.tanh(ad.matvec(params.W_init, combined))


def retrieve(queries: np.ndarray, candidates: np.ndarray,
             ks=(1, 5, 10)) -> tuple[np.ndarray, dict[int, float]]:
    """Rank candidates for each query by descending cosine, ties broken by
    ascending candidate index.  The true pair of query i is candidate i.

    Returns (order matrix of candidate indices, {k: recall@k}).
    """
    queries = np.asarray(queries, dtype=np.float64)
    candidates = np.asarray(candidates, dtype=np.float64)
    if queries.ndim != 2 or candidates.ndim != 2:
        raise DimensionError("retrieve: need matrices of row embeddings")
    if queries.shape[0] != candidates.shape[0]:
        raise InputError(
            f"retrieve: {queries.shape[0]} queries vs "
            f"{candidates.shape[0]} candidates; true pairs need equal counts")
    qn = np.linalg.norm(queries, axis=1)
    cn = np.linalg.norm(candidates, axis=1)
    if np.any(qn == 0) or np.any(cn == 0):
        raise NumericError("retrieve: zero-norm embedding")

    sims = (queries / qn[:, None]) @ (candidates / cn[:, None]).T
    n = candidates.shape[0]
    order = np.empty((queries.shape[0], n), dtype=np.int64)
    for i in range(queries.shape[0]):
        order[i] = np.lexsort((np.arange(n), -sims[i]))

    recalls = {}
    for k in ks:
        hits = sum(1 for i in range(queries.shape[0]) if i in order[i, :k])
        recalls[int(k)] = hits / queries.shape[0]
    return order, recalls
