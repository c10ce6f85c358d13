"""Translation and retrieval metrics."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .grounding import retrieve


@dataclass
class BleuReport:
    bleu: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int

    def __str__(self) -> str:
        p = "/".join(f"{x:.3f}" for x in self.precisions)
        return (f"BLEU {self.bleu:.4f} (p {p}, bp {self.brevity_penalty:.3f}, "
                f"len {self.hyp_length}/{self.ref_length})")


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: list[list[str]], references: list[list[str]],
                max_n: int = 4, smooth: bool = True) -> BleuReport:
    """Corpus-level BLEU with one reference per hypothesis.

    Clipped n-gram counts are pooled over the corpus before taking
    precisions.  With smoothing on, an order with zero matches scores
    (m+1)/(t+1) instead of zero so short corpora still produce a signal;
    an order with no n-grams at all always scores zero.
    """
    if len(hypotheses) != len(references):
        raise InputError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise InputError("need at least one hypothesis")

    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            total[n - 1] += sum(hyp_counts.values())
            matched[n - 1] += sum(min(c, ref_counts[g])
                                  for g, c in hyp_counts.items())

    precisions = []
    for m, t in zip(matched, total):
        if t == 0:
            precisions.append(0.0)
        elif m == 0 and smooth:
            precisions.append((m + 1) / (t + 1))
        else:
            precisions.append(m / t)

    if hyp_len == 0 or any(p == 0.0 for p in precisions):
        bleu = 0.0
        bp = 0.0 if hyp_len == 0 else (
            1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len))
    else:
        bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuReport(bleu=bleu, precisions=tuple(precisions),
                      brevity_penalty=bp, hyp_length=hyp_len,
                      ref_length=ref_len)


@dataclass
class RetrievalReport:
    image_to_text: dict[int, float]
    text_to_image: dict[int, float]

    def __str__(self) -> str:
        i2t = ", ".join(f"R@{k} {v:.3f}" for k, v in
                        sorted(self.image_to_text.items()))
        t2i = ", ".join(f"R@{k} {v:.3f}" for k, v in
                        sorted(self.text_to_image.items()))
        return f"image->text: {i2t}\ntext->image: {t2i}"


def report_retrieval(model, src_ids: list[list[int]], features: np.ndarray,
                     ks: tuple[int, ...] = (1, 5, 10)) -> RetrievalReport:
    """Embed every (sentence, image) pair and score retrieval both ways."""
    if len(src_ids) != features.shape[0]:
        raise InputError(
            f"{len(src_ids)} sentences vs {features.shape[0]} feature rows")
    text_emb = np.empty((len(src_ids), model.config.shared_dim))
    image_emb = np.empty_like(text_emb)
    for i, ids in enumerate(src_ids):
        text_emb[i], image_emb[i] = model.embed_pair(ids, features[i])
    ks = tuple(k for k in ks if k <= len(src_ids))
    _, i2t = retrieve(image_emb, text_emb, ks)
    _, t2i = retrieve(text_emb, image_emb, ks)
    return RetrievalReport(image_to_text=i2t, text_to_image=t2i)
