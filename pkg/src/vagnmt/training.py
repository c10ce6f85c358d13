"""Joint optimization: Adam, gradient clipping, and the training loop."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .corpus import ParallelCorpus, load_split
from .errors import ConfigError, InputError, NumericError
from .evaluation import corpus_bleu
from .grounding import ranking_loss
from .model import Model, init_params
from .text import (Vocabulary, apply_bpe, learn_bpe, numericalize,
                   postprocess, tokenize)


class Adam:
    """Adam with bias correction.

    A parameter whose grad is None is skipped outright: no moment update,
    no step-count advance.  Parts of the model that never enter the graph
    therefore stay bitwise identical, and a parameter that joins late gets
    correct bias correction from its own counter.
    """

    def __init__(self, params: dict[str, Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {learning_rate}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.t = {name: 0 for name in params}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm.

    Returns the post-clip norm.  Parameters without a grad do not count.
    """
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be > 0, got {max_norm}")
    total = 0.0
    grads = [p.grad for p in params.values() if p.grad is not None]
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericError(f"gradient norm is {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
        return max_norm
    return norm


@dataclass
class StepMetrics:
    joint: float
    translation: float
    grounding: float
    grad_norm: float


def joint_step(model: Model, optimizer: Adam, batch, rng: np.random.Generator,
               clip_norm: float | None = None) -> StepMetrics:
    """One optimizer step on a batch of (src_ids, tgt_ids, feature) triples.

    The translation objective is the mean sentence loss; the grounding
    objective is the pairwise ranking loss over the whole batch, which is
    why a grounded batch needs at least two pairs.
    """
    if not batch:
        raise InputError("empty batch")
    cfg = model.config
    if model.grounded and len(batch) < 2:
        raise InputError("grounded batch needs >= 2 pairs for the ranking loss")
    if clip_norm is None:
        clip_norm = cfg.clip_norm

    optimizer.zero_grad()
    losses = []
    t_embs, v_embs = [], []
    for src_ids, tgt_ids, feature in batch:
        fw = model.forward_sentence(src_ids, tgt_ids,
                                    feature if model.grounded else None,
                                    rng=rng, training=True)
        losses.append(fw.loss)
        if model.grounded:
            t_embs.append(fw.t_emb)
            v_embs.append(fw.v_emb)
    total = losses[0]
    for loss in losses[1:]:
        total = ad.add(total, loss)
    j_t = ad.scale(total, 1.0 / len(batch))
    if model.grounded:
        j_v = ranking_loss(v_embs, t_embs, cfg.margin)
        joint = ad.add(ad.scale(j_t, cfg.alpha), ad.scale(j_v, 1.0 - cfg.alpha))
        j_v_val = j_v.item()
    else:
        joint = j_t
        j_v_val = 0.0
    j_val = joint.item()
    if not np.isfinite(j_val):
        raise NumericError(
            f"non-finite objective: J={j_val}, J_T={j_t.item()}, J_V={j_v_val}")
    ad.backward(joint)
    norm = clip_gradients(model.named_parameters(), clip_norm)
    optimizer.step()
    return StepMetrics(joint=j_val, translation=j_t.item(),
                       grounding=j_v_val, grad_norm=norm)


def make_batches(order, batch_size: int, grounded: bool) -> list[list[int]]:
    """Chunk an example ordering into batches (index lists).

    Forward passes run one sentence at a time, so batch composition only
    decides which pairs the ranking loss contrasts; callers pass a fresh
    permutation each epoch so every pair eventually meets every other.  A
    trailing singleton is merged into its neighbor when grounded because
    the ranking loss cannot score a single pair.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = [int(i) for i in order]
    batches = [order[i:i + batch_size]
               for i in range(0, len(order), batch_size)]
    if grounded and len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = batches[-2] + batches[-1]
        batches.pop()
    if grounded and len(batches) == 1 and len(batches[0]) < 2:
        raise InputError("grounded training needs at least 2 sentence pairs")
    return batches


@dataclass
class EpochStats:
    epoch: int
    joint: float
    translation: float
    grounding: float
    val_bleu: float


@dataclass
class TrainResult:
    best_val_bleu: float
    best_epoch: int
    epochs_run: int
    stopped_by: str  # "target", "patience", or "max_epochs"
    history: list[EpochStats]
    checkpoint_path: Path
    history_path: Path
    model: Model


def _numericalize_corpus(corpus: ParallelCorpus, model: Model,
                         what: str) -> list[tuple]:
    rows = []
    for i, (src, tgt) in enumerate(zip(corpus.src_lines, corpus.tgt_lines)):
        src_ids = model.src_ids_of_line(src)
        tgt_ids = model.tgt_ids_of_line(tgt)
        if not src_ids or not tgt_ids:
            raise InputError(f"{what} pair {i} is empty after tokenization")
        feat = None if corpus.features is None else corpus.features[i]
        rows.append((src_ids, tgt_ids, feat))
    return rows


def validate_bleu(model: Model, rows: list[tuple], references: list[str],
                  beam_size: int | None = None) -> float:
    """Decode every source and score against the raw target lines."""
    hyps, refs = [], []
    for (src_ids, _, feat), ref_line in zip(rows, references):
        out_ids = model.translate_ids(src_ids, feat, beam_size=beam_size)
        words = postprocess([model.tgt_vocab.token(i) for i in out_ids])
        # tokenize both sides so an external scorer sees the same tokens
        hyps.append(tokenize(words))
        refs.append(tokenize(ref_line))
    return corpus_bleu(hyps, refs, smooth=True).bleu


def write_history(path, history: list[EpochStats]) -> None:
    lines = ["epoch,J,J_T,J_V,val_bleu"]
    for row in history:
        lines.append(f"{row.epoch},{row.joint:.6f},{row.translation:.6f},"
                     f"{row.grounding:.6f},{row.val_bleu:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_model(config: TrainConfig, train_corpus: ParallelCorpus) -> Model:
    """Learn subwords and vocabularies from the training split, then
    initialize parameters from the config seed."""
    src_tokens = [tokenize(line) for line in train_corpus.src_lines]
    tgt_tokens = [tokenize(line) for line in train_corpus.tgt_lines]
    src_bpe = learn_bpe(src_tokens, config.bpe_merges)
    tgt_bpe = learn_bpe(tgt_tokens, config.bpe_merges)
    src_vocab = Vocabulary.from_corpus(apply_bpe(src_bpe, t) for t in src_tokens)
    tgt_vocab = Vocabulary.from_corpus(apply_bpe(tgt_bpe, t) for t in tgt_tokens)
    rng = np.random.default_rng([config.seed, 0])
    params = init_params(config, len(src_vocab.tokens), len(tgt_vocab.tokens),
                         rng)
    return Model(config, *params, src_bpe, tgt_bpe, src_vocab, tgt_vocab)


def train(config: TrainConfig, out_dir, on_epoch=None) -> TrainResult:
    """Full training run: subwords, vocabularies, joint optimization,
    per-epoch validation, early stopping, checkpoint and history files.

    on_epoch, if given, is called with each EpochStats as it completes.
    """
    if config.data_dir is None:
        raise ConfigError("config.data_dir is required for training")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    grounded = not config.text_only
    train_corpus = load_split(config.data_dir, "train", need_features=grounded)
    valid_corpus = load_split(config.data_dir, "valid", need_features=grounded)
    if grounded:
        if train_corpus.features is None or valid_corpus.features is None:
            raise InputError(
                f"grounded training needs feature files in {config.data_dir}")
        if config.feature_dim is None:
            config.feature_dim = train_corpus.feature_dim
        for corpus, split in ((train_corpus, "train"), (valid_corpus, "valid")):
            if corpus.feature_dim != config.feature_dim:
                raise InputError(
                    f"{split} features are {corpus.feature_dim}-dimensional, "
                    f"config says {config.feature_dim}")
    elif config.feature_dim is None:
        config.feature_dim = 1  # placeholder; text-only never reads features

    model = build_model(config, train_corpus)
    train_rows = _numericalize_corpus(train_corpus, model, "train")
    valid_rows = _numericalize_corpus(valid_corpus, model, "valid")

    optimizer = Adam(model.named_parameters(), config.learning_rate)
    rng_dropout = np.random.default_rng([config.seed, 1])
    rng_shuffle = np.random.default_rng([config.seed, 2])

    checkpoint_path = out_dir / "model.vagc"
    history_path = out_dir / "history.csv"
    history: list[EpochStats] = []
    best_bleu, best_epoch = float("-inf"), 0
    bad_epochs = 0
    step = 0
    stopped_by = "max_epochs"
    n_train = len(train_rows)

    for epoch in range(1, config.max_epochs + 1):
        sums = np.zeros(3)
        batches = make_batches(rng_shuffle.permutation(n_train),
                               config.batch_size, grounded)
        for idx in batches:
            batch = [train_rows[i] for i in idx]
            metrics = joint_step(model, optimizer, batch, rng_dropout)
            step += 1
            sums += np.array([metrics.joint, metrics.translation,
                              metrics.grounding]) * len(batch)
        bleu = validate_bleu(model, valid_rows, valid_corpus.tgt_lines,
                             beam_size=config.valid_beam)
        stats = EpochStats(epoch=epoch, joint=sums[0] / n_train,
                           translation=sums[1] / n_train,
                           grounding=sums[2] / n_train, val_bleu=bleu)
        history.append(stats)
        write_history(history_path, history)
        if on_epoch is not None:
            on_epoch(stats)

        if bleu > best_bleu:
            best_bleu, best_epoch = bleu, epoch
            bad_epochs = 0
            save_checkpoint(checkpoint_path, model, epoch=epoch, step=step,
                            best_val_bleu=best_bleu)
        else:
            bad_epochs += 1
        if config.target_bleu is not None and bleu >= config.target_bleu:
            stopped_by = "target"
            break
        if bad_epochs >= config.patience:
            stopped_by = "patience"
            break

    return TrainResult(best_val_bleu=best_bleu, best_epoch=best_epoch,
                       epochs_run=len(history), stopped_by=stopped_by,
                       history=history, checkpoint_path=checkpoint_path,
                       history_path=history_path, model=model)
