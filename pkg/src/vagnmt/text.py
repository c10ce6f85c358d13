"""Text pipeline: tokenization, byte-pair encoding, vocabulary mapping.

The pieces compose as: tokenize -> apply_bpe -> numericalize for input, and
ids -> subwords -> postprocess for output.  postprocess is the exact inverse
of apply_bpe followed by space-joining, so decoding round-trips.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from typing import Iterable, Sequence

from .errors import FormatError, InputError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

BPE_VERSION_LINE = "#version: vagnmt-bpe-1"
_MARKER = "@@"


def tokenize(text: str) -> list[str]:
    """Lowercase and split: punctuation becomes standalone tokens,
    everything else splits on whitespace."""
    tokens: list[str] = []
    word: list[str] = []
    for ch in text.lower():
        if ch.isspace():
            if word:
                tokens.append("".join(word))
                word.clear()
        elif unicodedata.category(ch).startswith("P"):
            if word:
                tokens.append("".join(word))
                word.clear()
            tokens.append(ch)
        else:
            word.append(ch)
    if word:
        tokens.append("".join(word))
    return tokens


class BpeModel:
    """Learned merge list plus the continuation-marker convention.

    A word is segmented by exploding it into characters and replaying the
    merges in learned order; every subword except the last carries the
    "@@" continuation marker.
    """

    def __init__(self, merges: Sequence[tuple[str, str]]):
        self.merges = [tuple(m) for m in merges]
        self._cache: dict[str, tuple[str, ...]] = {}

    def segment_word(self, word: str) -> list[str]:
        cached = self._cache.get(word)
        if cached is None:
            symbols = list(word)
            for left, right in self.merges:
                symbols = _merge_pair(symbols, left, right)
            cached = tuple(symbols)
            self._cache[word] = cached
        if len(cached) == 1:
            return [cached[0]]
        return [s + _MARKER for s in cached[:-1]] + [cached[-1]]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(BPE_VERSION_LINE + "\n")
            for left, right in self.merges:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != BPE_VERSION_LINE:
            raise FormatError(f"{path}: missing BPE version line")
        merges = []
        for i, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise FormatError(f"{path}:{i}: expected 'left right'")
            merges.append((parts[0], parts[1]))
        return cls(merges)


def _merge_pair(symbols: list[str], left: str, right: str) -> list[str]:
    # Greedy left-to-right single pass, matching how pairs were counted.
    out: list[str] = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def learn_bpe(lines: Iterable[Sequence[str]], num_merges: int) -> BpeModel:
    """Learn merges from tokenized lines.

    Each step merges the most frequent adjacent symbol pair, breaking ties
    by lexicographic order of the pair, and stops early once no pair occurs
    at least twice.
    """
    if num_merges < 0:
        raise InputError(f"num_merges must be >= 0, got {num_merges}")
    word_freq = Counter()
    for line in lines:
        word_freq.update(line)
    if not word_freq:
        raise InputError("learn_bpe: empty corpus")

    words = {w: list(w) for w in word_freq}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_counts = Counter()
        for w, symbols in words.items():
            freq = word_freq[w]
            for a, b in zip(symbols, symbols[1:]):
                pair_counts[(a, b)] += freq
        if not pair_counts:
            break
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        left, right = best[0]
        merges.append((left, right))
        for w in words:
            words[w] = _merge_pair(words[w], left, right)
    return BpeModel(merges)


def apply_bpe(model: BpeModel, tokens: Sequence[str]) -> list[str]:
    out: list[str] = []
    for token in tokens:
        out.extend(model.segment_word(token))
    return out


def postprocess(subwords: Sequence[str]) -> str:
    """Undo continuation markers and join with spaces."""
    words: list[str] = []
    current: list[str] = []
    for sw in subwords:
        if sw.endswith(_MARKER):
            current.append(sw[:-len(_MARKER)])
        else:
            current.append(sw)
            words.append("".join(current))
            current.clear()
    if current:  # dangling marker on the last subword: close the word anyway
        words.append("".join(current))
    return " ".join(words)


class Vocabulary:
    """Token/index maps with PAD, BOS, EOS, UNK pinned to indices 0..3."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise InputError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise InputError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_corpus(cls, segmented_lines: Iterable[Sequence[str]]) -> "Vocabulary":
        """All symbols of a BPE-segmented corpus, no frequency cutoff."""
        symbols = set()
        for line in segmented_lines:
            symbols.update(line)
        symbols.difference_update(RESERVED)
        return cls(list(RESERVED) + sorted(symbols))

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().splitlines()
        if len(tokens) < 4 or tuple(tokens[:4]) != RESERVED:
            raise FormatError(f"{path}: reserved header lines missing")
        return cls(tokens)


def numericalize(vocab: Vocabulary, subwords: Sequence[str]) -> list[int]:
    return [vocab.id(s) for s in subwords]


def frame_target(ids: Sequence[int]) -> list[int]:
    """Wrap target ids as BOS ... EOS, the shape sequence_loss expects."""
    return [BOS_ID, *ids, EOS_ID]
