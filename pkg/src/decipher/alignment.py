"""Span-to-stem likelihoods over the monotonic edit-distance lattice.

The likelihood of a lost span ``x`` given a known stem ``y`` is the best
single alignment: every stem phone is substituted (one character),
deleted (none) or inserted (two adjacent characters, paying ``alpha``),
and the aligned text positions must cover ``x`` left to right.
"""

import math
from dataclasses import dataclass

import numpy as np

from decipher import kernels
from decipher.errors import (
    EmptyVocabulary,
    InvalidInput,
    InvalidK,
    MissingPhone,
    SpanLengthOutOfRange,
)

SUBSTITUTE, DELETE, INSERT = "substitute", "delete", "insert"
_OP_KIND = {1: SUBSTITUTE, 2: DELETE, 3: INSERT}
_OP_WIDTH = {SUBSTITUTE: 1, DELETE: 0, INSERT: 2}


@dataclass(frozen=True)
class Stem:
    phones: tuple
    surface: str = ""

    def __post_init__(self):
        object.__setattr__(self, "phones", tuple(self.phones))
        if not self.phones:
            raise InvalidInput("stem must have at least one phone")
        if not self.surface:
            object.__setattr__(self, "surface", "".join(self.phones))

    def __len__(self):
        return len(self.phones)


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    stem_pos: int
    text_positions: tuple = ()

    def __post_init__(self):
        if len(self.text_positions) != _OP_WIDTH[self.kind]:
            raise InvalidInput(f"{self.kind} covers {_OP_WIDTH[self.kind]} positions")
        if self.kind == INSERT and self.text_positions[1] != self.text_positions[0] + 1:
            raise InvalidInput("insertion positions must be adjacent")


@dataclass(frozen=True)
class Alignment:
    ops: tuple

    def is_valid(self, text_len, stem_len):
        """One op per stem position, in order, covering ``range(text_len)`` exactly once."""
        if [op.stem_pos for op in self.ops] != list(range(stem_len)):
            return False
        positions = [p for op in self.ops for p in op.text_positions]
        return positions == list(range(text_len))

    def score(self, x_ids, y_ids, log_map, log_alpha):
        eps = log_map.shape[1] - 1
        total = 0.0
        for op in self.ops:
            row = log_map[y_ids[op.stem_pos]]
            if op.kind == DELETE:
                total += row[eps]
            elif op.kind == SUBSTITUTE:
                total += row[x_ids[op.text_positions[0]]]
            else:
                a, b = op.text_positions
                total += row[x_ids[a]] + log_alpha + row[x_ids[b]]
        return total


@dataclass
class EncodedVocab:
    """Stems flattened into phone-id arrays for the kernels."""

    stems: tuple
    phones: np.ndarray
    offsets: np.ndarray

    @classmethod
    def build(cls, stems, known):
        index = {p: i for i, p in enumerate(known)}
        flat = []
        offsets = [0]
        for stem in stems:
            try:
                flat.extend(index[p] for p in stem.phones)
            except KeyError as exc:
                raise MissingPhone(f"stem {stem.surface!r} uses unknown phone {exc.args[0]!r}") from None
            offsets.append(len(flat))
        return cls(tuple(stems), np.asarray(flat, dtype=np.int32), np.asarray(offsets, dtype=np.int64))

    def __len__(self):
        return len(self.stems)

    def ids(self, i):
        return self.phones[self.offsets[i]:self.offsets[i + 1]]


def log_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInput(f"alpha must lie in [0, 1], got {alpha}")
    return math.log(alpha) if alpha > 0 else -math.inf


def _encode(x, y, M):
    if len(x) == 0 or len(y) == 0:
        raise InvalidInput("alignment needs a non-empty span and stem")
    return M.encode_lost(x), EncodedVocab.build([y], M.known)


def traceback(bp, y_len, text_len):
    """Rebuild the op sequence ending in lattice cell ``(y_len, text_len)``."""
    ops = []
    tau, i = y_len, text_len
    while tau > 0:
        kind = _OP_KIND.get(int(bp[tau, i]))
        if kind is None:
            raise InvalidInput("no valid alignment to trace back")
        width = _OP_WIDTH[kind]
        ops.append(AlignmentOp(kind, tau - 1, tuple(range(i - width, i))))
        i -= width
        tau -= 1
    return Alignment(tuple(reversed(ops)))


def align_viterbi(x, y, M, alpha):
    """Best alignment of span ``x`` to stem ``y``.

    Returns ``(log_prob, alignment)``; ``(-inf, None)`` when no valid
    alignment exists.
    """
    x_ids, enc = _encode(x, y, M)
    n = len(x_ids)
    V, bp = kernels.align_chunk(x_ids, enc.phones, enc.offsets, M.log_probs, log_alpha(alpha), n, n)
    score = float(V[0, 0, 0])
    if score == -math.inf:
        return score, None
    return score, traceback(bp[0, 0], len(y), n)


def stem_scores(x, vocab, M, alpha):
    """Per-stem best-alignment log-probabilities for span ``x``."""
    if len(x) == 0:
        raise InvalidInput("empty span")
    if len(vocab) == 0:
        raise EmptyVocabulary("vocabulary is empty")
    enc = vocab if isinstance(vocab, EncodedVocab) else EncodedVocab.build(vocab, M.known)
    x_ids = M.encode_lost(x)
    n = len(x_ids)
    V, _ = kernels.align_chunk(x_ids, enc.phones, enc.offsets, M.log_probs, log_alpha(alpha),
                               n, n, False)
    return V[0, :, 0]


def span_likelihood(x, vocab, M, alpha, length_range):
    """Uniform-prior average over stems of the best-alignment probability."""
    lo, hi = length_range
    if not lo <= len(x) <= hi:
        raise SpanLengthOutOfRange(f"span length {len(x)} outside [{lo}, {hi}]")
    scores = stem_scores(x, vocab, M, alpha)
    return float(np.exp(scores).mean())


def align_topk_stems(x, vocab, M, alpha, k):
    """Top ``k`` stems by length-normalised alignment probability.

    Stems without a valid alignment are dropped; ties keep vocabulary order.
    """
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    stems = vocab.stems if isinstance(vocab, EncodedVocab) else tuple(vocab)
    scores = stem_scores(x, vocab, M, alpha)
    return rank_stems(scores, stems, len(x), k)


def rank_stems(scores, stems, span_len, k):
    order = np.argsort(-scores, kind="stable")
    out = []
    for i in order[:k]:
        if scores[i] == -math.inf:
            break
        out.append((stems[i], float(math.exp(scores[i] / span_len))))
    return out
