"""Word-boundary dynamic programs over undersegmented chunks.

A chunk is explained by a sparse tag sequence: each unmatched character is
tagged ``O`` and drawn uniformly (``p0``); a matched span of length ``l``
is tagged ``E_l`` at its end and drawn from the span likelihood of the
alignment module.  This module computes the marginal likelihood, the
posterior expectations of span quality and coverage, their gradients, and
the Viterbi decode used for predictions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from decipher import kernels
from decipher.alignment import EncodedVocab, log_alpha, rank_stems
from decipher.errors import InvalidInput, InvalidK


@dataclass(frozen=True)
class Tag:
    kind: str  # "O" or "E"
    length: int = 1

    def __str__(self):
        return "O" if self.kind == "O" else f"E{self.length}"


@dataclass(frozen=True)
class Chunk:
    chars: tuple
    inscription_id: str = ""
    offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "chars", tuple(self.chars))
        if not self.chars:
            raise InvalidInput("chunk must be non-empty")
        if any(c.isspace() for c in self.chars):
            raise InvalidInput("chunk contains whitespace")

    def __len__(self):
        return len(self.chars)


@dataclass(frozen=True)
class SpanPrediction:
    chunk: Chunk
    start: int  # chunk-relative, half-open
    end: int
    stem: object
    confidence: float
    rank: int = 1

    @property
    def abs_start(self):
        return self.chunk.offset + self.start

    @property
    def abs_end(self):
        return self.chunk.offset + self.end

    @property
    def surface(self):
        return "".join(self.chunk.chars[self.start:self.end])


@dataclass
class Lattice:
    """Tag-lattice settings: span length range, tag prior and ``p0``."""

    min_len: int
    max_len: int
    log_prior: np.ndarray = None
    log_p0: float = None

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise InvalidInput(f"bad span length range [{self.min_len}, {self.max_len}]")
        if self.log_prior is None:
            self.log_prior = np.full(self.n_lengths + 1, -math.log(self.n_lengths + 1))
        else:
            self.log_prior = np.asarray(self.log_prior, dtype=float)
            if self.log_prior.shape != (self.n_lengths + 1,):
                raise InvalidInput("tag prior needs one entry for O and one per span length")

    @property
    def n_lengths(self):
        return self.max_len - self.min_len + 1

    @classmethod
    def build(cls, length_range, prior=None, p0=None, n_lost=None):
        """``prior`` is a probability vector ``[Pr(O), Pr(E_m), ..., Pr(E_M)]``."""
        m, M = length_range
        log_prior = None
        if prior is not None:
            with np.errstate(divide="ignore"):
                log_prior = np.log(np.asarray(prior, dtype=float))
        if p0 is None:
            p0 = 1.0 / n_lost
        with np.errstate(divide="ignore"):
            return cls(m, M, log_prior, float(np.log(p0)))


def _stem_logsumexp(V):
    n, nstems, nl = V.shape
    if nstems == 0:
        return np.full((n, nl), -np.inf), np.zeros_like(V)
    mx = V.max(axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(V - safe[:, None, :])
        tot = e.sum(axis=1)
    with np.errstate(divide="ignore"):
        lse = np.where(tot > 0, safe + np.log(np.where(tot > 0, tot, 1.0)), -np.inf)
    weights = np.where(tot[:, None, :] > 0, e / np.where(tot > 0, tot, 1.0)[:, None, :], 0.0)
    return lse, weights


@dataclass
class ChunkState:
    """Forward quantities for one chunk, kept for the backward pass."""

    x: np.ndarray
    V: np.ndarray
    bp: np.ndarray
    log_span: np.ndarray
    stem_weights: np.ndarray
    a: np.ndarray
    q: np.ndarray
    c: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def log_likelihood(self):
        return float(self.a[-1])

    @property
    def quality(self):
        return float(self.q[-1])

    @property
    def coverage(self):
        return float(self.c[-1])


def chunk_forward(x, vocab, log_map, log_a, lattice, keep_backpointers=True):
    """Run the alignment and boundary DPs for an encoded chunk ``x``."""
    V, bp = kernels.align_chunk(x, vocab.phones, vocab.offsets, log_map, log_a,
                                lattice.min_len, lattice.max_len, keep_backpointers)
    lse, weights = _stem_logsumexp(V)
    log_span = lse - math.log(len(vocab)) if len(vocab) else lse
    log_span = np.ascontiguousarray(log_span)
    a, q, c = kernels.segment_forward(log_span, lattice.log_prior, lattice.log_p0, lattice.min_len)
    return ChunkState(x, V, bp, log_span, weights, a, q, c)


def chunk_backward(state, vocab, lattice, g_loglik, g_quality, g_coverage, grad_log_map):
    """Accumulate d(objective)/d(log mapping) into ``grad_log_map``."""
    g_span = kernels.segment_backward(state.log_span, lattice.log_prior, lattice.log_p0,
                                      lattice.min_len, state.a, state.q, state.c,
                                      g_loglik, g_quality, g_coverage)
    dV = np.ascontiguousarray(state.stem_weights * g_span[:, None, :])
    kernels.align_backward(state.x, vocab.phones, vocab.offsets, state.bp, dV,
                           lattice.min_len, grad_log_map)


def _prepare(chunk, vocab, M, alpha, prior, p0, length_range):
    lattice = Lattice.build(length_range, prior, p0, n_lost=len(M.lost))
    enc = vocab if isinstance(vocab, EncodedVocab) else EncodedVocab.build(vocab, M.known)
    return enc, lattice, M.encode_lost(chunk.chars), log_alpha(alpha)


def _forward(chunk, vocab, M, alpha, prior, p0, length_range):
    enc, lattice, x, la = _prepare(chunk, vocab, M, alpha, prior, p0, length_range)
    return chunk_forward(x, enc, M.log_probs, la, lattice, keep_backpointers=False)


def span_likelihood_table(chunk, vocab, M, alpha, length_range=(4, 10)):
    """``T[i, l - m]``: span likelihood of ``chunk[i:i+l]`` (0 past the chunk end)."""
    return np.exp(_forward(chunk, vocab, M, alpha, None, None, length_range).log_span)


def marginal_log_likelihood(chunk, vocab, M, alpha, prior=None, p0=None, length_range=(4, 10)):
    """``log Pr(X)`` summed over all tag sequences."""
    return _forward(chunk, vocab, M, alpha, prior, p0, length_range).log_likelihood


def expected_quality(chunk, vocab, M, alpha, prior=None, p0=None, length_range=(4, 10)):
    """Posterior expectation of the summed ``Pr(x_z | z) ** (1 / |x_z|)`` over matched spans."""
    return _forward(chunk, vocab, M, alpha, prior, p0, length_range).quality


def expected_coverage(chunk, vocab, M, alpha, prior=None, p0=None, length_range=(4, 10)):
    """Posterior expected number of characters inside matched spans."""
    return _forward(chunk, vocab, M, alpha, prior, p0, length_range).coverage


@dataclass
class Segmentation:
    tags: list
    spans: list  # (start, end, best stem index)
    log_score: float


TIE_RTOL = 1e-12


def viterbi_from_scores(V, lattice, n_stems):
    """Best tag sequence when each span scores by its best single stem.

    Ties go to the longest tag at the earliest position (``O`` last): a
    suffix DP followed by a greedy left-to-right read-out.
    """
    n = V.shape[0]
    if n_stems:
        best_stem = V.argmax(axis=1)
        best = V.max(axis=1) - math.log(n_stems)
    else:
        best_stem = np.zeros((n, lattice.n_lengths), dtype=np.int64)
        best = np.full((n, lattice.n_lengths), -np.inf)
    log_o = lattice.log_prior[0] + lattice.log_p0
    suffix = np.full(n + 1, -np.inf)
    choice = np.zeros(n + 1, dtype=np.int64)  # 0 = O, otherwise span length
    suffix[n] = 0.0
    for i in range(n - 1, -1, -1):
        # candidates in preference order: longest span first, O last
        cands = [(l, lattice.log_prior[1 + l - lattice.min_len] + best[i, l - lattice.min_len] + suffix[i + l])
                 for l in range(min(lattice.max_len, n - i), lattice.min_len - 1, -1)]
        cands.append((0, log_o + suffix[i + 1]))
        top = max(t for _, t in cands)
        suffix[i] = top
        if top > -np.inf:
            # scores equal up to rounding count as ties
            tol = TIE_RTOL * max(1.0, abs(top))
            choice[i] = next(l for l, t in cands if t >= top - tol)
    tags, spans = [], []
    i = 0
    while i < n:
        l = int(choice[i])
        if l == 0:
            tags.append(Tag("O"))
            i += 1
        else:
            tags.append(Tag("E", l))
            spans.append((i, i + l, int(best_stem[i, l - lattice.min_len])))
            i += l
    return Segmentation(tags, spans, float(suffix[0]))


def viterbi_segmentation(chunk, vocab, M, alpha, prior=None, p0=None, length_range=(4, 10)):
    enc, lattice, x, la = _prepare(chunk, vocab, M, alpha, prior, p0, length_range)
    V, _ = kernels.align_chunk(x, enc.phones, enc.offsets, M.log_probs, la,
                               lattice.min_len, lattice.max_len, False)
    return viterbi_from_scores(V, lattice, len(enc))


def predictions_from_scores(chunk, V, lattice, stems, k):
    seg = viterbi_from_scores(V, lattice, len(stems))
    out = []
    for start, end, _ in seg.spans:
        l = end - start
        ranked = rank_stems(V[start, :, l - lattice.min_len], stems, l, k)
        for rank, (stem, conf) in enumerate(ranked, start=1):
            out.append(SpanPrediction(chunk, start, end, stem, conf, rank))
    return out


def extract_predictions(chunk, vocab, M, alpha, k=10, prior=None, p0=None, length_range=(4, 10)):
    """Top-``k`` stems for every matched span of the Viterbi decode."""
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    enc, lattice, x, la = _prepare(chunk, vocab, M, alpha, prior, p0, length_range)
    V, _ = kernels.align_chunk(x, enc.phones, enc.offsets, M.log_probs, la,
                               lattice.min_len, lattice.max_len, False)
    return predictions_from_scores(chunk, V, lattice, enc.stems, k)
