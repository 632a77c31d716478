"""Training objective: span quality minus coverage, sound-loss and supervision penalties."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from decipher.errors import ConfigError, NonFiniteError
from decipher.phonetics import mapping_backward, mapping_forward
from decipher.segmentation import chunk_backward, chunk_forward

COVERAGE_MODES = ("chars", "inscriptions")


@dataclass
class ObjectiveConfig:
    r_cov: float = 0.2
    lambda_cov: float = 10.0
    lambda_loss: float = 100.0
    lambda_sup: float = 100.0
    alpha: float = math.exp(-3.5)
    temperature: float = 0.2
    length_range: tuple = (4, 10)
    # "chars": matched / total characters; "inscriptions": matched / number of inscriptions
    coverage_mode: str = "chars"

    def __post_init__(self):
        self.length_range = tuple(self.length_range)
        if min(self.lambda_cov, self.lambda_loss, self.lambda_sup) < 0:
            raise ConfigError("penalty weights must be non-negative")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.r_cov <= 1.0:
            raise ConfigError("r_cov must lie in [0, 1]")
        if self.coverage_mode not in COVERAGE_MODES:
            raise ConfigError(f"coverage_mode must be one of {COVERAGE_MODES}")


def coverage_penalty(achieved_ratio, r_cov):
    return max(r_cov - achieved_ratio, 0.0)


def _probs(matrix):
    return matrix.probs if hasattr(matrix, "probs") else np.asarray(matrix)


def sound_loss(matrix):
    """Sum over lost characters of (incoming mapping mass - 1)^2; EPS excluded."""
    col = _probs(matrix)[:, :-1].sum(axis=0)
    return float(((col - 1.0) ** 2).sum())


def sound_loss_grad_log(probs):
    """d sound_loss / d log probs."""
    col = probs[:, :-1].sum(axis=0)
    g = np.zeros_like(probs)
    g[:, :-1] = 2.0 * (col - 1.0)[None, :] * probs[:, :-1]
    return g


@dataclass
class Batch:
    """Encoded chunks of one step plus what the coverage ratio divides by."""

    xs: list
    chunk_ids: list = None
    n_inscriptions: int = None

    def __post_init__(self):
        if self.chunk_ids is None:
            self.chunk_ids = list(range(len(self.xs)))
        if self.n_inscriptions is None:
            self.n_inscriptions = len(self.xs)

    @property
    def n_chars(self):
        return sum(len(x) for x in self.xs)


@dataclass
class ObjectiveResult:
    value: float
    quality: float
    coverage: float
    coverage_ratio: float
    omega_cov: float
    omega_loss: float
    supervision: float
    log_likelihood: float
    grads: object = None
    per_chunk: list = field(default_factory=list)


def _map(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def evaluate(batch, params, idx, vocab, lattice, config, log_a, targets=(), dropout_mask=None,
             with_grad=True, workers=1, g_loglik=0.0, data_scale=1.0):
    """Objective value on ``batch`` and, optionally, its parameter gradients.

    ``targets`` are ``(known row, lost column)`` supervision pairs.
    ``data_scale`` multiplies the summed span quality, so a mini-batch can
    stand in for the whole corpus against the mapping-level penalties.
    ``g_loglik`` adds ``g_loglik * sum log Pr(X)`` to the differentiated
    scalar (used to check marginal-likelihood gradients); it never enters
    ``value``.
    """
    if not batch.xs:
        raise ConfigError("empty batch")
    log_map, cache = mapping_forward(params, idx, config.temperature, dropout_mask)
    log_map = np.ascontiguousarray(log_map)
    if np.isnan(log_map).any():
        raise NonFiniteError("non-finite mapping matrix")

    def fwd(x):
        return chunk_forward(x, vocab, log_map, log_a, lattice, keep_backpointers=with_grad)

    states = _map(fwd, batch.xs, workers)
    for cid, st in zip(batch.chunk_ids, states):
        if not (np.isfinite(st.q[-1]) and np.isfinite(st.c[-1]) and st.a[-1] < np.inf):
            raise NonFiniteError("non-finite chunk statistics", cid)

    quality = math.fsum(st.quality for st in states)
    coverage = math.fsum(st.coverage for st in states)
    loglik = math.fsum(st.log_likelihood for st in states)
    denom = batch.n_chars if config.coverage_mode == "chars" else batch.n_inscriptions
    ratio = coverage / denom
    omega_cov = coverage_penalty(ratio, config.r_cov)
    omega_loss = sound_loss(cache.probs)
    sup = -math.fsum(log_map[k, j] for k, j in targets)
    value = (data_scale * quality - config.lambda_cov * omega_cov - config.lambda_loss * omega_loss
             - config.lambda_sup * sup)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite objective")

    grads = None
    if with_grad:
        g_cov = config.lambda_cov / denom if config.r_cov - ratio > 0 else 0.0
        shape = log_map.shape

        def bwd(st):
            g = np.zeros(shape)
            chunk_backward(st, vocab, lattice, g_loglik, data_scale, g_cov, g)
            return g

        G = np.zeros(shape)
        for g in _map(bwd, states, workers):
            G += g
        G -= config.lambda_loss * sound_loss_grad_log(cache.probs)
        for k, j in targets:
            G[k, j] += config.lambda_sup
        grads = mapping_backward(params, cache, G)
        if not (np.isfinite(grads.feature_emb).all() and np.isfinite(grads.lost_logits).all()):
            bad = next((cid for cid, st in zip(batch.chunk_ids, states)
                        if not np.isfinite(st.log_span[np.isfinite(st.log_span)]).all()), None)
            raise NonFiniteError("non-finite gradient", bad)

    per_chunk = [(st.log_likelihood, st.quality, st.coverage) for st in states]
    return ObjectiveResult(value, quality, coverage, ratio, omega_cov, omega_loss, sup, loglik,
                           grads, per_chunk)


def total_objective(batch, params, idx, vocab, lattice, config, log_a, targets=()):
    """Scalar to maximise: sum of quality minus weighted penalties."""
    return evaluate(batch, params, idx, vocab, lattice, config, log_a, targets,
                    with_grad=False).value
