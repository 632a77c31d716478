"""SGD training loop, insertion-penalty annealing, restarts and gradient checks."""

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from decipher.alignment import EncodedVocab
from decipher.errors import ConfigError, NonFiniteError
from decipher.evaluation import precision_at_k
from decipher.objective import Batch, ObjectiveConfig, evaluate
from decipher.phonetics import (
    MappingMatrix,
    feature_index,
    init_params,
    mapping_forward,
)
from decipher.segmentation import Lattice, predictions_from_scores
from decipher import kernels

logger = logging.getLogger(__name__)

KNOWLEDGE = ("base", "partial", "full")
FULL_BATCH_MAX_CHUNKS = 5000
# phones with known values in the partial variant unless configured otherwise
DEFAULT_SUPERVISED_PHONES = ("k", "l", "m", "n", "p", "s", "t")


@dataclass
class TrainConfig:
    learning_rate: float = 3.0
    dropout: float = 0.5
    # insertion penalty s = -ln(alpha), linearly annealed then held
    anneal_start: float = 10.0
    anneal_end: float = 3.5
    anneal_steps: int = 2000
    extra_steps: int = 1000
    alpha_mode: str = "penalty"
    restarts: int = 5
    seed: int = 0
    # inscriptions per step; 0 selects the full corpus for small corpora
    batch_size: int = 0
    dim: int = 100
    init_scale: float = 1.0
    logit_scale: float = 1.0
    max_chunk_len: int = 100
    # "chunks" divides the ascent step by the number of trainable chunks in the corpus
    grad_norm: str = "chunks"
    # cap on the Euclidean length of one update; 0 disables
    max_step: float = 5.0
    workers: int = 1
    knowledge: str = "base"
    supervised_phones: tuple = DEFAULT_SUPERVISED_PHONES

    def __post_init__(self):
        self.supervised_phones = tuple(self.supervised_phones)
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.anneal_steps < 0 or self.extra_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.alpha_mode not in ("penalty", "literal"):
            raise ConfigError("alpha_mode must be 'penalty' or 'literal'")
        if self.grad_norm not in ("chunks", "none"):
            raise ConfigError("grad_norm must be 'chunks' or 'none'")
        if self.knowledge not in KNOWLEDGE:
            raise ConfigError(f"knowledge must be one of {KNOWLEDGE}")
        if self.max_step < 0:
            raise ConfigError("max_step must be non-negative")
        if self.dim < 1 or self.batch_size < 0 or self.workers < 1:
            raise ConfigError("dim, batch_size and workers must be positive")

    @property
    def steps(self):
        return self.anneal_steps + self.extra_steps

    @property
    def schedule(self):
        return (self.anneal_start, self.anneal_end, self.anneal_steps)


def anneal_log_alpha(step, start=10.0, end=3.5, steps=2000, literal=False):
    """``log alpha`` at ``step``; penalty ``s`` interpolates linearly, then holds."""
    if step < 0:
        raise ConfigError("step must be non-negative")
    frac = 1.0 if steps <= 0 else min(step / steps, 1.0)
    s = start + (end - start) * frac
    return s if literal else -s


def anneal_alpha(step, start=10.0, end=3.5, steps=2000, literal=False):
    return math.exp(anneal_log_alpha(step, start, end, steps, literal))


def supervision_targets(knowledge, truth, phones=()):
    """Phone -> lost-char supervision for the base/partial/full variants."""
    if knowledge == "base":
        return {}
    if knowledge == "full":
        return dict(truth)
    missing = [p for p in phones if p not in truth]
    if missing:
        raise ConfigError(f"no ground-truth value for supervised phones {missing}")
    return {p: truth[p] for p in phones}


@dataclass
class StepMetrics:
    step: int
    objective: float
    quality: float
    coverage_ratio: float
    omega_loss: float
    supervision: float
    alpha: float

    def row(self):
        return (self.step, self.objective, self.coverage_ratio, self.omega_loss, self.alpha)


def train_step(batch, params, idx, vocab, lattice, config, learning_rate, log_a, targets=(),
               dropout_mask=None, workers=1, data_scale=1.0, max_step=0.0):
    """One gradient-ascent step; returns ``(new_params, ObjectiveResult)``.

    With ``max_step > 0`` an update longer than ``max_step`` is shortened to
    that length, keeping its direction.
    """
    res = evaluate(batch, params, idx, vocab, lattice, config, log_a, targets, dropout_mask,
                   with_grad=True, workers=workers, data_scale=data_scale)
    new = params.copy()
    if learning_rate:
        g = res.grads
        step = learning_rate
        if max_step:
            norm = learning_rate * math.sqrt(float((g.feature_emb ** 2).sum() + (g.lost_logits ** 2).sum()))
            if norm > max_step:
                step = learning_rate * max_step / norm
        new.feature_emb += step * g.feature_emb
        new.lost_logits += step * g.lost_logits
    return new, res


@dataclass
class RunReport:
    seed: int
    schedule: tuple
    trace: list = field(default_factory=list)
    params: object = None
    final_objective: float = float("nan")
    p_at_k: dict = field(default_factory=dict)
    selection_value: float = float("nan")
    error: str = ""
    seconds: float = 0.0

    @property
    def ok(self):
        return not self.error


class Trainer:
    """Holds the encoded corpus, vocabulary and RNG streams of one run."""

    def __init__(self, chunks, vocab, table, known, lost, objective=None, config=None,
                 targets=None, params=None):
        self.objective = objective or ObjectiveConfig()
        self.config = config or TrainConfig()
        self.table = table
        self.known = tuple(known)
        self.lost = tuple(lost)
        self.stems = tuple(vocab)
        init_rng, self.drop_rng, self.batch_rng = (
            np.random.default_rng(s) for s in np.random.SeedSequence(self.config.seed).spawn(3))
        if params is None:
            params = init_params(table, self.known, self.lost, self.config.dim, init_rng,
                                 self.config.init_scale, self.config.logit_scale,
                                 self.config.dropout)
        self.params = params
        self.idx = feature_index(params, table)
        self.vocab = EncodedVocab.build(self.stems, self.known)
        self.lattice = Lattice.build(self.objective.length_range, n_lost=len(self.lost))
        lost_index = {c: i for i, c in enumerate(self.lost)}
        self.chunks = list(chunks)
        self.encoded = [np.array([lost_index[c] for c in ch.chars], dtype=np.int32)
                        for ch in self.chunks]
        known_index = {c: i for i, c in enumerate(self.known)}
        self.targets = tuple((known_index[k], lost_index[v]) for k, v in (targets or {}).items())
        by_ins = {}
        for i, ch in enumerate(self.chunks):
            by_ins.setdefault(ch.inscription_id, []).append(i)
        self.inscriptions = list(by_ins.values())
        self.n_train_chunks = max(1, sum(len(x) <= self.config.max_chunk_len for x in self.encoded))
        self.step_count = 0
        self._order = []
        n_long = sum(len(x) > self.config.max_chunk_len for x in self.encoded)
        if n_long:
            logger.warning("skipping %d chunks longer than %d during training", n_long,
                           self.config.max_chunk_len)

    def log_alpha(self, step=None):
        step = self.step_count if step is None else step
        c = self.config
        return anneal_log_alpha(step, c.anneal_start, c.anneal_end, c.anneal_steps,
                                c.alpha_mode == "literal")

    def _batch_inscriptions(self):
        bs = self.config.batch_size
        if bs == 0 and len(self.chunks) <= FULL_BATCH_MAX_CHUNKS:
            return self.inscriptions
        bs = bs or 64
        if len(self._order) < bs:
            self._order.extend(self.batch_rng.permutation(len(self.inscriptions)).tolist())
        picked, self._order = self._order[:bs], self._order[bs:]
        return [self.inscriptions[i] for i in picked]

    def next_batch(self):
        groups = self._batch_inscriptions()
        ids = [i for g in groups for i in g if len(self.encoded[i]) <= self.config.max_chunk_len]
        return Batch([self.encoded[i] for i in ids], ids, len(groups))

    def dropout_mask(self):
        p = self.config.dropout
        if p <= 0:
            return None
        shape = (len(self.known), self.idx.shape[1] * self.params.dim)
        return (self.drop_rng.random(shape) >= p) / (1.0 - p)

    def step(self):
        batch = self.next_batch()
        mask = self.dropout_mask()
        log_a = self.log_alpha()
        lr = self.config.learning_rate
        if self.config.grad_norm == "chunks":
            lr /= self.n_train_chunks
        scale = len(self.inscriptions) / batch.n_inscriptions
        try:
            self.params, res = train_step(batch, self.params, self.idx, self.vocab, self.lattice,
                                          self.objective, lr, log_a, self.targets, mask,
                                          self.config.workers, scale, self.config.max_step)
        except NonFiniteError as exc:
            if exc.chunk_id is not None and isinstance(exc.chunk_id, int):
                ch = self.chunks[exc.chunk_id]
                exc = NonFiniteError(str(exc), f"{ch.inscription_id}@{ch.offset}")
            raise exc
        m = StepMetrics(self.step_count, res.value, res.quality, res.coverage_ratio,
                        res.omega_loss, res.supervision, math.exp(log_a))
        self.step_count += 1
        return m

    def mapping(self):
        log_probs, cache = mapping_forward(self.params, self.idx, self.objective.temperature)
        return MappingMatrix(cache.probs, self.objective.temperature, self.known, self.lost,
                             log_probs)

    def full_objective(self):
        """Objective over every trainable chunk, without dropout, at the current alpha."""
        ids = [i for i, x in enumerate(self.encoded) if len(x) <= self.config.max_chunk_len]
        batch = Batch([self.encoded[i] for i in ids], ids, len(self.inscriptions))
        return evaluate(batch, self.params, self.idx, self.vocab, self.lattice, self.objective,
                        self.log_alpha(), self.targets, with_grad=False)

    def predict(self, k=10, chunks=None):
        """Top-``k`` span predictions for ``chunks`` (default: the training chunks)."""
        M = self.mapping()
        log_a = self.log_alpha()
        lost_index = M.lost_index
        out = []
        for ch in (self.chunks if chunks is None else chunks):
            x = np.array([lost_index[c] for c in ch.chars], dtype=np.int32)
            V, _ = kernels.align_chunk(x, self.vocab.phones, self.vocab.offsets, M.log_probs, log_a,
                                       self.lattice.min_len, self.lattice.max_len, False)
            out.extend(predictions_from_scores(ch, V, self.lattice, self.stems, k))
        return out

    def train(self, steps=None, log_every=0, on_step=None):
        steps = self.config.steps if steps is None else steps
        trace = []
        for _ in range(steps):
            m = self.step()
            trace.append(m)
            if on_step is not None:
                on_step(self, m)
            if log_every and m.step % log_every == 0:
                logger.info("step %d obj %.4f cov %.3f loss %.4f alpha %.3g", m.step, m.objective,
                            m.coverage_ratio, m.omega_loss, m.alpha)
        return trace


def run_experiment(make_trainer, seeds, schedules=None, gold=None, ks=(1, 10), select_k=10):
    """Train every (seed, schedule) pair and pick the best run.

    ``make_trainer(seed, schedule)`` returns a fresh :class:`Trainer`.  The
    best run maximises P@``select_k`` when ``gold`` is given, otherwise the
    final full-corpus objective.  Runs failing with a numeric error are
    logged and skipped.  Returns ``(best, reports)``.
    """
    schedules = list(schedules or [None])
    reports = []
    for schedule in schedules:
        for seed in seeds:
            t0 = time.perf_counter()
            trainer = make_trainer(seed, schedule)
            rep = RunReport(seed, trainer.config.schedule)
            try:
                rep.trace = trainer.train()
                rep.final_objective = trainer.full_objective().value
                if gold:
                    preds = trainer.predict(k=max(ks))
                    rep.p_at_k = {k: precision_at_k(preds, gold, k) for k in ks}
                rep.params = trainer.params
            except NonFiniteError as exc:
                logger.error("run seed=%s schedule=%s failed: %s", seed, schedule, exc)
                rep.error = str(exc)
            rep.selection_value = rep.p_at_k.get(select_k, rep.final_objective) if gold else rep.final_objective
            rep.seconds = time.perf_counter() - t0
            reports.append(rep)
    ok = [r for r in reports if r.ok]
    if not ok:
        raise NonFiniteError("every run failed")
    best = max(ok, key=lambda r: r.selection_value)
    return best, reports


@dataclass
class GradCheckReport:
    max_rel_error: float
    coords: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray

    def as_dict(self):
        return {"max_rel_error": self.max_rel_error, "n_coords": int(self.coords.size)}


def relative_error(a, n, floor=1e-6):
    """``|a - n| / max(|a|, |n|, floor)``; both tiny gives 0."""
    a = np.asarray(a, float)
    n = np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(value_and_grad, x0, eps=1e-4, n_coords=50, rng=None, floor=1e-6):
    """Compare an analytic gradient with central differences on random coordinates.

    ``value_and_grad(x)`` returns ``(value, grad)`` for a flat vector ``x``.
    The denominator floor is ``floor * max(1, |f(x0)|)``: differencing a large
    objective leaves roundoff of order ``ulp(f) / eps`` on coordinates whose
    true derivative is zero.
    """
    rng = np.random.default_rng(rng)
    x0 = np.array(x0, dtype=float)
    f0, g = value_and_grad(x0.copy())
    floor = floor * max(1.0, abs(float(f0)))
    g = np.asarray(g, float)
    n = min(n_coords, x0.size)
    coords = np.sort(rng.choice(x0.size, size=n, replace=False))
    num = np.empty(n)
    for j, c in enumerate(coords):
        x = x0.copy()
        x[c] += eps
        fp = value_and_grad(x)[0]
        x[c] = x0[c] - eps
        fm = value_and_grad(x)[0]
        num[j] = (fp - fm) / (2 * eps)
    ana = g[coords]
    rel = relative_error(ana, num, floor)
    return GradCheckReport(float(rel.max(initial=0.0)), coords, ana, num, rel)


def objective_value_and_grad(trainer, batch=None, log_a=None):
    """Flat-vector view of the no-dropout objective for :func:`gradient_check`."""
    batch = batch or Batch(trainer.encoded, list(range(len(trainer.encoded))), len(trainer.inscriptions))
    log_a = trainer.log_alpha() if log_a is None else log_a
    params = trainer.params.copy()

    def fn(vec):
        params.set_flat(vec)
        res = evaluate(batch, params, trainer.idx, trainer.vocab, trainer.lattice,
                       trainer.objective, log_a, trainer.targets, with_grad=True)
        return res.value, res.grads.flat()

    return fn, trainer.params.flat()


def config_dict(cfg):
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
