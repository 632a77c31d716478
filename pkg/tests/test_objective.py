import math

import numpy as np
import pytest

from decipher.alignment import EncodedVocab, Stem
from decipher.errors import ConfigError, NonFiniteError
from decipher.objective import (
    Batch,
    ObjectiveConfig,
    coverage_penalty,
    evaluate,
    sound_loss,
    total_objective,
)
from decipher.phonetics import MappingMatrix, mapping_forward, mapping_supervision_loss
from decipher.segmentation import Chunk, expected_coverage, expected_quality
from decipher.training import gradient_check

from helpers import toy_problem


class TestCoveragePenalty:
    def test_inactive(self):
        assert coverage_penalty(0.5, 0.3) == 0.0

    def test_zero_coverage(self):
        assert coverage_penalty(0.0, 0.3) == 0.3

    def test_hand_value(self):
        assert coverage_penalty(0.1, 0.25) == pytest.approx(0.15, abs=1e-15)


class TestSoundLoss:
    def test_permutation_like(self):
        probs = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
        assert sound_loss(probs) == 0.0

    def test_uniform_hand_value(self):
        probs = np.full((2, 3), 1 / 3)
        assert sound_loss(probs) == pytest.approx(2 / 9, abs=1e-15)
        assert round(sound_loss(probs), 4) == 0.2222

    def test_doubling_known_doubles_column_sums(self):
        probs = np.full((2, 3), 1 / 3)
        col = probs[:, :-1].sum(axis=0)
        col2 = np.vstack([probs, probs])[:, :-1].sum(axis=0)
        assert np.allclose(col2, 2 * col)
        assert sound_loss(np.vstack([probs, probs])) == pytest.approx(2 * (4 / 3 - 1) ** 2)

    def test_zero_iff_columns_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            probs = rng.dirichlet(np.ones(4), size=3)
            col = probs[:, :-1].sum(axis=0)
            assert (sound_loss(probs) == 0.0) == bool(np.all(col == 1.0))
            assert sound_loss(probs) > 0

    def test_accepts_matrix(self):
        M = MappingMatrix.from_probs(np.full((2, 3), 1 / 3), ("p", "q"), ("A", "B"))
        assert sound_loss(M) == sound_loss(M.probs)


def _cfg(**kw):
    base = dict(r_cov=0.2, lambda_cov=10.0, lambda_loss=100.0, lambda_sup=100.0, temperature=0.7,
                length_range=(1, 3))
    base.update(kw)
    return ObjectiveConfig(**base)


def test_zero_lambdas_give_sum_of_quality():
    params, idx, vocab, lattice, batch, *_ = toy_problem(1)
    cfg = _cfg(lambda_cov=0, lambda_loss=0, lambda_sup=0)
    res = evaluate(batch, params, idx, vocab, lattice, cfg, math.log(0.3), targets=[(0, 1)], with_grad=False)
    assert res.value == res.quality
    assert res.quality == pytest.approx(sum(q for _, q, _ in res.per_chunk))


def test_no_active_penalty_gives_quality_exactly():
    params, idx, vocab, lattice, batch, *_ = toy_problem(2)
    cfg = _cfg(r_cov=0.0)
    res = evaluate(batch, params, idx, vocab, lattice, cfg, math.log(0.3), with_grad=False)
    assert res.omega_cov == 0.0 and res.supervision == 0.0
    assert res.value == res.quality - 100.0 * res.omega_loss


def test_two_chunk_batch_matches_independent_terms():
    params, idx, vocab, lattice, batch, table, known, lost = toy_problem(3)
    cfg = _cfg(r_cov=0.9)
    log_a = math.log(0.25)
    targets = [(0, 2), (2, 0)]
    res = evaluate(batch, params, idx, vocab, lattice, cfg, log_a, targets, with_grad=False)

    log_probs, cache = mapping_forward(params, idx, cfg.temperature)
    M = MappingMatrix(cache.probs, cfg.temperature, known, lost, log_probs)
    chunks = [Chunk(tuple(lost[i] for i in x)) for x in batch.xs]
    q = sum(expected_quality(c, vocab.stems, M, 0.25, length_range=(1, 3)) for c in chunks)
    cov = sum(expected_coverage(c, vocab.stems, M, 0.25, length_range=(1, 3)) for c in chunks)
    ratio = cov / sum(len(c) for c in chunks)
    sup = mapping_supervision_loss(M, {known[0]: lost[2], known[2]: lost[0]})
    want = q - 10.0 * coverage_penalty(ratio, 0.9) - 100.0 * sound_loss(M) - 100.0 * sup
    assert res.value == pytest.approx(want, rel=1e-12, abs=1e-12)
    assert total_objective(batch, params, idx, vocab, lattice, cfg, log_a, targets) == res.value


def test_inscription_coverage_mode():
    params, idx, vocab, lattice, batch, *_ = toy_problem(4)
    batch = Batch(batch.xs, n_inscriptions=1)
    res_c = evaluate(batch, params, idx, vocab, lattice, _cfg(), math.log(0.3), with_grad=False)
    res_i = evaluate(batch, params, idx, vocab, lattice, _cfg(coverage_mode="inscriptions"),
                     math.log(0.3), with_grad=False)
    assert res_c.coverage_ratio == pytest.approx(res_c.coverage / batch.n_chars)
    assert res_i.coverage_ratio == pytest.approx(res_i.coverage / 1)


@pytest.mark.parametrize("seed", range(4))
def test_end_to_end_gradient(backend, seed):
    params, idx, vocab, lattice, batch, *_ = toy_problem(10 + seed)
    cfg = _cfg(r_cov=0.95)
    targets = [(1, 1)]
    work = params.copy()

    def fn(vec):
        work.set_flat(vec)
        res = evaluate(batch, work, idx, vocab, lattice, cfg, math.log(0.3), targets)
        return res.value, res.grads.flat()

    rep = gradient_check(fn, params.flat(), eps=1e-5, n_coords=60, rng=seed)
    assert rep.max_rel_error <= 1e-4


@pytest.mark.parametrize("which", ["loglik", "quality", "coverage"])
def test_component_gradients(which):
    params, idx, vocab, lattice, batch, *_ = toy_problem(20)
    cfg = _cfg(lambda_loss=0.0, lambda_sup=0.0, lambda_cov=1.0, r_cov=1.0)
    g_loglik = 1.0 if which == "loglik" else 0.0
    scale = 1.0 if which == "quality" else 0.0
    work = params.copy()

    def fn(vec):
        work.set_flat(vec)
        res = evaluate(batch, work, idx, vocab, lattice,
                       cfg if which == "coverage" else _cfg(lambda_loss=0, lambda_sup=0, lambda_cov=0),
                       math.log(0.3), g_loglik=g_loglik, data_scale=scale)
        value = {"loglik": res.log_likelihood, "quality": res.quality,
                 "coverage": -cfg.lambda_cov * res.omega_cov}[which]
        return value, res.grads.flat()

    rep = gradient_check(fn, params.flat(), eps=1e-5, n_coords=60, rng=0)
    assert rep.max_rel_error <= 1e-4


def test_no_spurious_gradient_without_matches():
    params, idx, _, lattice, batch, table, known, lost = toy_problem(5, length_range=(4, 4), chunk_len=(5, 6))
    # one-phone stems can never produce a 4-character span
    vocab = EncodedVocab.build([Stem(("p",)), Stem(("k",))], known)
    cfg = _cfg(lambda_cov=0.0, lambda_loss=0.0, length_range=(4, 4))
    res = evaluate(batch, params, idx, vocab, lattice, cfg, math.log(0.3))
    assert res.quality == 0.0 and res.coverage == 0.0
    assert not res.grads.flat().any()


def test_data_scale_multiplies_quality_only():
    params, idx, vocab, lattice, batch, *_ = toy_problem(6)
    a = evaluate(batch, params, idx, vocab, lattice, _cfg(), math.log(0.3), with_grad=False)
    b = evaluate(batch, params, idx, vocab, lattice, _cfg(), math.log(0.3), with_grad=False, data_scale=3.0)
    assert b.value - a.value == pytest.approx(2 * a.quality, rel=1e-12)


def test_workers_do_not_change_results():
    params, idx, vocab, lattice, batch, *_ = toy_problem(7, n_chunks=6)
    a = evaluate(batch, params, idx, vocab, lattice, _cfg(), math.log(0.3), workers=1)
    b = evaluate(batch, params, idx, vocab, lattice, _cfg(), math.log(0.3), workers=3)
    assert a.value == b.value
    assert np.array_equal(a.grads.flat(), b.grads.flat())


def test_non_finite_reports_chunk():
    params, idx, vocab, lattice, batch, *_ = toy_problem(8)
    params.feature_emb[...] = np.nan
    with pytest.raises(NonFiniteError):
        evaluate(batch, params, idx, vocab, lattice, _cfg(), math.log(0.3))


def test_empty_batch():
    params, idx, vocab, lattice, *_ = toy_problem(9)
    with pytest.raises(ConfigError):
        evaluate(Batch([]), params, idx, vocab, lattice, _cfg(), math.log(0.3))


@pytest.mark.parametrize("kw", [dict(lambda_cov=-1), dict(temperature=0), dict(r_cov=1.5),
                                dict(coverage_mode="corpus")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ObjectiveConfig(**kw)
