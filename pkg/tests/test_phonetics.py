import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decipher.errors import (
    InvalidTemperature,
    MissingChar,
    MissingFeature,
    MissingPhone,
    ParseError,
)
from decipher.phonetics import (
    EPS,
    FeatureTable,
    MappingMatrix,
    embed_known,
    embed_lost,
    feature_index,
    init_params,
    known_embeddings,
    load_params,
    mapping_backward,
    mapping_forward,
    mapping_matrix,
    mapping_supervision_loss,
    save_params,
)
from decipher.training import gradient_check

GROUPS = ("consonantal", "manner", "nasal", "place", "round", "syllabic", "voice")

TABLE = FeatureTable.from_columns(GROUPS, {
    "b": ("+", "stop", "-", "labial", "-", "-", "+"),
    "p": ("+", "stop", "-", "labial", "-", "-", "-"),
    "m": ("+", "stop", "+", "labial", "-", "-", "+"),
    "s": ("+", "fricative", "-", "alveolar", "-", "-", "-"),
    "u": ("-", "vowel", "-", "dorsal", "+", "+", "+"),
    "bb": ("+", "stop", "-", "labial", "-", "-", "+"),
})


def _params(known=("b", "p", "m", "s", "u"), lost=("B", "P", "M"), dim=3, seed=0, **kw):
    return init_params(TABLE, known, lost, dim, np.random.default_rng(seed), **kw)


class TestFeatureTable:
    def test_concatenation_in_group_order(self):
        params = _params()
        v = embed_known(params, TABLE, "b")
        parts = [params.embedding(g, val) for g, val in zip(GROUPS, TABLE.entries["b"])]
        assert np.array_equal(v, np.concatenate(parts))
        assert v.shape == (7 * 3,)

    def test_shared_features_give_identical_vectors(self):
        params = _params(known=("b", "bb", "p"))
        assert np.array_equal(embed_known(params, TABLE, "b"), embed_known(params, TABLE, "bb"))

    def test_all_ones(self):
        params = _params(dim=2)
        params.feature_emb[...] = 1.0
        assert np.array_equal(embed_known(params, TABLE, "s"), np.ones(14))

    def test_unknown_phone(self):
        with pytest.raises(MissingPhone):
            embed_known(_params(), TABLE, "zz")

    def test_missing_feature(self):
        params = _params(known=("b",))
        with pytest.raises(MissingFeature):
            embed_known(params, TABLE, "s")
        with pytest.raises(MissingFeature):
            feature_index(params, FeatureTable.from_columns(GROUPS, {"b": TABLE.entries["s"]}))

    def test_feature_locality(self):
        params = _params()
        before = embed_known(params, TABLE, "p")
        row = params.feature_emb[params.feature_keys.index(("voice", "+"))]
        row += 1.0
        assert np.array_equal(embed_known(params, TABLE, "p"), before)
        assert not np.array_equal(embed_known(params, TABLE, "b"), before)

    def test_groups_sorted(self):
        t = FeatureTable.from_columns(tuple(reversed(GROUPS)), {"x": tuple("abcdefg")})
        assert t.groups == GROUPS
        assert t.entries["x"] == tuple("gfedcba")

    def test_wrong_group_count(self):
        with pytest.raises(ParseError):
            FeatureTable(GROUPS[:6], {})

    def test_round_trip(self, tmp_path):
        path = tmp_path / "features.csv"
        TABLE.save(path)
        assert FeatureTable.load(path) == TABLE

    @pytest.mark.parametrize("text, line", [
        ("phone,a,b\n", 1),
        ("phone,a,b,c,d,e,f,g\nx,1,2,3\n", 2),
        ("phone,a,b,c,d,e,f,g\nx,1,2,3,4,5,6,7\nx,1,2,3,4,5,6,7\n", 3),
    ])
    def test_parse_errors_carry_line(self, tmp_path, text, line):
        path = tmp_path / "bad.csv"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(ParseError, match=f":{line}:"):
            FeatureTable.load(path)

    def test_unstructured_is_private(self):
        t = FeatureTable.unstructured(("a", "b"))
        assert set(t.features("a")).isdisjoint(t.features("b"))


class TestEmbedLost:
    def test_saturated_logits_pick_first(self):
        params = _params()
        params.lost_logits[0] = 0.0
        params.lost_logits[0, 0] = 1000.0
        ek = known_embeddings(params, TABLE)
        assert np.allclose(embed_lost(params, ek, "B"), ek[0], atol=1e-6)

    def test_uniform_logits_give_mean(self):
        params = _params()
        params.lost_logits[1] = 0.0
        ek = known_embeddings(params, TABLE)
        assert np.allclose(embed_lost(params, ek, "P"), ek.mean(axis=0), atol=1e-15)

    def test_hand_example(self):
        params = _params(known=("b", "s"), lost=("B",))
        params.lost_logits[0] = (math.log(3.0), 0.0)
        ek = np.zeros((2, 21))
        ek[0, 0] = 1.0
        ek[1, 1] = 1.0
        v = embed_lost(params, ek, "B")
        assert v[:2] == pytest.approx([0.75, 0.25], abs=1e-15)
        assert not v[2:].any()

    def test_eps_row(self):
        params = _params()
        ek = known_embeddings(params, TABLE)
        assert embed_lost(params, ek, EPS).shape == (21,)

    def test_unknown_lost_char(self):
        params = _params()
        with pytest.raises(MissingChar):
            embed_lost(params, known_embeddings(params, TABLE), "Q")


class TestMappingMatrix:
    def test_identical_embeddings_uniform(self):
        params = _params()
        params.feature_emb[...] = 0.3
        M = mapping_matrix(params, TABLE, temperature=0.2)
        assert np.allclose(M.probs, 1 / 4, atol=1e-15)

    def test_saturation_at_low_temperature(self):
        params = _params(known=("b", "s"), lost=("B", "S"), dim=2)
        params.feature_emb[...] = 0.0
        # orthogonal place embeddings; each lost char points at one phone
        params.feature_emb[params.feature_keys.index(("place", "labial")), 0] = 1.0
        params.feature_emb[params.feature_keys.index(("place", "alveolar")), 1] = 1.0
        params.lost_logits[...] = 0.0
        params.lost_logits[0] = (1000.0, 0.0)
        params.lost_logits[1] = (0.0, 1000.0)
        params.lost_logits[2] = (0.0, 0.0)
        M = mapping_matrix(params, TABLE, temperature=0.01)
        assert M.prob("B", "b") > 0.99
        assert M.prob("S", "s") > 0.99

    def test_two_way_softmax_hand_value(self):
        # one lost char plus eps; dots 2.0 and 0.0 at T=1
        params = _params(known=("b", "s"), lost=("B",), dim=2)
        params.feature_emb[...] = 0.0
        params.feature_emb[params.feature_keys.index(("place", "labial"))] = (math.sqrt(2.0), 0.0)
        params.feature_emb[params.feature_keys.index(("place", "alveolar"))] = (0.0, 1.0)
        params.lost_logits[0] = (1000.0, -1000.0)
        params.lost_logits[1] = (-1000.0, 1000.0)
        M = mapping_matrix(params, TABLE, temperature=1.0)
        assert M.probs[0] == pytest.approx([0.8808, 0.1192], abs=1e-4)

    def test_rows_stochastic_and_in_open_interval(self):
        params = _params(seed=4)
        M = mapping_matrix(params, TABLE, temperature=0.2)
        assert np.allclose(M.probs.sum(axis=1), 1.0, atol=1e-12)
        assert (M.probs > 0).all() and (M.probs < 1).all()
        assert M.probs.shape == (5, 4)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t1=st.floats(0.05, 5.0), t2=st.floats(0.05, 5.0))
    def test_temperature_monotone(self, seed, t1, t2):
        lo, hi = sorted((t1, t2))
        if hi - lo < 1e-3:
            return
        params = _params(seed=seed)
        a = mapping_matrix(params, TABLE, temperature=lo).probs.max(axis=1)
        b = mapping_matrix(params, TABLE, temperature=hi).probs.max(axis=1)
        assert (a > b).all()

    @pytest.mark.parametrize("T", [0.0, -1.0])
    def test_bad_temperature(self, T):
        with pytest.raises(InvalidTemperature):
            mapping_matrix(_params(), TABLE, temperature=T)

    def test_alphabet_mismatch(self):
        with pytest.raises(MissingPhone):
            mapping_matrix(_params(), TABLE, known_alphabet=("b",))
        with pytest.raises(MissingChar):
            mapping_matrix(_params(), TABLE, lost_alphabet=("X",))


class TestSupervision:
    def _matrix(self, p):
        return MappingMatrix.from_probs(np.array([[p, 1 - p - 0.1, 0.1]]), ("p",), ("P", "Q"))

    def test_empty(self):
        assert mapping_supervision_loss(self._matrix(0.5), {}) == 0.0

    def test_certain(self):
        M = MappingMatrix.from_probs(np.array([[1.0, 0.0, 0.0]]), ("p",), ("P", "Q"))
        assert mapping_supervision_loss(M, {"p": "P"}) == 0.0

    def test_half(self):
        assert mapping_supervision_loss(self._matrix(0.5), {"p": "P"}) == pytest.approx(0.6931, abs=1e-4)

    def test_gradient_matches_finite_differences(self):
        params = _params(seed=3)
        idx = feature_index(params, TABLE)
        targets = {"b": "B", "s": "M"}
        rows = [(params.known.index(k), params.lost_row(v)) for k, v in targets.items()]
        work = params.copy()

        def fn(vec):
            work.set_flat(vec)
            log_probs, cache = mapping_forward(work, idx, 0.5)
            value = -sum(log_probs[k, j] for k, j in rows)
            g = np.zeros_like(log_probs)
            for k, j in rows:
                g[k, j] -= 1.0
            return value, mapping_backward(work, cache, g).flat()

        rep = gradient_check(fn, params.flat(), eps=1e-4, n_coords=60, rng=0)
        assert rep.max_rel_error <= 1e-4


def test_dropout_mask_gradient():
    params = _params(seed=5)
    idx = feature_index(params, TABLE)
    mask = (np.random.default_rng(1).random((5, 21)) > 0.5) * 2.0
    G = np.random.default_rng(2).normal(size=(5, 4))
    work = params.copy()

    def fn(vec):
        work.set_flat(vec)
        log_probs, cache = mapping_forward(work, idx, 0.3, mask)
        return float((G * log_probs).sum()), mapping_backward(work, cache, G).flat()

    assert gradient_check(fn, params.flat(), n_coords=80, rng=1).max_rel_error <= 1e-4


def test_snapshot_round_trip_bit_exact(tmp_path):
    params = _params(seed=9)
    path = tmp_path / "snap.npz"
    save_params(path, params, {"note": "x"})
    loaded, extra = load_params(path)
    assert loaded.equals(params)
    assert extra == {"note": "x"}
    save_params(tmp_path / "again.npz", loaded, {"note": "x"})
    assert (tmp_path / "again.npz").read_bytes() == path.read_bytes()


def test_snapshot_rejects_other_files(tmp_path):
    path = tmp_path / "other.npz"
    np.savez(path, meta=np.array('{"format": "nope"}'))
    with pytest.raises(ParseError):
        load_params(path)


def test_reserved_eps():
    with pytest.raises(MissingChar):
        _params(lost=(EPS,))


def test_param_equality_detects_changes():
    a = _params()
    b = a.copy()
    assert a.equals(b)
    b.lost_logits[0, 0] += 1.0
    assert not a.equals(b)
