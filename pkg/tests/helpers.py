import math

import numpy as np

from decipher.alignment import Stem
from decipher.phonetics import MappingMatrix

# criterion number -> PASS/FAIL line, echoed in the pytest terminal summary
ACCEPTANCE = {}

LOST3 = ("a", "b", "c")
KNOWN3 = ("p", "q", "r")


def matrix_from_log(log_map, known=KNOWN3, lost=LOST3):
    L = np.asarray(log_map, dtype=float)
    return MappingMatrix(np.exp(L), 1.0, tuple(known), tuple(lost), L)


def stem_from_ids(ids, known=KNOWN3):
    return Stem(tuple(known[i] for i in ids))


def chars_from_ids(ids, lost=LOST3):
    return tuple(lost[i] for i in ids)


def random_log_map(rng, n_known=3, n_lost=3):
    w = rng.random((n_known, n_lost + 1)) + 0.05
    return np.log(w / w.sum(axis=1, keepdims=True))


def random_matrix(rng, n_known=3, n_lost=3):
    return matrix_from_log(random_log_map(rng, n_known, n_lost), KNOWN3[:n_known], LOST3[:n_lost])


def assert_close_log(a, b, tol=1e-10):
    if a == -math.inf or b == -math.inf:
        assert a == b, (a, b)
    else:
        assert abs(a - b) <= tol, (a, b)


def toy_problem(seed=0, n_chunks=2, n_stems=3, dim=2, length_range=(1, 3), chunk_len=(3, 6)):
    """Small random model instance: (params, idx, vocab, lattice, batch, table, known, lost)."""
    from decipher.alignment import EncodedVocab
    from decipher.corpus import structured_feature_table
    from decipher.objective import Batch
    from decipher.phonetics import feature_index, init_params
    from decipher.segmentation import Lattice

    rng = np.random.default_rng(seed)
    known = ("p", "t", "k")
    lost = ("A", "B", "C")
    table = structured_feature_table(known)
    params = init_params(table, known, lost, dim, rng, init_scale=1.5, logit_scale=1.0, dropout_rate=0.0)
    idx = feature_index(params, table)
    stems = [Stem(tuple(known[i] for i in rng.integers(0, 3, rng.integers(1, 4))), f"s{j}")
             for j in range(n_stems)]
    vocab = EncodedVocab.build(stems, known)
    lattice = Lattice.build(length_range, n_lost=len(lost))
    xs = [rng.integers(0, 3, rng.integers(chunk_len[0], chunk_len[1] + 1)).astype(np.int32)
          for _ in range(n_chunks)]
    return params, idx, vocab, lattice, Batch(xs), table, known, lost
