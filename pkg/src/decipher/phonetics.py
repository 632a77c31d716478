"""Phonological features, learnable embeddings and the character mapping.

A known phone is embedded by concatenating one learned vector per feature
group.  A lost character (and the deletion outcome ``EPS``) is a convex
combination of known-phone embeddings.  The mapping distribution
``Pr(lost | known)`` is a temperature softmax of their dot products, taken
over the lost alphabet plus ``EPS``.
"""

import csv
import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from decipher.errors import (
    InvalidTemperature,
    MissingChar,
    MissingFeature,
    MissingPhone,
    ParseError,
)

N_GROUPS = 7
EPS = "<eps>"
SNAPSHOT_FORMAT = "decipher-snapshot/1"


@dataclass(frozen=True)
class FeatureTable:
    """Phone -> one categorical value per feature group.

    ``groups`` is kept in lexicographic order; ``entries`` values follow it.
    """

    groups: tuple
    entries: dict = field(hash=False)

    def __post_init__(self):
        if len(self.groups) != N_GROUPS:
            raise ParseError(f"expected {N_GROUPS} feature groups, got {len(self.groups)}")
        if list(self.groups) != sorted(self.groups) or len(set(self.groups)) != len(self.groups):
            raise ParseError("feature groups must be unique and sorted")
        for phone, values in self.entries.items():
            if not phone:
                raise ParseError("empty phone symbol")
            if len(values) != N_GROUPS:
                raise ParseError(f"phone {phone!r} has {len(values)} feature values")

    @classmethod
    def from_columns(cls, groups, rows):
        """Build from unsorted ``groups`` and ``{phone: values in that order}``."""
        order = sorted(range(len(groups)), key=lambda i: groups[i])
        entries = {p: tuple(v[i] for i in order) for p, v in rows.items()}
        return cls(tuple(groups[i] for i in order), entries)

    @classmethod
    def unstructured(cls, phones, groups=None):
        """Every phone gets a private value in every group.

        Concatenating the group embeddings then gives each phone a free
        vector of size ``7 * d``, i.e. plain per-character embeddings.
        """
        groups = tuple(sorted(groups or (f"g{i}" for i in range(N_GROUPS))))
        return cls(groups, {p: tuple(f"{p}" for _ in groups) for p in phones})

    @property
    def phones(self):
        return tuple(self.entries)

    def features(self, phone):
        try:
            values = self.entries[phone]
        except KeyError:
            raise MissingPhone(f"phone {phone!r} not in feature table") from None
        return tuple(zip(self.groups, values))

    def __contains__(self, phone):
        return phone in self.entries

    def __len__(self):
        return len(self.entries)

    def dumps(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("phone",) + tuple(self.groups))
        for phone, values in self.entries.items():
            writer.writerow((phone,) + tuple(values))
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8", newline="") as f:
            return cls.parse(f, path=path)

    @classmethod
    def parse(cls, lines, path=None):
        reader = csv.reader(lines)
        header = None
        rows = {}
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            row = [cell.strip() for cell in row]
            if header is None:
                if row[0] != "phone" or len(row) != N_GROUPS + 1:
                    raise ParseError(f"header must be phone + {N_GROUPS} groups", path, lineno)
                header = row[1:]
                continue
            if len(row) != len(header) + 1:
                raise ParseError(f"expected {len(header) + 1} fields, got {len(row)}", path, lineno)
            if not row[0]:
                raise ParseError("empty phone symbol", path, lineno)
            if row[0] in rows:
                raise ParseError(f"duplicate phone {row[0]!r}", path, lineno)
            rows[row[0]] = row[1:]
        if header is None:
            raise ParseError("missing header", path)
        try:
            return cls.from_columns(header, rows)
        except ParseError as exc:
            raise ParseError(str(exc), path) from None


@dataclass
class ModelParams:
    """All trainable state plus the alphabets it is defined over.

    ``lost_logits`` has one row per lost character and a last row for
    ``EPS``; columns follow ``known``.
    """

    known: tuple
    lost: tuple
    groups: tuple
    feature_keys: tuple
    feature_emb: np.ndarray
    lost_logits: np.ndarray
    dropout_rate: float = 0.5

    def __post_init__(self):
        self._key_index = {k: i for i, k in enumerate(self.feature_keys)}
        self._lost_index = {c: i for i, c in enumerate(self.lost)}
        self._lost_index[EPS] = len(self.lost)

    @property
    def dim(self):
        return self.feature_emb.shape[1]

    def embedding(self, group, value):
        try:
            return self.feature_emb[self._key_index[(group, value)]]
        except KeyError:
            raise MissingFeature(f"no embedding for feature {group}={value}") from None

    def lost_row(self, c):
        try:
            return self._lost_index[c]
        except KeyError:
            raise MissingChar(f"lost character {c!r} not in alphabet") from None

    def copy(self):
        return ModelParams(self.known, self.lost, self.groups, self.feature_keys,
                           self.feature_emb.copy(), self.lost_logits.copy(), self.dropout_rate)

    def flat(self):
        return np.concatenate([self.feature_emb.ravel(), self.lost_logits.ravel()])

    def set_flat(self, vec):
        n = self.feature_emb.size
        self.feature_emb[...] = vec[:n].reshape(self.feature_emb.shape)
        self.lost_logits[...] = vec[n:].reshape(self.lost_logits.shape)

    def equals(self, other):
        """Bit-exact comparison of alphabets and parameter arrays."""
        return (self.known == other.known and self.lost == other.lost
                and self.groups == other.groups and self.feature_keys == other.feature_keys
                and self.dropout_rate == other.dropout_rate
                and self.feature_emb.tobytes() == other.feature_emb.tobytes()
                and self.lost_logits.tobytes() == other.lost_logits.tobytes())


@dataclass
class ParamGrads:
    feature_emb: np.ndarray
    lost_logits: np.ndarray

    def flat(self):
        return np.concatenate([self.feature_emb.ravel(), self.lost_logits.ravel()])

    def __iadd__(self, other):
        self.feature_emb += other.feature_emb
        self.lost_logits += other.lost_logits
        return self


def init_params(table, known, lost, dim=100, rng=None, init_scale=1.0, logit_scale=1.0,
                dropout_rate=0.5):
    """Random initial parameters.

    Feature embeddings are drawn with per-coordinate std
    ``init_scale / sqrt(7 * dim)`` so known embeddings have squared norm
    about ``init_scale**2`` regardless of ``dim``.
    """
    rng = np.random.default_rng(rng)
    known = tuple(known)
    lost = tuple(lost)
    if EPS in lost:
        raise MissingChar(f"{EPS!r} is reserved for deletion")
    keys = []
    seen = set()
    for phone in known:
        for key in table.features(phone):
            if key not in seen:
                seen.add(key)
                keys.append(key)
    emb = rng.normal(0.0, init_scale / np.sqrt(N_GROUPS * dim), size=(len(keys), dim))
    logits = rng.normal(0.0, logit_scale, size=(len(lost) + 1, len(known)))
    return ModelParams(known, lost, tuple(table.groups), tuple(keys), emb, logits, dropout_rate)


def feature_index(params, table):
    """(K, 7) array of embedding rows for every known phone, in group order."""
    idx = np.empty((len(params.known), N_GROUPS), dtype=np.int64)
    for i, phone in enumerate(params.known):
        for g, key in enumerate(table.features(phone)):
            try:
                idx[i, g] = params._key_index[key]
            except KeyError:
                raise MissingFeature(f"no embedding for feature {key[0]}={key[1]}") from None
    return idx


def embed_known(params, table, c):
    """Concatenated feature embeddings of phone ``c`` (length ``7 * d``)."""
    return np.concatenate([params.embedding(g, v) for g, v in table.features(c)])


def known_embeddings(params, table):
    idx = feature_index(params, table)
    return params.feature_emb[idx].reshape(len(params.known), -1)


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def mixture_weights(params):
    """Row-stochastic ``(L+1, K)`` weights of lost chars (and EPS) over known phones."""
    return _softmax_rows(params.lost_logits)


def embed_lost(params, known_embeddings, c):
    """Weighted sum of known embeddings for lost character ``c`` (or ``EPS``)."""
    w = mixture_weights(params)[params.lost_row(c)]
    return w @ np.asarray(known_embeddings)


@dataclass
class MappingMatrix:
    """``probs[k, j] = Pr(lost_j | known_k)``; the last column is ``EPS``."""

    probs: np.ndarray
    temperature: float
    known: tuple
    lost: tuple
    log_probs: np.ndarray = None

    def __post_init__(self):
        if self.log_probs is None:
            with np.errstate(divide="ignore"):
                self.log_probs = np.log(self.probs)
        self.known_index = {c: i for i, c in enumerate(self.known)}
        self.lost_index = {c: i for i, c in enumerate(self.lost)}
        self.lost_index[EPS] = len(self.lost)

    @classmethod
    def from_probs(cls, probs, known, lost, temperature=1.0):
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(known), len(lost) + 1):
            raise ValueError(f"probs shape {probs.shape} does not match alphabets")
        return cls(probs, temperature, tuple(known), tuple(lost))

    def prob(self, lost_char, known_phone):
        return self.probs[self.known_row(known_phone), self.lost_col(lost_char)]

    def known_row(self, phone):
        try:
            return self.known_index[phone]
        except KeyError:
            raise MissingPhone(f"phone {phone!r} not in mapping") from None

    def lost_col(self, c):
        try:
            return self.lost_index[c]
        except KeyError:
            raise MissingChar(f"lost character {c!r} not in mapping") from None

    def encode_lost(self, chars):
        return np.array([self.lost_col(c) for c in chars], dtype=np.int32)

    def argmax_mapping(self):
        """Known phone -> most probable non-deletion lost character."""
        best = self.probs[:, :-1].argmax(axis=1)
        return {k: self.lost[j] for k, j in zip(self.known, best)}


@dataclass
class MappingCache:
    idx: np.ndarray
    mask: np.ndarray
    ek: np.ndarray
    w: np.ndarray
    el: np.ndarray
    probs: np.ndarray
    temperature: float


def mapping_forward(params, idx, temperature, dropout_mask=None):
    """Log mapping matrix ``(K, L+1)`` and a cache for :func:`mapping_backward`.

    ``dropout_mask`` (already scaled by ``1 / (1 - rate)``) multiplies the
    concatenated known embeddings.
    """
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be positive, got {temperature}")
    ek = params.feature_emb[idx].reshape(idx.shape[0], -1)
    if dropout_mask is not None:
        ek = ek * dropout_mask
    w = mixture_weights(params)
    el = w @ ek
    logits = ek @ el.T / temperature
    log_probs = _log_softmax_rows(logits)
    probs = np.exp(log_probs)
    return log_probs, MappingCache(idx, dropout_mask, ek, w, el, probs, temperature)


def mapping_backward(params, cache, g_log_probs):
    """Gradients of a scalar w.r.t. the parameters, given its gradient w.r.t. log probs."""
    g_logits = g_log_probs - cache.probs * g_log_probs.sum(axis=1, keepdims=True)
    g_dots = g_logits / cache.temperature
    g_ek = g_dots @ cache.el
    g_el = g_dots.T @ cache.ek
    g_w = g_el @ cache.ek.T
    g_ek += cache.w.T @ g_el
    g_lost = cache.w * (g_w - (g_w * cache.w).sum(axis=1, keepdims=True))
    if cache.mask is not None:
        g_ek = g_ek * cache.mask
    g_feat = np.zeros_like(params.feature_emb)
    k, d = cache.idx.shape[0], params.dim
    np.add.at(g_feat, cache.idx.ravel(), g_ek.reshape(k * N_GROUPS, d))
    return ParamGrads(g_feat, g_lost)


def mapping_matrix(params, table, lost_alphabet=None, known_alphabet=None, temperature=0.2):
    """Inference-time mapping distribution (no dropout)."""
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be positive, got {temperature}")
    if known_alphabet is not None and tuple(known_alphabet) != params.known:
        raise MissingPhone("known alphabet does not match the model")
    if lost_alphabet is not None and tuple(lost_alphabet) != params.lost:
        raise MissingChar("lost alphabet does not match the model")
    log_probs, cache = mapping_forward(params, feature_index(params, table), temperature)
    return MappingMatrix(cache.probs, temperature, params.known, params.lost, log_probs)


def mapping_supervision_loss(matrix, known_targets):
    """Cross-entropy of supervised rows against their one-hot targets."""
    loss = 0.0
    for phone, target in known_targets.items():
        p = matrix.probs[matrix.known_row(phone), matrix.lost_col(target)]
        loss -= float(np.log(p))
    return loss


def save_params(path, params, extra=None):
    """Write a self-describing ``.npz`` snapshot (bit-exact round trip)."""
    meta = {
        "format": SNAPSHOT_FORMAT,
        "known": list(params.known),
        "lost": list(params.lost),
        "groups": list(params.groups),
        "feature_keys": [list(k) for k in params.feature_keys],
        "dim": params.dim,
        "dropout_rate": params.dropout_rate,
        "extra": extra or {},
    }
    arrays = {
        "meta": np.array(json.dumps(meta, ensure_ascii=False, sort_keys=True)),
        "feature_emb": params.feature_emb,
        "lost_logits": params.lost_logits,
    }
    # fixed member timestamps keep snapshots byte-identical across runs
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            with zf.open(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), "w") as f:
                np.lib.format.write_array(f, np.asarray(arr), allow_pickle=False)


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(params, extra)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != SNAPSHOT_FORMAT:
            raise ParseError(f"not a snapshot ({meta.get('format')!r})", path)
        params = ModelParams(
            tuple(meta["known"]), tuple(meta["lost"]), tuple(meta["groups"]),
            tuple(tuple(k) for k in meta["feature_keys"]),
            data["feature_emb"].copy(), data["lost_logits"].copy(), meta["dropout_rate"],
        )
    return params, meta["extra"]
