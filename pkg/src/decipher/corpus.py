"""Corpus, vocabulary and gold-label I/O plus the synthetic lost-language generator.

File formats (all UTF-8):

* corpus: one inscription per line, optionally ``id<TAB>text``.
* vocabulary: ``surface<TAB>phone1 phone2 ...``.
* features: CSV with header ``phone,group1,...,group7``.
* gold: ``inscription_id<TAB>start<TAB>end<TAB>stem``.

Character offsets (chunk offsets, prediction and gold spans) index the
inscription text with all whitespace removed, so gold files stay valid
under any whitespace ratio.
"""

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from decipher.alignment import Stem
from decipher.errors import MissingPhone, ParseError, SpecError
from decipher.evaluation import GoldSpan, load_gold, save_gold
from decipher.phonetics import EPS, N_GROUPS, FeatureTable, MappingMatrix
from decipher.segmentation import Chunk

logger = logging.getLogger(__name__)

_WS = re.compile(r"\s+")
_WS_SPLIT = re.compile(r"(\s+)")

IPA_SYMBOLS = (
    "p", "b", "f", "v", "m", "w", "t", "d", "θ", "ð", "n", "s", "z", "l", "r", "ʃ",
    "ʒ", "j", "k", "g", "x", "ɣ", "ŋ", "h", "i", "e", "ɛ", "a", "ɑ", "ɔ", "o", "u",
)
LOST_SYMBOLS = tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ") + tuple("ΓΔΘΛΞΠΣΦΨΩ")


@dataclass
class Inscription:
    id: str
    text: str
    chunks: tuple = field(init=False)

    def __post_init__(self):
        self.chunks = tuple(split_chunks(self.id, self.text))

    @property
    def stripped(self):
        return _WS.sub("", self.text)


def split_chunks(inscription_id, text):
    """Whitespace-delimited chunks with offsets into the stripped text."""
    offset = 0
    out = []
    for word in text.split():
        out.append(Chunk(tuple(word), inscription_id, offset))
        offset += len(word)
    return out


@dataclass
class Corpus:
    inscriptions: list

    @property
    def chunks(self):
        return [c for ins in self.inscriptions for c in ins.chunks]

    @property
    def n_chars(self):
        return sum(len(c) for c in self.chunks)

    @property
    def alphabet(self):
        return tuple(sorted({ch for c in self.chunks for ch in c.chars}))

    def __len__(self):
        return len(self.inscriptions)

    def dumps(self):
        return "".join(f"{ins.id}\t{ins.text}\n" for ins in self.inscriptions)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())


def load_corpus(path):
    inscriptions = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" in line:
                ident, text = line.split("\t", 1)
                ident = ident.strip()
                if not ident:
                    raise ParseError("empty inscription id", path, lineno)
            else:
                ident, text = str(lineno), line
            if ident in seen:
                raise ParseError(f"duplicate inscription id {ident!r}", path, lineno)
            if EPS in text:
                raise ParseError(f"{EPS!r} is reserved", path, lineno)
            seen.add(ident)
            inscriptions.append(Inscription(ident, text.strip()))
    if not inscriptions:
        logger.warning("corpus %s is empty", path)
    return Corpus(inscriptions)


def identity_stemmer(phones):
    """Stemmer hook; vocabulary files are expected to hold stems already."""
    return tuple(phones)


@dataclass
class Vocabulary:
    stems: tuple
    n_filtered: int = 0
    min_stem_len: int = 1

    def __len__(self):
        return len(self.stems)

    def __iter__(self):
        return iter(self.stems)

    def dumps(self):
        return "".join(f"{s.surface}\t{' '.join(s.phones)}\n" for s in self.stems)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())


def load_vocab(path, min_stem_len=1, table=None, stemmer=identity_stemmer):
    """Read stems, drop those shorter than ``min_stem_len`` and duplicates."""
    stems = []
    seen = set()
    filtered = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].split():
                raise ParseError("expected surface<TAB>phones", path, lineno)
            surface = parts[0].strip()
            phones = stemmer(parts[1].split())
            if table is not None:
                for p in phones:
                    if p not in table:
                        raise MissingPhone(f"{path}:{lineno}: phone {p!r} not in feature table")
            if len(phones) < min_stem_len:
                filtered += 1
                continue
            key = (surface, tuple(phones))
            if key in seen:
                continue
            seen.add(key)
            stems.append(Stem(tuple(phones), surface))
    if filtered:
        logger.info("filtered %d stems shorter than %d", filtered, min_stem_len)
    return Vocabulary(tuple(stems), filtered, min_stem_len)


def load_features(path):
    return FeatureTable.load(path)


def check_alphabets(corpus, vocab, table, lost=None):
    """Known alphabet from the vocabulary (table order) and lost alphabet from the corpus."""
    used = {p for s in vocab for p in s.phones}
    missing = sorted(used - set(table.phones))
    if missing:
        raise MissingPhone(f"phones missing from the feature table: {missing}")
    known = tuple(p for p in table.phones if p in used)
    corpus_chars = corpus.alphabet
    if lost is None:
        lost = corpus_chars
    else:
        extra = sorted(set(corpus_chars) - set(lost))
        if extra:
            raise ParseError(f"corpus uses characters outside the lost alphabet: {extra}")
    return known, tuple(lost)


def apply_whitespace_ratio(text, ratio, rng=None):
    """Keep each whitespace boundary independently with probability ``ratio``."""
    if not 0.0 <= ratio <= 1.0:
        raise SpecError(f"whitespace ratio must lie in [0, 1], got {ratio}")
    rng = np.random.default_rng(rng)
    pieces = _WS_SPLIT.split(text)
    # separators sit at odd indices; leading/trailing ones are not word boundaries
    inner = [i for i in range(1, len(pieces) - 1, 2) if pieces[i - 1] and pieces[i + 1]]
    keep = rng.random(len(inner)) < ratio
    for i, k in zip(inner, keep):
        if not k:
            pieces[i] = ""
    return "".join(pieces)


@dataclass
class SynthSpec:
    n_known: int = 12
    n_lost: int = 12
    noise_sub: float = 0.05
    noise_del: float = 0.05
    noise_ins: float = 0.05
    vocab_size: int = 60
    stem_len: tuple = (4, 7)
    n_inscriptions: int = 300
    tokens_per_inscription: int = 4
    filler_rate: float = 0.15
    whitespace_ratio: float = 0.5
    span_range: tuple = (4, 8)
    # substitution noise lands on the image of a neighbouring (feature-similar) phone
    similar_substitutions: bool = False
    structured_features: bool = True
    seed: int = 0

    def __post_init__(self):
        self.stem_len = tuple(self.stem_len)
        self.span_range = tuple(self.span_range)
        for name in ("noise_sub", "noise_del", "noise_ins", "filler_rate", "whitespace_ratio"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{name} must lie in [0, 1], got {v}")
        if self.filler_rate >= 1.0:
            raise SpecError("filler_rate must be < 1")
        if self.n_known < 2 or self.n_lost < 2:
            raise SpecError("alphabets need at least two symbols")
        if self.n_lost < self.n_known:
            raise SpecError("lost alphabet smaller than the known alphabet: no bijection")
        if self.n_known > len(IPA_SYMBOLS) or self.n_lost > len(LOST_SYMBOLS):
            raise SpecError("alphabet larger than the built-in symbol inventory")
        lo, hi = self.stem_len
        if not 1 <= lo <= hi:
            raise SpecError("bad stem length range")
        if self.vocab_size < 1 or self.vocab_size > self.n_known ** hi:
            raise SpecError("vocabulary size not attainable")
        if not 1 <= self.span_range[0] <= self.span_range[1]:
            raise SpecError("bad span range")
        if not (self.span_range[0] <= hi and lo <= self.span_range[1]):
            raise SpecError("stem lengths cannot produce spans inside span_range")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["stem_len"] = list(self.stem_len)
        d["span_range"] = list(self.span_range)
        return d


def structured_feature_table(phones):
    """Feature bins of staggered widths so neighbouring phones share most values."""
    widths = (1, 2, 2, 3, 3, 4, 6)
    offsets = (0, 0, 1, 0, 1, 2, 3)
    groups = tuple(f"f{g}" for g in range(N_GROUPS))
    entries = {p: tuple(f"v{(i + o) // w}" for w, o in zip(widths, offsets))
               for i, p in enumerate(phones)}
    return FeatureTable(groups, entries)


@dataclass
class SynthBundle:
    spec: SynthSpec
    corpus: Corpus
    vocab: Vocabulary
    table: FeatureTable
    gold: list
    truth: dict  # known phone -> lost char
    truth_matrix: MappingMatrix

    @property
    def known(self):
        return tuple(IPA_SYMBOLS[: self.spec.n_known])

    @property
    def lost(self):
        return tuple(LOST_SYMBOLS[: self.spec.n_lost])


def _streams(seed):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def sample_vocabulary(spec, rng, exclude=()):
    known = IPA_SYMBOLS[: spec.n_known]
    lo, hi = spec.stem_len
    seen = set(exclude)
    stems = []
    while len(stems) < spec.vocab_size:
        n = int(rng.integers(lo, hi + 1))
        phones = tuple(known[i] for i in rng.integers(0, spec.n_known, size=n))
        if phones in seen:
            continue
        seen.add(phones)
        stems.append(Stem(phones))
    return Vocabulary(tuple(stems), 0, lo)


def decoy_vocabulary(bundle, seed):
    """Same-shaped vocabulary sampled independently of (and disjoint from) the true one."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDEC0]))
    return sample_vocabulary(bundle.spec, rng, exclude={s.phones for s in bundle.vocab})


def _truth_matrix(spec, known, lost, perm):
    probs = np.zeros((spec.n_known, spec.n_lost + 1))
    keep = 1.0 - spec.noise_del
    for i in range(spec.n_known):
        probs[i, spec.n_lost] = spec.noise_del
        probs[i, perm[i]] += keep * (1.0 - spec.noise_sub)
        if spec.similar_substitutions:
            nbrs = [j for j in (i - 1, i + 1) if 0 <= j < spec.n_known]
            targets = [perm[j] for j in nbrs]
        else:
            targets = [j for j in range(spec.n_lost) if j != perm[i]]
        for j in targets:
            probs[i, j] += keep * spec.noise_sub / len(targets)
    return MappingMatrix.from_probs(probs, known, lost)


def _render(phones, spec, index, perm, lost, rng):
    n_known = spec.n_known
    for _ in range(100):
        out = []
        for p in phones:
            i = index[p]
            if rng.random() >= spec.noise_del:
                if rng.random() < spec.noise_sub:
                    if spec.similar_substitutions:
                        nbrs = [j for j in (i - 1, i + 1) if 0 <= j < n_known]
                        out.append(lost[perm[nbrs[int(rng.integers(len(nbrs)))]]])
                    else:
                        others = [j for j in range(spec.n_lost) if j != perm[i]]
                        out.append(lost[others[int(rng.integers(len(others)))]])
                else:
                    out.append(lost[perm[i]])
            if rng.random() < spec.noise_ins:
                out.append(lost[int(rng.integers(spec.n_lost))])
        if spec.span_range[0] <= len(out) <= spec.span_range[1]:
            return out
    out = [lost[perm[index[p]]] for p in phones]
    return out[: spec.span_range[1]]


def generate_synthetic(spec):
    """Sample a lost-language corpus from a known vocabulary through a noisy bijection.

    Independent random streams drive the mapping, vocabulary, token
    rendering, filler characters and whitespace, all derived from
    ``spec.seed``.
    """
    r_map, r_vocab, r_render, r_fill, r_ws = _streams(spec.seed)
    known = tuple(IPA_SYMBOLS[: spec.n_known])
    lost = tuple(LOST_SYMBOLS[: spec.n_lost])
    table = structured_feature_table(known) if spec.structured_features else FeatureTable.unstructured(known)
    perm = r_map.permutation(spec.n_lost)[: spec.n_known]
    truth = {known[i]: lost[perm[i]] for i in range(spec.n_known)}
    vocab = sample_vocabulary(spec, r_vocab)
    index = {p: i for i, p in enumerate(known)}

    inscriptions, gold = [], []
    fill_odds = spec.filler_rate / (1.0 - spec.filler_rate)
    width = len(str(spec.n_inscriptions))
    for n in range(spec.n_inscriptions):
        ident = f"s{n:0{width}d}"
        stems = [vocab.stems[int(i)] for i in r_render.integers(0, len(vocab), size=spec.tokens_per_inscription)]
        tokens = [_render(s.phones, spec, index, perm, lost, r_render) for s in stems]
        n_token_chars = sum(len(t) for t in tokens)
        gaps = r_fill.poisson(fill_odds * n_token_chars / (len(tokens) + 1), size=len(tokens) + 1)
        words, offset = [], 0
        for g, (stem, tok) in enumerate(zip(stems, tokens)):
            if gaps[g]:
                words.append("".join(lost[int(i)] for i in r_fill.integers(0, spec.n_lost, size=gaps[g])))
                offset += gaps[g]
            gold.append(GoldSpan(ident, offset, offset + len(tok), stem.surface))
            words.append("".join(tok))
            offset += len(tok)
        if gaps[-1]:
            words.append("".join(lost[int(i)] for i in r_fill.integers(0, spec.n_lost, size=gaps[-1])))
        text = apply_whitespace_ratio(" ".join(words), spec.whitespace_ratio, r_ws)
        inscriptions.append(Inscription(ident, text))
    return SynthBundle(spec, Corpus(inscriptions), vocab, table, gold, truth,
                       _truth_matrix(spec, known, lost, perm))


BUNDLE_FILES = {
    "corpus": "corpus.txt",
    "vocab": "vocab.tsv",
    "features": "features.csv",
    "gold": "gold.tsv",
    "truth": "truth_mapping.tsv",
    "manifest": "manifest.json",
}


def save_bundle(bundle, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    p = {k: os.path.join(out_dir, v) for k, v in BUNDLE_FILES.items()}
    bundle.corpus.save(p["corpus"])
    bundle.vocab.save(p["vocab"])
    bundle.table.save(p["features"])
    save_gold(p["gold"], bundle.gold)
    M = bundle.truth_matrix
    with open(p["truth"], "w", encoding="utf-8", newline="\n") as f:
        f.write("phone\tlost\tprob\n")
        for i, k in enumerate(M.known):
            for j, c in enumerate(M.lost + (EPS,)):
                if M.probs[i, j] > 0:
                    f.write(f"{k}\t{c}\t{float(M.probs[i, j])!r}\n")
    manifest = {
        "spec": bundle.spec.to_dict(),
        "known": list(M.known),
        "lost": list(M.lost),
        "truth": bundle.truth,
        "files": BUNDLE_FILES,
        "counts": {
            "inscriptions": len(bundle.corpus),
            "chunks": len(bundle.corpus.chunks),
            "chars": bundle.corpus.n_chars,
            "stems": len(bundle.vocab),
            "gold_spans": len(bundle.gold),
        },
    }
    with open(p["manifest"], "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return p


def load_bundle(out_dir):
    p = {k: os.path.join(out_dir, v) for k, v in BUNDLE_FILES.items()}
    with open(p["manifest"], encoding="utf-8") as f:
        manifest = json.load(f)
    spec = SynthSpec.from_dict(manifest["spec"])
    table = load_features(p["features"])
    known, lost = tuple(manifest["known"]), tuple(manifest["lost"])
    probs = np.zeros((len(known), len(lost) + 1))
    cols = {c: j for j, c in enumerate(lost + (EPS,))}
    rows = {k: i for i, k in enumerate(known)}
    with open(p["truth"], encoding="utf-8") as f:
        next(f)
        for line in f:
            k, c, v = line.rstrip("\n").split("\t")
            probs[rows[k], cols[c]] = float(v)
    return SynthBundle(spec, load_corpus(p["corpus"]), load_vocab(p["vocab"], table=table), table,
                       load_gold(p["gold"]), dict(manifest["truth"]),
                       MappingMatrix.from_probs(probs, known, lost))


def expected_chunk_length(spec):
    """Mean chunk length at whitespace ratio 0 without fillers."""
    lo, hi = spec.stem_len
    return spec.tokens_per_inscription * (lo + hi) / 2 * (1 - spec.noise_del + spec.noise_ins)

