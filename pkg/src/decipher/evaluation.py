"""P@K against gold cognates and the coverage-vs-confidence closeness metric."""

import csv
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from decipher.errors import InvalidInput, InvalidK, ParseError

AUC_LOW, AUC_HIGH = 0.3, 1.0


@dataclass(frozen=True)
class GoldSpan:
    inscription_id: str
    start: int
    end: int
    stem: str

    def __post_init__(self):
        if self.end <= self.start:
            raise InvalidInput(f"gold span end {self.end} <= start {self.start}")


def save_gold(path, gold):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for g in gold:
            f.write(f"{g.inscription_id}\t{g.start}\t{g.end}\t{g.stem}\n")


def load_gold(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError("expected id<TAB>start<TAB>end<TAB>stem", path, lineno)
            try:
                out.append(GoldSpan(parts[0], int(parts[1]), int(parts[2]), parts[3]))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return out


@dataclass(frozen=True)
class PredictionRecord:
    """Flat form of a span prediction; offsets are inscription-level."""

    inscription_id: str
    chunk_offset: int
    start: int
    end: int
    surface: str
    stem: str
    confidence: float

    @classmethod
    def from_prediction(cls, p):
        return cls(p.chunk.inscription_id, p.chunk.offset, p.abs_start, p.abs_end, p.surface,
                   p.stem.surface, p.confidence)


def _records(predictions):
    return [p if isinstance(p, PredictionRecord) else PredictionRecord.from_prediction(p)
            for p in predictions]


def sort_records(records):
    return sorted(records, key=lambda r: (r.inscription_id, r.start, -r.confidence, r.end, r.stem))


PRED_HEADER = ("inscription_id", "chunk_offset", "start", "end", "span", "stem", "confidence")


def save_predictions(path, predictions):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(PRED_HEADER)
        for r in sort_records(_records(predictions)):
            w.writerow((r.inscription_id, r.chunk_offset, r.start, r.end, r.surface, r.stem,
                        repr(float(r.confidence))))


def load_predictions(path):
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        rows = csv.reader(f, delimiter="\t")
        header = next(rows, None)
        if header is None or tuple(header) != PRED_HEADER:
            raise ParseError("bad prediction header", path, 1)
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(PRED_HEADER):
                raise ParseError(f"expected {len(PRED_HEADER)} fields", path, lineno)
            try:
                out.append(PredictionRecord(row[0], int(row[1]), int(row[2]), int(row[3]), row[4],
                                            row[5], float(row[6])))
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return out


def precision_at_k(predictions, gold, k):
    """Fraction of gold spans with a correct stem among the top-``k`` predictions at their start.

    A prediction is correct when its stem equals the gold stem and its span
    starts at the gold start and ends no later than the gold end.
    """
    if k < 1:
        raise InvalidK(f"k must be >= 1, got {k}")
    if not gold:
        raise InvalidInput("no gold spans")
    by_start = defaultdict(list)
    for r in _records(predictions):
        by_start[(r.inscription_id, r.start)].append(r)
    hits = 0
    for g in gold:
        cands = sorted(by_start.get((g.inscription_id, g.start), ()),
                       key=lambda r: (-r.confidence, r.end, r.stem))[:k]
        if any(r.stem == g.stem and r.end <= g.end for r in cands):
            hits += 1
    return hits / len(gold)


@dataclass
class ClosenessCurve:
    thresholds: np.ndarray  # descending
    coverage: np.ndarray


def default_thresholds(n=71):
    return np.linspace(AUC_HIGH, AUC_LOW, n)


def closeness_curve(predictions, total_chars, thresholds=None):
    """Fraction of corpus characters inside retained spans at each confidence threshold.

    ``total_chars`` is the corpus character count (or anything with
    ``n_chars``).  Overlapping spans count each character once.
    """
    if hasattr(total_chars, "n_chars"):
        total_chars = total_chars.n_chars
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, float)
    if thresholds.size and (thresholds.min() < 0 or thresholds.max() > 1):
        raise InvalidInput("thresholds must lie in [0, 1]")
    thresholds = np.sort(thresholds)[::-1]
    # best confidence for each character position
    best = {}
    for r in _records(predictions):
        for pos in range(r.start, r.end):
            key = (r.inscription_id, pos)
            if r.confidence > best.get(key, -1.0):
                best[key] = r.confidence
    conf = np.fromiter(best.values(), float, len(best))
    cov = np.array([(conf >= t).sum() / total_chars if total_chars else 0.0 for t in thresholds])
    return ClosenessCurve(thresholds, cov)


def closeness_auc(curve):
    """Trapezoidal area of coverage over thresholds in [0.3, 1.0], divided by 0.7."""
    t = np.asarray(curve.thresholds, float)
    c = np.asarray(curve.coverage, float)
    keep = (t >= AUC_LOW - 1e-12) & (t <= AUC_HIGH + 1e-12)
    t, c = t[keep], c[keep]
    if t.size < 2:
        return 0.0
    order = np.argsort(t, kind="stable")
    t, c = t[order], c[order]
    area = float(np.sum((t[1:] - t[:-1]) * (c[1:] + c[:-1]) / 2.0))
    return area / (AUC_HIGH - AUC_LOW)


def save_curve(path, curve, auc=None, label=""):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("threshold\tcoverage\n")
        for t, c in zip(curve.thresholds, curve.coverage):
            f.write(f"{t:.6f}\t{c:.6f}\n")
        if auc is not None:
            f.write(f"# auc\t{auc:.6f}\t{label}\n")
