"""Blinded A/B reader study: assignment, score ingestion, signed-rank tests, reports."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

from .errors import (DegenerateTestError, FormatError, InvalidArgumentError,
                     InvalidInputError, JoinError)

METHODS = ("DL", "CS")
METRICS = (
    "image_artifacts", "perceived_spatial_resolution", "anatomic_conspicuity",
    "diagnostic_confidence", "snr", "contrast",
)
METRIC_LABELS = {
    "image_artifacts": "Image artifacts",
    "perceived_spatial_resolution": "Perceived spatial resolution",
    "anatomic_conspicuity": "Anatomic conspicuity",
    "diagnostic_confidence": "Diagnostic confidence",
    "snr": "SNR",
    "contrast": "Contrast",
}
PREFERENCE_CATEGORIES = (
    "strongly_favors_DL", "favors_DL", "indifferent", "favors_CS", "strongly_favors_CS",
)
EXACT_MAX_N = 20


@dataclass(frozen=True)
class BlindingAssignment:
    patient_id: str
    label_A: str
    label_B: str
    seed: int

    def __post_init__(self):
        if {self.label_A, self.label_B} != set(METHODS):
            raise InvalidInputError(f"labels must be one each of {METHODS}: {self.label_A}, {self.label_B}")


@dataclass(frozen=True)
class ScoreRecord:
    patient_id: str
    reader_id: str
    variant: str
    metric: str
    score: int

    def __post_init__(self):
        if self.variant not in ("A", "B"):
            raise InvalidInputError(f"variant must be A or B, got {self.variant!r}")
        if self.metric not in METRICS:
            raise InvalidInputError(f"unknown metric {self.metric!r}")
        if self.score not in (1, 2, 3, 4, 5):
            raise InvalidInputError(f"score must be an integer 1-5, got {self.score!r}")


@dataclass(frozen=True)
class PreferenceRecord:
    patient_id: str
    reader_id: str
    preference: int

    def __post_init__(self):
        if self.preference not in (1, 2, 3, 4, 5):
            raise InvalidInputError(f"preference must be an integer 1-5, got {self.preference!r}")


# ---------------------------------------------------------------------------
# blinding

def assign_blinding(patient_ids, seed: int) -> list[BlindingAssignment]:
    """Independent fair coin per patient from a seeded generator."""
    ids = [str(p) for p in patient_ids]
    dup = [p for p, c in Counter(ids).items() if c > 1]
    if dup:
        raise InvalidArgumentError(f"duplicate patient ids: {sorted(dup)}")
    coins = np.random.default_rng(seed).integers(0, 2, size=len(ids))
    return [BlindingAssignment(p, *(("DL", "CS") if c else ("CS", "DL")), seed=int(seed))
            for p, c in zip(ids, coins)]


def _assignment_map(assignments):
    return {a.patient_id: a for a in assignments}


def unblind(patient_id, variant, assignments) -> str:
    """Method behind ``variant`` ("A"/"B") for ``patient_id``."""
    amap = assignments if isinstance(assignments, dict) else _assignment_map(assignments)
    if patient_id not in amap:
        raise JoinError(f"no blinding assignment for patient {patient_id!r}")
    a = amap[patient_id]
    return a.label_A if variant == "A" else a.label_B


# ---------------------------------------------------------------------------
# statistics

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str  # "exact" or "normal"


def midranks(values) -> np.ndarray:
    """Ranks starting at 1 with ties sharing the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(len(v))
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return ranks


def _exact_counts(doubled_ranks):
    """Number of sign patterns reaching each doubled positive-rank sum."""
    counts = np.zeros(int(sum(doubled_ranks)) + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:len(counts) - r]
        counts = counts + shifted
    return counts


def exact_two_sided_p(ranks, w) -> float:
    """Two-sided ``2 min(P(W <= w), P(W >= w))`` under random signs, capped at 1."""
    doubled = [int(round(2 * r)) for r in ranks]
    counts = _exact_counts(doubled)
    w2 = int(round(2 * w))
    le = int(sum(counts[:w2 + 1]))
    ge = int(sum(counts[w2:]))
    return float(min(Fraction(1), Fraction(2 * min(le, ge), 2 ** len(ranks))))


def wilcoxon_signed_rank(pairs) -> WilcoxonResult:
    """Paired signed-rank test on ``(dl, cs)`` score pairs.

    Zero differences are dropped. Exact enumeration is used up to 20
    nonzero differences, the tie-corrected normal approximation with
    continuity correction above.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidArgumentError("need at least one pair")
    d = np.array([float(a) - float(b) for a, b in pairs])
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateTestError("all paired differences are zero")
    ranks = midranks(np.abs(d))
    w = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        return WilcoxonResult(w, exact_two_sided_p(ranks, w), n, "exact")
    mean = n * (n + 1) / 4
    ties = Counter(ranks.tolist()).values()
    var = n * (n + 1) * (2 * n + 1) / 24 - sum(t ** 3 - t for t in ties) / 48
    z = max(abs(w - mean) - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(w, min(1.0, math.erfc(z / math.sqrt(2))), n, "normal")


# ---------------------------------------------------------------------------
# summaries

def _round1(x) -> str:
    return str(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_mean_std(values) -> str:
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return f"{_round1(v.mean())}±{_round1(std)}"


def p_bucket(p) -> str:
    if p is None:
        return "n/a"
    if p < 0.001:
        return "<0.001"
    if p < 0.01:
        return "<0.01"
    if p < 0.05:
        return "<0.05"
    return str(Decimal(repr(float(p))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class SummaryRow:
    reader_id: str
    metric: str
    dl: str
    cs: str
    dl_mean: float
    cs_mean: float
    p_value: float | None
    p_display: str
    n_pairs: int
    test: str


def _sort_key(x):
    s = str(x)
    return (0, int(s)) if s.isdigit() else (1, s)


def summarize_scores(records, assignments) -> list[SummaryRow]:
    """Per (reader, metric): DL and CS mean±std and the paired test p-value."""
    amap = _assignment_map(assignments)
    table = defaultdict(dict)
    for r in records:
        method = unblind(r.patient_id, r.variant, amap)
        key = (r.reader_id, r.metric)
        slot = table[key].setdefault(r.patient_id, {})
        if method in slot:
            raise InvalidInputError(
                f"duplicate score for patient {r.patient_id}, reader {r.reader_id}, {r.metric}, {method}")
        slot[method] = r.score
    rows = []
    for reader, metric in sorted(table, key=lambda k: (_sort_key(k[0]), METRICS.index(k[1]))):
        per_patient = table[(reader, metric)]
        dl = [s["DL"] for s in per_patient.values() if "DL" in s]
        cs = [s["CS"] for s in per_patient.values() if "CS" in s]
        pairs = [(s["DL"], s["CS"]) for _, s in sorted(per_patient.items()) if len(s) == 2]
        p, test = None, "none"
        if pairs:
            try:
                res = wilcoxon_signed_rank(pairs)
                p, test = res.p_value, res.method
            except DegenerateTestError:
                test = "degenerate"
        rows.append(SummaryRow(reader, metric, format_mean_std(dl) if dl else "n/a",
                               format_mean_std(cs) if cs else "n/a",
                               float(np.mean(dl)) if dl else math.nan,
                               float(np.mean(cs)) if cs else math.nan,
                               p, p_bucket(p), len(pairs), test))
    return rows


@dataclass(frozen=True)
class PreferenceTally:
    reader_id: str
    counts: dict
    n: int

    @property
    def dl_favored(self) -> int:
        return self.counts["strongly_favors_DL"] + self.counts["favors_DL"]

    @property
    def cs_favored(self) -> int:
        return self.counts["strongly_favors_CS"] + self.counts["favors_CS"]

    @property
    def dl_favored_str(self) -> str:
        return f"{self.dl_favored}/{self.n}"

    @property
    def cs_favored_str(self) -> str:
        return f"{self.cs_favored}/{self.n}"


def tally_preferences(records, assignments) -> list[PreferenceTally]:
    """Unblind A/B preferences onto the DL/CS scale (1 = strongly favors DL)."""
    amap = _assignment_map(assignments)
    seen = set()
    per_reader = defaultdict(lambda: dict.fromkeys(PREFERENCE_CATEGORIES, 0))
    for r in records:
        if (r.patient_id, r.reader_id) in seen:
            raise InvalidInputError(f"duplicate preference for patient {r.patient_id}, reader {r.reader_id}")
        seen.add((r.patient_id, r.reader_id))
        if r.patient_id not in amap:
            raise JoinError(f"no blinding assignment for patient {r.patient_id!r}")
        p = r.preference if amap[r.patient_id].label_A == "DL" else 6 - r.preference
        per_reader[r.reader_id][PREFERENCE_CATEGORIES[p - 1]] += 1
    return [PreferenceTally(k, dict(v), sum(v.values()))
            for k, v in sorted(per_reader.items(), key=lambda kv: _sort_key(kv[0]))]


# ---------------------------------------------------------------------------
# tables

def _table_cells(rows):
    readers = sorted({r.reader_id for r in rows}, key=_sort_key)
    lookup = {(r.reader_id, r.metric): r for r in rows}
    header = ["Feature"]
    for rd in readers:
        header += [f"Reader {rd} DL", f"Reader {rd} CS", f"Reader {rd} P-Value"]
    body = []
    for m in METRICS:
        if not any((rd, m) in lookup for rd in readers):
            continue
        line = [METRIC_LABELS[m]]
        for rd in readers:
            r = lookup.get((rd, m))
            line += [r.dl, r.cs, r.p_display] if r else ["", "", ""]
        body.append(line)
    return header, body


def table_text(rows) -> str:
    header, body = _table_cells(rows)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                       for i, (c, w) in enumerate(zip(row, widths))).rstrip()
             for row in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def table_csv(rows) -> str:
    header, body = _table_cells(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return buf.getvalue()


def preference_text(tallies) -> str:
    lines = []
    for t in tallies:
        counts = ", ".join(f"{k}={t.counts[k]}" for k in PREFERENCE_CATEGORIES)
        lines.append(f"Reader {t.reader_id}: DL favored or strongly favored in {t.dl_favored_str} ({counts})")
    return "\n".join(lines) + "\n"


def preference_csv(tallies) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["reader_id", *PREFERENCE_CATEGORIES, "n", "dl_favored", "cs_favored"])
    for t in tallies:
        w.writerow([t.reader_id, *(t.counts[k] for k in PREFERENCE_CATEGORIES), t.n,
                    t.dl_favored_str, t.cs_favored_str])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# CSV files

SCORE_FIELDS = ["patient_id", "reader_id", "variant", "metric", "score"]
PREFERENCE_FIELDS = ["patient_id", "reader_id", "preference"]
ASSIGNMENT_FIELDS = ["patient_id", "label_A", "label_B", "seed"]


def _read_rows(path, fields):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != fields:
            raise FormatError(f"{path}: expected header {','.join(fields)}, got {reader.fieldnames}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise FormatError(f"{path}:{lineno}: wrong number of columns")
            rows.append((lineno, {k.strip(): v.strip() for k, v in row.items()}))
        return rows


def _int(path, lineno, value):
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: expected an integer, got {value!r}") from None


def read_scores(path) -> list[ScoreRecord]:
    return [ScoreRecord(r["patient_id"], r["reader_id"], r["variant"], r["metric"],
                        _int(path, n, r["score"])) for n, r in _read_rows(path, SCORE_FIELDS)]


def read_preferences(path) -> list[PreferenceRecord]:
    return [PreferenceRecord(r["patient_id"], r["reader_id"], _int(path, n, r["preference"]))
            for n, r in _read_rows(path, PREFERENCE_FIELDS)]


def read_assignments(path) -> list[BlindingAssignment]:
    return [BlindingAssignment(r["patient_id"], r["label_A"], r["label_B"], _int(path, n, r["seed"]))
            for n, r in _read_rows(path, ASSIGNMENT_FIELDS)]


def _write(path, fields, rows):
    with open(path, "x", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def write_assignments(path, assignments):
    _write(path, ASSIGNMENT_FIELDS, [[a.patient_id, a.label_A, a.label_B, a.seed] for a in assignments])


def write_scores(path, records):
    _write(path, SCORE_FIELDS, [[r.patient_id, r.reader_id, r.variant, r.metric, r.score] for r in records])


def write_preferences(path, records):
    _write(path, PREFERENCE_FIELDS, [[r.patient_id, r.reader_id, r.preference] for r in records])
