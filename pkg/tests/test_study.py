import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import rankdata, wilcoxon

from iomri.errors import DegenerateTestError, FormatError, InvalidArgumentError, InvalidInputError, JoinError
from iomri.study import (BlindingAssignment, PreferenceRecord, ScoreRecord, assign_blinding, format_mean_std,
                         midranks, p_bucket, preference_csv, read_assignments, read_scores,
                         summarize_scores, table_csv, tally_preferences, unblind, wilcoxon_signed_rank,
                         write_assignments, write_scores)


def test_blinding_is_seeded_and_balanced():
    ids = [f"P{i}" for i in range(200)]
    a = assign_blinding(ids, seed=1)
    assert a == assign_blinding(ids, seed=1)
    n_dl_a = sum(x.label_A == "DL" for x in a)
    assert 70 < n_dl_a < 130
    assert unblind("P0", "A", a) == a[0].label_A
    with pytest.raises(JoinError):
        unblind("nobody", "A", a)
    with pytest.raises(InvalidArgumentError):
        assign_blinding(["x", "x"], seed=0)


def test_record_validation():
    with pytest.raises(InvalidInputError):
        ScoreRecord("p", "1", "C", "snr", 3)
    with pytest.raises(InvalidInputError):
        ScoreRecord("p", "1", "A", "snr", 6)
    with pytest.raises(InvalidInputError):
        PreferenceRecord("p", "1", 0)
    with pytest.raises(InvalidInputError):
        BlindingAssignment("p", "DL", "DL", 0)


def test_midranks():
    assert np.array_equal(midranks([3, 1, 3, 2]), [3.5, 1, 3.5, 2])


def test_known_exact_values():
    r = wilcoxon_signed_rank([(d, 0) for d in (1, 2, 3, 4, 5)])
    assert (r.statistic, r.p_value, r.method) == (15, 0.0625, "exact")
    r = wilcoxon_signed_rank([(1, 0), (0, 1)])
    assert r.p_value == 1.0
    with pytest.raises(DegenerateTestError):
        wilcoxon_signed_rank([(3, 3), (2, 2)])


def test_exact_matches_scipy_without_ties():
    rng = np.random.default_rng(0)
    for n in range(5, 16):
        d = rng.permutation(np.arange(1, n + 1)) * rng.choice([-1, 1], size=n)
        ours = wilcoxon_signed_rank([(x, 0) for x in d]).p_value
        theirs = wilcoxon(d, method="exact").pvalue
        assert math.isclose(ours, theirs, rel_tol=1e-12)


def test_normal_approximation_above_twenty():
    rng = np.random.default_rng(1)
    d = rng.integers(-2, 4, size=40)
    d = d[d != 0]
    r = wilcoxon_signed_rank([(x, 0) for x in d])
    assert r.method == "normal"
    ref = wilcoxon(d, zero_method="wilcox", correction=True, method="approx").pvalue
    assert math.isclose(r.p_value, ref, rel_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=9))
def test_exact_p_property(pairs):
    d = np.array([a - b for a, b in pairs], dtype=float)
    d = d[d != 0]
    if d.size == 0:
        return
    res = wilcoxon_signed_rank(pairs)
    ranks = rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    sums = [sum(r for r, b in zip(ranks, s) if b) for s in itertools.product((0, 1), repeat=d.size)]
    le = sum(s <= w for s in sums)
    ge = sum(s >= w for s in sums)
    assert res.p_value == min(1.0, 2 * min(le, ge) / 2 ** d.size)
    assert 0 < res.p_value <= 1


def test_formatting():
    assert format_mean_std([4, 5, 5, 5]) == "4.8±0.5"
    assert format_mean_std([1.25, 1.25]) == "1.3±0.0"
    assert [p_bucket(p) for p in (0.0004, 0.004, 0.04, 0.0625, 0.5, None)] == \
        ["<0.001", "<0.01", "<0.05", "0.06", "0.50", "n/a"]


def test_unblinded_summary_and_tallies():
    a = [BlindingAssignment("P1", "DL", "CS", 0), BlindingAssignment("P2", "CS", "DL", 0)]
    scores = [ScoreRecord("P1", "1", "A", "snr", 5), ScoreRecord("P1", "1", "B", "snr", 3),
              ScoreRecord("P2", "1", "A", "snr", 2), ScoreRecord("P2", "1", "B", "snr", 4)]
    (row,) = summarize_scores(scores, a)
    assert (row.dl, row.cs, row.n_pairs) == ("4.5±0.7", "2.5±0.7", 2)
    prefs = [PreferenceRecord("P1", "1", 1), PreferenceRecord("P2", "1", 4)]
    (t,) = tally_preferences(prefs, a)
    assert t.counts["strongly_favors_DL"] == 1 and t.counts["favors_DL"] == 1
    assert t.dl_favored_str == "2/2"
    assert preference_csv([t]).splitlines()[1] == "1,1,1,0,0,0,2,2/2,0/2"
    assert table_csv([row]).splitlines()[0] == "Feature,Reader 1 DL,Reader 1 CS,Reader 1 P-Value"
    with pytest.raises(InvalidInputError):
        summarize_scores(scores + scores[:1], a)
    with pytest.raises(JoinError):
        tally_preferences([PreferenceRecord("P9", "1", 1)], a)


def test_degenerate_cell_shows_na():
    a = [BlindingAssignment("P1", "DL", "CS", 0)]
    rows = summarize_scores([ScoreRecord("P1", "1", "A", "snr", 3), ScoreRecord("P1", "1", "B", "snr", 3)], a)
    assert rows[0].p_display == "n/a" and rows[0].test == "degenerate"


def test_csv_round_trip_and_errors(tmp_path):
    a = assign_blinding(["P1", "P2"], seed=3)
    write_assignments(tmp_path / "a.csv", a)
    assert read_assignments(tmp_path / "a.csv") == a
    with pytest.raises(FileExistsError):
        write_assignments(tmp_path / "a.csv", a)
    s = [ScoreRecord("P1", "2", "A", "contrast", 4)]
    write_scores(tmp_path / "s.csv", s)
    assert read_scores(tmp_path / "s.csv") == s
    (tmp_path / "bad.csv").write_text("patient,reader\nx,y\n")
    with pytest.raises(FormatError):
        read_scores(tmp_path / "bad.csv")
    (tmp_path / "bad2.csv").write_text("patient_id,reader_id,variant,metric,score\nP1,1,A,snr,high\n")
    with pytest.raises(FormatError):
        read_scores(tmp_path / "bad2.csv")
