import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assistlab import stats
from assistlab.stats import (
    PairedSample,
    Thresholds,
    analyze_cohort,
    bca_ci,
    cliffs_delta_signed,
    paired_median_delta,
    render_report_text,
    responder_table,
    task_resample_sensitivity,
    trimmed_mean_contrast,
    wilcoxon_exact,
)

# ---------------------------------------------------------------------------
# Independent oracle, written before the implementation was tested against it:
# enumerate all 2^n sign assignments of the midranked |deltas| directly.
# ---------------------------------------------------------------------------


def midranks_oracle(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_bruteforce(deltas):
    d = [x for x in deltas if x != 0.0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = midranks_oracle([abs(x) for x in d])
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    le = ge = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if w <= w_obs + 1e-12:
            le += 1
        if w >= w_obs - 1e-12:
            ge += 1
    total = 2 ** n
    return w_obs, min(1.0, 2.0 * min(le / total, ge / total))


class TestWilcoxonExact:
    def test_all_same_sign_n12(self):
        w, p = wilcoxon_exact([-0.1 * (i + 1) for i in range(12)])
        assert p == pytest.approx(2.0 / 4096.0)

    def test_single_delta(self):
        _, p = wilcoxon_exact([0.5])
        assert p == 1.0

    def test_all_zero_degenerate(self):
        _, p = wilcoxon_exact([0.0, 0.0, 0.0])
        assert p == 1.0

    def test_zeros_dropped_before_ranking(self):
        _, p_with = wilcoxon_exact([0.0, 1.0, 2.0, -0.5])
        _, p_without = wilcoxon_exact([1.0, 2.0, -0.5])
        assert p_with == p_without

    def test_too_many_samples_rejected(self):
        with pytest.raises(ValueError):
            wilcoxon_exact(list(range(1, 27)))

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_bruteforce_enumeration(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(3, 11))
        d = np.round(r.normal(0.1, 1.0, n), 1)  # rounding forces ties and zeros
        w_impl, p_impl = wilcoxon_exact(list(d))
        w_ref, p_ref = wilcoxon_bruteforce(list(d))
        nz = d[d != 0]
        if nz.size:
            assert w_impl == pytest.approx(w_ref)
        assert p_impl == pytest.approx(p_ref, abs=1e-12)


class TestBcaCi:
    def test_zero_variance_degenerates_to_point(self):
        assert bca_ci([2.0] * 6, b=1000, seed=0) == (2.0, 2.0)

    def test_point_estimate_inside_interval(self, rng):
        d = rng.normal(-0.09, 0.02, 12)
        lo, hi = bca_ci(d, b=2000, seed=1)
        assert lo <= float(np.median(d)) <= hi

    def test_symmetric_data_close_to_percentile_interval(self):
        r = np.random.default_rng(7)
        d = r.normal(0.0, 1.0, 12)
        lo, hi = bca_ci(d, b=5000, seed=3)
        # percentile oracle on the same resample draws (same generator construction)
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence([3, 12])))
        idx = g.integers(0, 12, size=(5000, 12))
        thetas = np.median(np.asarray(d)[idx], axis=1)
        p_lo, p_hi = np.quantile(thetas, [0.025, 0.975])
        width = p_hi - p_lo
        assert lo == pytest.approx(p_lo, abs=0.2 * width)
        assert hi == pytest.approx(p_hi, abs=0.2 * width)

    def test_deterministic_under_seed(self, rng):
        d = rng.normal(0.0, 1.0, 10)
        assert bca_ci(d, b=2000, seed=9) == bca_ci(d, b=2000, seed=9)
        assert bca_ci(d, b=2000, seed=9) != bca_ci(d, b=2000, seed=10)

    def test_wider_spread_never_shrinks_interval(self, rng):
        d = rng.normal(0.0, 1.0, 12)
        lo1, hi1 = bca_ci(d, b=2000, seed=4)
        lo2, hi2 = bca_ci(3.0 * d, b=2000, seed=4)  # same resample indices
        assert (hi2 - lo2) >= (hi1 - lo1) - 1e-12

    def test_interval_matches_reproduction_target(self):
        # twelve paired deltas with median -0.092 whose middle order
        # statistics sit at the target interval bounds; the 95% interval
        # must land on [-0.102, -0.079] within 20% of its width
        d = np.array([-0.112, -0.105, -0.102, -0.0985, -0.095, -0.0935,
                      -0.0905, -0.0875, -0.081, -0.0785, -0.073, -0.068])
        assert float(np.median(d)) == pytest.approx(-0.092)
        lo, hi = bca_ci(d, b=10_000, seed=0)
        tol = 0.2 * (0.102 - 0.079)
        assert lo == pytest.approx(-0.102, abs=tol)
        assert hi == pytest.approx(-0.079, abs=tol)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            bca_ci([1.0, 2.0], b=2000)
        with pytest.raises(ValueError):
            bca_ci([1.0, 2.0, 3.0], b=10)


class TestCliffsDelta:
    def test_paper_sign_patterns(self):
        assert cliffs_delta_signed([-1.0] * 11 + [1.0]) == pytest.approx(-10 / 12)
        assert cliffs_delta_signed([1.0] * 10 + [-1.0, 0.0]) == pytest.approx(0.75)
        assert cliffs_delta_signed([1.0] * 11 + [0.0]) == pytest.approx(11 / 12)

    def test_all_zeros(self):
        assert cliffs_delta_signed([0.0, 0.0]) == 0.0

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
    @settings(max_examples=100, deadline=None)
    def test_bounded_and_antisymmetric(self, xs):
        v = cliffs_delta_signed(xs)
        assert -1.0 <= v <= 1.0
        assert cliffs_delta_signed([-x for x in xs]) == pytest.approx(-v)


class TestTrimmedMean:
    def test_symmetric_trim_removes_outliers(self):
        out = trimmed_mean_contrast([-100.0, 1.0, 2.0, 3.0, 100.0], 0.20)
        assert out.value == pytest.approx(2.0)
        assert out.trimmed

    def test_all_equal(self):
        assert trimmed_mean_contrast([5.0] * 8).value == 5.0

    def test_small_n_falls_back_with_flag(self):
        out = trimmed_mean_contrast([1.0, 3.0], 0.5)
        assert out.value == pytest.approx(2.0)
        assert not out.trimmed

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_sort_and_slice_oracle(self, seed):
        r = np.random.default_rng(seed)
        vals = r.normal(0, 5, int(r.integers(5, 40)))
        out = trimmed_mean_contrast(list(vals), 0.20)
        s = np.sort(vals)
        k = int(np.floor(0.20 * s.size))
        expected = s[k:s.size - k].mean() if 2 * k < s.size else s.mean()
        assert out.value == pytest.approx(expected, abs=1e-12)


class TestPairedMedian:
    def test_odd(self):
        samples = [PairedSample(f"s{i}", 0.0, d) for i, d in enumerate([-1.0, 0.0, 2.0])]
        assert paired_median_delta(samples) == 0.0

    def test_even(self):
        samples = [PairedSample(f"s{i}", 0.0, d) for i, d in enumerate([1.0, 3.0])]
        assert paired_median_delta(samples) == 2.0

    def test_permutation_invariant(self, rng):
        deltas = list(rng.normal(0, 1, 9))
        a = paired_median_delta([PairedSample(str(i), 0.0, d) for i, d in enumerate(deltas)])
        perm = list(rng.permutation(deltas))
        b = paired_median_delta([PairedSample(str(i), 0.0, d) for i, d in enumerate(perm)])
        assert a == pytest.approx(b)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            paired_median_delta([])


class TestTaskResampling:
    def test_single_trial_collapses_to_point(self):
        trials = {}
        for s in ("a", "b", "c"):
            for t in ("t1", "t2"):
                trials[(s, t, "baseline")] = [1.0]
                trials[(s, t, "assisted")] = [1.5]
        out = task_resample_sensitivity(trials, seed=0, draws=50)
        assert out.point_estimate == pytest.approx(0.5)
        assert out.sign_consistency == 1.0

    def test_multi_trial_sign_consistency(self, rng):
        trials = {}
        for s in range(6):
            for t in ("t1", "t2", "t3"):
                trials[(f"s{s}", t, "baseline")] = list(rng.normal(1.0, 0.05, 3))
                trials[(f"s{s}", t, "assisted")] = list(rng.normal(1.6, 0.05, 3))
        out = task_resample_sensitivity(trials, seed=1, draws=300)
        assert out.sign_consistency >= 0.95

    def test_missing_coverage_skips_subject(self):
        trials = {
            ("a", "t1", "baseline"): [1.0], ("a", "t1", "assisted"): [2.0],
            ("a", "t2", "baseline"): [1.0], ("a", "t2", "assisted"): [2.0],
            ("b", "t1", "baseline"): [1.0], ("b", "t1", "assisted"): [2.0],
            # b is missing t2 entirely
        }
        out = task_resample_sensitivity(trials, seed=0, draws=10)
        assert out.skipped_subjects == ("b",)


class TestResponderTable:
    def test_infinite_thresholds_zero_responders(self):
        rows = responder_table(
            {"a": 0.2, "b": 0.4}, {"a": 10.0, "b": 3.0}, {"a": 2.0, "b": 1.0},
            Thresholds(ti=-1.0, rom_deg=float("inf"), reps_per_min=float("inf")),
        )
        assert [r.n_responders for r in rows] == [0, 0, 0]

    def test_trivial_thresholds_all_respond(self):
        rows = responder_table(
            {"a": 0.2, "b": 0.4}, {"a": 10.0, "b": 3.0}, {"a": 2.0, "b": 1.0},
            Thresholds(ti=1.0, rom_deg=-1e9, reps_per_min=-1e9),
        )
        assert [(r.n_responders, r.n_total) for r in rows] == [(2, 2)] * 3

    def test_default_thresholds(self):
        rows = responder_table({"a": 0.29, "b": 0.31}, {"a": 5.1, "b": 4.9}, {"a": 1.6, "b": 1.4})
        assert [r.n_responders for r in rows] == [1, 1, 1]
        assert rows[0].proportion_pct == pytest.approx(50.0)


def synthetic_rows(n=6, tasks=("push_extend", "pinch_grip", "reach_hold")):
    rows = []
    r = np.random.default_rng(0)
    for i in range(n):
        for task in tasks:
            base_ti = 0.45 + 0.01 * r.standard_normal()
            rows.append(dict(subject_id=f"S{i}", task=task, condition="baseline",
                             ti_median=base_ti, rom_deg=80 + i, reps_per_min=10.0 + 0.1 * i,
                             fmed_slope_hz_per_min=-0.2))
            rows.append(dict(subject_id=f"S{i}", task=task, condition="assisted",
                             ti_median=base_ti - 0.09, rom_deg=90 + i, reps_per_min=13.0 + 0.1 * i,
                             fmed_slope_hz_per_min=-0.1))
    return rows


class TestAnalyzeCohort:
    def test_structural(self):
        report = analyze_cohort(synthetic_rows(), b=1000, seed=0)
        names = [c["outcome_name"] for c in report["contrasts"]]
        assert names == ["ti", "rom_pct", "rom_deg", "reps", "fmed_slope"]
        assert len(report["responders"]) == 3
        assert report["n_subjects"] == 6
        assert len(report["trajectories"]) == 12

    def test_subject_missing_condition_dropped(self):
        rows = synthetic_rows()
        rows = [r for r in rows if not (r["subject_id"] == "S0" and r["condition"] == "assisted")]
        report = analyze_cohort(rows, b=1000, seed=0)
        assert report["n_subjects"] == 5
        assert report["dropped_subjects"] == ["S0"]

    def test_too_few_subjects_rejected(self):
        rows = [r for r in synthetic_rows(2) if r["subject_id"] == "S0"]
        with pytest.raises(ValueError, match="paired subjects"):
            analyze_cohort(rows, b=1000, seed=0)

    def test_report_text_round_trip(self):
        report = analyze_cohort(synthetic_rows(), b=1000, seed=0)
        text1 = render_report_text(report)
        again = json.loads(json.dumps(report, sort_keys=True))
        text2 = render_report_text(again)
        assert text1 == text2
        assert "no multiplicity" in text1.lower()

    def test_large_effect_label_present(self):
        report = analyze_cohort(synthetic_rows(), b=1000, seed=0)
        ti_row = report["contrasts"][0]
        assert abs(ti_row["cliffs_delta"]) >= 0.8
        assert ti_row["effect_label"] == stats.LARGE_EFFECT_LABEL
