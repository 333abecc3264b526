"""Subject-level paired analysis.

Everything here works on within-subject paired differences (assisted minus
baseline, negative tremor-index change = benefit): exact two-sided Wilcoxon
signed-rank (full enumeration over sign assignments, midranks for ties,
zeros dropped), bias-corrected-and-accelerated bootstrap intervals for the
paired median, sign-based Cliff's delta, 20% trimmed means and one-trial-
per-task resampling as sensitivity analyses, and prespecified responder
counts. No multiplicity adjustment is applied (prespecified hierarchy); the
report carries that note in its footer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

_NORMAL = NormalDist()

WILCOXON_MAX_N = 25
LARGE_EFFECT_LABEL = "paired sign: large effect"


@dataclass(frozen=True)
class PairedSample:
    subject_id: str
    baseline: float
    assisted: float

    @property
    def delta(self) -> float:
        return self.assisted - self.baseline


@dataclass(frozen=True)
class PairedContrast:
    outcome_name: str
    unit: str
    n: int
    b_resamples: int
    median_delta: float
    ci_low: float
    ci_high: float
    p_exact: float
    cliffs_delta: float
    baseline_median: Optional[float] = None
    baseline_iqr: Optional[tuple[float, float]] = None
    assisted_median: Optional[float] = None
    assisted_iqr: Optional[tuple[float, float]] = None

    @property
    def effect_label(self) -> Optional[str]:
        # boundary-prone in small samples; report the qualitative label too
        return LARGE_EFFECT_LABEL if abs(self.cliffs_delta) >= 0.8 else None


def paired_median_delta(samples: Sequence[PairedSample]) -> float:
    """Exact sorted-middle median of within-subject deltas."""
    if not samples:
        raise ValueError("no paired samples")
    return float(np.median([s.delta for s in samples]))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sv = values[order]
    i = 0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_exact(deltas: Sequence[float]) -> tuple[float, float]:
    """Exact two-sided Wilcoxon signed-rank test.

    Zeros are dropped before ranking (classical convention); ties in |delta|
    get midranks. The statistic is the positive-rank sum W+; the p-value
    enumerates all 2^n sign assignments of the ranked magnitudes, so it is
    exact including tie structure: p = min(1, 2*min(P(W<=w), P(W>=w))).

    Returns (W+, p). All-zero input degenerates to p = 1.0.
    """
    d = np.asarray(list(deltas), dtype=np.float64)
    if d.size > WILCOXON_MAX_N:
        raise ValueError(f"exact enumeration limited to n <= {WILCOXON_MAX_N}")
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 0.0, 1.0
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    # subset-sum distribution over doubled ranks (midranks are half-integers)
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:counts.size - r]
        counts = counts + shifted
    n_assignments = 2.0 ** n
    w2 = int(np.rint(2.0 * w_plus))
    p_le = counts[:w2 + 1].sum() / n_assignments
    p_ge = counts[w2:].sum() / n_assignments
    return w_plus, min(1.0, 2.0 * min(p_le, p_ge))


def _jackknife_acceleration(data: np.ndarray, statistic: Callable) -> float:
    n = data.size
    theta_i = np.array([statistic(np.delete(data, i)) for i in range(n)])
    mean_j = theta_i.mean()
    num = float(np.sum((mean_j - theta_i) ** 3))
    den = float(np.sum((mean_j - theta_i) ** 2) ** 1.5)
    return num / (6.0 * den) if den > 0 else 0.0


def _bootstrap_statistics(data: np.ndarray, idx: np.ndarray, statistic: Callable) -> np.ndarray:
    if statistic is np.median:
        return np.median(data[idx], axis=1)
    if statistic is np.mean:
        return np.mean(data[idx], axis=1)
    return np.apply_along_axis(statistic, 1, data[idx])


def bca_ci(deltas: Sequence[float], statistic: Callable = np.median, b: int = 10_000,
           seed: int = 0, alpha: float = 0.05) -> tuple[float, float]:
    """Bias-corrected and accelerated bootstrap CI, resampling subjects.

    Bias term z0 comes from the fraction of resample statistics strictly
    below the point estimate; acceleration from the jackknife skewness.
    Deterministic for a fixed seed: resamples are drawn and reduced in index
    order, so parallel callers splitting ``b`` must preserve that order.
    """
    data = np.asarray(list(deltas), dtype=np.float64)
    if data.size < 3:
        raise ValueError("need n >= 3 subjects for a bootstrap interval")
    if b < 1000:
        raise ValueError("need b >= 1000 resamples")
    point = float(statistic(data))
    if np.all(data == data[0]):
        return point, point
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, data.size])))
    idx = rng.integers(0, data.size, size=(b, data.size))
    thetas = _bootstrap_statistics(data, idx, statistic)
    frac_below = float(np.mean(thetas < point))
    frac_below = min(max(frac_below, 1.0 / (b + 1)), b / (b + 1.0))
    z0 = _NORMAL.inv_cdf(frac_below)
    a = _jackknife_acceleration(data, statistic)
    lo, hi = [], []
    for z_alpha in (_NORMAL.inv_cdf(alpha / 2), _NORMAL.inv_cdf(1 - alpha / 2)):
        adj = z0 + (z0 + z_alpha) / (1.0 - a * (z0 + z_alpha))
        (lo if z_alpha < 0 else hi).append(_NORMAL.cdf(adj))
    low = float(np.quantile(thetas, min(max(lo[0], 0.0), 1.0)))
    high = float(np.quantile(thetas, min(max(hi[0], 0.0), 1.0)))
    return low, high


def cliffs_delta_signed(deltas: Sequence[float]) -> float:
    """(#positive - #negative) / n over delta signs; zeros stay in n."""
    d = np.asarray(list(deltas), dtype=np.float64)
    if d.size == 0:
        raise ValueError("no deltas")
    return float(((d > 0).sum() - (d < 0).sum()) / d.size)


@dataclass(frozen=True)
class TrimmedMean:
    value: float
    trim_frac: float
    n_trimmed_each_side: int
    trimmed: bool  # False when n was too small and the plain mean was used


def trimmed_mean_contrast(deltas: Sequence[float], trim_frac: float = 0.20) -> TrimmedMean:
    """Drop floor(trim*n) smallest and largest deltas, mean the rest."""
    d = np.sort(np.asarray(list(deltas), dtype=np.float64))
    n = d.size
    if n == 0:
        raise ValueError("no deltas")
    k = int(math.floor(trim_frac * n))
    if 2 * k >= n:
        return TrimmedMean(float(d.mean()), trim_frac, 0, trimmed=False)
    kept = d[k:n - k] if k else d
    return TrimmedMean(float(kept.mean()), trim_frac, k, trimmed=k > 0)


@dataclass(frozen=True)
class SensitivityResult:
    point_estimate: float
    sign_consistency: float  # fraction of resampled contrasts matching the point's sign
    n_draws: int
    skipped_subjects: tuple[str, ...]


def task_resample_sensitivity(trials: Mapping, seed: int = 0, draws: int = 1000) -> SensitivityResult:
    """Redo the paired contrast drawing one trial per task per subject.

    ``trials`` maps (subject_id, task, condition) -> list of outcome values.
    Subjects missing a task in either condition are skipped (flagged). With
    one trial everywhere the distribution collapses to the point estimate.
    """
    subjects = sorted({k[0] for k in trials})
    tasks = sorted({k[1] for k in trials})
    usable, skipped = [], []
    for s in subjects:
        if all(trials.get((s, t, c)) for t in tasks for c in ("baseline", "assisted")):
            usable.append(s)
        else:
            skipped.append(s)
    if not usable:
        raise ValueError("no subject has full task coverage")

    def contrast(pick: Callable[[list], float]) -> float:
        ds = []
        for s in usable:
            med = {
                c: float(np.median([pick(trials[(s, t, c)]) for t in tasks]))
                for c in ("baseline", "assisted")
            }
            ds.append(med["assisted"] - med["baseline"])
        return float(np.median(ds))

    point = contrast(lambda vals: float(np.median(vals)))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 83])))
    stats = np.empty(draws)
    for i in range(draws):
        stats[i] = contrast(lambda vals: vals[rng.integers(0, len(vals))])
    if point == 0.0:
        consistency = float(np.mean(stats == 0.0))
    else:
        consistency = float(np.mean(np.sign(stats) == np.sign(point)))
    return SensitivityResult(point, consistency, draws, tuple(skipped))


@dataclass(frozen=True)
class Thresholds:
    ti: float = 0.30
    rom_deg: float = 5.0
    reps_per_min: float = 1.5


@dataclass(frozen=True)
class ResponderRow:
    criterion: str
    n_responders: int
    n_total: int

    @property
    def proportion_pct(self) -> float:
        return 100.0 * self.n_responders / self.n_total


def responder_table(assisted_ti: Mapping[str, float], rom_gain_deg: Mapping[str, float],
                    reps_gain: Mapping[str, float], thresholds: Thresholds = Thresholds()) -> list[ResponderRow]:
    """Prespecified bedside criteria: assisted TI level, ROM and Reps gains."""
    rows = [
        ResponderRow(
            f"TI <= {thresholds.ti:g} (assisted)",
            sum(1 for v in assisted_ti.values() if v <= thresholds.ti),
            len(assisted_ti),
        ),
        ResponderRow(
            f"ROM gain >= {thresholds.rom_deg:g} deg",
            sum(1 for v in rom_gain_deg.values() if v >= thresholds.rom_deg),
            len(rom_gain_deg),
        ),
        ResponderRow(
            f"Reps gain >= {thresholds.reps_per_min:g} /min",
            sum(1 for v in reps_gain.values() if v >= thresholds.reps_per_min),
            len(reps_gain),
        ),
    ]
    return rows


# ---------------------------------------------------------------------------
# Cohort analysis assembly
# ---------------------------------------------------------------------------

OUTCOME_COLUMNS = {
    "ti": "ti_median",
    "rom_deg": "rom_deg",
    "reps": "reps_per_min",
    "fmed_slope": "fmed_slope_hz_per_min",
}

OUTCOME_UNITS = {
    "ti": "unitless",
    "rom_pct": "%",
    "rom_deg": "deg",
    "reps": "per min",
    "fmed_slope": "Hz/min",
}


def _iqr(values: np.ndarray) -> tuple[float, float]:
    # linear-interpolation quartile convention
    return float(np.quantile(values, 0.25)), float(np.quantile(values, 0.75))


def subject_condition_medians(rows: Sequence[Mapping]) -> dict:
    """subject -> condition -> outcome -> median over that subject's tasks."""
    per: dict = {}
    for row in rows:
        s, c = row["subject_id"], row["condition"]
        per.setdefault(s, {}).setdefault(c, {}).setdefault("_rows", []).append(row)
    out: dict = {}
    for s, conds in per.items():
        out[s] = {}
        for c, bag in conds.items():
            vals = {}
            for name, col in OUTCOME_COLUMNS.items():
                vals[name] = float(np.median([float(r[col]) for r in bag["_rows"]]))
            out[s][c] = vals
    return out


def build_contrast(outcome_name: str, unit: str, samples: list[PairedSample],
                   b: int, seed: int) -> PairedContrast:
    deltas = [s.delta for s in samples]
    med = paired_median_delta(samples)
    low, high = bca_ci(deltas, np.median, b=b, seed=seed)
    if not (low <= med <= high):
        log.warning("BCa interval [%g, %g] does not bracket the point estimate %g for %s",
                    low, high, med, outcome_name)
    _, p = wilcoxon_exact(deltas)
    base = np.asarray([s.baseline for s in samples])
    assist = np.asarray([s.assisted for s in samples])
    return PairedContrast(
        outcome_name=outcome_name,
        unit=unit,
        n=len(samples),
        b_resamples=b,
        median_delta=med,
        ci_low=low,
        ci_high=high,
        p_exact=p,
        cliffs_delta=cliffs_delta_signed(deltas),
        baseline_median=float(np.median(base)),
        baseline_iqr=_iqr(base),
        assisted_median=float(np.median(assist)),
        assisted_iqr=_iqr(assist),
    )


def analyze_cohort(rows: Sequence[Mapping], b: int = 10_000, seed: int = 0,
                   trim_frac: float = 0.20, thresholds: Thresholds = Thresholds()) -> dict:
    """Full paired analysis from tidy per-session outcome rows.

    Rows need the summary-CSV columns. Subjects present in only one
    condition are dropped from pairing (reported). Returns the report
    document dict (see render_report_text for the human-readable form).
    """
    medians = subject_condition_medians(rows)
    paired_subjects = sorted(s for s, c in medians.items() if "baseline" in c and "assisted" in c)
    dropped = sorted(set(medians) - set(paired_subjects))
    if len(paired_subjects) < 2:
        raise ValueError(f"need >= 2 paired subjects, have {len(paired_subjects)}")

    def samples_for(name: str) -> list[PairedSample]:
        return [
            PairedSample(s, medians[s]["baseline"][name], medians[s]["assisted"][name])
            for s in paired_subjects
        ]

    contrasts: list[PairedContrast] = []
    contrasts.append(build_contrast("ti", OUTCOME_UNITS["ti"], samples_for("ti"), b, seed))
    rom_samples = samples_for("rom_deg")
    rom_pct = [
        PairedSample(s.subject_id, 0.0, 100.0 * (s.assisted - s.baseline) / s.baseline)
        for s in rom_samples
    ]
    rom_contrast = build_contrast("rom_pct", OUTCOME_UNITS["rom_pct"], rom_pct, b, seed + 1)
    # baseline/assisted cells stay in degrees for the ROM row
    base = np.asarray([s.baseline for s in rom_samples])
    assist = np.asarray([s.assisted for s in rom_samples])
    rom_contrast = PairedContrast(
        **{**rom_contrast.__dict__,
           "baseline_median": float(np.median(base)), "baseline_iqr": _iqr(base),
           "assisted_median": float(np.median(assist)), "assisted_iqr": _iqr(assist)})
    contrasts.append(rom_contrast)
    contrasts.append(build_contrast("rom_deg", OUTCOME_UNITS["rom_deg"], rom_samples, b, seed + 2))
    contrasts.append(build_contrast("reps", OUTCOME_UNITS["reps"], samples_for("reps"), b, seed + 3))
    contrasts.append(build_contrast("fmed_slope", OUTCOME_UNITS["fmed_slope"], samples_for("fmed_slope"), b, seed + 4))

    trimmed = {
        c.outcome_name: trimmed_mean_contrast(
            [medians[s]["assisted"][c.outcome_name] - medians[s]["baseline"][c.outcome_name]
             for s in paired_subjects] if c.outcome_name in OUTCOME_COLUMNS else
            [p.delta for p in rom_pct], trim_frac).__dict__
        for c in contrasts
    }

    trials: dict = {}
    for row in rows:
        if row["subject_id"] not in paired_subjects:
            continue
        for name, col in OUTCOME_COLUMNS.items():
            trials.setdefault(name, {}).setdefault(
                (row["subject_id"], row["task"], row["condition"]), []
            ).append(float(row[col]))
    sensitivity = {
        name: task_resample_sensitivity(per_outcome, seed=seed + 11).__dict__
        for name, per_outcome in sorted(trials.items())
    }

    responders = responder_table(
        assisted_ti={s: medians[s]["assisted"]["ti"] for s in paired_subjects},
        rom_gain_deg={s: medians[s]["assisted"]["rom_deg"] - medians[s]["baseline"]["rom_deg"]
                      for s in paired_subjects},
        reps_gain={s: medians[s]["assisted"]["reps"] - medians[s]["baseline"]["reps"]
                   for s in paired_subjects},
        thresholds=thresholds,
    )

    trajectories = [
        {"subject_id": s, "condition": c,
         **{name: medians[s][c][name] for name in OUTCOME_COLUMNS}}
        for s in paired_subjects for c in ("baseline", "assisted")
    ]

    return {
        "n_subjects": len(paired_subjects),
        "subjects": paired_subjects,
        "dropped_subjects": dropped,
        "b_resamples": b,
        "seed": seed,
        "trim_frac": trim_frac,
        "thresholds": thresholds.__dict__,
        "contrasts": [
            {**c.__dict__, "effect_label": c.effect_label,
             "baseline_iqr": list(c.baseline_iqr), "assisted_iqr": list(c.assisted_iqr)}
            for c in contrasts
        ],
        "trimmed_means": trimmed,
        "task_resampling": sensitivity,
        "responders": [
            {"criterion": r.criterion, "n_responders": r.n_responders,
             "n_total": r.n_total, "proportion_pct": r.proportion_pct}
            for r in responders
        ],
        "trajectories": trajectories,
        "notes": [
            "No multiplicity adjustment applied (prespecified outcome hierarchy).",
            "Listwise session exclusion above 5% primary-channel missingness; no imputation.",
        ],
    }


_ROW_LABELS = {
    "ti": "Tremor Index (unitless)",
    "rom_pct": "ROM (deg, change in %)",
    "rom_deg": "ROM (deg)",
    "reps": "Reps (per min)",
    "fmed_slope": "EMG median-frequency slope (Hz/min)",
}


def render_report_text(report: dict) -> str:
    """Deterministic human-readable rendering of the report document."""
    lines = []
    n = report["n_subjects"]
    lines.append(f"Paired outcomes (subject-level medians), n={n}, B={report['b_resamples']}")
    lines.append("=" * 78)
    header = f"{'Outcome':<34}{'Baseline':>14}{'Assisted':>14}{'Delta (95% CI), p, delta':>16}"
    lines.append(header)
    lines.append("-" * 78)
    for c in report["contrasts"]:
        label = _ROW_LABELS.get(c["outcome_name"], c["outcome_name"])
        base = f"{c['baseline_median']:.3f}" if c["baseline_median"] is not None else "--"
        assist = f"{c['assisted_median']:.3f}" if c["assisted_median"] is not None else "--"
        delta = f"{c['median_delta']:+.3f} [{c['ci_low']:+.3f}, {c['ci_high']:+.3f}]"
        lines.append(f"{label:<34}{base:>14}{assist:>14}  {delta}")
        effect = f"Cliff's delta {c['cliffs_delta']:+.2f}"
        if c.get("effect_label"):
            effect += f" ({c['effect_label']})"
        lines.append(f"{'':<34}{'IQR ' + _fmt_iqr(c['baseline_iqr']):>14}"
                     f"{'IQR ' + _fmt_iqr(c['assisted_iqr']):>14}  p={c['p_exact']:.4g}, {effect}")
    lines.append("-" * 78)
    lines.append("Responder analysis (prespecified thresholds)")
    for r in report["responders"]:
        lines.append(f"  {r['criterion']:<38} {r['n_responders']} / {r['n_total']}"
                     f"  ({r['proportion_pct']:.1f}%)")
    if "tech_endpoints" in report:
        t = report["tech_endpoints"]
        lines.append("-" * 78)
        lines.append("Technical endpoints")
        lines.append(f"  Control-loop rate: {t['loop_rate_hz']:.0f} Hz")
        lines.append(f"  Median per-tick latency: {t['latency_median_ms']:.3f} ms"
                     f" (p95 {t['latency_p95_ms']:.3f} ms)")
        lines.append(f"  Missed deadlines: {t['missed_deadlines']}")
        lines.append(f"  Session completion: {t['completion_pct']:.1f}%")
        lines.append(f"  Device-related adverse events: {t['adverse_events']}")
    lines.append("-" * 78)
    for note in report["notes"]:
        lines.append(f"Note: {note}")
    return "\n".join(lines) + "\n"


def _fmt_iqr(iqr) -> str:
    return f"[{iqr[0]:.2f}, {iqr[1]:.2f}]"
