"""Clinician-facing outcome metrics.

Four outcomes are computed per session:

* tremor prominence: fraction of acceleration spectral power in 4-12 Hz over
  0.5-20 Hz (unitless, lower is better),
* range of motion: peak-to-peak joint excursion in degrees,
* repetitions per minute: upward mean-crossings with refractory gating,
* fatigue trend: robust (Theil-Sen) slope of the per-window EMG median
  frequency, in Hz/min (less negative is better).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .kernels import upward_crossings

TREMOR_BAND_HZ = (4.0, 12.0)
REFERENCE_BAND_HZ = (0.5, 20.0)

# Refractory default: 300 ms rejects tremor-band (>= 4 Hz) double counting
# while admitting up to ~3 reps/s, far above task cycling rates.
DEFAULT_REFRACTORY_S = 0.3


class NoMotionError(ValueError):
    """Raised when a motion trace carries no spectral power to normalise by."""


@dataclass(frozen=True)
class TremorIndex:
    value: float
    window_start_s: float = 0.0
    band_hz: tuple[float, float] = TREMOR_BAND_HZ
    reference_band_hz: tuple[float, float] = REFERENCE_BAND_HZ


@dataclass(frozen=True)
class RomMeasure:
    value_deg: float
    joint: str = "elbow"


@dataclass(frozen=True)
class RepCount:
    count: int
    duration_s: float
    refractory_s: float

    @property
    def rate_per_min(self) -> float:
        return self.count / (self.duration_s / 60.0)


@dataclass(frozen=True)
class FatigueTrend:
    slope_hz_per_min: float
    intercept_hz: float
    n_windows: int
    fit_method: str = "theil_sen"


@dataclass(frozen=True)
class SessionOutcomes:
    ti_median: float
    rom_deg: float
    reps_per_min: float
    fmed_slope_hz_per_min: float


def tremor_index(psd: dsp.PsdEstimate, window_start_s: float = 0.0) -> TremorIndex:
    """Band-power ratio on the Welch grid (trapezoid, edges interpolated)."""
    f = psd.freqs_hz
    if f[0] > REFERENCE_BAND_HZ[0] or f[-1] < REFERENCE_BAND_HZ[1]:
        raise ValueError(
            f"PSD grid [{f[0]}, {f[-1]}] Hz does not span the reference band {REFERENCE_BAND_HZ}"
        )
    denom = dsp.band_power(psd, *REFERENCE_BAND_HZ)
    if denom <= 0.0:
        raise NoMotionError("no acceleration power in 0.5-20 Hz; motionless trace?")
    num = dsp.band_power(psd, *TREMOR_BAND_HZ)
    value = min(max(num / denom, 0.0), 1.0)
    return TremorIndex(value=value, window_start_s=window_start_s)


def rom(angle_trace, joint: str = "elbow") -> RomMeasure:
    """Peak-to-peak excursion of the (already smoothed) angle trace.

    Gap spans (NaN) are ignored; they carry no excursion information.
    """
    theta = np.asarray(angle_trace, dtype=np.float64)
    if theta.size == 0 or not np.any(np.isfinite(theta)):
        raise ValueError("empty angle trace")
    return RomMeasure(value_deg=float(np.nanmax(theta) - np.nanmin(theta)), joint=joint)


def count_reps(trace, rate_hz: float, refractory_s: float = DEFAULT_REFRACTORY_S) -> RepCount:
    """Upward mean-crossings with refractory gating, normalised to minutes.

    Crossings are never detected across a gap span (NaN compares false on
    both sides), so losses cannot synthesise events.
    """
    x = np.asarray(trace, dtype=np.float64)
    duration_s = x.size / rate_hz
    if duration_s < 2.0 * refractory_s:
        raise ValueError(f"trace of {duration_s:.3f}s shorter than twice the refractory period")
    refractory_n = int(round(refractory_s * rate_hz))
    idx = upward_crossings(x, float(np.nanmean(x)), refractory_n)
    return RepCount(count=int(idx.size), duration_s=duration_s, refractory_s=refractory_s)


def theil_sen(times, values) -> tuple[float, float]:
    """Median of all pairwise slopes; intercept is median(y - slope*t).

    Deterministic and parameter-free; O(n^2) pairs evaluated vectorised.
    """
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if t.size != y.size or t.size < 2:
        raise ValueError("need >= 2 (time, value) points")
    dt = t[:, None] - t[None, :]
    dy = y[:, None] - y[None, :]
    iu = np.triu_indices(t.size, k=1)
    dt, dy = dt[iu], dy[iu]
    ok = dt != 0.0
    if not np.any(ok):
        raise ValueError("all timestamps identical")
    slope = float(np.median(dy[ok] / dt[ok]))
    intercept = float(np.median(y - slope * t))
    return slope, intercept


def fatigue_slope(fmed_series) -> FatigueTrend:
    """Theil-Sen trend of (time_s, median frequency) pairs, in Hz/min."""
    pts = [(t, v) for t, v in fmed_series if v is not None and np.isfinite(v)]
    if len(pts) < 2:
        raise ValueError("need >= 2 median-frequency points")
    t = np.asarray([p[0] for p in pts]) / 60.0  # minutes
    y = np.asarray([p[1] for p in pts])
    slope, intercept = theil_sen(t, y)
    return FatigueTrend(slope_hz_per_min=slope, intercept_hz=intercept, n_windows=len(pts))


def _median(values: np.ndarray) -> float:
    # sorted-middle median; mean of the two middles for even n
    return float(np.median(values))


def session_outcomes(record) -> SessionOutcomes:
    """Run the full pipeline over one session record.

    Tremor prominence: median of window-level values from the rolling 2 s
    Welch estimate on smoothed acceleration. ROM and repetitions come from
    the smoothed joint-angle trace. The fatigue slope is fitted over the
    first EMG channel's per-window median frequencies.

    Degenerate spectra propagate as NoMotionError/DegenerateSpectrumError
    with the offending window index in the message.
    """
    from .session import channel_samples  # local import to avoid a cycle

    accel, accel_rate = channel_samples(record, "imu_accel")
    accel_s = dsp.smooth_motion(accel)
    ti_values = []
    for k, (t_start, psd) in enumerate(dsp.tremor_psd_series(accel_s, accel_rate)):
        try:
            ti_values.append(tremor_index(psd, t_start).value)
        except NoMotionError as e:
            raise NoMotionError(f"window {k} at {t_start:.3f}s: {e}") from None
    if not ti_values:
        raise NoMotionError("session too short for any tremor-band estimate")

    angle, angle_rate = channel_samples(record, "joint_angle")
    angle_s = dsp.smooth_motion(angle, demean=False)
    rom_deg = rom(angle_s).value_deg
    reps = count_reps(angle_s, angle_rate)

    emg_kind = next(k for k in record.channels if k.startswith("emg"))
    emg, emg_rate = channel_samples(record, emg_kind)
    feats = dsp.emg_window_features(dsp.preprocess_emg(emg, emg_rate), emg_rate)
    fmed_pts = [(wf.window_start_s, wf.median_freq_hz) for wf in feats]
    trend = fatigue_slope(fmed_pts)

    return SessionOutcomes(
        ti_median=_median(np.asarray(ti_values)),
        rom_deg=rom_deg,
        reps_per_min=reps.rate_per_min,
        fmed_slope_hz_per_min=trend.slope_hz_per_min,
    )
