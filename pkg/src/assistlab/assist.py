"""100 Hz closed-loop assist policy with a hard safety envelope.

The need score is a pluggable logistic-of-linear stand-in (any object with a
``score(features)`` method works); the commanded torque is a PD reference
scaled by the score and then passed through the envelope: joint-angle
cutoffs, torque clamp, jerk clamp on the command's discrete second
difference, and stall/time-out disengage.

Clamp design note: the torque clamp and the jerk clamp are enforced jointly
at every tick. A naive jerk window can conflict with the torque wall when
the command approaches it fast, so the envelope additionally caps the
command's per-tick velocity to what can still brake to a stop before the
wall (discrete braking feasibility). The one deliberate exception is the
stall/time-out disengage, which cuts the command to zero in a single tick:
an abnormal-load cut outranks smoothness.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .dsp import WindowFeatures, WINDOW_S

LOOP_RATE_HZ = 100.0
LOOP_DT_S = 1.0 / LOOP_RATE_HZ

DEFAULT_GAINS = (0.8, 0.1)  # (kp, kd), normalized torque per degree / per deg/s


@dataclass(frozen=True)
class NeedScoreModel:
    """Logistic-of-linear assist need: score = sigmoid(w . x + bias) in [0, 1]."""

    weights: Mapping[str, float]
    bias: float

    def score(self, features: WindowFeatures) -> float:
        x = {
            "rms": features.rms,
            "mav": features.mav,
            "zc_count": float(features.zc_count),
            "ti": features.ti if features.ti is not None else 0.0,
            "median_freq_hz": features.median_freq_hz if features.median_freq_hz is not None else 0.0,
        }
        z = self.bias
        for name, w in self.weights.items():
            v = x.get(name, 0.0)
            if not math.isfinite(v):
                raise ValueError(f"non-finite feature {name!r}: {v}")
            z += w * v
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        ez = math.exp(z)
        return ez / (1.0 + ez)


def reference_need_model() -> NeedScoreModel:
    """Default weights: dominated by tremor prominence, mildly by effort."""
    return NeedScoreModel(
        weights={"ti": 6.0, "rms": 0.5, "mav": 0.3, "zc_count": 0.01, "median_freq_hz": -0.01},
        bias=-2.2,
    )


def need_score(model, features: WindowFeatures) -> float:
    return model.score(features)


def pd_reference(target_angle_deg: float, measured_angle_deg: float,
                 measured_velocity_dps: float, gains: tuple[float, float] = DEFAULT_GAINS) -> float:
    """kp * error - kd * velocity, before any safety clamping."""
    kp, kd = gains
    if kp < 0 or kd < 0:
        raise ValueError("gains must be >= 0")
    return kp * (target_angle_deg - measured_angle_deg) - kd * measured_velocity_dps


@dataclass(frozen=True)
class SafetyEnvelope:
    angle_min_deg: float = 5.0
    angle_max_deg: float = 175.0
    torque_max: float = 15.0
    jerk_max: float = 2000.0  # torque units / s^2, clamps the command's 2nd difference
    stall_threshold_dps: float = 2.0
    stall_torque_frac: float = 0.5
    stall_timeout_s: float = 1.0

    def __post_init__(self):
        if self.angle_min_deg >= self.angle_max_deg:
            raise ValueError("angle_min_deg must be < angle_max_deg")
        for name in ("torque_max", "jerk_max", "stall_threshold_dps", "stall_timeout_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class EnvelopeState:
    """Mutable per-loop envelope memory (previous two commands, stall timer).

    The stall timer counts ticks (exact integer arithmetic: accumulating
    float dt would trip the timeout comparison one tick early or late).
    """

    prev_cmd: float = 0.0
    prev_prev_cmd: float = 0.0
    stall_ticks: int = 0
    engaged: bool = True
    tick_index: int = 0

    def stall_elapsed_s(self, dt_s: float) -> float:
        return self.stall_ticks * dt_s

    def reset_disengage(self) -> None:
        """Operator reset after a stall/time-out cut."""
        self.engaged = True
        self.stall_ticks = 0
        self.prev_cmd = 0.0
        self.prev_prev_cmd = 0.0


@dataclass(frozen=True)
class AssistCommand:
    tick_index: int
    commanded_torque: float
    clamped_flags: frozenset[str]
    engaged: bool


def _braking_cap(room: float, a: float) -> float:
    """Largest per-tick velocity from which max deceleration ``a`` per tick
    still stops within ``room`` (discrete braking feasibility).

    Moving at v and braking, positions advance by v, v-a, v-2a, ... so the
    total travel including the current step is F(v) = (m+1)*v - a*m*(m+1)/2
    with m = floor(v/a). F is piecewise linear and increasing; on segment m
    it spans [a*m*(m+1)/2, a*(m+1)*(m+2)/2), which gives the exact inverse.
    """
    if room <= 0:
        return 0.0
    m = math.floor((math.sqrt(1.0 + 8.0 * room / a) - 1.0) / 2.0)
    return (room + a * m * (m + 1) / 2.0) / (m + 1)


def apply_envelope(envelope: SafetyEnvelope, raw_torque: float, angle_deg: float,
                   velocity_dps: float, state: EnvelopeState, dt_s: float) -> AssistCommand:
    """One safety-envelope step; saturates or disengages, never rejects."""
    if dt_s <= 0:
        raise ValueError("dt_s must be > 0")
    flags = set()
    tick = state.tick_index
    state.tick_index += 1

    if not state.engaged:
        state.prev_prev_cmd, state.prev_cmd = state.prev_cmd, 0.0
        return AssistCommand(tick, 0.0, frozenset({"stall_timeout"}), False)

    m = envelope.torque_max
    target = raw_torque
    if abs(target) > m:
        target = math.copysign(m, target)
        flags.add("torque")

    # angle cutoff: out of bounds in the direction the torque pushes -> ramp to 0
    if angle_deg >= envelope.angle_max_deg and target > 0:
        target = 0.0
        flags.add("angle")
    elif angle_deg <= envelope.angle_min_deg and target < 0:
        target = 0.0
        flags.add("angle")

    a = envelope.jerk_max * dt_s * dt_s  # max change of the per-tick first difference
    p, pp = state.prev_cmd, state.prev_prev_cmd
    v_old = p - pp
    dv = target - p
    dv_jerk = min(max(dv, v_old - a), v_old + a)

    # braking feasibility toward both torque walls keeps the jerk and torque
    # clamps jointly satisfiable forever
    cap_up = _braking_cap(m - p, a)
    cap_down = _braking_cap(m + p, a)
    dv_new = min(max(dv_jerk, -cap_down), cap_up)
    if abs(dv_new - dv) > 1e-12:
        flags.add("jerk")
    cmd = p + dv_new
    if abs(cmd) > m:  # numeric safety net; braking cap already guarantees this
        cmd = math.copysign(m, cmd)
        flags.add("torque")

    # stall: low speed under high sustained torque; disengage on the first
    # tick whose accumulated stall time exceeds the timeout
    if abs(velocity_dps) < envelope.stall_threshold_dps and abs(cmd) > envelope.stall_torque_frac * m:
        state.stall_ticks += 1
    else:
        state.stall_ticks = 0
    timeout_ticks = math.floor(envelope.stall_timeout_s / dt_s + 1e-9) + 1
    if state.stall_ticks >= timeout_ticks:
        state.engaged = False
        state.stall_ticks = 0
        state.prev_prev_cmd, state.prev_cmd = state.prev_cmd, 0.0
        return AssistCommand(tick, 0.0, frozenset(flags | {"stall_timeout"}), False)

    state.prev_prev_cmd, state.prev_cmd = state.prev_cmd, cmd
    return AssistCommand(tick, cmd, frozenset(flags), True)


@dataclass
class LoopStats:
    tick_period_s: float
    per_tick_latency_s: np.ndarray
    missed_deadlines: int

    @property
    def median_latency_s(self) -> float:
        return float(np.median(self.per_tick_latency_s))

    @property
    def p95_latency_s(self) -> float:
        return float(np.quantile(self.per_tick_latency_s, 0.95))


@dataclass(frozen=True)
class LoopInputs:
    """Everything the 100 Hz loop consumes, pre-staged.

    ``features`` arrive at the 8 Hz window cadence and are sample-and-held;
    a window becomes available once it is complete (start + 250 ms).
    """

    features: Sequence[WindowFeatures]
    angle_deg: np.ndarray  # at loop rate
    velocity_dps: np.ndarray
    target_angle_deg: np.ndarray


def loop_inputs_from_record(record, gains_target_mid: Optional[float] = None) -> LoopInputs:
    """Stage loop inputs from a generated session record."""
    from .session import channel_samples
    from . import dsp as _dsp

    angle, rate = channel_samples(record, "joint_angle")
    angle = _dsp.smooth_motion(angle, demean=False)
    step = max(1, int(round(rate / LOOP_RATE_HZ)))
    angle_loop = angle[::step]
    angle_loop = np.where(np.isfinite(angle_loop), angle_loop, np.nanmean(angle))
    vel = np.gradient(angle_loop, LOOP_DT_S)

    emg_kind = next(k for k in record.channels if k.startswith("emg"))
    emg, emg_rate = channel_samples(record, emg_kind)
    feats = _dsp.emg_window_features(_dsp.preprocess_emg(emg, emg_rate), emg_rate)
    accel, accel_rate = channel_samples(record, "imu_accel")
    ti_series = dict()
    from .metrics import tremor_index
    for t_start, psd in _dsp.tremor_psd_series(_dsp.smooth_motion(accel), accel_rate):
        ti_series[round(t_start, 6)] = tremor_index(psd, t_start).value
    for wf in feats:
        wf.ti = ti_series.get(round(wf.window_start_s, 6))

    mid = gains_target_mid if gains_target_mid is not None else float(np.nanmean(angle_loop))
    t = np.arange(angle_loop.size) * LOOP_DT_S
    f_c = record.task.cycle_rate_hz
    if f_c > 0:
        span = float(np.nanmax(angle_loop) - np.nanmin(angle_loop))
        target = mid + 0.5 * span * np.sin(2 * math.pi * f_c * t - math.pi / 2.0)
    else:
        target = np.full_like(t, mid)
    return LoopInputs(features=feats, angle_deg=angle_loop, velocity_dps=vel, target_angle_deg=target)


def run_loop(inputs: LoopInputs, model, envelope: SafetyEnvelope,
             gains: tuple[float, float] = DEFAULT_GAINS, duration_s: float = 120.0,
             telemetry=None, dt_s: float = LOOP_DT_S) -> tuple[list[AssistCommand], LoopStats]:
    """Fixed-rate assist loop: exactly floor(duration * 100) ticks.

    Per-tick latency is wall-clock from input-ready to command-emitted; a
    tick exceeding the period, or an input underrun (command held), counts
    as a missed deadline. Command streams are deterministic for identical
    inputs; latency values are not.
    """
    n_ticks = int(math.floor(duration_s * LOOP_RATE_HZ))
    feats = sorted(inputs.features, key=lambda f: f.window_start_s)
    state = EnvelopeState()
    commands: list[AssistCommand] = []
    latencies = np.zeros(n_ticks)
    missed = 0
    fi = -1
    current: Optional[WindowFeatures] = None
    last_cmd: Optional[AssistCommand] = None
    for k in range(n_ticks):
        t0 = time.perf_counter()
        t = k * dt_s
        while fi + 1 < len(feats) and feats[fi + 1].window_start_s + WINDOW_S <= t:
            fi += 1
            current = feats[fi]
        if k >= inputs.angle_deg.size:
            # input underrun: hold the previous command
            missed += 1
            held = AssistCommand(k, last_cmd.commanded_torque if last_cmd else 0.0,
                                 frozenset({"underrun"}), state.engaged)
            commands.append(held)
            latencies[k] = time.perf_counter() - t0
            continue
        need = model.score(current) if current is not None else 0.0
        raw = need * pd_reference(float(inputs.target_angle_deg[k]), float(inputs.angle_deg[k]),
                                  float(inputs.velocity_dps[k]), gains)
        cmd = apply_envelope(envelope, raw, float(inputs.angle_deg[k]),
                             float(inputs.velocity_dps[k]), state, dt_s)
        commands.append(cmd)
        last_cmd = cmd
        latencies[k] = time.perf_counter() - t0
        if latencies[k] > dt_s:
            missed += 1
        if telemetry is not None:
            telemetry(k, t, current, need, cmd)
    return commands, LoopStats(tick_period_s=dt_s, per_tick_latency_s=latencies, missed_deadlines=missed)
