import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from assistlab import signalgen as sg
from assistlab.assist import (
    EnvelopeState,
    LOOP_DT_S,
    LoopInputs,
    NeedScoreModel,
    SafetyEnvelope,
    apply_envelope,
    loop_inputs_from_record,
    need_score,
    pd_reference,
    reference_need_model,
    run_loop,
)
from assistlab.dsp import WindowFeatures


def features(ti=0.4, rms=0.6, mav=0.45, zc=70, fmed=90.0, t=0.0):
    return WindowFeatures(rms=rms, mav=mav, zc_count=zc, window_start_s=t,
                          median_freq_hz=fmed, ti=ti)


def logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


class TestNeedScore:
    def test_zero_features_zero_bias(self):
        model = NeedScoreModel(weights={"ti": 1.0, "rms": 1.0}, bias=0.0)
        f = WindowFeatures(rms=0.0, mav=0.0, zc_count=0, window_start_s=0.0,
                           median_freq_hz=0.0, ti=0.0)
        assert need_score(model, f) == pytest.approx(0.5)

    def test_large_negative_bias_limit(self):
        model = NeedScoreModel(weights={}, bias=-60.0)
        assert need_score(model, features()) == pytest.approx(0.0, abs=1e-20)

    def test_monotone_in_tremor_with_reference_weights(self):
        model = reference_need_model()
        lo = need_score(model, features(ti=0.30))
        hi = need_score(model, features(ti=0.45))
        assert hi > lo
        # independent evaluation of the logistic at both points
        base = (0.5 * 0.6 + 0.3 * 0.45 + 0.01 * 70 - 0.01 * 90.0) - 2.2
        assert hi == pytest.approx(logistic(6.0 * 0.45 + base), abs=1e-12)
        assert lo == pytest.approx(logistic(6.0 * 0.30 + base), abs=1e-12)

    def test_output_always_in_unit_interval(self):
        model = NeedScoreModel(weights={"rms": 100.0}, bias=50.0)
        assert 0.0 <= need_score(model, features(rms=1e6)) <= 1.0

    def test_non_finite_feature_rejected(self):
        model = reference_need_model()
        with pytest.raises(ValueError, match="non-finite"):
            need_score(model, features(rms=float("nan")))


class TestPdReference:
    def test_equilibrium(self):
        assert pd_reference(10.0, 10.0, 0.0, (1.0, 0.5)) == 0.0

    def test_pure_proportional(self):
        assert pd_reference(20.0, 10.0, 0.0, (1.0, 0.0)) == pytest.approx(10.0)

    def test_derivative_term(self):
        assert pd_reference(20.0, 10.0, 4.0, (1.0, 0.5)) == pytest.approx(8.0)

    def test_negative_gains_rejected(self):
        with pytest.raises(ValueError):
            pd_reference(0.0, 0.0, 0.0, (-1.0, 0.0))


def run_scripted(envelope, raws, angles=None, velocities=None, dt=LOOP_DT_S, state=None):
    state = state or EnvelopeState()
    n = len(raws)
    angles = angles if angles is not None else [90.0] * n
    velocities = velocities if velocities is not None else [10.0] * n
    return [
        apply_envelope(envelope, raws[k], angles[k], velocities[k], state, dt)
        for k in range(n)
    ], state


class TestApplyEnvelope:
    def test_torque_saturation_flag(self):
        env = SafetyEnvelope(torque_max=2.0, jerk_max=1e9)
        cmds, _ = run_scripted(env, [4.0])
        assert cmds[0].commanded_torque == pytest.approx(2.0)
        assert "torque" in cmds[0].clamped_flags

    def test_angle_cutoff_ramps_to_zero(self):
        env = SafetyEnvelope(angle_max_deg=100.0, torque_max=5.0, jerk_max=1e9)
        state = EnvelopeState(prev_cmd=3.0, prev_prev_cmd=3.0)
        cmds, _ = run_scripted(env, [3.0] * 10, angles=[120.0] * 10, state=state)
        assert all("angle" in c.clamped_flags for c in cmds)
        assert cmds[-1].commanded_torque == pytest.approx(0.0, abs=1e-9)

    def test_pull_back_inside_allowed_at_bound(self):
        env = SafetyEnvelope(angle_max_deg=100.0, torque_max=5.0, jerk_max=1e9)
        cmds, _ = run_scripted(env, [-1.0], angles=[120.0])
        assert cmds[0].commanded_torque < 0.0
        assert "angle" not in cmds[0].clamped_flags

    def test_scripted_stall_disengages_at_expected_tick(self):
        env = SafetyEnvelope(torque_max=2.0, jerk_max=1e9, stall_threshold_dps=2.0,
                             stall_timeout_s=1.0)
        # velocity 0, raw torque at max: stall clock starts at tick 0; it
        # exceeds 1.0 s after 101 ticks of 10 ms
        cmds, state = run_scripted(env, [2.0] * 120, velocities=[0.0] * 120)
        disengage_tick = next(i for i, c in enumerate(cmds) if not c.engaged)
        assert disengage_tick == 100  # stall_elapsed = 1.01 s > 1.0 s at tick 100
        assert all(not c.engaged and c.commanded_torque == 0.0 for c in cmds[disengage_tick:])
        assert "stall_timeout" in cmds[disengage_tick].clamped_flags

    def test_disengage_permanent_until_reset(self):
        env = SafetyEnvelope(torque_max=2.0, jerk_max=1e9, stall_timeout_s=0.05)
        cmds, state = run_scripted(env, [2.0] * 30, velocities=[0.0] * 30)
        assert not state.engaged
        more, state = run_scripted(env, [1.0] * 10, state=state)
        assert all(c.commanded_torque == 0.0 and not c.engaged for c in more)
        state.reset_disengage()
        after, _ = run_scripted(env, [1.0] * 10, state=state)
        assert after[-1].engaged
        assert after[-1].commanded_torque > 0.0

    def test_brief_load_spike_does_not_disengage(self):
        env = SafetyEnvelope(torque_max=2.0, jerk_max=1e9, stall_timeout_s=1.0)
        raws = [2.0] * 50 + [0.0] * 50 + [2.0] * 50
        vels = [0.0] * 150
        cmds, _ = run_scripted(env, raws, velocities=vels)
        assert all(c.engaged for c in cmds)

    def test_determinism(self, rng):
        env = SafetyEnvelope()
        raws = list(rng.uniform(-30, 30, 200))
        a, _ = run_scripted(env, raws)
        b, _ = run_scripted(env, raws)
        assert a == b

    def test_dt_validation(self):
        with pytest.raises(ValueError):
            apply_envelope(SafetyEnvelope(), 0.0, 0.0, 0.0, EnvelopeState(), 0.0)


def check_command_stream(env, cmds, dt):
    """Shared clamp-soundness assertions for a command stream."""
    a = env.jerk_max * dt * dt
    torques = [c.commanded_torque for c in cmds]
    for v in torques:
        assert abs(v) <= env.torque_max + 1e-9
    engaged = [c.engaged for c in cmds]
    for k in range(2, len(torques)):
        if engaged[k] != engaged[k - 1] or engaged[k - 1] != engaged[k - 2]:
            continue  # the stall cut is a hard zero by design
        second_diff = torques[k] - 2 * torques[k - 1] + torques[k - 2]
        assert abs(second_diff) <= a + 1e-9


class TestEnvelopeProperties:
    @given(st.integers(0, 100_000))
    @settings(max_examples=200, deadline=None)
    def test_clamp_soundness_random_scenarios(self, seed):
        r = np.random.default_rng(seed)
        env = SafetyEnvelope(
            angle_min_deg=float(r.uniform(0, 40)),
            angle_max_deg=float(r.uniform(100, 175)),
            torque_max=float(r.uniform(0.5, 20)),
            jerk_max=float(r.uniform(50, 5000)),
            stall_threshold_dps=float(r.uniform(0.5, 5)),
            stall_timeout_s=float(r.uniform(0.2, 1.5)),
        )
        n = int(r.integers(10, 60))
        raws = r.uniform(-3 * env.torque_max, 3 * env.torque_max, n)
        angles = r.uniform(-20, 200, n)
        vels = r.uniform(-50, 50, n)
        cmds, _ = run_scripted(env, list(raws), list(angles), list(vels))
        check_command_stream(env, cmds, LOOP_DT_S)


def staged_inputs(duration_s=10.0):
    t = np.arange(int(duration_s * 100)) * LOOP_DT_S
    angle = 65.0 + 35.0 * np.sin(2 * np.pi * 0.17 * t - np.pi / 2)
    vel = np.gradient(angle, LOOP_DT_S)
    feats = [features(t=ts) for ts in np.arange(0.0, duration_s - 0.25, 0.125)]
    return LoopInputs(features=feats, angle_deg=angle, velocity_dps=vel,
                      target_angle_deg=angle + 3.0)


class TestRunLoop:
    def test_exact_tick_count_and_latency_samples(self):
        inputs = staged_inputs(10.0)
        cmds, stats = run_loop(inputs, reference_need_model(), SafetyEnvelope(), duration_s=10.0)
        assert len(cmds) == 1000
        assert stats.per_tick_latency_s.size == 1000
        assert stats.missed_deadlines == 0

    def test_sample_and_hold_features(self):
        inputs = staged_inputs(2.0)
        seen = []
        run_loop(inputs, reference_need_model(), SafetyEnvelope(), duration_s=2.0,
                 telemetry=lambda k, t, feats, need, cmd: seen.append((k, feats)))
        # no features until the first window completes at 0.25 s
        assert all(f is None for k, f in seen if k < 25)
        assert all(f is not None for k, f in seen if k >= 25)
        held = [f.window_start_s for k, f in seen if f is not None]
        assert held == sorted(held)

    def test_underrun_holds_command_and_counts_missed(self):
        inputs = staged_inputs(5.0)
        cmds, stats = run_loop(inputs, reference_need_model(), SafetyEnvelope(), duration_s=6.0)
        assert len(cmds) == 600
        assert stats.missed_deadlines >= 100
        held = [c for c in cmds[500:]]
        assert all("underrun" in c.clamped_flags for c in held)
        assert all(c.commanded_torque == held[0].commanded_torque for c in held)

    def test_command_stream_deterministic(self):
        inputs = staged_inputs(4.0)
        a, _ = run_loop(inputs, reference_need_model(), SafetyEnvelope(), duration_s=4.0)
        b, _ = run_loop(inputs, reference_need_model(), SafetyEnvelope(), duration_s=4.0)
        assert a == b

    def test_loop_inputs_from_record(self):
        prof = sg.SubjectProfile(
            subject_id="L1", baseline_ti=0.45, ti_delta=-0.09, baseline_rom_deg=80.0,
            rom_gain_frac=0.12, baseline_reps_per_min=10.0, reps_delta=3.0,
            fatigue_slope_hz_per_min={"baseline": -0.2, "assisted": -0.1}, rng_seed=5,
        )
        rec = sg.generate_session(prof, sg.TaskSpec("push_extend", 60.0), "assisted")
        inputs = loop_inputs_from_record(rec)
        assert inputs.angle_deg.size == 6000
        assert any(f.ti is not None for f in inputs.features)
        cmds, stats = run_loop(inputs, reference_need_model(), SafetyEnvelope(),
                               duration_s=60.0)
        assert len(cmds) == 6000
        check_command_stream(SafetyEnvelope(), cmds, LOOP_DT_S)

    def test_telemetry_tap_never_perturbs_the_command_stream(self):
        """A stalled UI consumer must not change a single command: the tap
        publishes into a bounded drop-oldest bus and the loop never waits."""
        from assistlab.session import TelemetryBus

        inputs = staged_inputs(8.0)
        control, _ = run_loop(inputs, reference_need_model(), SafetyEnvelope(),
                              duration_s=8.0, telemetry=None)
        bus = TelemetryBus(maxlen=4)  # consumer never drains: permanent backpressure

        def stalled_tap(k, t, feats, need, cmd):
            bus.publish(t_s=t, snippets={}, features=None, ti=None,
                        assist={"need": need}, safety_flags=sorted(cmd.clamped_flags),
                        session_state="running")

        tapped, _ = run_loop(inputs, reference_need_model(), SafetyEnvelope(),
                             duration_s=8.0, telemetry=stalled_tap)
        assert tapped == control
        assert bus.dropped > 0  # backpressure really happened
