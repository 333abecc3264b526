"""Session-control API and telemetry socket for the operator dashboard.

HTTP endpoints (JSON bodies, JSON responses):

    POST /api/session/start     {subject_id?, task, condition, assist_level?}
    POST /api/session/stop
    POST /api/session/condition {condition}   (rejected while running)
    POST /api/assist/level      {level}       (assisted runs only)
    POST /api/safety/reset
    GET  /api/state
    GET  /api/summary           analysis report.json, if analyze has run
    GET  /api/export/outcomes.csv
    GET  /api/export/trajectories.csv

Telemetry: WebSocket at /ws/telemetry pushing JSON text messages
``{type, seq, payload}`` with types ``frame`` (UI rate, 25-50 Hz),
``safety_event`` (immediate) and ``session_state`` (on change). Message
sequence numbers are monotone; slow consumers lose old frames (drop-oldest)
and see the gap, and can never block the 100 Hz loop.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
from aiohttp import WSMsgType, web

from . import metrics, signalgen
from .assist import (
    EnvelopeState,
    LOOP_DT_S,
    apply_envelope,
    loop_inputs_from_record,
    pd_reference,
    reference_need_model,
)
from .cli import render_outcome_series_csv, render_trajectories_csv
from .config import RunConfig
from .dsp import WINDOW_S
from .session import persist, run_qc

log = logging.getLogger(__name__)


def _stage_kinematics(inputs, task) -> dict:
    """Per-tick running kinematic counters for the dashboard.

    Computed server-side so the UI never recomputes outcome numbers: running
    peak-to-peak excursion, cumulative rep count and rate, and the pacing
    ratio against the task's prescribed cycle rate.
    """
    from .kernels import upward_crossings
    from .metrics import DEFAULT_REFRACTORY_S

    angle = inputs.angle_deg
    n = angle.size
    rom = np.maximum.accumulate(angle) - np.minimum.accumulate(angle)
    crossings = upward_crossings(angle, float(np.nanmean(angle)),
                                 int(DEFAULT_REFRACTORY_S / LOOP_DT_S))
    reps = np.zeros(n, dtype=np.int64)
    if crossings.size:
        reps[crossings] = 1
        reps = np.cumsum(reps)
    elapsed_min = (np.arange(n) + 1) * LOOP_DT_S / 60.0
    rate = reps / elapsed_min
    target = task.cycle_rate_hz * 60.0
    pacing = rate / target if target > 0 else None
    return {
        "rom_deg": rom,
        "reps": reps,
        "reps_per_min": rate,
        "pacing": pacing,
        "target_reps_per_min": target if target > 0 else None,
    }


def _live_profile(cfg: RunConfig, subject_id: str) -> signalgen.SubjectProfile:
    """A median-of-calibration subject for live demo sessions."""
    cal = cfg.calibration
    return signalgen.SubjectProfile(
        subject_id=subject_id,
        baseline_ti=cal.ti_median,
        ti_delta=cal.ti_delta_median,
        baseline_rom_deg=cal.rom_median_deg,
        rom_gain_frac=cal.rom_gain_frac_median,
        baseline_reps_per_min=cal.reps_median,
        reps_delta=cal.reps_delta_median,
        fatigue_slope_hz_per_min={
            "baseline": cal.fmed_slope_median,
            "assisted": cal.fmed_slope_median + cal.fmed_delta_median,
        },
        rng_seed=cfg.seed * 9973 + 17,
    )


class LiveSession(threading.Thread):
    """Paced 100 Hz loop over a pre-generated session, publishing telemetry.

    The publisher is a thread-safe callback handed in by the service; it
    must never block (the service side buffers with drop-oldest).
    """

    #: fast-forward factor for non-realtime runs (tests, replays)
    FAST_SPEED = 20.0

    def __init__(self, record, inputs, psd_frames, envelope, assist_level: float,
                 publish, ui_rate_hz: float, realtime: bool = True, kinematics=None):
        super().__init__(daemon=True)
        self.record = record
        self.inputs = inputs
        self.psd_frames = psd_frames  # [(t_s, freqs, power)] for the spectral panel
        self.kinematics = kinematics
        self.envelope = envelope
        self.assist_level = assist_level
        self.publish = publish
        self.stride = max(1, int(round(100.0 / ui_rate_hz)))
        self.speed = 1.0 if realtime else self.FAST_SPEED
        self.stop_event = threading.Event()
        self.reset_event = threading.Event()
        self.model = reference_need_model()
        self.state = EnvelopeState()
        self.assisted = record.condition == "assisted"
        self.commands: list = []
        self._latencies: list[float] = []

    def loop_summary(self) -> dict:
        lat = np.asarray(self._latencies) if self._latencies else np.zeros(1)
        return {
            "tick_period_s": LOOP_DT_S,
            "n_ticks": len(self.commands),
            "latency_median_ms": float(np.median(lat)) * 1e3,
            "latency_p95_ms": float(np.quantile(lat, 0.95)) * 1e3,
            "missed_deadlines": int(np.sum(lat > LOOP_DT_S)),
        }

    def run(self) -> None:
        feats = sorted(self.inputs.features, key=lambda f: f.window_start_s)
        n_ticks = self.inputs.angle_deg.size
        fi = -1
        current = None
        psd_i = -1
        t_wall0 = time.perf_counter()
        was_engaged = True
        for k in range(n_ticks):
            if self.stop_event.is_set():
                break
            deadline = t_wall0 + (k + 1) * LOOP_DT_S / self.speed
            delay = deadline - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            t_tick = time.perf_counter()
            t = k * LOOP_DT_S
            if self.reset_event.is_set():
                self.reset_event.clear()
                self.state.reset_disengage()
                self.publish("safety_event", {"t_s": t, "event": "reset", "engaged": True})
                was_engaged = True
            while fi + 1 < len(feats) and feats[fi + 1].window_start_s + WINDOW_S <= t:
                fi += 1
                current = feats[fi]
            need = self.model.score(current) if current is not None else 0.0
            level = self.assist_level if self.assisted else 0.0
            raw = level * need * pd_reference(
                float(self.inputs.target_angle_deg[k]),
                float(self.inputs.angle_deg[k]),
                float(self.inputs.velocity_dps[k]),
            )
            cmd = apply_envelope(self.envelope, raw, float(self.inputs.angle_deg[k]),
                                 float(self.inputs.velocity_dps[k]), self.state, LOOP_DT_S)
            self.commands.append(cmd)
            self._latencies.append(time.perf_counter() - t_tick)
            if was_engaged and not cmd.engaged:
                self.publish("safety_event", {
                    "t_s": t, "event": "disengage", "engaged": False,
                    "flags": sorted(cmd.clamped_flags),
                })
            was_engaged = cmd.engaged
            if k % self.stride == 0:
                while psd_i + 1 < len(self.psd_frames) and self.psd_frames[psd_i + 1][0] + WINDOW_S <= t:
                    psd_i += 1
                payload = {
                    "t_s": round(t, 4),
                    "features": None if current is None else {
                        "rms": current.rms, "mav": current.mav, "zc_count": current.zc_count,
                        "median_freq_hz": current.median_freq_hz,
                        "window_start_s": current.window_start_s,
                    },
                    "ti": None if current is None else current.ti,
                    "assist": {"need": need, "torque": cmd.commanded_torque,
                               "level": level, "engaged": cmd.engaged},
                    "safety_flags": sorted(cmd.clamped_flags),
                    "snippets": self._snippets(t),
                    "psd": self._psd_payload(psd_i),
                    "kinematics": self._kinematics_payload(k),
                    "session_state": "running",
                }
                self.publish("frame", payload)
        self.publish("session_state", {"state": "stopped", "t_s": n_ticks * LOOP_DT_S})

    def _snippets(self, t: float, span_s: float = 0.08) -> dict:
        out = {}
        for kind in ("emg_triceps", "imu_accel", "joint_angle", "force_flex"):
            if kind not in self.record.channels:
                continue
            samples, rate = self._channel_cache(kind)
            hi = min(int(t * rate), samples.size)
            lo = max(hi - int(span_s * rate), 0)
            snip = samples[lo:hi]
            if kind.startswith("emg") and snip.size > 40:
                snip = snip[:: max(1, snip.size // 40)]
            out[kind] = [None if not np.isfinite(v) else round(float(v), 4) for v in snip]
        return out

    def _channel_cache(self, kind: str):
        if not hasattr(self, "_cache"):
            self._cache = {}
        if kind not in self._cache:
            from .session import channel_samples

            self._cache[kind] = channel_samples(self.record, kind)
        return self._cache[kind]

    def _psd_payload(self, psd_i: int):
        if psd_i < 0:
            return None
        _, freqs, power = self.psd_frames[psd_i]
        return {"freqs_hz": freqs, "power": power}

    def _kinematics_payload(self, k: int):
        kin = self.kinematics
        if kin is None:
            return None
        return {
            "rom_deg": round(float(kin["rom_deg"][k]), 2),
            "reps": int(kin["reps"][k]),
            "reps_per_min": round(float(kin["reps_per_min"][k]), 2),
            "pacing": None if kin["pacing"] is None else round(float(kin["pacing"][k]), 3),
            "target_reps_per_min": kin["target_reps_per_min"],
        }


class Service:
    """Single owner of session state; all mutations run on the event loop."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.lock = asyncio.Lock()
        self.live: Optional[LiveSession] = None
        self.staging = False
        self.finalizing = False
        self.next_condition = "baseline"
        self.session_count = 0
        self.persisted_count = 0
        self.seq = 0
        self.clients: set[asyncio.Queue] = set()
        self.loop: Optional[asyncio.AbstractEventLoop] = None

    # -- telemetry fan-out ---------------------------------------------------

    def publish_threadsafe(self, msg_type: str, payload: dict) -> None:
        if self.loop is None:
            return
        self.loop.call_soon_threadsafe(self._publish, msg_type, payload)

    def _publish(self, msg_type: str, payload: dict) -> None:
        msg = {"type": msg_type, "seq": self.seq, "payload": payload}
        self.seq += 1
        for q in list(self.clients):
            if q.full():
                try:
                    q.get_nowait()  # drop-oldest under backpressure
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(msg)

    # -- session control -----------------------------------------------------

    async def start(self, subject_id: str, task_kind: str, condition: str,
                    assist_level: float, realtime: bool = True) -> dict:
        """Validate and acknowledge immediately; staging happens off-loop.

        Generating and feature-staging a session takes seconds, so the
        control response must not wait for it (the API answers in
        milliseconds); a session_state message announces the actual start.
        """
        if self.staging or self.finalizing or (self.live is not None and self.live.is_alive()):
            raise web.HTTPConflict(reason="a session is already running, staging, or finalizing")
        if condition not in signalgen.CONDITIONS:
            raise web.HTTPBadRequest(reason=f"unknown condition {condition!r}")
        if task_kind not in signalgen.TASK_KINDS:
            raise web.HTTPBadRequest(reason=f"unknown task {task_kind!r}")
        if not (0.0 <= assist_level <= 1.0):
            raise web.HTTPBadRequest(reason="assist level must be in [0, 1]")
        profile = _live_profile(self.cfg, subject_id)
        task = next(t for t in signalgen.default_tasks(self.cfg.duration_s)
                    if t.task_kind == task_kind)
        self.staging = True
        self._publish("session_state", {"state": "staging", "subject_id": subject_id,
                                        "task": task_kind, "condition": condition})

        def stage():
            record = signalgen.generate_session(profile, task, condition)
            inputs = loop_inputs_from_record(record)
            from . import dsp
            from .session import channel_samples

            accel, rate = channel_samples(record, "imu_accel")
            psd_frames = []
            for t_start, psd in dsp.tremor_psd_series(dsp.smooth_motion(accel), rate):
                keep = psd.freqs_hz <= 25.0
                psd_frames.append((
                    t_start,
                    [round(float(f), 3) for f in psd.freqs_hz[keep]],
                    [float(p) for p in psd.power[keep]],
                ))
            kinematics = _stage_kinematics(inputs, task)
            return record, inputs, psd_frames, kinematics

        async def stage_and_launch():
            try:
                record, inputs, psd_frames, kin = await asyncio.get_running_loop().run_in_executor(None, stage)
                self.live = LiveSession(
                    record, inputs, psd_frames, self.cfg.envelope, assist_level,
                    self.publish_threadsafe, self.cfg.ui_rate_hz, realtime=realtime,
                    kinematics=kin,
                )
                self.session_count += 1
                self._publish("session_state", {
                    "state": "running", "subject_id": subject_id, "task": task_kind,
                    "condition": condition, "assist_level": assist_level,
                })
                self.live.start()
            finally:
                self.staging = False

        asyncio.get_running_loop().create_task(stage_and_launch())
        return {"ok": True, "state": "staging", "task": task_kind, "condition": condition}

    async def stop(self) -> dict:
        """Acknowledge immediately; QC + persistence run off-loop.

        A session_state "idle" message (carrying the persisted identity)
        announces completion, and the state endpoint's persisted counter
        advances then.
        """
        while self.staging:  # a stop racing the staging start waits it out
            await asyncio.sleep(0.05)
        # a finished-but-unstopped session is still stoppable (finalized once)
        if self.live is None or self.finalizing:
            raise web.HTTPConflict(reason="no session running")
        live = self.live
        self.live = None
        self.finalizing = True
        live.stop_event.set()

        def finalize():
            live.join(timeout=10.0)
            record = live.record
            qc = run_qc(record)
            record = replace(record, qc=qc)
            if not qc.excluded:
                record = replace(record, outcomes=metrics.session_outcomes(record))
            return persist(record, Path(self.cfg.output_root),
                           assist_commands=live.commands, loop_summary=live.loop_summary())

        async def finalize_and_announce():
            try:
                manifest = await asyncio.get_running_loop().run_in_executor(None, finalize)
                self.persisted_count += 1
                self._publish("session_state", {
                    "state": "idle",
                    "persisted": {"subject_id": manifest["subject_id"],
                                  "task": manifest["task"]["task_kind"],
                                  "condition": manifest["condition"]},
                })
            finally:
                self.finalizing = False

        asyncio.get_running_loop().create_task(finalize_and_announce())
        return {"ok": True, "state": "stopping",
                "task": live.record.task.task_kind, "condition": live.record.condition}

    def set_condition(self, condition: str) -> dict:
        if self.staging or (self.live is not None and self.live.is_alive()):
            raise web.HTTPConflict(reason="conditions are fixed per session; stop the run first")
        if condition not in signalgen.CONDITIONS:
            raise web.HTTPBadRequest(reason=f"unknown condition {condition!r}")
        self.next_condition = condition
        return {"ok": True, "condition": condition}

    def set_assist_level(self, level: float) -> dict:
        if self.live is None or not self.live.is_alive():
            raise web.HTTPConflict(reason="no session running")
        if not self.live.assisted:
            raise web.HTTPConflict(reason="assist level applies to assisted runs only")
        if not (0.0 <= level <= 1.0):
            raise web.HTTPBadRequest(reason="assist level must be in [0, 1]")
        self.live.assist_level = level
        return {"ok": True, "assist_level": level}

    def reset_safety(self) -> dict:
        if self.live is None or not self.live.is_alive():
            raise web.HTTPConflict(reason="no session running")
        self.live.reset_event.set()
        return {"ok": True}

    def state(self) -> dict:
        running = self.live is not None and self.live.is_alive()
        if self.staging:
            state = "staging"
        elif self.finalizing:
            state = "stopping"
        elif running:
            state = "running"
        else:
            state = "idle"
        return {
            "state": state,
            "next_condition": self.next_condition,
            "sessions_persisted": self.persisted_count,
            "condition": self.live.record.condition if running else None,
            "task": self.live.record.task.task_kind if running else None,
            "assist_level": self.live.assist_level if running else None,
        }


SERVICE_KEY = web.AppKey("service", Service)


def build_app(cfg: RunConfig, service: Optional[Service] = None) -> web.Application:
    svc = service or Service(cfg)
    app = web.Application()
    app[SERVICE_KEY] = svc

    async def on_startup(app):
        svc.loop = asyncio.get_running_loop()

    app.on_startup.append(on_startup)

    def json_response(data, status=200):
        return web.json_response(data, status=status, dumps=lambda d: json.dumps(d, sort_keys=True))

    async def h_start(request):
        body = await request.json()
        async with svc.lock:
            out = await svc.start(
                subject_id=body.get("subject_id", "LIVE"),
                task_kind=body.get("task", "push_extend"),
                condition=body.get("condition", svc.next_condition),
                assist_level=float(body.get("assist_level", 1.0)),
                realtime=bool(body.get("realtime", True)),
            )
        return json_response(out)

    async def h_stop(request):
        async with svc.lock:
            return json_response(await svc.stop())

    async def h_condition(request):
        body = await request.json()
        async with svc.lock:
            return json_response(svc.set_condition(body.get("condition", "")))

    async def h_level(request):
        body = await request.json()
        async with svc.lock:
            return json_response(svc.set_assist_level(float(body.get("level", -1.0))))

    async def h_reset(request):
        async with svc.lock:
            return json_response(svc.reset_safety())

    async def h_state(request):
        return json_response(svc.state())

    def _analysis_report() -> dict:
        path = Path(cfg.output_root) / "analysis" / "report.json"
        if not path.exists():
            raise web.HTTPNotFound(reason="no analysis yet; run `assistlab analyze`")
        with open(path, encoding="utf-8") as f:
            return json.load(f)

    async def h_summary(request):
        return json_response(_analysis_report())

    async def h_export_outcomes(request):
        return web.Response(text=render_outcome_series_csv(_analysis_report()),
                            content_type="text/csv")

    async def h_export_trajectories(request):
        return web.Response(text=render_trajectories_csv(_analysis_report()),
                            content_type="text/csv")

    async def h_ws(request):
        ws = web.WebSocketResponse(heartbeat=20.0)
        await ws.prepare(request)
        q: asyncio.Queue = asyncio.Queue(maxsize=256)
        svc.clients.add(q)
        q.put_nowait({"type": "session_state", "seq": svc.seq, "payload": svc.state()})
        try:
            sender = asyncio.create_task(_ws_sender(ws, q))
            async for msg in ws:
                if msg.type in (WSMsgType.ERROR, WSMsgType.CLOSE):
                    break
            sender.cancel()
        finally:
            svc.clients.discard(q)
        return ws

    async def _ws_sender(ws, q):
        try:
            while True:
                msg = await q.get()
                await ws.send_str(json.dumps(msg, sort_keys=True))
        except (asyncio.CancelledError, ConnectionResetError):
            pass

    app.router.add_post("/api/session/start", h_start)
    app.router.add_post("/api/session/stop", h_stop)
    app.router.add_post("/api/session/condition", h_condition)
    app.router.add_post("/api/assist/level", h_level)
    app.router.add_post("/api/safety/reset", h_reset)
    app.router.add_get("/api/state", h_state)
    app.router.add_get("/api/summary", h_summary)
    app.router.add_get("/api/export/outcomes.csv", h_export_outcomes)
    app.router.add_get("/api/export/trajectories.csv", h_export_trajectories)
    app.router.add_get("/ws/telemetry", h_ws)

    dist = Path("frontend/dist")
    if dist.is_dir():
        async def h_index(request):
            return web.FileResponse(dist / "index.html")

        app.router.add_get("/", h_index)
        app.router.add_static("/", dist)
    return app


def serve(cfg: RunConfig) -> None:
    logging.basicConfig(level=logging.INFO)
    app = build_app(cfg)
    log.info("serving on http://127.0.0.1:%d (output root %s)", cfg.serve_port, cfg.output_root)
    web.run_app(app, port=cfg.serve_port)
