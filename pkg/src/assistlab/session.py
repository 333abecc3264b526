"""Session records, synchronization, QC, persistence and UI packetization.

Data backbone between the generator, the feature pipeline, the assist loop
and the operator dashboard. Persistence is plain JSONL per channel plus one
JSON manifest per session and an append-only CSV of subject-level outcome
summaries; re-reading a session reproduces the record byte-exactly.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from . import dsp

#: channels the exclusion rule watches (two EMG, IMU, force/flex)
PRIMARY_CHANNEL_KINDS = ("emg_triceps", "emg_epb", "imu_accel", "imu_gyro", "force_flex")

MISSINGNESS_LIMIT = 0.05
MAD_THRESHOLD_DEFAULT = 3.5
CLIP_RUN_LENGTH = 3

SUMMARY_CSV_COLUMNS = (
    "subject_id",
    "task",
    "condition",
    "ti_median",
    "rom_deg",
    "reps_per_min",
    "fmed_slope_hz_per_min",
)


class CorruptStreamError(ValueError):
    """Raised when per-channel sequence numbers are not monotone."""


@dataclass(frozen=True)
class SamplePacket:
    channel_kind: str
    seq: int
    hub_timestamp_s: float
    payload: Optional[list[float]]
    loss_flag: bool = False


@dataclass(frozen=True)
class QcSummary:
    missingness_per_channel: dict[str, float]
    impedance_ok: bool
    outlier_window_indices: list  # [channel_kind, window_index] pairs
    excluded: bool
    exclusion_reason: str = ""


@dataclass(frozen=True)
class SessionRecord:
    subject_id: str
    task: "TaskSpec"  # noqa: F821 - defined in signalgen
    condition: str
    channels: dict[str, list[SamplePacket]]
    configs: dict[str, "ChannelConfig"]  # noqa: F821
    qc: Optional[QcSummary] = None
    outcomes: Optional["SessionOutcomes"] = None  # noqa: F821


def channel_samples(record: SessionRecord, kind: str) -> tuple[np.ndarray, float]:
    """Concatenated sample array for one channel, NaN across lost packets."""
    if kind not in record.channels:
        raise KeyError(f"channel {kind!r} not in session")
    packets = sorted(record.channels[kind], key=lambda p: p.seq)
    cfg = record.configs[kind]
    per = _payload_len(packets)
    out = np.full(len(packets) * per, np.nan)
    for i, p in enumerate(packets):
        if not p.loss_flag and p.payload is not None:
            out[i * per:(i + 1) * per] = p.payload
    return out, cfg.sample_rate_hz


def _payload_len(packets: list[SamplePacket]) -> int:
    for p in packets:
        if p.payload is not None:
            return len(p.payload)
    raise ValueError("all packets lost; channel has no payload shape")


@dataclass(frozen=True)
class AlignedChannel:
    kind: str
    rate_hz: float
    start_time_s: float
    samples: np.ndarray  # NaN across gap spans, never interpolated
    gap_spans: tuple[tuple[float, float], ...]  # (start_s, end_s) per lost packet run


def synchronize(channels: Mapping[str, list[SamplePacket]],
                configs: Mapping[str, "ChannelConfig"]) -> dict[str, AlignedChannel]:  # noqa: F821
    """Time-align packet streams on hub timestamps.

    Packets may arrive out of order; alignment sorts by sequence number and
    verifies monotone timestamps. Lost packets become explicit null spans.
    """
    out = {}
    for kind, packets in channels.items():
        if not packets:
            continue
        by_seq = sorted(packets, key=lambda p: p.seq)
        seqs = [p.seq for p in by_seq]
        if len(set(seqs)) != len(seqs):
            raise CorruptStreamError(f"{kind}: duplicate sequence numbers")
        ts = [p.hub_timestamp_s for p in by_seq]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise CorruptStreamError(f"{kind}: hub timestamps decrease with sequence")
        cfg = configs[kind]
        per = _payload_len(by_seq)
        packet_s = per / cfg.sample_rate_hz
        samples = np.full(len(by_seq) * per, np.nan)
        spans = []
        for i, p in enumerate(by_seq):
            if p.loss_flag or p.payload is None:
                spans.append((p.hub_timestamp_s, round(p.hub_timestamp_s + packet_s, 9)))
            else:
                samples[i * per:(i + 1) * per] = p.payload
        out[kind] = AlignedChannel(
            kind=kind,
            rate_hz=cfg.sample_rate_hz,
            start_time_s=by_seq[0].hub_timestamp_s,
            samples=samples,
            gap_spans=tuple(spans),
        )
    return out


def _mad_outlier_indices(window_rms: np.ndarray, threshold: float) -> list[int]:
    med = float(np.median(window_rms))
    mad = float(np.median(np.abs(window_rms - med)))
    if mad == 0.0:
        # degenerate spread: any deviation from the median has infinite
        # robust z, so flag everything measurably off the median
        dev = np.abs(window_rms - med)
        return [int(i) for i in np.flatnonzero(dev > 1e-9 * max(1.0, abs(med)))]
    z = 0.6745 * (window_rms - med) / mad
    return [int(i) for i in np.flatnonzero(np.abs(z) > threshold)]


def _has_clipping(x: np.ndarray, full_scale: float) -> bool:
    at_rail = np.abs(x) >= full_scale
    if at_rail.sum() < CLIP_RUN_LENGTH:
        return False
    run = 0
    for v in at_rail:
        run = run + 1 if v else 0
        if run >= CLIP_RUN_LENGTH:
            return True
    return False


def run_qc(record: SessionRecord, mad_threshold: float = MAD_THRESHOLD_DEFAULT,
           impedance_ok: bool = True) -> QcSummary:
    """Missingness, MAD window outliers and clipping for one session.

    Exclusion rule: any primary channel above 5% missingness, or clipping on
    any channel. The impedance gate is a simulated pre-session boolean and is
    recorded, not an exclusion cause. Idempotent: identical input yields an
    identical summary.
    """
    missingness = {}
    outliers: list = []
    clipped_channels = []
    for kind, packets in record.channels.items():
        lost = sum(1 for p in packets if p.loss_flag)
        missingness[kind] = round(lost / len(packets), 9) if packets else 0.0
        samples, rate = channel_samples(record, kind)
        finite = samples[np.isfinite(samples)]
        if finite.size and _has_clipping(finite, record.configs[kind].full_scale):
            clipped_channels.append(kind)
        wins = dsp.windowize(samples, rate)
        if wins:
            rms = np.array([
                np.sqrt(np.nanmean(w.samples ** 2)) if np.any(np.isfinite(w.samples)) else np.nan
                for w in wins
            ])
            ok = np.isfinite(rms)
            if ok.any():
                idx_map = np.flatnonzero(ok)
                for j in _mad_outlier_indices(rms[ok], mad_threshold):
                    outliers.append([kind, int(idx_map[j])])

    over = {k: v for k, v in missingness.items() if k in PRIMARY_CHANNEL_KINDS and v > MISSINGNESS_LIMIT}
    excluded = bool(over) or bool(clipped_channels)
    reasons = []
    if over:
        worst = max(over, key=over.get)
        reasons.append(f"missingness {over[worst]:.1%} on primary channel {worst} exceeds 5%")
    if clipped_channels:
        reasons.append("clipping detected on " + ", ".join(sorted(clipped_channels)))
    return QcSummary(
        missingness_per_channel=missingness,
        impedance_ok=impedance_ok,
        outlier_window_indices=outliers,
        excluded=excluded,
        exclusion_reason="; ".join(reasons),
    )


# ---------------------------------------------------------------------------
# Telemetry packetization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TelemetryFrame:
    seq: int
    t_s: float
    snippets: dict[str, list[float]]  # latest raw samples per channel
    features: Optional[dict]  # latest WindowFeatures as a dict
    ti: Optional[float]
    assist: dict  # need score, commanded torque, engaged
    safety_flags: list[str]
    session_state: str


class TelemetryBus:
    """Bounded drop-oldest frame queue decoupling producers from consumers.

    The producer never blocks: under backpressure old frames are discarded
    and the monotone sequence numbers make the gap visible downstream.
    """

    def __init__(self, maxlen: int = 64):
        self._q: deque[TelemetryFrame] = deque(maxlen=maxlen)
        self._seq = 0
        self.dropped = 0

    def publish(self, **frame_fields) -> TelemetryFrame:
        frame = TelemetryFrame(seq=self._seq, **frame_fields)
        self._seq += 1
        if len(self._q) == self._q.maxlen:
            self.dropped += 1
        self._q.append(frame)
        return frame

    def drain(self) -> list[TelemetryFrame]:
        out = list(self._q)
        self._q.clear()
        return out


def packetize_for_ui(aligned: Mapping[str, AlignedChannel], ui_rate_hz: float,
                     features_by_time: Optional[list] = None,
                     snippet_s: float = 0.04) -> Iterable[TelemetryFrame]:
    """Downsample an aligned session into UI frames at 25-50 Hz.

    Each frame carries the most recent raw snippet per channel and the
    latest window features available at frame time. Offline variant used for
    replay; the live loop publishes through a TelemetryBus instead.
    """
    if not (25.0 <= ui_rate_hz <= 50.0):
        raise ValueError("ui_rate_hz must be in [25, 50]")
    if not aligned:
        return
    duration = max(ch.samples.size / ch.rate_hz for ch in aligned.values())
    n_frames = int(np.floor(duration * ui_rate_hz))
    feats = sorted(features_by_time or [], key=lambda f: f.window_start_s)
    fi = -1
    for seq in range(n_frames):
        t = (seq + 1) / ui_rate_hz
        snippets = {}
        for kind, ch in aligned.items():
            hi = min(int(t * ch.rate_hz), ch.samples.size)
            lo = max(hi - int(snippet_s * ch.rate_hz), 0)
            snip = ch.samples[lo:hi]
            snippets[kind] = [None if not np.isfinite(v) else float(v) for v in snip]
        while fi + 1 < len(feats) and feats[fi + 1].window_start_s + dsp.WINDOW_S <= t:
            fi += 1
        latest = feats[fi] if fi >= 0 else None
        yield TelemetryFrame(
            seq=seq,
            t_s=round(t, 9),
            snippets=snippets,
            features=None if latest is None else {
                "rms": latest.rms, "mav": latest.mav, "zc_count": latest.zc_count,
                "median_freq_hz": latest.median_freq_hz, "window_start_s": latest.window_start_s,
            },
            ti=None if latest is None else latest.ti,
            assist={"need": None, "torque": None, "engaged": True},
            safety_flags=[],
            session_state="replay",
        )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_SCHEMA_VERSION = 1


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def session_dir(root: Path, record: SessionRecord) -> Path:
    return Path(root) / "sessions" / record.subject_id / f"{record.task.task_kind}_{record.condition}"


def persist(record: SessionRecord, root_path, assist_commands=None, loop_summary=None) -> dict:
    """Write one session: JSONL per channel, JSON manifest, CSV summary row.

    Live runs also append the assist command log (one command per line) and
    the loop timing summary. Returns the manifest dict. IO failures
    propagate with path context.
    """
    if record.qc is None:
        raise ValueError("record must be QC-complete before persisting")
    root = Path(root_path)
    sdir = session_dir(root, record)
    try:
        sdir.mkdir(parents=True, exist_ok=True)
        channel_files = {}
        for kind in sorted(record.channels):
            fname = f"{kind}.jsonl"
            fpath = sdir / fname
            with open(fpath, "w", encoding="utf-8") as f:
                for p in sorted(record.channels[kind], key=lambda p: p.seq):
                    f.write(_json_dumps({
                        "seq": p.seq,
                        "t": p.hub_timestamp_s,
                        "loss": p.loss_flag,
                        "payload": p.payload,
                    }) + "\n")
            channel_files[kind] = fname
        assist_file = None
        if assist_commands:
            assist_file = "assist_commands.jsonl"
            with open(sdir / assist_file, "w", encoding="utf-8") as f:
                for c in assist_commands:
                    f.write(_json_dumps({
                        "tick": c.tick_index,
                        "torque": c.commanded_torque,
                        "flags": sorted(c.clamped_flags),
                        "engaged": c.engaged,
                    }) + "\n")
        manifest = {
            "schema_version": _SCHEMA_VERSION,
            "subject_id": record.subject_id,
            "task": asdict(record.task),
            "condition": record.condition,
            "channel_files": channel_files,
            "configs": {k: asdict(c) for k, c in sorted(record.configs.items())},
            "qc": asdict(record.qc),
            "outcomes": None if record.outcomes is None else asdict(record.outcomes),
            "assist_log": assist_file,
            "loop_summary": loop_summary,
        }
        with open(sdir / "manifest.json", "w", encoding="utf-8") as f:
            f.write(_json_dumps(manifest) + "\n")
        if record.outcomes is not None and not record.qc.excluded:
            _append_summary_row(root, record)
        return manifest
    except OSError as e:
        raise OSError(f"failed to persist session under {sdir}: {e}") from e


def _append_summary_row(root: Path, record: SessionRecord) -> None:
    path = Path(root) / "summary.csv"
    fresh = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(SUMMARY_CSV_COLUMNS)
        o = record.outcomes
        w.writerow([
            record.subject_id,
            record.task.task_kind,
            record.condition,
            repr(o.ti_median),
            repr(o.rom_deg),
            repr(o.reps_per_min),
            repr(o.fmed_slope_hz_per_min),
        ])


def load_session(sdir) -> SessionRecord:
    """Re-read a persisted session; inverse of persist, byte-exact."""
    from .metrics import SessionOutcomes
    from .signalgen import ChannelConfig, TaskSpec

    sdir = Path(sdir)
    with open(sdir / "manifest.json", encoding="utf-8") as f:
        manifest = json.load(f)
    task_d = manifest["task"]
    task = TaskSpec(
        task_kind=task_d["task_kind"],
        duration_s=task_d["duration_s"],
        cycle_rate_hz=task_d["cycle_rate_hz"],
        perturbation_schedule=tuple(tuple(p) for p in task_d["perturbation_schedule"]),
    )
    configs = {k: ChannelConfig(**c) for k, c in manifest["configs"].items()}
    channels = {}
    for kind, fname in manifest["channel_files"].items():
        packets = []
        with open(sdir / fname, encoding="utf-8") as f:
            for line in f:
                d = json.loads(line)
                packets.append(SamplePacket(
                    channel_kind=kind,
                    seq=d["seq"],
                    hub_timestamp_s=d["t"],
                    payload=d["payload"],
                    loss_flag=d["loss"],
                ))
        channels[kind] = packets
    qc_d = manifest["qc"]
    qc = QcSummary(**qc_d) if qc_d is not None else None
    out_d = manifest["outcomes"]
    outcomes = SessionOutcomes(**out_d) if out_d is not None else None
    return SessionRecord(
        subject_id=manifest["subject_id"],
        task=task,
        condition=manifest["condition"],
        channels=channels,
        configs=configs,
        qc=qc,
        outcomes=outcomes,
    )
