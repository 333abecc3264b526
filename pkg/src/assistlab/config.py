"""Plain-text key-value configuration.

Files are ``key = value`` lines (``#`` comments, blank lines ignored); keys
use dots for grouping, e.g.::

    cohort.n = 12
    cohort.seed = 42
    envelope.torque_max = 15.0
    calibration.ti_median = 0.447

A persisted RunConfig reproduces a run bit-identically (wall-clock latency
measurements excepted).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .assist import SafetyEnvelope
from .signalgen import TASK_KINDS, CohortCalibration
from .stats import Thresholds


def parse_kv_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(text: str, like) -> object:
    if isinstance(like, bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        if like and isinstance(like[0], float):
            return tuple(float(p) for p in parts)
        if like and isinstance(like[0], int):
            return tuple(int(p) for p in parts)
        return tuple(parts)
    return text


def _apply_prefixed(obj, prefix: str, kv: dict[str, str]):
    updates = {}
    names = {f.name for f in fields(obj)}
    for key, text in kv.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in names:
            raise ValueError(f"unknown key {key!r}")
        updates[name] = _coerce(text, getattr(obj, name))
    return replace(obj, **updates) if updates else obj


@dataclass(frozen=True)
class RunConfig:
    n_subjects: int = 12
    seed: int = 42
    duration_s: float = 120.0
    tasks: tuple[str, ...] = TASK_KINDS
    condition_order: tuple[str, ...] = ("baseline", "assisted")
    randomize_condition_order: bool = False  # patient-trial feature, off by default
    output_root: str = "runs/demo"
    serve_port: int = 8765
    ui_rate_hz: float = 25.0
    b_resamples: int = 10_000
    analysis_seed: int = 7
    trim_frac: float = 0.20
    envelope: SafetyEnvelope = field(default_factory=SafetyEnvelope)
    thresholds: Thresholds = field(default_factory=Thresholds)
    calibration: CohortCalibration = field(default_factory=CohortCalibration)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        kv = parse_kv_file(path)
        cfg = cls()
        flat = {}
        names = {f.name for f in fields(cls)} - {"envelope", "thresholds", "calibration"}
        for key, text in kv.items():
            if key.startswith(("envelope.", "thresholds.", "calibration.")):
                continue
            name = key.split(".", 1)[1] if key.startswith("run.") else key
            if name not in names:
                raise ValueError(f"unknown key {key!r}")
            flat[name] = _coerce(text, getattr(cfg, name))
        cfg = replace(cfg, **flat) if flat else cfg
        cfg = replace(cfg, envelope=_apply_prefixed(cfg.envelope, "envelope", kv))
        cfg = replace(cfg, thresholds=_apply_prefixed(cfg.thresholds, "thresholds", kv))
        cfg = replace(cfg, calibration=_apply_prefixed(cfg.calibration, "calibration", kv))
        return cfg

    def to_file(self, path) -> None:
        lines = []
        plain = asdict(self)
        for name in sorted(plain):
            if name in ("envelope", "thresholds", "calibration"):
                for sub, val in sorted(plain[name].items()):
                    lines.append(f"{name}.{sub} = {_fmt(val)}")
            else:
                lines.append(f"{name} = {_fmt(plain[name])}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(val) -> str:
    if isinstance(val, (tuple, list)):
        return ", ".join(str(v) for v in val)
    return str(val)
