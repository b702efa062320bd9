"""Voltage and frequency sweeps with JSONL capture and offline replay.

Every share and telemetry sample is appended to the log before the point's
record is computed, and a record depends only on logged values. Replaying the
log therefore reproduces each record exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from chimera import muse
from chimera.ghost import client
from chimera.ghost.schema import (
    DeviceEndpoint,
    GhostError,
    OperatingPoint,
    Telemetry,
    share_from_json,
    share_to_json,
)
from chimera.sentinel import (
    Alarm,
    AnomalyRules,
    Limits,
    classify_regime,
    detect_anomaly,
    enforce_limits,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LOW_CONFIDENCE_EVENTS = 1000
VOLTAGE_STEP_MV = 10


class PlanRejected(ValueError):
    def __init__(self, message: str, index: int, reason: str):
        super().__init__(message)
        self.index = index
        self.reason = reason


class SweepInterrupted(RuntimeError):
    """Endpoint lost mid-sweep. Completed records are already in the log."""

    def __init__(self, message: str, records: list, next_index: int):
        super().__init__(message)
        self.records = records
        self.next_index = next_index


@dataclass(frozen=True)
class SweepPlan:
    axis: str
    points: tuple[OperatingPoint, ...]
    dwell_s: float
    time_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.axis not in ("voltage", "frequency"):
            raise ValueError("axis must be 'voltage' or 'frequency'")
        if not self.dwell_s > 0:
            raise ValueError("dwell_s must be positive")
        if not self.time_scale > 0:
            raise ValueError("time_scale must be positive")
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def direction(self) -> str:
        key = (lambda op: op.core_mv) if self.axis == "voltage" else (lambda op: op.frequency_mhz)
        vals = [key(op) for op in self.points]
        if all(a > b for a, b in zip(vals, vals[1:])):
            return "descending"
        if all(a < b for a, b in zip(vals, vals[1:])):
            return "ascending"
        return "mixed"

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "points": [op.to_dict() for op in self.points],
            "dwell_s": self.dwell_s,
            "time_scale": self.time_scale,
            "seed": self.seed,
            "direction": self.direction,
        }

    @property
    def plan_id(self) -> str:
        blob = json.dumps({k: v for k, v in self.to_dict().items() if k != "time_scale"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def validate(self, limits: Limits = Limits()) -> None:
        for i, op in enumerate(self.points):
            decision = enforce_limits(op, limits)
            if not decision.accepted:
                raise PlanRejected(f"point {i} {op} rejected: {decision.reason}", i, decision.reason)


def default_voltage_plan(*, step_mv: int = VOLTAGE_STEP_MV, frequency_mhz: int = 400,
                         dwell_s: float = 60.0, time_scale: float = 1.0, seed: int = 0) -> SweepPlan:
    points = [OperatingPoint(frequency_mhz, mv) for mv in range(990, 849, -step_mv)]
    return SweepPlan("voltage", tuple(points), dwell_s, time_scale, seed)


def default_frequency_plan(*, core_mv: int = 900, dwell_s: float = 40.0,
                           time_scale: float = 1.0, seed: int = 0) -> SweepPlan:
    points = [OperatingPoint(f, core_mv) for f in range(300, 501, 20)]
    return SweepPlan("frequency", tuple(points), dwell_s, time_scale, seed)


@dataclass(frozen=True)
class AnalysisConfig:
    bin_s: float = muse.DEFAULT_BIN_S
    spectral: muse.SpectralConfig = muse.SpectralConfig()
    heartbeat_band: tuple[float, float] = muse.HEARTBEAT_BAND
    min_prominence_db: float = muse.HEARTBEAT_MIN_PROMINENCE_DB
    rules: AnomalyRules = AnomalyRules()
    low_confidence_below: int = LOW_CONFIDENCE_EVENTS


@dataclass
class SweepRecord:
    index: int
    op: OperatingPoint
    regime: str
    event_count: int
    t_start: float
    t_end: float
    timing: muse.TimingStats | None
    spectral: dict | None
    heartbeat: dict | None
    telemetry: dict
    alarms: list[Alarm] = field(default_factory=list)
    hamming_mean: float = 0.0
    low_confidence: bool = True
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "op": self.op.to_dict(),
            "regime": self.regime,
            "event_count": self.event_count,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "timing": None if self.timing is None else self.timing.to_dict(),
            "spectral": self.spectral,
            "heartbeat": self.heartbeat,
            "telemetry": self.telemetry,
            "alarms": [a.to_dict() for a in self.alarms],
            "hamming_mean": self.hamming_mean,
            "low_confidence": self.low_confidence,
            "aborted": self.aborted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        return cls(
            index=d["index"],
            op=OperatingPoint(**d["op"]),
            regime=d["regime"],
            event_count=d["event_count"],
            t_start=d["t_start"],
            t_end=d["t_end"],
            timing=None if d["timing"] is None else muse.TimingStats(**d["timing"]),
            spectral=d["spectral"],
            heartbeat=d["heartbeat"],
            telemetry=d["telemetry"],
            alarms=[Alarm.from_dict(a) for a in d["alarms"]],
            hamming_mean=d["hamming_mean"],
            low_confidence=d["low_confidence"],
            aborted=d["aborted"],
        )


def _telemetry_summary(history: list[Telemetry]) -> dict:
    if not history:
        return {"n": 0}
    arr = lambda name: np.array([getattr(t, name) for t in history], dtype=float)  # noqa: E731
    return {
        "n": len(history),
        "core_mv_actual_mean": float(np.mean(arr("core_mv_actual"))),
        "temp_c_mean": float(np.mean(arr("temp_c"))),
        "temp_c_max": float(np.max(arr("temp_c"))),
        "power_w_mean": float(np.mean(arr("power_w"))),
        "hashrate_ghs_mean": float(np.mean(arr("hashrate_ghs"))),
    }


def compute_record(index: int, op: OperatingPoint, shares, telemetry: list[Telemetry],
                   t_start: float, t_end: float, cfg: AnalysisConfig = AnalysisConfig(),
                   aborted: bool = False) -> SweepRecord:
    """Summarise one point from its raw shares and telemetry. Pure function."""
    times = [s.t for s in shares]
    try:
        timing = muse.interarrival_stats(times, window=None)
    except muse.InsufficientData:
        timing = None

    spectral = heartbeat = None
    series = muse.rate_series(times, cfg.bin_s, t_start, t_end)
    try:
        spec = muse.psd_estimate(series, 1.0 / cfg.bin_s, cfg.spectral)
    except muse.InsufficientData:
        spec = None
    if spec is not None:
        spectral = {
            "nperseg": spec.nperseg,
            "noverlap": spec.noverlap,
            "window": spec.window,
            "fs": spec.fs,
            "peak_freq_hz": None if spec.peak is None else spec.peak.freq_hz,
            "peak_prominence_db": None if spec.peak is None else spec.peak.prominence_db,
        }
        hit = muse.detect_heartbeat(spec, cfg.heartbeat_band, cfg.min_prominence_db)
        if hit is not None:
            heartbeat = {"freq_hz": hit.freq_hz, "prominence_db": hit.prominence_db}

    return SweepRecord(
        index=index,
        op=op,
        regime=classify_regime(op.core_mv).label,
        event_count=len(times),
        t_start=t_start,
        t_end=t_end,
        timing=timing,
        spectral=spectral,
        heartbeat=heartbeat,
        telemetry=_telemetry_summary(telemetry),
        alarms=detect_anomaly(telemetry, cfg.rules),
        hamming_mean=muse.mean_consecutive_hamming([s.hash for s in shares]),
        low_confidence=len(times) < cfg.low_confidence_below,
        aborted=aborted,
    )


class JsonlLog:
    """Append-only JSONL sink; one writer at a time, one flush per line."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = self.path.open("a", encoding="utf-8")

    def append(self, kind: str, payload: dict) -> None:
        line = json.dumps({"schema_version": SCHEMA_VERSION, "kind": kind, **payload})
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except ValueError:
                log.warning("skipping truncated line %d in %s", n, path)
                continue
            if entry.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(f"line {n}: unsupported schema_version {entry.get('schema_version')}")
            out.append(entry)
    return out


def _completed_points(entries: list[dict], plan_id: str) -> set[int]:
    return {e["record"]["index"] for e in entries if e["kind"] == "record" and e["plan_id"] == plan_id}


def _attempts(entries: list[dict], plan_id: str, index: int) -> int:
    return sum(1 for e in entries if e["kind"] == "point_start" and e["plan_id"] == plan_id and e["index"] == index)


def _clock(tel: Telemetry) -> float:
    return tel.device_time if tel.device_time is not None else tel.t


def run_sweep(
    plan: SweepPlan,
    endpoint: DeviceEndpoint,
    log_path: str | Path,
    *,
    cfg: AnalysisConfig = AnalysisConfig(),
    limits: Limits = Limits(),
    resume: bool = True,
    verify_timeout_s: float = 30.0,
) -> list[SweepRecord]:
    """Run ``plan`` against ``endpoint``, logging raw data and records.

    Points already recorded in ``log_path`` for the same plan are skipped
    when ``resume`` is set. The dwell is measured on the device clock. Polls
    are spaced ``poll_interval_s / time_scale`` wall seconds apart, but only
    on a simulated device; real hardware always runs in wall-clock time.
    """
    plan.validate(limits)
    log_path = Path(log_path)
    previous = read_log(log_path) if (resume and log_path.exists()) else []
    done = _completed_points(previous, plan.plan_id)
    records = [SweepRecord.from_dict(e["record"]) for e in previous
               if e["kind"] == "record" and e["plan_id"] == plan.plan_id]

    with JsonlLog(log_path) as sink:
        if not previous or not any(e["kind"] == "sweep_start" and e["plan_id"] == plan.plan_id for e in previous):
            sink.append("sweep_start", {"plan_id": plan.plan_id, "plan": plan.to_dict()})
        for index, op in enumerate(plan.points):
            if index in done:
                continue
            tag = {"plan_id": plan.plan_id, "index": index,
                   "attempt": _attempts(previous, plan.plan_id, index)}
            previous.append({"kind": "point_start", **tag})
            sink.append("point_start", {**tag, "op": op.to_dict()})
            try:
                record = _run_point(plan, endpoint, op, tag, sink, cfg, verify_timeout_s)
            except GhostError as exc:
                sink.append("point_interrupted", {**tag, "error": repr(exc)})
                raise SweepInterrupted(f"point {index}: {exc}", records, index) from exc
            sink.append("record", {**tag, "record": record.to_dict()})
            records.append(record)
        sink.append("sweep_end", {"plan_id": plan.plan_id, "records": len(records)})
    records.sort(key=lambda r: r.index)
    return records


def _run_point(plan, endpoint, op, tag, sink, cfg, verify_timeout_s) -> SweepRecord:
    tel = client.set_operating_point(endpoint, op, verify_timeout_s=verify_timeout_s)
    scale = plan.time_scale if tel.simulated else 1.0
    history = [tel]
    sink.append("telemetry", {**tag, "telemetry": tel.to_dict()})
    t_start = _clock(tel)
    aborted = False
    while _clock(history[-1]) - t_start < plan.dwell_s:
        time.sleep(endpoint.poll_interval_s / scale)
        tel = client.poll_telemetry(endpoint)
        history.append(tel)
        sink.append("telemetry", {**tag, "telemetry": tel.to_dict()})
        fresh = detect_anomaly(history[-2:], cfg.rules)
        for alarm in fresh:
            sink.append("alarm", {**tag, "alarm": alarm.to_dict()})
        if any(a.critical for a in fresh):
            log.warning("critical alarm at %s, aborting point", op)
            aborted = True
            break
    t_end = _clock(history[-1])

    shares = list(client.subscribe_shares(endpoint, since=t_start, until=t_end))
    for ev in shares:
        sink.append("share", {**tag, "share": share_to_json(ev)})
    if aborted:
        sink.append("point_aborted", tag)
    return compute_record(tag["index"], op, shares, history, t_start, t_end, cfg, aborted)


def replay_log(path: str | Path, cfg: AnalysisConfig = AnalysisConfig()) -> list[tuple[dict, SweepRecord]]:
    """Recompute every logged record from the raw lines that precede it.

    Returns (logged record dict, recomputed record) pairs.
    """
    entries = read_log(path)
    shares: dict[tuple, list] = {}
    telemetry: dict[tuple, list] = {}
    aborted: set[tuple] = set()
    out = []
    for e in entries:
        if e["kind"] in ("share", "telemetry", "point_aborted", "record"):
            key = (e["plan_id"], e["index"], e["attempt"])
        if e["kind"] == "share":
            shares.setdefault(key, []).append(share_from_json(e["share"]))
        elif e["kind"] == "telemetry":
            telemetry.setdefault(key, []).append(Telemetry.from_dict(e["telemetry"]))
        elif e["kind"] == "point_aborted":
            aborted.add(key)
        elif e["kind"] == "record":
            logged = e["record"]
            rec = compute_record(
                logged["index"], OperatingPoint(**logged["op"]), shares.get(key, []),
                telemetry.get(key, []), logged["t_start"], logged["t_end"], cfg, key in aborted,
            )
            out.append((logged, rec))
    return out


def canonical(record_dict: dict) -> str:
    return json.dumps(record_dict, sort_keys=True)


def verify_replay(path: str | Path, cfg: AnalysisConfig = AnalysisConfig()) -> list[int]:
    """Indices of records whose replay differs from the logged version."""
    return [logged["index"] for logged, rec in replay_log(path, cfg)
            if canonical(logged) != canonical(rec.to_dict())]


CSV_COLUMNS = (
    "index", "frequency_mhz", "core_mv", "regime", "event_count", "cv", "paper_entropy",
    "shannon_entropy_corrected", "peak_freq_hz", "peak_prominence_db", "heartbeat_hz",
    "hamming_mean", "temp_c_mean", "power_w_mean", "low_confidence", "aborted",
)


def _row(r: SweepRecord) -> dict:
    timing = r.timing
    spectral = r.spectral or {}
    return {
        "index": r.index,
        "frequency_mhz": r.op.frequency_mhz,
        "core_mv": r.op.core_mv,
        "regime": r.regime,
        "event_count": r.event_count,
        "cv": None if timing is None else timing.cv,
        "paper_entropy": None if timing is None else timing.paper_entropy,
        "shannon_entropy_corrected": None if timing is None else timing.shannon_entropy_corrected,
        "peak_freq_hz": spectral.get("peak_freq_hz"),
        "peak_prominence_db": spectral.get("peak_prominence_db"),
        "heartbeat_hz": None if r.heartbeat is None else r.heartbeat["freq_hz"],
        "hamming_mean": r.hamming_mean,
        "temp_c_mean": r.telemetry.get("temp_c_mean"),
        "power_w_mean": r.telemetry.get("power_w_mean"),
        "low_confidence": r.low_confidence,
        "aborted": r.aborted,
    }


def _fmt(v, spec: str) -> str:
    return "-" if v is None else format(v, spec)


def export_report(records: Iterable[SweepRecord]) -> tuple[str, str]:
    """Return (text table, CSV). Output depends only on the records."""
    records = sorted(records, key=lambda r: r.index)
    if not records:
        raise ValueError("no records to report")
    rows = [_row(r) for r in records]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in CSV_COLUMNS])

    lines = [
        f"{'#':>3} {'MHz':>4} {'mV':>4} {'regime':<18} {'events':>7} {'CV':>7} {'entropy':>8} "
        f"{'peak Hz':>8} {'prom dB':>8} {'heartbeat':>9}"
    ]
    for row in rows:
        flag = "*" if row["low_confidence"] else " "
        lines.append(
            f"{row['index']:>3} {row['frequency_mhz']:>4} {row['core_mv']:>4} {row['regime']:<18} "
            f"{row['event_count']:>6}{flag} {_fmt(row['cv'], '7.4f')} {_fmt(row['paper_entropy'], '8.4f')} "
            f"{_fmt(row['peak_freq_hz'], '8.3f')} {_fmt(row['peak_prominence_db'], '8.2f')} "
            f"{_fmt(row['heartbeat_hz'], '9.3f')}"
        )
    if any(r["low_confidence"] for r in rows):
        lines.append(f"* fewer than {LOW_CONFIDENCE_EVENTS} share events at this point")
    return "\n".join(lines) + "\n", buf.getvalue()


def parse_report_csv(text: str) -> list[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        parsed = {}
        for k, v in row.items():
            if v == "":
                parsed[k] = None
            elif k in ("regime",):
                parsed[k] = v
            elif k in ("low_confidence", "aborted"):
                parsed[k] = v == "True"
            elif k in ("index", "frequency_mhz", "core_mv", "event_count"):
                parsed[k] = int(v)
            else:
                parsed[k] = float(v)
        out.append(parsed)
    return out
