"""Mock AxeOS device backed by one Substrate instance.

The device runs on a simulated clock, ``time_scale`` times faster than the
wall clock. The simulation is advanced lazily under a lock whenever a request
arrives. Share timestamps and ``uptimeSeconds`` are both in simulated time.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from chimera.ghost.schema import (
    INFO_PATH,
    RESTART_PATH,
    SETTINGS_PATH,
    SHARES_PATH,
    OperatingPoint,
    ProtocolError,
    parse_settings_payload,
    share_to_json,
    telemetry_payload,
)
from chimera.substrate import (
    Heartbeat,
    LandauParams,
    Substrate,
    SubstrateState,
    ThermalParams,
    thermal_step,
)

log = logging.getLogger(__name__)

THERMAL_SUBSTEP_S = 0.25


@dataclass
class MockConfig:
    device_id: str = "mock-0"
    seed: int = 0
    time_scale: float = 1.0
    frequency_mhz: int = 400
    core_mv: int = 900
    base_rate: float = 50.0  # shares/s at the reference frequency
    ref_frequency_mhz: float = 400.0
    ref_power_w: float = 10.0  # at reference frequency and 900 mV
    power_override_w: float | None = None
    idle_power_w: float = 1.0
    ghs_per_mhz: float = 1.2
    ambient_c: float = 25.0
    r_th: float = 4.0
    tau_th: float = 20.0
    restart_s: float = 2.0
    voltage_noise_mv: float = 0.0
    heartbeat_freq_hz: float = 2.4
    heartbeat_depth: float = 0.0
    heartbeat_below_mv: float | None = None  # heartbeat only when core_mv is below this
    landau: dict = field(default_factory=dict)
    c_psi: float = 0.5
    dt: float = 1e-3
    # confounds
    batch_s: float = 0.0
    jitter_s: float = 0.0
    reorder_prob: float = 0.0
    buffer_limit: int = 2_000_000

    @classmethod
    def from_dict(cls, d: dict) -> "MockConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown mock config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "MockConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class MockDevice:
    def __init__(self, cfg: MockConfig, clock=time.monotonic):
        self.cfg = cfg
        self._clock = clock
        self._lock = threading.Lock()
        self._wall0 = clock()
        self._rng = np.random.default_rng(cfg.seed)
        self.op = OperatingPoint(cfg.frequency_mhz, cfg.core_mv).check()
        self.pending: OperatingPoint | None = None
        self.substrate = Substrate(
            state=self._state_for(self.op, SubstrateState(temp_c=cfg.ambient_c)),
            params=LandauParams(**cfg.landau),
            rng=np.random.default_rng([cfg.seed, 1]),
            device_id=cfg.device_id,
            dt=cfg.dt,
            c_psi=cfg.c_psi,
        )
        self.thermal = ThermalParams(cfg.r_th, cfg.tau_th)
        self.blackout_until_step = 0
        self.buffer: list[dict] = []
        self.restarts = 0

    def _state_for(self, op: OperatingPoint, prev: SubstrateState) -> SubstrateState:
        cfg = self.cfg
        hb = None
        if cfg.heartbeat_depth > 0 and (cfg.heartbeat_below_mv is None or op.core_mv < cfg.heartbeat_below_mv):
            hb = Heartbeat(cfg.heartbeat_freq_hz, cfg.heartbeat_depth)
        return SubstrateState(
            psi=prev.psi,
            temp_c=prev.temp_c,
            base_rate=cfg.base_rate * op.frequency_mhz / cfg.ref_frequency_mhz,
            clock_mhz=op.frequency_mhz,
            core_mv=op.core_mv,
            heartbeat=hb,
        )

    @property
    def sim_now(self) -> float:
        return (self._clock() - self._wall0) * self.cfg.time_scale

    def power_w(self) -> float:
        cfg = self.cfg
        if self.substrate.step < self.blackout_until_step:
            return cfg.idle_power_w
        if cfg.power_override_w is not None:
            return cfg.power_override_w
        return cfg.ref_power_w * (self.op.frequency_mhz / cfg.ref_frequency_mhz) * (self.op.core_mv / 900.0) ** 2

    def _advance_to(self, t_target: float) -> None:
        sub = self.substrate
        target = math.floor(t_target / sub.dt + 1e-9)
        chunk = max(1, round(THERMAL_SUBSTEP_S / sub.dt))
        while sub.step < target:
            stop = min(target, sub.step + chunk)
            in_blackout = sub.step < self.blackout_until_step
            if in_blackout:
                stop = min(stop, self.blackout_until_step)
            power = self.power_w()
            n = stop - sub.step
            events = sub.advance_steps(n, emit=not in_blackout)
            sub.state = thermal_step(sub.state, power, self.cfg.ambient_c, n * sub.dt, self.thermal)
            if events:
                self._emit(events)

    def _emit(self, events) -> None:
        cfg = self.cfg
        payloads = [share_to_json(ev) for ev in events]
        if cfg.batch_s > 0:
            for p in payloads:
                p["t"] = float(np.ceil(p["t"] / cfg.batch_s) * cfg.batch_s)
        if cfg.jitter_s > 0:
            for p in payloads:
                p["t"] = p["t"] + float(abs(self._rng.normal(0.0, cfg.jitter_s)))
        if cfg.reorder_prob > 0:
            for i in range(len(payloads) - 1):
                if self._rng.random() < cfg.reorder_prob:
                    payloads[i], payloads[i + 1] = payloads[i + 1], payloads[i]
        self.buffer.extend(payloads)
        if len(self.buffer) > cfg.buffer_limit:
            del self.buffer[: len(self.buffer) - cfg.buffer_limit]

    def sync(self) -> float:
        with self._lock:
            self._advance_to(self.sim_now)
            return self.substrate.t

    # request handlers, all called with the simulation synced

    def info(self) -> dict | None:
        with self._lock:
            self._advance_to(self.sim_now)
            sub = self.substrate
            if sub.step < self.blackout_until_step:
                return None
            noise = self._rng.normal(0.0, self.cfg.voltage_noise_mv) if self.cfg.voltage_noise_mv > 0 else 0.0
            return telemetry_payload(
                core_mv_actual=float(self.op.core_mv + noise),
                temp_c=float(sub.state.temp_c),
                power_w=float(self.power_w()),
                hashrate_ghs=float(self.op.frequency_mhz * self.cfg.ghs_per_mhz),
                uptime_s=float(sub.t),
                frequency_mhz=self.op.frequency_mhz,
                core_mv_set=self.op.core_mv,
                simulated=True,
            )

    def patch(self, body: bytes) -> None:
        op = parse_settings_payload(body)
        if op.violations():
            raise ProtocolError("; ".join(op.violations()), raw=body)
        with self._lock:
            self._advance_to(self.sim_now)
            self.pending = op

    def restart(self) -> None:
        with self._lock:
            self._advance_to(self.sim_now)
            if self.pending is not None:
                self.op = self.pending
                self.pending = None
                self.substrate.state = self._state_for(self.op, self.substrate.state)
            self.blackout_until_step = self.substrate.step + round(self.cfg.restart_s / self.substrate.dt)
            self.restarts += 1

    def inject(self, payloads: list[dict]) -> None:
        """Append raw share payloads to the outgoing stream (test hook)."""
        with self._lock:
            self.buffer.extend(payloads)
    
    def shares_between(self, since: float | None, until: float | None) -> list[dict]:
        with self._lock:
            self._advance_to(self.sim_now)
            return [p for p in self.buffer
                    if (since is None or p["t"] > since) and (until is None or p["t"] <= until)]


def _make_handler(device: MockDevice, keepalive_s: float):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("mock %s - " + fmt, self.address_string(), *args)

        def _json(self, status: int, payload) -> None:
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> bytes:
            n = int(self.headers.get("Content-Length") or 0)
            return self.rfile.read(n) if n else b""

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == INFO_PATH:
                info = device.info()
                if info is None:
                    self._json(503, {"error": "restarting"})
                else:
                    self._json(200, info)
            elif url.path == SHARES_PATH:
                self._shares(parse_qs(url.query))
            else:
                self._json(404, {"error": "not found"})

        def do_PATCH(self):
            if urlparse(self.path).path != SETTINGS_PATH:
                self._json(404, {"error": "not found"})
                return
            try:
                device.patch(self._body())
            except ProtocolError as exc:
                self._json(400, {"error": str(exc)})
                return
            self._json(200, {"status": "ok"})

        def do_POST(self):
            if urlparse(self.path).path != RESTART_PATH:
                self._json(404, {"error": "not found"})
                return
            self._body()
            device.restart()
            self._json(200, {"status": "restarting"})

        def _shares(self, query):
            try:
                since = float(query["since"][0]) if "since" in query else None
                until = float(query["until"][0]) if "until" in query else None
                follow = query.get("follow", ["0"])[0] == "1"
            except ValueError:
                self._json(400, {"error": "bad query"})
                return
            self.send_response(200)
            self.send_header("Content-Type", "application/x-ndjson")
            if not follow:
                lines = b"".join(json.dumps(p).encode() + b"\n" for p in device.shares_between(since, until))
                self.send_header("Content-Length", str(len(lines)))
                self.end_headers()
                self.wfile.write(lines)
                return
            self.send_header("Connection", "close")
            self.end_headers()
            self.close_connection = True
            self._follow(since)

        def _follow(self, since):
            with device._lock:
                pos = 0
                if since is not None:
                    while pos < len(device.buffer) and device.buffer[pos]["t"] <= since:
                        pos += 1
            try:
                while not server_stopping.is_set():
                    device.sync()
                    with device._lock:
                        batch = device.buffer[pos:]
                        pos = len(device.buffer)
                    if batch:
                        self.wfile.write(b"".join(json.dumps(p).encode() + b"\n" for p in batch))
                    else:
                        self.wfile.write(b"\n")
                    self.wfile.flush()
                    time.sleep(keepalive_s)
            except (BrokenPipeError, ConnectionResetError):
                return

    server_stopping = threading.Event()
    return Handler, server_stopping


class MockServer:
    """Running mock device; use as a context manager or call ``stop``."""

    def __init__(self, cfg: MockConfig | None = None, host: str = "127.0.0.1", port: int = 0,
                 keepalive_s: float = 0.02):
        self.device = MockDevice(cfg or MockConfig())
        handler, self._stopping = _make_handler(self.device, keepalive_s)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self) -> None:
        self._stopping.set()
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve_mock(cfg: MockConfig | None = None, host: str = "127.0.0.1", port: int = 0, **kw) -> MockServer:
    """Start a mock device in a background thread. Port 0 picks a free port.

    Raises OSError if the port cannot be bound.
    """
    return MockServer(cfg, host, port, **kw)


def config_as_dict(cfg: MockConfig) -> dict:
    return asdict(cfg)
