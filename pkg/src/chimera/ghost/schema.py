"""Wire schema shared by the device client and the mock device.

Both sides import these helpers, so payload layout is defined exactly once.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

from chimera.substrate import ShareEvent

INFO_PATH = "/api/system/info"
SETTINGS_PATH = "/api/system"
RESTART_PATH = "/api/system/restart"
SHARES_PATH = "/api/shares"

SETTINGS_KEYS = ("frequency", "volts")

FREQ_MIN_MHZ = 300
FREQ_MAX_MHZ = 500
FREQ_STEP_MHZ = 20
CORE_MV_MIN = 850
CORE_MV_MAX = 990

ENV_ENDPOINT = "CHIMERA_ENDPOINT"
ENV_POLL_INTERVAL = "CHIMERA_POLL_INTERVAL"


class GhostError(Exception):
    pass


class TransportError(GhostError):
    """Device unreachable or temporarily unavailable. Safe to retry."""

    retryable = True


class ProtocolError(GhostError):
    """Device answered with something the schema does not allow."""

    retryable = False

    def __init__(self, message: str, raw: bytes | str | None = None, status: int | None = None):
        super().__init__(message)
        self.raw = raw
        self.status = status


class VerificationError(GhostError):
    retryable = False


class InvalidOperatingPoint(GhostError, ValueError):
    retryable = False


class ShareStreamDisconnected(GhostError):
    """The share stream ended early. Resume with ``since=last_t``."""

    retryable = True

    def __init__(self, message: str, last_t: float | None, received: int):
        super().__init__(message)
        self.last_t = last_t
        self.received = received


@dataclass(frozen=True)
class OperatingPoint:
    frequency_mhz: int
    core_mv: int

    def violations(self) -> list[str]:
        out = []
        if not FREQ_MIN_MHZ <= self.frequency_mhz <= FREQ_MAX_MHZ:
            out.append(f"frequency {self.frequency_mhz} MHz outside [{FREQ_MIN_MHZ}, {FREQ_MAX_MHZ}]")
        if self.frequency_mhz % FREQ_STEP_MHZ:
            out.append(f"frequency {self.frequency_mhz} MHz is not a multiple of {FREQ_STEP_MHZ}")
        if not CORE_MV_MIN <= self.core_mv <= CORE_MV_MAX:
            out.append(f"core voltage {self.core_mv} mV outside [{CORE_MV_MIN}, {CORE_MV_MAX}]")
        return out

    def check(self) -> "OperatingPoint":
        problems = self.violations()
        if problems:
            raise InvalidOperatingPoint("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return {"frequency_mhz": self.frequency_mhz, "core_mv": self.core_mv}


def settings_payload(op: OperatingPoint) -> bytes:
    """PATCH body, exactly {"frequency": <int MHz>, "volts": <int mV>}."""
    return json.dumps({"frequency": int(op.frequency_mhz), "volts": int(op.core_mv)}).encode()


def parse_settings_payload(body: bytes) -> OperatingPoint:
    """Strict inverse of settings_payload: every key required, no extras."""
    try:
        data = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"settings body is not JSON: {exc}", raw=body) from None
    if not isinstance(data, dict):
        raise ProtocolError("settings body must be an object", raw=body)
    unknown = set(data) - set(SETTINGS_KEYS)
    missing = set(SETTINGS_KEYS) - set(data)
    if unknown or missing:
        raise ProtocolError(f"bad settings keys: unknown={sorted(unknown)} missing={sorted(missing)}", raw=body)
    for key in SETTINGS_KEYS:
        if type(data[key]) is not int:
            raise ProtocolError(f"{key} must be an integer", raw=body)
    return OperatingPoint(data["frequency"], data["volts"])


@dataclass(frozen=True)
class Telemetry:
    t: float  # local receipt time
    core_mv_actual: float
    temp_c: float
    power_w: float
    hashrate_ghs: float
    device_time: float | None = None  # device uptime clock, simulated on the mock
    frequency_mhz: int | None = None
    core_mv_set: int | None = None
    simulated: bool = False

    def __post_init__(self):
        for name in ("t", "core_mv_actual", "temp_c", "power_w", "hashrate_ghs"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.core_mv_actual > 0:
            raise ValueError("core_mv_actual must be positive")

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "core_mv_actual": self.core_mv_actual,
            "temp_c": self.temp_c,
            "power_w": self.power_w,
            "hashrate_ghs": self.hashrate_ghs,
            "device_time": self.device_time,
            "frequency_mhz": self.frequency_mhz,
            "core_mv_set": self.core_mv_set,
            "simulated": self.simulated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Telemetry":
        return cls(**d)


def telemetry_payload(
    *, core_mv_actual, temp_c, power_w, hashrate_ghs, uptime_s, frequency_mhz, core_mv_set,
    simulated=False,
) -> dict:
    """Device-side info body using AxeOS field names."""
    body = {
        "coreVoltageActual": core_mv_actual,
        "coreVoltage": core_mv_set,
        "frequency": frequency_mhz,
        "temp": temp_c,
        "power": power_w,
        "hashRate": hashrate_ghs,
        "uptimeSeconds": uptime_s,
    }
    if simulated:
        body["simulated"] = True
    return body


def parse_telemetry(body: bytes, received_at: float) -> Telemetry:
    try:
        data = json.loads(body)
        return Telemetry(
            t=received_at,
            core_mv_actual=float(data["coreVoltageActual"]),
            temp_c=float(data["temp"]),
            power_w=float(data["power"]),
            hashrate_ghs=float(data["hashRate"]),
            device_time=None if data.get("uptimeSeconds") is None else float(data["uptimeSeconds"]),
            frequency_mhz=None if data.get("frequency") is None else int(data["frequency"]),
            core_mv_set=None if data.get("coreVoltage") is None else int(data["coreVoltage"]),
            simulated=bool(data.get("simulated", False)),
        )
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed telemetry: {exc!r}", raw=body) from None


def share_to_json(ev: ShareEvent) -> dict:
    return {"t": ev.t, "hash": ev.hash.hex(), "nonce": ev.nonce, "valid": ev.valid, "source": ev.source}


def share_from_json(d: dict, received_at: float | None = None) -> ShareEvent:
    """Parse one share line. A missing ``t`` falls back to ``received_at``."""
    t = d.get("t", received_at)
    if t is None:
        raise ProtocolError("share event has no timestamp", raw=json.dumps(d))
    try:
        return ShareEvent(t=float(t), hash=d["hash"], nonce=int(d["nonce"]),
                          valid=bool(d.get("valid", True)), source=str(d["source"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed share event: {exc!r}", raw=json.dumps(d)) from None


@dataclass(frozen=True)
class DeviceEndpoint:
    base_url: str
    poll_interval_s: float = 3.0
    timeout_s: float = 5.0
    device_id: str = "device-0"

    def __post_init__(self):
        if not self.poll_interval_s > 0:
            raise ValueError("poll_interval_s must be positive")
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))

    @classmethod
    def from_env(cls, base_url: str | None = None, poll_interval_s: float | None = None, **kw) -> "DeviceEndpoint":
        url = base_url or os.environ.get(ENV_ENDPOINT)
        if not url:
            raise ValueError(f"no endpoint given and ${ENV_ENDPOINT} is unset")
        if poll_interval_s is None:
            poll_interval_s = float(os.environ.get(ENV_POLL_INTERVAL, 3.0))
        return cls(url, poll_interval_s, **kw)

    def url(self, path: str) -> str:
        return self.base_url + path
