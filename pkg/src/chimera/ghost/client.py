"""HTTP client for AxeOS-style miners (and the bundled mock)."""

from __future__ import annotations

import http.client
import json
import logging
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from typing import Iterator

from chimera.ghost.schema import (
    INFO_PATH,
    RESTART_PATH,
    SETTINGS_PATH,
    SHARES_PATH,
    DeviceEndpoint,
    OperatingPoint,
    ProtocolError,
    ShareStreamDisconnected,
    Telemetry,
    TransportError,
    VerificationError,
    parse_telemetry,
    settings_payload,
    share_from_json,
)
from chimera.substrate import ShareEvent

log = logging.getLogger(__name__)

# One control command in flight per endpoint.
_control_locks: dict[str, threading.Lock] = {}
_control_locks_guard = threading.Lock()


def _control_lock(ep: DeviceEndpoint) -> threading.Lock:
    with _control_locks_guard:
        return _control_locks.setdefault(ep.base_url, threading.Lock())


def _now() -> float:
    return time.time_ns() / 1e9


def _request(ep: DeviceEndpoint, method: str, path: str, body: bytes | None = None):
    req = urllib.request.Request(ep.url(path), data=body, method=method)
    if body is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=ep.timeout_s) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        raw = exc.read()
        if exc.code >= 500:
            raise TransportError(f"{method} {path}: device unavailable ({exc.code})") from None
        raise ProtocolError(f"{method} {path}: device rejected request ({exc.code})", raw=raw, status=exc.code) from None
    except (urllib.error.URLError, ConnectionError, TimeoutError, http.client.HTTPException, OSError) as exc:
        raise TransportError(f"{method} {path}: {exc}") from None


def poll_telemetry(ep: DeviceEndpoint) -> Telemetry:
    _, body = _request(ep, "GET", INFO_PATH)
    return parse_telemetry(body, _now())


def set_operating_point(
    ep: DeviceEndpoint,
    op: OperatingPoint,
    *,
    verify_timeout_s: float = 30.0,
    verify_tolerance_mv: float = 1.0,
    poll_s: float = 0.02,
) -> Telemetry:
    """PATCH the new point, restart, and wait until telemetry reports it.

    Returns the first telemetry snapshot that confirms the point. Re-sending
    the point the device is already running is a no-op.
    """
    op.check()
    with _control_lock(ep):
        try:
            current = poll_telemetry(ep)
        except TransportError:
            current = None
        if current is not None and _matches(current, op, verify_tolerance_mv):
            return current

        _request(ep, "PATCH", SETTINGS_PATH, settings_payload(op))
        _request(ep, "POST", RESTART_PATH, b"")

        deadline = time.monotonic() + verify_timeout_s
        while time.monotonic() < deadline:
            try:
                tel = poll_telemetry(ep)
            except TransportError:
                tel = None  # blackout while restarting
            if tel is not None and _matches(tel, op, verify_tolerance_mv):
                return tel
            time.sleep(poll_s)
    raise VerificationError(f"device did not report {op} within {verify_timeout_s} s")


def _matches(tel: Telemetry, op: OperatingPoint, tol_mv: float) -> bool:
    if tel.frequency_mhz is not None and tel.frequency_mhz != op.frequency_mhz:
        return False
    if tel.core_mv_set is not None and tel.core_mv_set != op.core_mv:
        return False
    return abs(tel.core_mv_actual - op.core_mv) <= tol_mv


class ShareSubscription:
    """Iterator over share events with per-source monotonicity enforced.

    Non-increasing timestamps from a source are dropped and counted in
    ``dropped``. A broken connection raises ShareStreamDisconnected carrying
    ``last_t`` so the caller can resubscribe with ``since=last_t``.
    """

    def __init__(self, ep: DeviceEndpoint, *, since: float | None = None, until: float | None = None,
                 follow: bool = False, stop: threading.Event | None = None):
        self.ep = ep
        self.since = since
        self.until = until
        self.follow = follow
        self.stop = stop or threading.Event()
        self.dropped = 0
        self.received = 0
        self.last_t: dict[str, float] = {}

    @property
    def latest(self) -> float | None:
        return max(self.last_t.values()) if self.last_t else None

    def _open(self):
        query = {"follow": int(self.follow)}
        if self.since is not None:
            query["since"] = repr(self.since)
        if self.until is not None:
            query["until"] = repr(self.until)
        url = self.ep.url(SHARES_PATH) + "?" + urllib.parse.urlencode(query)
        try:
            return urllib.request.urlopen(url, timeout=self.ep.timeout_s)
        except urllib.error.HTTPError as exc:
            raise ProtocolError(f"share stream rejected ({exc.code})", raw=exc.read(), status=exc.code) from None
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"share stream: {exc}") from None

    def accept(self, ev: ShareEvent) -> bool:
        last = self.last_t.get(ev.source)
        if last is not None and ev.t <= last:
            self.dropped += 1
            return False
        self.last_t[ev.source] = ev.t
        self.received += 1
        return True

    def __iter__(self) -> Iterator[ShareEvent]:
        resp = self._open()
        try:
            while not self.stop.is_set():
                try:
                    line = resp.readline()
                except (OSError, http.client.HTTPException) as exc:
                    raise ShareStreamDisconnected(str(exc), self.latest, self.received) from None
                if not line:
                    if self.follow and not self.stop.is_set():
                        raise ShareStreamDisconnected("stream closed by device", self.latest, self.received)
                    return
                line = line.strip()
                if not line:
                    continue  # keep-alive
                try:
                    data = json.loads(line)
                except ValueError:
                    raise ProtocolError("share line is not JSON", raw=line) from None
                ev = share_from_json(data, received_at=_now())
                if self.accept(ev):
                    yield ev
        finally:
            resp.close()


def subscribe_shares(ep: DeviceEndpoint, **kwargs) -> ShareSubscription:
    return ShareSubscription(ep, **kwargs)


class GhostClient:
    """Thin object wrapper so callers can hold one endpoint handle."""

    def __init__(self, ep: DeviceEndpoint):
        self.ep = ep

    def poll(self) -> Telemetry:
        return poll_telemetry(self.ep)

    def set_operating_point(self, op: OperatingPoint, **kw) -> Telemetry:
        return set_operating_point(self.ep, op, **kw)

    def shares(self, **kw) -> ShareSubscription:
        return subscribe_shares(self.ep, **kw)
