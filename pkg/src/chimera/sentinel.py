"""Homeostasis: thermal PID, operating-envelope checks, anomaly rules, regimes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from chimera.ghost.schema import OperatingPoint, Telemetry


class Regime(enum.IntEnum):
    # ordered by severity
    DETERMINISTIC = 0
    TRANSITIONAL = 1
    RESONANT_CANDIDATE = 2
    UNSTABLE = 3

    @property
    def label(self) -> str:
        return _REGIME_LABELS[self]


_REGIME_LABELS = {
    Regime.DETERMINISTIC: "Deterministic",
    Regime.TRANSITIONAL: "Transitional",
    Regime.RESONANT_CANDIDATE: "ResonantCandidate",
    Regime.UNSTABLE: "Unstable",
}

# Lower edges in mV. 950 and 870 fall in Transitional, 850 in ResonantCandidate.
DETERMINISTIC_ABOVE = 950.0
TRANSITIONAL_FROM = 870.0
RESONANT_FROM = 850.0


def classify_regime(core_mv: float) -> Regime:
    if not math.isfinite(core_mv):
        raise ValueError("core_mv must be finite")
    if core_mv > DETERMINISTIC_ABOVE:
        return Regime.DETERMINISTIC
    if core_mv >= TRANSITIONAL_FROM:
        return Regime.TRANSITIONAL
    if core_mv >= RESONANT_FROM:
        return Regime.RESONANT_CANDIDATE
    return Regime.UNSTABLE


@dataclass
class PidController:
    """Positional PID with clamping anti-windup.

    The derivative acts on the measurement, so setpoint steps do not kick the
    output. While the output sits on a limit, the integral is frozen whenever
    the error would push it further into saturation.
    """

    kp: float = 2.0
    ki: float = 0.1
    kd: float = 0.5
    out_min: float = -20.0
    out_max: float = 20.0
    integral_clamp: float | None = None
    integral: float = 0.0
    prev_measured: float | None = None
    output: float = 0.0

    def __post_init__(self):
        if not self.out_min < self.out_max:
            raise ValueError("out_min must be below out_max")
        if self.integral_clamp is None:
            bound = max(abs(self.out_min), abs(self.out_max))
            self.integral_clamp = bound / self.ki if self.ki > 0 else 0.0

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_measured = None
        self.output = 0.0


def _clip(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def pid_update(c: PidController, setpoint: float, measured: float, dt: float) -> float:
    """Advance ``c`` by one sample and return the clamped control output.

    Positive output means "add heat" (a power trim on the thermal plant).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    error = setpoint - measured
    d_meas = 0.0 if c.prev_measured is None else (measured - c.prev_measured) / dt

    candidate = _clip(c.integral + error * dt, -c.integral_clamp, c.integral_clamp)
    raw = c.kp * error + c.ki * candidate - c.kd * d_meas
    saturated_high = raw > c.out_max and error > 0
    saturated_low = raw < c.out_min and error < 0
    if not (saturated_high or saturated_low):
        c.integral = candidate
    raw = c.kp * error + c.ki * c.integral - c.kd * d_meas

    c.prev_measured = measured
    c.output = _clip(raw, c.out_min, c.out_max)
    return c.output


@dataclass(frozen=True)
class Limits:
    v_min: float = 850.0
    v_max: float = 990.0
    f_min: float = 300.0
    f_max: float = 500.0
    f_step: int = 20
    max_temp_c: float = 85.0
    max_power_w: float = 15.0

    def __post_init__(self):
        if not (self.v_min < self.v_max and self.f_min < self.f_max):
            raise ValueError("each limit pair needs lo < hi")


@dataclass(frozen=True)
class LimitDecision:
    op: OperatingPoint
    accepted: bool
    reason: str | None = None
    bound: float | None = None

    def __bool__(self) -> bool:
        return self.accepted


def enforce_limits(op: OperatingPoint, limits: Limits = Limits()) -> LimitDecision:
    """Accept or reject ``op``; the first violated bound is reported."""
    if op.core_mv < limits.v_min:
        return LimitDecision(op, False, "voltage-below-floor", limits.v_min)
    if op.core_mv > limits.v_max:
        return LimitDecision(op, False, "voltage-above-ceiling", limits.v_max)
    if op.frequency_mhz < limits.f_min:
        return LimitDecision(op, False, "frequency-below-floor", limits.f_min)
    if op.frequency_mhz > limits.f_max:
        return LimitDecision(op, False, "frequency-above-ceiling", limits.f_max)
    if limits.f_step and op.frequency_mhz % limits.f_step:
        return LimitDecision(op, False, "frequency-off-step", limits.f_step)
    return LimitDecision(op, True)


@dataclass(frozen=True)
class AnomalyRules:
    max_temp_c: float = 85.0
    max_temp_rise: float = 2.0  # C between consecutive samples
    max_hashrate_drop: float = 0.5  # fraction of the previous sample
    poll_interval_s: float = 3.0
    gap_factor: float = 3.0


@dataclass(frozen=True)
class Alarm:
    kind: str
    t: float
    value: float
    threshold: float
    critical: bool = False

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t": self.t, "value": self.value,
                "threshold": self.threshold, "critical": self.critical}

    @classmethod
    def from_dict(cls, d: dict) -> "Alarm":
        return cls(d["kind"], d["t"], d["value"], d["threshold"], d["critical"])


def detect_anomaly(history: Sequence[Telemetry], rules: AnomalyRules = AnomalyRules()) -> list[Alarm]:
    """Scan ``history`` (oldest first) and return every rule violation.

    Over-temperature is the only critical alarm. Rate rules compare each
    sample with its predecessor and need at least two samples.
    """
    alarms = []
    for tel in history:
        if tel.temp_c > rules.max_temp_c:
            alarms.append(Alarm("over-temperature", tel.t, tel.temp_c, rules.max_temp_c, critical=True))
    for prev, cur in zip(history[:-1], history[1:]):
        rise = cur.temp_c - prev.temp_c
        if rise > rules.max_temp_rise:
            alarms.append(Alarm("temperature-slope", cur.t, rise, rules.max_temp_rise))
        if prev.hashrate_ghs > 0:
            drop = (prev.hashrate_ghs - cur.hashrate_ghs) / prev.hashrate_ghs
            if drop > rules.max_hashrate_drop:
                alarms.append(Alarm("hashrate-drop", cur.t, drop, rules.max_hashrate_drop))
        gap = cur.t - prev.t
        limit = rules.gap_factor * rules.poll_interval_s
        if gap > limit:
            alarms.append(Alarm("telemetry-gap", cur.t, gap, limit))
    return alarms


@dataclass
class ThermalLoop:
    """PID wired to the substrate's first-order plant, for offline tuning."""

    controller: PidController = field(default_factory=PidController)
    ambient_c: float = 25.0
    dt: float = 1.0

    def run(self, setpoint, disturbance_w, t_total: float, temp0: float | None = None):
        """Simulate ``t_total`` seconds.

        ``setpoint`` and ``disturbance_w`` are constants or callables of time.
        Returns (times, temperatures, outputs) lists.
        """
        from chimera.substrate import SubstrateState, thermal_step

        sp = setpoint if callable(setpoint) else (lambda _t, v=setpoint: v)
        dist = disturbance_w if callable(disturbance_w) else (lambda _t, v=disturbance_w: v)
        state = SubstrateState(temp_c=self.ambient_c if temp0 is None else temp0)
        times, temps, outs = [], [], []
        n = int(round(t_total / self.dt))
        for i in range(n):
            t = i * self.dt
            u = pid_update(self.controller, sp(t), state.temp_c, self.dt)
            state = thermal_step(state, max(dist(t) + u, 0.0), self.ambient_c, self.dt)
            times.append(t + self.dt)
            temps.append(state.temp_c)
            outs.append(u)
        return times, temps, outs
