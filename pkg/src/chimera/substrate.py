"""Stochastic simulator of a voltage-stressed SHA-256 mining ASIC.

Share arrivals are an inhomogeneous Poisson process whose rate is modulated by
a zero-dimensional Landau order parameter ``psi`` and, optionally, by an
injected sinusoidal "heartbeat". The order parameter follows the gradient of

    F(psi, V) = F0 + a (V - V_crit) psi^2 + b psi^4

integrated with Euler-Maruyama. Above ``V_crit`` the only stable state is
``psi = 0``; below it the symmetry breaks and ``psi`` settles near
``+/- sqrt(a (V_crit - V) / (2 b))``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from chimera._sha256 import sha256 as _sha256_kernel

DEFAULT_DT = 1e-3
DEFAULT_C_PSI = 0.5
LAMBDA_MIN_FRACTION = 0.01


def sha256_digest(message: bytes) -> bytes:
    """FIPS 180-4 SHA-256 of ``message`` computed by the bundled kernel."""
    return _sha256_kernel(bytes(message))


def as_hash256(value) -> bytes:
    """Coerce bytes or a 64-char hex string into a 32-byte digest."""
    if isinstance(value, str):
        value = bytes.fromhex(value)
    value = bytes(value)
    if len(value) != 32:
        raise ValueError(f"Hash256 must be 32 bytes, got {len(value)}")
    return value


@dataclass(frozen=True)
class LandauParams:
    f0: float = 0.0
    a_slope: float = 0.01  # 1/mV
    b: float = 1.0
    gamma: float = 0.0  # gradient stiffness, unused in the 0-D model
    v_crit: float = 870.0  # mV
    noise_sigma: float = 0.05

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 850.0 <= self.v_crit <= 990.0:
            raise ValueError("v_crit must lie in [850, 990] mV")

    def free_energy(self, psi: float, core_mv: float) -> float:
        return self.f0 + self.a_slope * (core_mv - self.v_crit) * psi**2 + self.b * psi**4

    def equilibrium(self, core_mv: float) -> float:
        """Non-negative stable equilibrium of the noise-free dynamics."""
        if core_mv >= self.v_crit:
            return 0.0
        return math.sqrt(self.a_slope * (self.v_crit - core_mv) / (2.0 * self.b))


@dataclass(frozen=True)
class Heartbeat:
    freq_hz: float = 2.4
    depth: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.depth <= 1.0:
            raise ValueError("heartbeat depth must lie in [0, 1]")
        if self.freq_hz < 0:
            raise ValueError("heartbeat frequency must be non-negative")


@dataclass(frozen=True)
class SubstrateState:
    psi: float = 0.0
    temp_c: float = 25.0
    base_rate: float = 50.0
    clock_mhz: float = 400.0
    core_mv: float = 900.0
    heartbeat: Heartbeat | None = None

    def __post_init__(self):
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        if not 0.0 <= self.temp_c <= 120.0:
            raise ValueError("temp_c must lie in [0, 120] C")


@dataclass(frozen=True)
class ShareEvent:
    t: float
    hash: bytes
    nonce: int
    valid: bool = True
    source: str = "sim-0"

    def __post_init__(self):
        object.__setattr__(self, "hash", as_hash256(self.hash))
        if not 0 <= self.nonce < 2**32:
            raise ValueError("nonce must be a 32-bit unsigned integer")


@dataclass(frozen=True)
class ThermalParams:
    r_th: float = 4.0  # C/W
    tau_th: float = 20.0  # s


def landau_drift(psi: float, core_mv: float, p: LandauParams) -> float:
    """Return -dF/dpsi for the 0-D free energy (gradient term dropped)."""
    return -2.0 * p.a_slope * (core_mv - p.v_crit) * psi - 4.0 * p.b * psi**3


def landau_step(s: SubstrateState, p: LandauParams, dt: float, rng: np.random.Generator) -> SubstrateState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    psi = s.psi + landau_drift(s.psi, s.core_mv, p) * dt
    if p.noise_sigma > 0:
        psi += p.noise_sigma * math.sqrt(dt) * rng.standard_normal()
    return replace(s, psi=psi)


def psi_path(
    psi0: float, core_mv: float, p: LandauParams, dt: float, n_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Euler-Maruyama trajectory; element k is psi after k steps."""
    out = np.empty(n_steps + 1)
    out[0] = psi0
    lin = 2.0 * p.a_slope * (core_mv - p.v_crit)
    cub = 4.0 * p.b
    if p.noise_sigma == 0.0 and psi0 == 0.0:
        out[:] = 0.0
        return out
    if p.noise_sigma > 0:
        kicks = (p.noise_sigma * math.sqrt(dt)) * rng.standard_normal(n_steps)
    else:
        kicks = np.zeros(n_steps)
    psi = float(psi0)
    # plain float loop: several times faster than indexing numpy scalars
    for k, kick in enumerate(kicks.tolist(), start=1):
        psi = psi + (-lin * psi - cub * psi * psi * psi) * dt + kick
        out[k] = psi
    return out


def _rate(base_rate, psi, t, heartbeat: Heartbeat | None, c_psi: float, lambda_min: float):
    lam = base_rate * (1.0 + c_psi * np.square(psi))
    if heartbeat is not None and heartbeat.depth > 0:
        lam = lam * (1.0 + heartbeat.depth * np.sin(2.0 * np.pi * heartbeat.freq_hz * np.asarray(t)))
    return np.maximum(lam, lambda_min)


def instantaneous_rate(
    s: SubstrateState,
    t: float,
    c_psi: float = DEFAULT_C_PSI,
    lambda_min: float | None = None,
) -> float:
    """Share rate in events/s at time ``t``, clamped below at ``lambda_min``.

    ``lambda_min`` defaults to 1% of the base rate.
    """
    if lambda_min is None:
        lambda_min = LAMBDA_MIN_FRACTION * s.base_rate
    return float(_rate(s.base_rate, s.psi, t, s.heartbeat, c_psi, lambda_min))


def event_hash(device_id: str, counter: int) -> bytes:
    return hashlib.sha256(device_id.encode("utf-8") + counter.to_bytes(8, "big")).digest()


def simulate_shares(
    s: SubstrateState,
    p: LandauParams,
    horizon: float,
    rng: np.random.Generator,
    *,
    t0: float = 0.0,
    dt: float = DEFAULT_DT,
    c_psi: float = DEFAULT_C_PSI,
    device_id: str = "sim-0",
    counter: int = 0,
    pin_psi: bool = False,
) -> tuple[list[ShareEvent], SubstrateState]:
    """Ogata thinning over ``[t0, t0 + horizon)``; returns events and the final state.

    ``psi`` is advanced on a fixed ``dt`` grid and held constant within each
    step. Candidates come from a homogeneous process at the bounding rate and
    are accepted with probability ``rate / bound``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    n_steps = max(1, math.ceil(horizon / dt - 1e-9))
    if pin_psi:
        path = np.full(n_steps + 1, s.psi)
    else:
        path = psi_path(s.psi, s.core_mv, p, dt, n_steps, rng)

    lambda_min = LAMBDA_MIN_FRACTION * s.base_rate
    depth = s.heartbeat.depth if s.heartbeat is not None else 0.0
    psi_max = float(np.max(np.abs(path[:n_steps])))
    lam_max = s.base_rate * (1.0 + c_psi * psi_max**2) * (1.0 + depth)

    n_cand = rng.poisson(lam_max * horizon)
    cand = np.sort(rng.uniform(t0, t0 + horizon, n_cand))
    idx = np.minimum(((cand - t0) / dt).astype(np.int64), n_steps - 1)
    lam = _rate(s.base_rate, path[idx], cand, s.heartbeat, c_psi, lambda_min)
    keep = rng.uniform(0.0, lam_max, n_cand) <= lam
    times = cand[keep]
    if times.size > 1:
        times = times[np.concatenate(([True], np.diff(times) > 0))]

    events = []
    for i, t in enumerate(times.tolist()):
        c = counter + i
        events.append(ShareEvent(t=t, hash=event_hash(device_id, c), nonce=c & 0xFFFFFFFF, source=device_id))
    return events, replace(s, psi=float(path[n_steps]))


def sample_shares(
    s: SubstrateState,
    p: LandauParams,
    horizon: float,
    rng: np.random.Generator,
    **kwargs,
) -> list[ShareEvent]:
    events, _ = simulate_shares(s, p, horizon, rng, **kwargs)
    return events


def thermal_step(
    s: SubstrateState,
    power_w: float,
    ambient_c: float,
    dt: float,
    thermal: ThermalParams = ThermalParams(),
) -> SubstrateState:
    """One Euler step of the first-order RC junction model."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    temp = s.temp_c + dt * ((power_w * thermal.r_th + ambient_c - s.temp_c) / thermal.tau_th)
    return replace(s, temp_c=min(max(temp, 0.0), 120.0))


@dataclass
class Substrate:
    """Single-owner simulated device with its own clock and share counter.

    Time only advances in whole ``dt`` steps so a run split into chunks walks
    the same grid as a run done in one piece.
    """

    state: SubstrateState = field(default_factory=SubstrateState)
    params: LandauParams = field(default_factory=LandauParams)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    device_id: str = "sim-0"
    dt: float = DEFAULT_DT
    c_psi: float = DEFAULT_C_PSI
    step: int = 0
    counter: int = 0

    @property
    def t(self) -> float:
        return self.step * self.dt

    def advance_steps(self, n_steps: int, *, emit: bool = True) -> list[ShareEvent]:
        if n_steps <= 0:
            return []
        if not emit:
            path = psi_path(self.state.psi, self.state.core_mv, self.params, self.dt, n_steps, self.rng)
            self.state = replace(self.state, psi=float(path[-1]))
            self.step += n_steps
            return []
        events, self.state = simulate_shares(
            self.state, self.params, n_steps * self.dt, self.rng,
            t0=self.t, dt=self.dt, c_psi=self.c_psi,
            device_id=self.device_id, counter=self.counter,
        )
        self.step += n_steps
        self.counter += len(events)
        return events

    def advance(self, horizon: float, *, emit: bool = True) -> list[ShareEvent]:
        return self.advance_steps(math.floor(horizon / self.dt + 1e-9), emit=emit)

    def advance_to(self, t_target: float, *, emit: bool = True) -> list[ShareEvent]:
        return self.advance(t_target - self.t, emit=emit)
