"""Reservoir-computing validation suite.

A leaky echo-state surrogate of the substrate's state update, ridge readout,
echo-state and separation tests, and the NARMA-10 / Mackey-Glass benchmarks.
The substrate-backed path drives the simulated device with the input and
uses per-window timing features as the reservoir state.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

DEFAULT_WASHOUT = 100
TRAIN_FRACTION = 0.8


class SingularSystemError(np.linalg.LinAlgError):
    pass


class GenerationError(ValueError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass
class SurrogateReservoir:
    w_in: np.ndarray  # (n, input_dim)
    a: sparse.csr_matrix  # (n, n)
    leak: float = 1.0
    xi_scale: float = 0.0
    spectral_radius: float = 0.0
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.w_in = np.atleast_2d(np.asarray(self.w_in, dtype=float))
        self.a = sparse.csr_matrix(self.a, dtype=float)
        if self.a.shape != (self.n, self.n):
            raise ValueError("recurrent matrix must be n x n")
        if not 0.0 < self.leak <= 1.0:
            raise ValueError("leak must lie in (0, 1]")
        if not (np.all(np.isfinite(self.w_in)) and np.all(np.isfinite(self.a.data))):
            raise ValueError("weights must be finite")
        if self.bias is None:
            self.bias = np.zeros(self.n)

    @property
    def n(self) -> int:
        return self.w_in.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]

    def xi_stream(self, steps: int, rng: np.random.Generator) -> np.ndarray:
        if self.xi_scale == 0:
            return np.zeros((steps, self.n))
        return self.xi_scale * rng.standard_normal((steps, self.n))


def make_reservoir(
    n: int = 100,
    spectral_radius: float = 0.9,
    *,
    input_dim: int = 1,
    density: float = 0.1,
    input_scale: float = 0.5,
    bias_scale: float = 0.0,
    leak: float = 1.0,
    xi_scale: float = 0.0,
    seed: int = 0,
) -> SurrogateReservoir:
    """Random sparse reservoir rescaled to the requested spectral radius."""
    rng = np.random.default_rng(seed)
    a = sparse.random(n, n, density=density, random_state=rng,
                      data_rvs=lambda k: rng.uniform(-1.0, 1.0, k), format="csr")
    rho = float(np.max(np.abs(np.linalg.eigvals(a.toarray())))) if a.nnz else 0.0
    if rho > 0:
        a = a * (spectral_radius / rho)
    w_in = rng.uniform(-input_scale, input_scale, (n, input_dim))
    bias = rng.uniform(-bias_scale, bias_scale, n) if bias_scale else np.zeros(n)
    return SurrogateReservoir(w_in, a, leak=leak, xi_scale=xi_scale,
                              spectral_radius=spectral_radius if rho > 0 else 0.0, bias=bias)


def reservoir_step(r: SurrogateReservoir, x: np.ndarray, u, xi=None) -> np.ndarray:
    """x' = (1 - leak) x + leak tanh(W_in u + A x + xi)."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (r.n,) or u.shape != (r.input_dim,):
        raise ValueError(f"expected x of shape ({r.n},) and u of shape ({r.input_dim},)")
    pre = r.w_in @ u + r.a @ x + r.bias
    if xi is not None:
        pre = pre + xi
    return (1.0 - r.leak) * x + r.leak * np.tanh(pre)


def run_reservoir(r: SurrogateReservoir, inputs, x0=None, xi=None) -> np.ndarray:
    """State after each input, shape (T, n)."""
    u = np.asarray(inputs, dtype=float).reshape(len(inputs), -1)
    x = np.zeros(r.n) if x0 is None else np.asarray(x0, dtype=float)
    out = np.empty((len(u), r.n))
    for t in range(len(u)):
        x = reservoir_step(r, x, u[t], None if xi is None else xi[t])
        out[t] = x
    return out


def esp_test(r: SurrogateReservoir, inputs, x0_a, x0_b, xi=None) -> np.ndarray:
    """Distance ||x_a(t) - x_b(t)|| between two runs sharing inputs and noise."""
    xa = run_reservoir(r, inputs, x0_a, xi)
    xb = run_reservoir(r, inputs, x0_b, xi)
    return np.linalg.norm(xa - xb, axis=1)


def esp_holds(divergence: np.ndarray, tol: float = 1e-6) -> bool:
    return bool(divergence[-1] < tol)


@dataclass
class SeparationResult:
    distance: float
    threshold: float

    @property
    def distinguishable(self) -> bool:
        return self.distance > self.threshold


def separation_test(
    r: SurrogateReservoir,
    input_a,
    input_b,
    *,
    x0=None,
    xi=None,
    threshold: float | None = None,
) -> SeparationResult:
    """Terminal-state distance for two input sequences from a common start.

    The default threshold is 1e-3 * sqrt(n).
    """
    if len(input_a) != len(input_b):
        raise ValueError("input sequences must have equal length")
    xa = run_reservoir(r, input_a, x0, xi)[-1]
    xb = run_reservoir(r, input_b, x0, xi)[-1]
    if threshold is None:
        threshold = 1e-3 * math.sqrt(r.n)
    return SeparationResult(float(np.linalg.norm(xa - xb)), threshold)


@dataclass
class SubstrateDriver:
    """Uses the simulated device as the reservoir.

    Each input value in [0, 1] sets the heartbeat depth for one window of
    ``window_s`` seconds. The state row is that window's FeatureVector.
    """

    seed: int = 0
    base_rate: float = 50.0
    core_mv: float = 860.0
    window_s: float = 4.0
    bin_s: float = 0.05
    nperseg: int = 32
    heartbeat_hz: float = 2.4

    def run(self, inputs) -> np.ndarray:
        from chimera import muse
        from chimera.substrate import Heartbeat, LandauParams, Substrate, SubstrateState

        sub = Substrate(
            state=SubstrateState(base_rate=self.base_rate, core_mv=self.core_mv),
            params=LandauParams(),
            rng=np.random.default_rng(self.seed),
        )
        spectral = muse.SpectralConfig(nperseg=self.nperseg)
        rows = []
        prev_hash = None
        for u in np.asarray(inputs, dtype=float).ravel():
            depth = float(np.clip(u, 0.0, 1.0))
            sub.state = replace(sub.state, heartbeat=Heartbeat(self.heartbeat_hz, depth))
            t0 = sub.t
            events = sub.advance(self.window_s)
            times = [e.t for e in events]
            try:
                stats = muse.interarrival_stats(times, window=None)
            except muse.InsufficientData:
                stats = None
            series = muse.rate_series(times, self.bin_s, t0, t0 + self.window_s)
            try:
                spec = muse.psd_estimate(series, 1.0 / self.bin_s, spectral)
            except muse.InsufficientData:
                spec = None
            hashes = ([prev_hash] if prev_hash else []) + [e.hash for e in events]
            if events:
                prev_hash = events[-1].hash
            fv = muse.encode_features(stats, spec, muse.mean_consecutive_hamming(hashes), series=series)
            rows.append(fv.values)
        return np.vstack(rows)


def harvest_states(source, inputs, washout: int = DEFAULT_WASHOUT, *, x0=None, xi=None) -> np.ndarray:
    """Post-washout state matrix (time x dim) from a surrogate or the substrate."""
    if washout >= len(inputs):
        raise ValueError(f"sequence of {len(inputs)} steps is too short for washout {washout}")
    if isinstance(source, SurrogateReservoir):
        states = run_reservoir(source, inputs, x0, xi)
    else:
        states = source.run(inputs)
    return states[washout:]


@dataclass
class ReadoutModel:
    weights: np.ndarray  # (targets, dim + 1); last column is the bias
    ridge_lambda: float

    def predict(self, states: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(states)
        out = s @ self.weights[:, :-1].T + self.weights[:, -1]
        return out


def train_readout(states, targets, ridge_lambda: float = 1e-6, *, rcond: float = 1e-12) -> ReadoutModel:
    """Ridge regression with an unpenalised bias, solved by SVD.

    States and targets are centred, so the bias absorbs the means and the
    penalty only shrinks the weights. With ``ridge_lambda == 0`` a
    rank-deficient system raises SingularSystemError.
    """
    s = np.asarray(states, dtype=float)
    y = np.asarray(targets, dtype=float)
    y = y.reshape(len(y), -1)
    if s.ndim != 2 or s.shape[0] != y.shape[0]:
        raise ValueError("states and targets must have matching row counts")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    s_mean = s.mean(axis=0)
    y_mean = y.mean(axis=0)
    sc = s - s_mean
    yc = y - y_mean
    u, sv, vt = np.linalg.svd(sc, full_matrices=False)
    if ridge_lambda == 0:
        if sv.size < s.shape[1] or sv[-1] <= rcond * max(sv[0], 1e-300):
            raise SingularSystemError("state matrix is rank deficient; use ridge_lambda > 0")
        filt = 1.0 / sv
    else:
        filt = sv / (sv**2 + ridge_lambda)
    w = (vt.T * filt) @ (u.T @ yc)  # (dim, targets)
    bias = y_mean - s_mean @ w
    weights = np.hstack([w.T, bias[:, None]])
    return ReadoutModel(weights, ridge_lambda)


def evaluate_nmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(targets, dtype=float).ravel()
    if p.shape != y.shape:
        raise ValueError("predictions and targets differ in length")
    var = float(np.var(y))
    if var == 0:
        raise ValueError("targets have zero variance")
    return float(np.mean((p - y) ** 2) / var)


def narma10_generate(u) -> np.ndarray:
    """NARMA-10 target for input ``u`` in [0, 0.5], zero initial history.

    y[t+1] = 0.3 y[t] + 0.05 y[t] sum(y[t-9..t]) + 1.5 u[t-9] u[t] + 0.1
    """
    u = np.asarray(u, dtype=float)
    if u.size and (u.min() < 0 or u.max() > 0.5):
        raise ValueError("NARMA-10 input must lie in [0, 0.5]")
    y = np.zeros(u.size)
    for t in range(u.size - 1):
        hist = math.fsum(y[max(0, t - 9):t + 1])
        lagged = u[t - 9] if t >= 9 else 0.0
        y[t + 1] = 0.3 * y[t] + 0.05 * y[t] * hist + 1.5 * lagged * u[t] + 0.1
        if abs(y[t + 1]) > 10:
            raise GenerationError(f"NARMA-10 diverged at index {t + 1}", t + 1)
    return y


def mackey_glass_generate(
    tau: float = 17.0,
    beta: float = 0.2,
    gamma: float = 0.1,
    exponent: float = 10.0,
    dt: float = 0.1,
    n_samples: int = 2000,
    *,
    sample_every: float = 1.0,
    x0: float = 1.2,
    transient: float = 500.0,
) -> np.ndarray:
    """Mackey-Glass series sampled every ``sample_every`` time units.

    RK4 on x' = beta x(t - tau) / (1 + x(t - tau)^exponent) - gamma x(t),
    with constant history ``x0``. Delayed values at half steps come from
    cubic Hermite interpolation on the stored solution and derivative.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    lag = tau / dt
    if abs(lag - round(lag)) > 1e-9:
        raise ValueError("tau / dt must be an integer")
    lag = int(round(lag))
    stride = sample_every / dt
    if abs(stride - round(stride)) > 1e-9:
        raise ValueError("sample_every / dt must be an integer")
    stride = int(round(stride))
    skip = int(round(transient / dt))
    total = skip + (n_samples - 1) * stride + 1

    def rhs(x, xd):
        return beta * xd / (1.0 + xd**exponent) - gamma * x

    # index i holds t = (i - lag) * dt; the first lag + 1 entries are history
    xs = np.empty(lag + total)
    fs = np.empty(lag + total)
    xs[: lag + 1] = x0
    fs[: lag + 1] = 0.0  # history is constant
    fs[lag] = rhs(x0, x0)
    for i in range(lag, lag + total - 1):
        x = xs[i]
        d0, d1 = xs[i - lag], xs[i - lag + 1]
        f0, f1 = fs[i - lag], fs[i - lag + 1]
        if i - lag + 1 == lag:
            f1 = 0.0  # left derivative at t = 0, where history meets the solution
        dmid = 0.5 * (d0 + d1) + dt * (f0 - f1) / 8.0
        k1 = rhs(x, d0)
        k2 = rhs(x + 0.5 * dt * k1, dmid)
        k3 = rhs(x + 0.5 * dt * k2, dmid)
        k4 = rhs(x + dt * k3, d1)
        xs[i + 1] = x + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        fs[i + 1] = rhs(xs[i + 1], xs[i + 1 - lag])
    series = xs[lag + skip:: stride]
    return series[:n_samples]


@dataclass
class BenchmarkReport:
    task: str
    nmse: float
    baseline_nmse: float
    n_train: int
    n_test: int
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _fit_and_score(task, states, targets, seed, ridge_lambda, extra) -> BenchmarkReport:
    n_train = int(len(states) * TRAIN_FRACTION)
    model = train_readout(states[:n_train], targets[:n_train], ridge_lambda)
    pred = model.predict(states[n_train:]).ravel()
    y_test = targets[n_train:]
    baseline = np.full_like(y_test, np.mean(targets[:n_train]))
    return BenchmarkReport(
        task=task,
        nmse=evaluate_nmse(pred, y_test),
        baseline_nmse=evaluate_nmse(baseline, y_test),
        n_train=n_train,
        n_test=len(states) - n_train,
        seed=seed,
        extra=extra,
    )


def _with_input(states, inputs):
    return np.hstack([states, np.asarray(inputs, dtype=float).reshape(len(states), -1)])


def run_narma10(seed: int = 0, *, n: int = 100, length: int = 5000, washout: int = DEFAULT_WASHOUT,
                spectral_radius: float = 0.9, ridge_lambda: float = 1e-8) -> BenchmarkReport:
    """One-step NARMA-10: after reading u[t], predict y[t+1]."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, 0.5, length + 1)
    y = narma10_generate(u)
    r = make_reservoir(n, spectral_radius, input_scale=0.2, bias_scale=0.2, seed=seed + 1)
    states = harvest_states(r, u[:-1], washout)
    feats = _with_input(states, u[washout:-1])
    return _fit_and_score("narma10", feats, y[washout + 1:], seed, ridge_lambda,
                          {"n": n, "spectral_radius": spectral_radius, "washout": washout})


def run_mackey_glass(seed: int = 0, *, n: int = 100, length: int = 3000, horizon: int = 1,
                     washout: int = DEFAULT_WASHOUT, spectral_radius: float = 0.9,
                     ridge_lambda: float = 1e-8) -> BenchmarkReport:
    """Predict x[t + horizon] from the state after reading x[t]."""
    series = mackey_glass_generate(n_samples=length + horizon)
    inputs = series - 0.9  # roughly centre the series
    r = make_reservoir(n, spectral_radius, input_scale=0.5, bias_scale=0.2, seed=seed + 1)
    states = harvest_states(r, inputs[:length], washout)
    feats = _with_input(states, inputs[washout:length])
    return _fit_and_score("mackey-glass", feats, series[washout + horizon:length + horizon], seed,
                          ridge_lambda, {"n": n, "horizon": horizon, "spectral_radius": spectral_radius})


def run_esp(seed: int = 0, *, n: int = 100, spectral_radius: float = 0.8, steps: int = 500,
            input_scale: float = 0.1, tol: float = 1e-6) -> dict:
    rng = np.random.default_rng(seed)
    r = make_reservoir(n, spectral_radius, input_scale=input_scale, xi_scale=1e-3, seed=seed)
    inputs = rng.uniform(-1.0, 1.0, steps)
    xi = r.xi_stream(steps, rng)
    d = esp_test(r, inputs, rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), xi)
    return {"task": "esp", "seed": seed, "spectral_radius": spectral_radius, "steps": steps,
            "final_divergence": float(d[-1]), "esp_holds": esp_holds(d, tol)}


def run_separation(seed: int = 0, *, n: int = 100, spectral_radius: float = 0.9, steps: int = 200) -> dict:
    rng = np.random.default_rng(seed)
    r = make_reservoir(n, spectral_radius, input_scale=0.5, xi_scale=1e-3, seed=seed)
    a = rng.standard_normal(steps)
    b = rng.standard_normal(steps)
    b -= a * (a @ b) / (a @ a)  # orthogonal to a
    xi = r.xi_stream(steps, rng)
    res = separation_test(r, a, b, xi=xi)
    return {"task": "separation", "seed": seed, "distance": res.distance,
            "threshold": res.threshold, "distinguishable": res.distinguishable}


def states_to_csv(states: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(states.shape[1])])
    for row in states:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


BENCHMARKS: dict[str, Callable] = {
    "narma10": run_narma10,
    "mackey-glass": run_mackey_glass,
    "esp": run_esp,
    "separation": run_separation,
}
