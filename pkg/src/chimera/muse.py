"""Signal processing over share timing: statistics, diffusion, spectra, features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal

DEFAULT_WINDOW = 64
MIN_EVENTS = 11
DEFAULT_BIN_S = 0.05
HEARTBEAT_BAND = (0.5, 5.0)
HEARTBEAT_MIN_PROMINENCE_DB = 10.0
DEFAULT_CORES = 138


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class TimingStats:
    n: int
    mean_s: float
    std_s: float
    cv: float
    paper_entropy: float
    shannon_entropy_corrected: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_s": self.mean_s,
            "std_s": self.std_s,
            "cv": self.cv,
            "paper_entropy": self.paper_entropy,
            "shannon_entropy_corrected": self.shannon_entropy_corrected,
        }


def interarrival_stats(times: Sequence[float], window: int | None = DEFAULT_WINDOW) -> TimingStats:
    """Inter-arrival statistics over the last ``window`` timestamps.

    ``paper_entropy`` is ``-sum(h * ln(h + 1e-10))`` over a 20-bin
    density-normalised histogram of the deltas. It is not a true entropy (the
    bin width is missing), but it keeps published values comparable.
    ``shannon_entropy_corrected`` uses bin probabilities instead.

    A ``window`` of None uses every timestamp.
    """
    times = np.asarray(times, dtype=float)
    if window is not None:
        if window < MIN_EVENTS:
            raise ValueError(f"window must be at least {MIN_EVENTS}")
        times = times[-window:]
    if times.size < MIN_EVENTS:
        raise InsufficientData(f"need at least {MIN_EVENTS} timestamps, got {times.size}")
    deltas = np.diff(times)
    if np.any(deltas <= 0):
        raise ValueError("timestamps must be strictly ascending")

    mean = float(np.mean(deltas))
    std = float(np.std(deltas))
    hist, _ = np.histogram(deltas, bins=20, density=True)
    paper_entropy = float(-np.sum(hist * np.log(hist + 1e-10)))
    counts, _ = np.histogram(deltas, bins=20)
    prob = counts[counts > 0] / deltas.size
    shannon = float(-np.sum(prob * np.log(prob)))
    return TimingStats(
        n=int(times.size),
        mean_s=mean,
        std_s=std,
        cv=std / mean,
        paper_entropy=paper_entropy,
        shannon_entropy_corrected=shannon,
    )


def hamming_fraction(h1: bytes, h2: bytes) -> float:
    if len(h1) != 32 or len(h2) != 32:
        raise ValueError("expected 32-byte digests")
    x = int.from_bytes(h1, "big") ^ int.from_bytes(h2, "big")
    return bin(x).count("1") / 256.0


def mean_consecutive_hamming(hashes: Sequence[bytes]) -> float:
    if len(hashes) < 2:
        return 0.0
    return float(np.mean([hamming_fraction(a, b) for a, b in zip(hashes[:-1], hashes[1:])]))


@dataclass(frozen=True)
class KsyncInput:
    sigma_j: float  # s
    f_clk: float  # Hz
    phases: tuple[float, ...] = (0.0,) * DEFAULT_CORES

    def __post_init__(self):
        if self.sigma_j < 0:
            raise ValueError("sigma_j must be non-negative")
        if not self.f_clk > 0:
            raise ValueError("f_clk must be positive")
        object.__setattr__(self, "phases", tuple(float(x) for x in self.phases))
        if not self.phases:
            raise ValueError("need one phase per core")


def compute_ksync(k: KsyncInput) -> float:
    """Coupling efficiency exp(-sigma_J^2 f_clk / 2pi) * sum(cos(dphi)), unnormalised.

    Inputs are taken in SI units as-is, even though the exponent then
    carries units of seconds.
    """
    attenuation = math.exp(-(k.sigma_j**2) * k.f_clk / (2.0 * math.pi))
    return attenuation * math.fsum(math.cos(p) for p in k.phases)


def compute_ksync_normalized(k: KsyncInput) -> float:
    """compute_ksync divided by the core count, so it lies in [-1, 1]."""
    return compute_ksync(k) / len(k.phases)


def rate_series(
    events,
    bin_s: float = DEFAULT_BIN_S,
    t_start: float | None = None,
    t_end: float | None = None,
) -> np.ndarray:
    """Counts per ``bin_s`` bin.

    ``events`` may be ShareEvents or bare timestamps. Without explicit bounds
    the series spans first to last event and every event is counted. With
    bounds, events outside ``[t_start, t_end]`` are ignored.
    """
    if not bin_s > 0:
        raise ValueError("bin_s must be positive")
    times = np.asarray([getattr(e, "t", e) for e in events], dtype=float)
    if t_start is None and t_end is None:
        if times.size == 0:
            return np.zeros(0, dtype=np.int64)
        t_start = float(times.min())
        n_bins = int(math.floor((float(times.max()) - t_start) / bin_s)) + 1
    else:
        t_start = float(times.min()) if t_start is None else t_start
        t_end = float(times.max()) if t_end is None else t_end
        n_bins = max(int(math.ceil((t_end - t_start) / bin_s - 1e-9)), 0)
        times = times[(times >= t_start) & (times <= t_end)]
        if n_bins == 0:
            return np.zeros(0, dtype=np.int64)
    idx = np.minimum(np.floor((times - t_start) / bin_s).astype(np.int64), n_bins - 1)
    return np.bincount(idx, minlength=n_bins)


@dataclass(frozen=True)
class SpectralConfig:
    nperseg: int = 256
    overlap: float = 0.5
    window: str = "hann"


@dataclass(frozen=True)
class Peak:
    freq_hz: float
    prominence_db: float


@dataclass(frozen=True)
class SpectralEstimate:
    freqs: np.ndarray
    psd: np.ndarray
    fs: float
    nperseg: int
    noverlap: int
    window: str
    peak: Peak | None = None

    @property
    def df(self) -> float:
        return self.fs / self.nperseg

    def band_power(self, lo: float, hi: float) -> float:
        mask = (self.freqs >= lo) & (self.freqs < hi)
        return float(np.sum(self.psd[mask]) * self.df)


def _prominence_db(peak_value: float, reference: float) -> float:
    if reference <= 0:
        return math.inf if peak_value > 0 else 0.0
    if peak_value <= 0:
        return -math.inf
    return 10.0 * math.log10(peak_value / reference)


def psd_estimate(series, fs: float, cfg: SpectralConfig = SpectralConfig()) -> SpectralEstimate:
    """One-sided Welch PSD (mean-detrended segments) with a global peak report.

    The peak is the largest non-DC bin, its prominence measured in dB over
    the median non-DC density.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 2 * cfg.nperseg:
        raise InsufficientData(f"series of {x.size} samples is shorter than 2 x {cfg.nperseg}")
    noverlap = int(cfg.nperseg * cfg.overlap)
    freqs, psd = signal.welch(
        x, fs=fs, window=cfg.window, nperseg=cfg.nperseg, noverlap=noverlap,
        detrend="constant", scaling="density", return_onesided=True,
    )
    psd = np.maximum(psd, 0.0)
    peak = None
    if psd.size > 2:
        k = 1 + int(np.argmax(psd[1:]))
        peak = Peak(float(freqs[k]), _prominence_db(float(psd[k]), float(np.median(psd[1:]))))
    return SpectralEstimate(freqs, psd, fs, cfg.nperseg, noverlap, cfg.window, peak)


@dataclass(frozen=True)
class HeartbeatDetection:
    freq_hz: float
    prominence_db: float
    power_density: float


def detect_heartbeat(
    spec: SpectralEstimate,
    band: tuple[float, float] = HEARTBEAT_BAND,
    min_prominence_db: float = HEARTBEAT_MIN_PROMINENCE_DB,
) -> HeartbeatDetection | None:
    """Highest in-band peak if it clears ``min_prominence_db`` over the
    median out-of-band density (DC bin excluded)."""
    lo, hi = band
    if not (lo < hi and lo >= spec.freqs[0] and hi <= spec.freqs[-1]):
        raise ValueError(f"band {band} outside spectrum range")
    in_band = (spec.freqs >= lo) & (spec.freqs <= hi)
    out_band = ~in_band
    out_band[0] = False
    if not in_band.any() or not out_band.any():
        return None
    idx = np.flatnonzero(in_band)
    k = idx[int(np.argmax(spec.psd[idx]))]
    prominence = _prominence_db(float(spec.psd[k]), float(np.median(spec.psd[out_band])))
    if prominence < min_prominence_db:
        return None
    return HeartbeatDetection(float(spec.freqs[k]), prominence, float(spec.psd[k]))


DEFAULT_BANDS = ((0.1, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 5.0), (5.0, 10.0))


@dataclass(frozen=True)
class FeatureConfig:
    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS
    pac_phase_band: tuple[float, float] = (0.5, 5.0)
    pac_amp_band: tuple[float, float] = (5.0, 9.0)

    @property
    def names(self) -> tuple[str, ...]:
        bands = tuple(f"band_{lo:g}_{hi:g}" for lo, hi in self.bands)
        return ("cv", "paper_entropy", "hamming_mean") + bands + ("pac",)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector must be finite")


def _bandpass_sos(band, fs):
    nyq = fs / 2.0
    lo, hi = band
    if not 0 < lo < hi < nyq:
        return None
    return signal.butter(3, [lo / nyq, hi / nyq], btype="bandpass", output="sos")


def pac_index(series, fs: float, phase_band=(0.5, 5.0), amp_band=(5.0, 9.0)) -> float:
    """Amplitude-weighted mean resultant length |sum(A e^{i phi})| / sum(A).

    Phase comes from the slow band, amplitude envelope from the fast band,
    both via zero-phase Butterworth filtering and the Hilbert transform.
    Returns 0 when the bands do not fit below Nyquist or the series is flat.
    """
    x = np.asarray(series, dtype=float)
    sos_p = _bandpass_sos(phase_band, fs)
    sos_a = _bandpass_sos(amp_band, fs)
    if sos_p is None or sos_a is None or x.size < 16 or np.ptp(x) == 0:
        return 0.0
    x = x - x.mean()
    padlen = min(x.size - 1, 3 * (2 * len(sos_p) + 1))
    phase = np.angle(signal.hilbert(signal.sosfiltfilt(sos_p, x, padlen=padlen)))
    amp = np.abs(signal.hilbert(signal.sosfiltfilt(sos_a, x, padlen=padlen)))
    total = amp.sum()
    if total <= 0:
        return 0.0
    return float(np.abs(np.sum(amp * np.exp(1j * phase))) / total)


def encode_features(
    stats: TimingStats | None,
    spec: SpectralEstimate | None,
    hamming_mean: float,
    *,
    series=None,
    cfg: FeatureConfig = FeatureConfig(),
) -> FeatureVector:
    """Fixed-order feature vector for one window.

    Layout: cv, paper_entropy, Hamming mean, one power per configured band,
    PAC index. Missing stats or spectrum contribute zeros. PAC needs the
    rate ``series`` the spectrum was computed from.
    """
    cv = stats.cv if stats is not None else 0.0
    ent = stats.paper_entropy if stats is not None else 0.0
    if spec is not None:
        bands = [spec.band_power(lo, hi) for lo, hi in cfg.bands]
    else:
        bands = [0.0] * len(cfg.bands)
    pac = 0.0
    if series is not None and spec is not None:
        pac = pac_index(series, spec.fs, cfg.pac_phase_band, cfg.pac_amp_band)
    values = np.array([cv, ent, hamming_mean, *bands, pac], dtype=float)
    return FeatureVector(values, cfg.names)
