import hashlib
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from chimera import muse, substrate
from chimera.muse import InsufficientData, KsyncInput, SpectralConfig


def test_cv_of_alternating_intervals():
    # deltas alternate 0.1, 1.9: mean 1.0, population std 0.9
    deltas = [0.1, 1.9] * 32
    times = np.concatenate(([0.0], np.cumsum(deltas)))
    stats = muse.interarrival_stats(times, window=None)
    assert stats.mean_s == pytest.approx(1.0, rel=1e-12)
    assert stats.cv == pytest.approx(0.9, rel=1e-12)


def test_insufficient_events():
    with pytest.raises(InsufficientData):
        muse.interarrival_stats(np.arange(10.0))
    muse.interarrival_stats(np.arange(11.0))


def test_window_uses_latest_timestamps():
    times = np.concatenate((np.arange(0, 100, 1.0), 100 + np.cumsum(np.full(64, 0.5))))
    assert muse.interarrival_stats(times, window=64).mean_s == pytest.approx(0.5)
    with pytest.raises(ValueError):
        muse.interarrival_stats(times, window=5)


def test_rejects_unsorted_timestamps():
    with pytest.raises(ValueError):
        muse.interarrival_stats([0, 1, 2, 3, 5, 4, 6, 7, 8, 9, 10, 11])


def test_corrected_entropy_of_uniform_bins():
    # 20 equal-width bins each holding 3 deltas: probabilities 1/20, entropy ln 20
    deltas = np.repeat(np.linspace(1.0, 2.0, 20), 3)
    times = np.concatenate(([0.0], np.cumsum(deltas)))
    stats = muse.interarrival_stats(times, window=None)
    assert stats.shannon_entropy_corrected == pytest.approx(math.log(20), rel=1e-12)


def test_entropy_of_point_mass():
    # every delta equal: one occupied bin, corrected entropy 0
    stats = muse.interarrival_stats(np.arange(30) * 0.25, window=None)
    assert stats.shannon_entropy_corrected == 0.0
    assert stats.cv == pytest.approx(0.0, abs=1e-12)


def _popcount_fraction(h1, h2):
    x = np.frombuffer(h1, np.uint8) ^ np.frombuffer(h2, np.uint8)
    return int(np.unpackbits(x).sum()) / 256


def test_hamming_of_a_and_b():
    ha, hb = hashlib.sha256(b"a").digest(), hashlib.sha256(b"b").digest()
    assert muse.hamming_fraction(ha, hb) == _popcount_fraction(ha, hb)


@settings(max_examples=200)
@given(st.binary(min_size=32, max_size=32), st.binary(min_size=32, max_size=32))
def test_hamming_matches_popcount_oracle(h1, h2):
    got = muse.hamming_fraction(h1, h2)
    assert got == _popcount_fraction(h1, h2)
    assert 0.0 <= got <= 1.0
    assert muse.hamming_fraction(h1, h1) == 0.0


def test_hamming_rejects_short_digest():
    with pytest.raises(ValueError):
        muse.hamming_fraction(b"\x00" * 31, b"\x00" * 32)


def test_mean_consecutive_hamming():
    hs = [hashlib.sha256(bytes([i])).digest() for i in range(5)]
    expected = np.mean([_popcount_fraction(a, b) for a, b in zip(hs, hs[1:])])
    assert muse.mean_consecutive_hamming(hs) == pytest.approx(expected, rel=1e-15)
    assert muse.mean_consecutive_hamming(hs[:1]) == 0.0


@settings(max_examples=100)
@given(st.floats(0, 1e-3), st.floats(1e6, 1e9),
       st.lists(st.floats(-10, 10), min_size=1, max_size=200))
def test_ksync_matches_extended_precision(sigma, f, phases):
    mpmath.mp.dps = 40
    oracle = mpmath.e ** (-(mpmath.mpf(sigma) ** 2) * f / (2 * mpmath.pi)) * \
        mpmath.fsum(mpmath.cos(mpmath.mpf(p)) for p in phases)
    k = KsyncInput(sigma, f, tuple(phases))
    assert muse.compute_ksync(k) == pytest.approx(float(oracle), rel=1e-9, abs=1e-12)
    assert -1.0 - 1e-12 <= muse.compute_ksync_normalized(k) <= 1.0 + 1e-12


def test_ksync_all_cores_in_phase():
    k = KsyncInput(sigma_j=0.0, f_clk=400e6)
    assert muse.compute_ksync(k) == muse.DEFAULT_CORES
    assert muse.compute_ksync_normalized(k) == 1.0


def test_ksync_input_validation():
    with pytest.raises(ValueError):
        KsyncInput(-1.0, 1.0)
    with pytest.raises(ValueError):
        KsyncInput(0.0, 0.0)
    with pytest.raises(ValueError):
        KsyncInput(0.0, 1.0, ())


def test_rate_series_poisson_mean():
    # base_rate 100 per s in 0.05 s bins: mean count 5
    events = substrate.sample_shares(substrate.SubstrateState(base_rate=100.0), substrate.LandauParams(),
                                     200.0, np.random.default_rng(0), pin_psi=True)
    series = muse.rate_series(events, 0.05, 0.0, 200.0)
    assert series.size == 4000
    assert abs(series.mean() - 5.0) < 3 * math.sqrt(5.0 / series.size)


@settings(max_examples=100)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=300), st.floats(0.01, 5.0))
def test_rate_series_conserves_events(times, bin_s):
    series = muse.rate_series(sorted(times), bin_s)
    assert series.sum() == len(times)
    assert np.all(series >= 0)


def test_rate_series_bounds_filter_events():
    series = muse.rate_series([0.5, 1.5, 2.5, 3.5], 1.0, 1.0, 3.0)
    assert series.tolist() == [1, 1]


def test_psd_sinusoid_peak():
    fs, f0 = 20.0, 3.125  # f0 on a bin centre for nperseg 256
    t = np.arange(4096) / fs
    x = np.sin(2 * np.pi * f0 * t)
    spec = muse.psd_estimate(x, fs)
    assert spec.peak.freq_hz == pytest.approx(f0, abs=spec.df / 2)
    assert spec.peak.prominence_db > 30


def test_psd_white_noise_level_and_parseval():
    rng = np.random.default_rng(1)
    sigma, fs = 2.0, 20.0
    x = sigma * rng.standard_normal(2**18)
    spec = muse.psd_estimate(x, fs)
    # one-sided density of white noise is 2 sigma^2 / fs
    assert np.median(spec.psd[1:-1]) == pytest.approx(2 * sigma**2 / fs, rel=0.05)
    assert integrate.trapezoid(spec.psd, spec.freqs) == pytest.approx(x.var(), rel=0.02)


def test_psd_requires_two_segments():
    with pytest.raises(InsufficientData):
        muse.psd_estimate(np.zeros(300), 20.0)


def test_psd_config_is_respected():
    spec = muse.psd_estimate(np.random.default_rng(0).standard_normal(1024), 10.0, SpectralConfig(nperseg=128))
    assert spec.nperseg == 128 and spec.noverlap == 64
    assert spec.freqs.size == 65


def test_detect_heartbeat_band_validation():
    spec = muse.psd_estimate(np.random.default_rng(0).standard_normal(2048), 20.0)
    with pytest.raises(ValueError):
        muse.detect_heartbeat(spec, band=(5.0, 50.0))


def test_detect_heartbeat_on_sinusoid_in_noise():
    rng = np.random.default_rng(2)
    fs = 20.0
    t = np.arange(2400) / fs
    x = rng.poisson(2.5 * (1 + 0.8 * np.sin(2 * np.pi * 2.4 * t)))
    hit = muse.detect_heartbeat(muse.psd_estimate(x, fs))
    assert hit is not None and abs(hit.freq_hz - 2.4) <= 0.1


def _coupled(n=4000, fs=50.0, coupling=1.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / fs
    slow = np.sin(2 * np.pi * 1.0 * t)
    fast = (1 + coupling * slow) * np.sin(2 * np.pi * 7.0 * t)
    return slow + 0.5 * fast + 0.1 * rng.standard_normal(n), fs


def test_pac_separates_coupled_from_uncoupled():
    x_c, fs = _coupled(coupling=1.0)
    x_u, _ = _coupled(coupling=0.0)
    assert muse.pac_index(x_c, fs) > 0.3
    assert muse.pac_index(x_u, fs) < 0.1


def test_pac_degenerate_inputs():
    assert muse.pac_index(np.ones(500), 20.0) == 0.0
    # amplitude band above Nyquist
    assert muse.pac_index(np.random.default_rng(0).standard_normal(500), 10.0) == 0.0


def _features(depth, seed):
    state = substrate.SubstrateState(base_rate=50.0, heartbeat=substrate.Heartbeat(2.4, depth))
    events = substrate.sample_shares(state, substrate.LandauParams(), 60.0, np.random.default_rng(seed))
    series = muse.rate_series(events, 0.05, 0.0, 60.0)
    spec = muse.psd_estimate(series, 20.0)
    stats = muse.interarrival_stats([e.t for e in events])
    ham = muse.mean_consecutive_hamming([e.hash for e in events[-64:]])
    return muse.encode_features(stats, spec, ham, series=series)


def test_feature_layout_and_finiteness():
    fv = _features(0.0, 0)
    assert fv.values.shape == (len(muse.FeatureConfig().names),)
    assert fv.names[0] == "cv" and fv.names[-1] == "pac"
    assert np.all(np.isfinite(fv.values))
    empty = muse.encode_features(None, None, 0.0)
    assert np.all(empty.values == 0.0)


def test_features_separate_modulated_from_plain():
    idx = muse.FeatureConfig().names.index("band_2_3")
    plain = [_features(0.0, s).values[idx] for s in range(5)]
    beating = [_features(0.8, s).values[idx] for s in range(5)]
    assert min(beating) > 2 * max(plain)


def test_feature_vector_rejects_nan():
    with pytest.raises(ValueError):
        muse.FeatureVector(np.array([1.0, np.nan]))
