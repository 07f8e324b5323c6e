import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from grangerglm.expfam import Support
from grangerglm.signal import (
    BANDS,
    EPS_POWER,
    AlignmentError,
    BandSpec,
    RawRecording,
    ResolutionError,
    TruncationWarning,
    WindowedSeries,
    align_pair,
    band_power_series,
    bin_spikes,
    min_window_for_band,
    periodogram,
)


def direct_coefficients(x):
    """Trigonometric regression coefficients a_j, b_j by explicit sums."""
    m = x.size
    t = np.arange(m)
    xc = x - x.mean()
    out = []
    for j in range(1, m // 2 + 1):
        a = 2 / m * np.sum(xc * np.cos(2 * np.pi * j * t / m))
        b = 2 / m * np.sum(xc * np.sin(2 * np.pi * j * t / m))
        out.append((a, b))
    return np.array(out)


# ------------------------------------------------------------- periodogram

@pytest.mark.parametrize("m", [16, 17, 30, 64])
def test_periodogram_matches_trig_coefficients(m):
    x = np.random.default_rng(m).standard_normal(m)
    _, power = periodogram(x)
    ab = direct_coefficients(x)
    expected = (m / 2) ** 2 * (ab[:, 0] ** 2 + ab[:, 1] ** 2)
    if m % 2 == 0:
        # Nyquist: b vanishes and a_{m/2} double counts; ordinate halved
        expected[-1] = (m / 2) ** 2 * (ab[-1, 0] / 2) ** 2 * 2
    np.testing.assert_allclose(power, expected, rtol=1e-9, atol=1e-10)


def test_pure_cosine_concentrated():
    m, j0 = 64, 5
    t = np.arange(m)
    freqs, power = periodogram(np.cos(2 * np.pi * j0 * t / m), sample_rate=1000.0)
    peak = power[j0 - 1]
    others = np.delete(power, j0 - 1)
    assert np.all(others < 1e-10 * peak)
    assert freqs[j0 - 1] == pytest.approx(j0 * 1000.0 / m)


def test_constant_segment_zero():
    _, power = periodogram(np.full(20, 3.7))
    np.testing.assert_allclose(power, 0.0, atol=1e-20)


@settings(max_examples=60, deadline=None)
@given(x=arrays(np.float64, st.integers(4, 200),
                elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_parseval(x):
    _, power = periodogram(x)
    energy = np.sum((x - x.mean()) ** 2)
    assert np.sum(power) * 2 / x.size == pytest.approx(energy, rel=1e-8, abs=1e-9)


def test_periodogram_short_segment():
    with pytest.raises(ValueError):
        periodogram([1.0, 2.0, 3.0])


# -------------------------------------------------------------- band power

def test_beta_sinusoid_dominates_alpha():
    fs, n = 1000.0, 64 * 40
    t = np.arange(n) / fs
    rec = RawRecording(np.sin(2 * np.pi * 25 * t), np.zeros(n, dtype=int), fs)
    beta = band_power_series(rec, BANDS["beta"], window_len=64)
    assert beta.n == 40
    # a 64-sample grid (15.6 Hz spacing) has no frequency inside (8, 13] Hz
    with pytest.raises(ResolutionError):
        band_power_series(rec, BANDS["alpha"], window_len=64)
    alpha = band_power_series(rec, BANDS["alpha"], window_len=64, analysis_len=200)
    assert np.all(beta.values >= 100 * alpha.values)


def test_zero_signal_floor():
    rec = RawRecording(np.zeros(640), np.zeros(640, dtype=int), 1000.0)
    out = band_power_series(rec, BANDS["beta"], window_len=64)
    np.testing.assert_array_equal(out.values, EPS_POWER)
    assert out.support is Support.POSITIVE_REALS


def test_resolution_error_names_window():
    rec = RawRecording(np.random.default_rng(0).standard_normal(4000), np.zeros(4000, int), 1000.0)
    with pytest.raises(ResolutionError, match=str(min_window_for_band(BANDS["beta"], 1000.0))):
        band_power_series(rec, BANDS["beta"], window_len=30)


def test_min_window_for_band():
    # the first grid frequency inside (13, 30] Hz at 1 kHz is 1000/m for m = 34
    m = min_window_for_band(BANDS["beta"], 1000.0)
    assert m == 34
    assert 13 < 1000.0 / m <= 30


def test_analysis_len_extension():
    fs, n = 1000.0, 4000
    t = np.arange(n) / fs
    rec = RawRecording(np.sin(2 * np.pi * 20 * t), np.zeros(n, int), fs)
    out = band_power_series(rec, BANDS["beta"], window_len=30, analysis_len=100)
    assert out.n == 133
    assert np.all(out.values > 1.0)
    with pytest.raises(ValueError):
        band_power_series(rec, BANDS["beta"], window_len=30, analysis_len=20)


def test_band_outside_nyquist():
    rec = RawRecording(np.zeros(400), np.zeros(400, int), 100.0)
    with pytest.raises(ValueError):
        band_power_series(rec, BANDS["gamma"], window_len=40)


def test_band_spec_validation():
    with pytest.raises(ValueError):
        BandSpec("bad", 5.0, 5.0)
    assert (BANDS["beta"].lo, BANDS["beta"].hi) == (13.0, 30.0)
    assert (BANDS["beta-alt"].lo, BANDS["beta-alt"].hi) == (20.0, 40.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), w=st.integers(8, 80))
def test_band_additivity(seed, w):
    fs = 200.0
    x = np.random.default_rng(seed).standard_normal(w * 5)
    rec = RawRecording(x, np.zeros(x.size, int), fs)
    edges = [0.0, 10.0, 37.5, 60.0, fs / 2]
    parts = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        try:
            parts.append(band_power_series(rec, BandSpec("b", lo, hi), window_len=w).values)
        except ResolutionError:
            parts.append(np.zeros(5))
    total = np.array([periodogram(x[i * w:(i + 1) * w], fs)[1].sum() for i in range(5)])
    got = np.sum([np.where(p > EPS_POWER, p, 0.0) for p in parts], axis=0)
    np.testing.assert_allclose(got, total, rtol=1e-8)


def test_windowing_partition():
    x = np.arange(1000, dtype=float)
    w = 30
    n = x.size // w
    segs = [x[i * w:(i + 1) * w] for i in range(n)]
    np.testing.assert_array_equal(np.concatenate(segs), x[:n * w])


def test_band_power_deterministic():
    rng = np.random.default_rng(3)
    rec = RawRecording(rng.standard_normal(2000), rng.integers(0, 2, 2000), 1000.0)
    a = band_power_series(rec, BANDS["gamma"], window_len=40)
    b = band_power_series(rec, BANDS["gamma"], window_len=40)
    assert a.values.tobytes() == b.values.tobytes()


# ----------------------------------------------------------------- spikes

def test_bin_spikes_133_windows():
    rng = np.random.default_rng(4)
    spikes = (rng.random(4000) < 0.05).astype(int)
    out = bin_spikes(RawRecording(np.zeros(4000), spikes, 1000.0), 30)
    assert out.n == 133
    assert out.values.sum() == spikes[:133 * 30].sum()
    assert out.support is Support.NONNEG_INTEGERS


def test_bin_spikes_extremes():
    rec0 = RawRecording(np.zeros(300), np.zeros(300, int), 1000.0)
    np.testing.assert_array_equal(bin_spikes(rec0, 30).values, 0)
    rec1 = RawRecording(np.zeros(300), np.ones(300, int), 1000.0)
    np.testing.assert_array_equal(bin_spikes(rec1, 30).values, 30)


@settings(max_examples=40, deadline=None)
@given(spikes=arrays(np.int64, st.integers(10, 500), elements=st.integers(0, 1)),
       w=st.integers(1, 40))
def test_spike_conservation(spikes, w):
    rec = RawRecording(np.zeros(spikes.size), spikes, 1000.0)
    out = bin_spikes(rec, w)
    assert out.n == spikes.size // w
    assert out.values.sum() == spikes[:out.n * w].sum()


def test_event_indices_accepted():
    rec = RawRecording(np.zeros(100), np.array([3, 10, 11, 95]), 1000.0)
    np.testing.assert_array_equal(bin_spikes(rec, 10).values[:2], [1, 2])
    with pytest.raises(ValueError):
        RawRecording(np.zeros(100), np.array([3, 100]), 1000.0)


def test_recording_csv(tmp_path):
    text = "sample,lfp,spike\n1,0.5,0\n0,0.25,1\n2,-1.0,0\n"
    rec = RawRecording.from_csv(text, 500.0)
    np.testing.assert_array_equal(rec.lfp, [0.25, 0.5, -1.0])
    np.testing.assert_array_equal(rec.spikes, [1, 0, 0])
    p = tmp_path / "r.csv"
    p.write_text(text)
    assert RawRecording.from_csv(str(p), 500.0).n_samples == 3
    with pytest.raises(ValueError):
        RawRecording.from_csv("a,b\n1,2\n", 500.0)


# -------------------------------------------------------------- alignment

def test_align_equal_lengths():
    a = WindowedSeries(np.ones(133), 30, 0, Support.POSITIVE_REALS)
    b = WindowedSeries(np.zeros(133), 30, 0, Support.NONNEG_INTEGERS)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pair = align_pair(a, b)
    assert pair.n == 133
    assert "t,y1,y2" in pair.to_csv().splitlines()[0]


def test_align_truncates_with_warning():
    a = WindowedSeries(np.ones(133), 30)
    b = WindowedSeries(np.ones(130), 30)
    with pytest.warns(TruncationWarning):
        pair = align_pair(a, b)
    assert pair.n == 130


def test_align_mismatched_windows():
    with pytest.raises(AlignmentError):
        align_pair(WindowedSeries(np.ones(10), 30), WindowedSeries(np.ones(10), 60))
