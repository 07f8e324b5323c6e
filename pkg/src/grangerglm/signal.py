"""From raw LFP and spike trains to windowed model series.

Band power per window is the sum of periodogram ordinates whose frequency
falls in the half-open band (lo, hi]. Spike indicators are counted in the
same non-overlapping windows.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .expfam import Support
from .model import BivariateSeries

EPS_POWER = 1e-12


class ResolutionError(ValueError):
    """A window is too short for its Fourier grid to place a bin in the band."""


class AlignmentError(ValueError):
    pass


class TruncationWarning(UserWarning):
    pass


@dataclass
class RawRecording:
    lfp: np.ndarray
    spikes: np.ndarray  # 0/1 per sample
    sample_rate: float

    def __post_init__(self):
        self.lfp = np.asarray(self.lfp, dtype=float).reshape(-1)
        sp = np.asarray(self.spikes).reshape(-1)
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if sp.size != self.lfp.size:
            # sorted event indices
            idx = sp.astype(np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= self.lfp.size):
                raise ValueError("spike indices must lie in [0, N)")
            ind = np.zeros(self.lfp.size, dtype=np.int64)
            np.add.at(ind, idx, 1)
            sp = ind
        elif not np.all((sp == 0) | (sp == 1)):
            raise ValueError("spike indicators must be 0/1")
        self.spikes = sp.astype(np.int64)

    @property
    def n_samples(self) -> int:
        return int(self.lfp.size)

    @classmethod
    def from_csv(cls, path_or_text, sample_rate: float) -> "RawRecording":
        """Read a ``sample,lfp,spike`` CSV."""
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows or not {"sample", "lfp", "spike"} <= set(rows[0]):
            raise ValueError("expected a CSV with header sample,lfp,spike")
        rows.sort(key=lambda r: int(float(r["sample"])))
        return cls([float(r["lfp"]) for r in rows], [int(float(r["spike"])) for r in rows],
                   sample_rate)


@dataclass(frozen=True)
class BandSpec:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise ValueError("band needs 0 <= lo < hi")


BANDS = {
    "delta": BandSpec("delta", 1.0, 4.0),
    "theta": BandSpec("theta", 4.0, 8.0),
    "alpha": BandSpec("alpha", 8.0, 13.0),
    "beta": BandSpec("beta", 13.0, 30.0),
    "gamma": BandSpec("gamma", 30.0, 100.0),
    "beta-alt": BandSpec("beta-alt", 20.0, 40.0),
}


@dataclass
class WindowedSeries:
    values: np.ndarray
    window_len: int = 30
    origin: int = 0
    support: Support = Support.REALS

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)

    @property
    def n(self) -> int:
        return int(self.values.size)


def periodogram(segment, sample_rate: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Periodogram of a mean-removed segment at the positive Fourier frequencies.

    Ordinate j = 1..floor(m/2) is ``|X_j|**2``, with X the unnormalized DFT,
    i.e. ``(m/2)**2 * (a_j**2 + b_j**2)`` for the trigonometric coefficients
    a_j, b_j. The Nyquist ordinate (even m) is halved so that
    ``sum(power) * 2 / m == sum((x - mean)**2)``.

    Returns
    -------
    freqs, power : ndarray
        Frequencies in Hz (``j * sample_rate / m``) and ordinates.
    """
    x = np.asarray(segment, dtype=float).reshape(-1)
    m = x.size
    if m < 4:
        raise ValueError("periodogram needs at least 4 samples")
    X = np.fft.rfft(x - x.mean())
    power = (X.real ** 2 + X.imag ** 2)[1:m // 2 + 1]
    if m % 2 == 0:
        power[-1] *= 0.5
    freqs = _fourier_freqs(m, sample_rate)
    return freqs, power


def _fourier_freqs(m: int, sample_rate: float) -> np.ndarray:
    # j * fs / m in this order keeps the Nyquist frequency exact
    return np.arange(1, m // 2 + 1) * float(sample_rate) / m


def _band_bins(freqs, band: BandSpec) -> np.ndarray:
    return (freqs > band.lo) & (freqs <= band.hi)


def min_window_for_band(band: BandSpec, sample_rate: float) -> int:
    """Shortest window whose Fourier grid has a frequency in (lo, hi]."""
    m = 4
    while True:
        f = _fourier_freqs(m, sample_rate)
        if _band_bins(f, band).any():
            return m
        m += 1
        if m > 10 ** 7:
            raise ResolutionError(f"band {band.name} unreachable below Nyquist")


def band_power_series(rec: RawRecording, band: BandSpec, window_len: int = 30,
                      analysis_len: Optional[int] = None) -> WindowedSeries:
    """Band power in each non-overlapping window, floored at ``EPS_POWER``.

    Parameters
    ----------
    analysis_len : int, optional
        Length of the segment fed to the periodogram for each window. By
        default the window itself. A longer value gives a short-time
        transform centred on each window (hop = ``window_len``), which
        resolves bands a short window cannot; segments are clipped to the
        recording at its ends.
    """
    fs = rec.sample_rate
    if not (0 < band.hi <= fs / 2 + 1e-12):
        raise ValueError(f"band {band.name} must lie within (0, {fs / 2}]")
    if window_len < 4:
        raise ValueError("window_len must be at least 4")
    L = int(analysis_len or window_len)
    if L < window_len:
        raise ValueError("analysis_len must be at least window_len")
    if window_len < 8:
        warnings.warn("window_len < 8 gives very coarse frequency resolution", stacklevel=2)
    n = rec.n_samples // window_len
    if n < 1:
        raise ValueError("recording shorter than one window")
    freqs = _fourier_freqs(L, fs)
    if not _band_bins(freqs, band).any():
        need = min_window_for_band(band, fs)
        raise ResolutionError(
            f"no Fourier frequency of a {L}-sample window at {fs:g} Hz lies in "
            f"({band.lo:g}, {band.hi:g}] Hz; use windows of at least {need} samples or "
            f"set analysis_len >= {need} to aggregate over a longer short-time segment")
    out = np.empty(n)
    for i in range(n):
        start = i * window_len
        if L == window_len:
            seg = rec.lfp[start:start + window_len]
        else:
            a = start + window_len // 2 - L // 2
            a = min(max(a, 0), rec.n_samples - L)
            if a < 0:
                raise ValueError("analysis_len exceeds the recording length")
            seg = rec.lfp[a:a + L]
        f, p = periodogram(seg, fs)
        out[i] = p[_band_bins(f, band)].sum()
    return WindowedSeries(np.maximum(out, EPS_POWER), window_len, 0, Support.POSITIVE_REALS)


def bin_spikes(rec: RawRecording, window_len: int = 30) -> WindowedSeries:
    """Spike counts in non-overlapping windows; a trailing partial window is dropped."""
    if window_len < 1:
        raise ValueError("window_len must be positive")
    n = rec.n_samples // window_len
    counts = rec.spikes[:n * window_len].reshape(n, window_len).sum(axis=1)
    return WindowedSeries(counts.astype(float), window_len, 0, Support.NONNEG_INTEGERS)


def align_pair(a: WindowedSeries, b: WindowedSeries) -> BivariateSeries:
    """Pair two windowed series as (y1, y2), truncating to the shorter one."""
    if a.window_len != b.window_len or a.origin != b.origin:
        raise AlignmentError(
            f"windowing differs: ({a.window_len}, {a.origin}) vs ({b.window_len}, {b.origin})")
    n = min(a.n, b.n)
    if a.n != b.n:
        warnings.warn(f"series truncated to common length {n} ({a.n} vs {b.n})",
                      TruncationWarning, stacklevel=2)
    return BivariateSeries(a.values[:n], b.values[:n], (a.support, b.support))
