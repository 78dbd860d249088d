"""Conventional correlation receiver: correlate, pick the peak, map it to a window.

The correlation lag is the cyclic advance of the received sequence relative
to the base sequence, so RAPID ``v`` sits at lag ``v*n_cs`` and a propagation
delay pulls the peak towards lower lags.  The preamble window of RAPID ``v``
spans lags ``c_v, c_v-1, ..., c_v-n_cs+1`` (mod l_ra) and the distance from
``c_v`` is the TA.

Lags are evaluated on a grid displaced by ``lag_offset`` (just under half a
lag) towards the late side.  A delay of ``d`` samples moves the true peak by
``d*l_ra/n_fft`` lags; with the displaced grid the integer peak index lands on
``c_v - floor(d*l_ra/n_fft)`` instead of the rounded value, which is what the
TA label counts.  Fractional lags of integer delays lie on a ``1/n_fft`` grid,
so ``0.5 - 1/(2*n_fft)`` leaves equal margin on both sides of every bin edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .zc import ZcConfig, generate_base_sequence, num_rapids, to_frequency_domain


class UnmappablePeakError(ValueError):
    pass


def floor_lag_offset(n_fft: int = 4096) -> float:
    return 0.5 - 1.0 / (2 * n_fft)


DEFAULT_LAG_OFFSET = floor_lag_offset(4096)


@dataclass
class CorrelationProfile:
    magnitudes: np.ndarray
    peak_index: int
    peak_value: float


@dataclass(frozen=True)
class Detection:
    rapid: int
    ta: int
    peak_metric: float = float("nan")
    in_slack: bool = False


def base_spectrum(cfg: ZcConfig) -> np.ndarray:
    return to_frequency_domain(generate_base_sequence(cfg))


def correlation_lags(rx: np.ndarray, base_freq: np.ndarray,
                     lag_offset: float = DEFAULT_LAG_OFFSET) -> np.ndarray:
    """Complex per-symbol correlation against the base sequence, shape ``(l_ra, n_symbols)``.

    Entry ``[m, s]`` is ``(1/l_ra) * sum_n y_s(n) conj(x(n + m - lag_offset))``,
    computed in the frequency domain.
    """
    rx = np.asarray(rx)
    base_freq = np.asarray(base_freq)
    l_ra = base_freq.shape[0]
    if rx.ndim != 2 or rx.shape[0] != l_ra:
        raise ValueError(f"rx grid must be ({l_ra}, n_symbols), got {rx.shape}")
    k = np.arange(l_ra)
    z = rx * np.conj(base_freq)[:, None]
    if lag_offset:
        z = z * np.exp(2j * np.pi * k * lag_offset / l_ra)[:, None]
    return np.fft.fft(z, axis=0) / l_ra


def correlate(rx: np.ndarray, base_freq: np.ndarray,
              lag_offset: float = DEFAULT_LAG_OFFSET) -> CorrelationProfile:
    # non-coherent combining across symbols
    mags = np.abs(correlation_lags(rx, base_freq, lag_offset)).sum(axis=1)
    peak = int(np.argmax(mags))
    return CorrelationProfile(mags, peak, float(mags[peak]))


def map_peak_index(peak_index: int, cfg: ZcConfig, strict: bool = False) -> tuple[int, int, bool]:
    """Window arithmetic: return ``(rapid, ta, in_slack)`` for a lag position.

    Positions outside every window (the ``l_ra - num_rapids*n_cs`` slack lags)
    are read as window 0 overflowed past its late edge: ``(0, n_cs-1)``,
    flagged.  With ``strict`` they raise instead.
    """
    L, n_cs, n_win = cfg.l_ra, cfg.n_cs, num_rapids(cfg)
    if not 0 <= peak_index < L:
        raise UnmappablePeakError(f"peak index {peak_index} outside [0, {L})")
    # window v covers c_v - ta for ta in [0, n_cs); solve via the next window start
    v = -(-peak_index // n_cs)
    ta = v * n_cs - peak_index
    if v < n_win:
        return v, ta, False
    # peak_index in (c_last, L): either window 0 seen cyclically or slack
    ta0 = L - peak_index
    if ta0 < n_cs:
        return 0, ta0, False
    if strict:
        raise UnmappablePeakError(f"peak index {peak_index} lies in the slack region")
    return 0, n_cs - 1, True


def map_peak(profile: CorrelationProfile, cfg: ZcConfig, strict: bool = False) -> Detection:
    rapid, ta, slack = map_peak_index(profile.peak_index, cfg, strict)
    return Detection(rapid, ta, profile.peak_value, slack)


class CorrelationReceiver:
    def __init__(self, cfg: ZcConfig = ZcConfig(), lag_offset: float = DEFAULT_LAG_OFFSET):
        self.cfg = cfg
        self.lag_offset = lag_offset
        self.base_freq = base_spectrum(cfg)

    def decode(self, rx: np.ndarray) -> Detection:
        return map_peak(correlate(rx, self.base_freq, self.lag_offset), self.cfg)

    def decode_batch(self, grids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised decode of ``(n, l_ra, n_symbols)`` grids -> (rapids, tas)."""
        grids = np.asarray(grids)
        L = self.cfg.l_ra
        k = np.arange(L)
        ramp = np.conj(self.base_freq) * np.exp(2j * np.pi * k * self.lag_offset / L)
        z = grids * ramp[None, :, None]
        mags = np.abs(np.fft.fft(z, axis=1)).sum(axis=2)
        peaks = np.argmax(mags, axis=1)
        out = np.array([map_peak_index(int(p), self.cfg)[:2] for p in peaks], dtype=np.int64)
        return out[:, 0], out[:, 1]


def decode(rx: np.ndarray, cfg: ZcConfig = ZcConfig(),
           lag_offset: float = DEFAULT_LAG_OFFSET) -> Detection:
    return map_peak(correlate(rx, base_spectrum(cfg), lag_offset), cfg)
