"""OFDM mapping/modulation of the PRACH preamble and the matching receiver front end.

The receiver never learns the propagation delay: FFT windows sit at the
nominal (zero-delay) symbol boundaries, so a delay ``d`` shows up in the
extracted grid as the phase ramp ``exp(-j*2*pi*(k0 + k)*d/n_fft)``.  Delays
longer than the cyclic prefix leak energy across symbols; that is treated as
part of the simulated impairment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SignalTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class WaveformConfig:
    n_fft: int = 4096
    scs_hz: float = 30e3
    n_symbols: int = 2
    cp_len: int = 288
    l_ra: int = 139
    k0: int | None = None

    def __post_init__(self):
        if self.k0 is None:
            object.__setattr__(self, "k0", (self.n_fft - self.l_ra) // 2)
        if self.k0 < 0 or self.k0 + self.l_ra > self.n_fft:
            raise ValueError(
                f"mapping k0={self.k0}..{self.k0 + self.l_ra - 1} exceeds {self.n_fft}-bin grid")
        if self.n_symbols < 1 or self.cp_len < 0:
            raise ValueError("n_symbols must be >= 1 and cp_len >= 0")

    @property
    def sample_rate(self) -> float:
        return self.n_fft * self.scs_hz

    @property
    def symbol_len(self) -> int:
        return self.cp_len + self.n_fft

    @property
    def frame_len(self) -> int:
        return self.n_symbols * self.symbol_len


@dataclass
class TimeSignal:
    samples: np.ndarray
    sample_rate_hz: float

    def __len__(self):
        return len(self.samples)


def modulate(freq_preamble: np.ndarray, cfg: WaveformConfig) -> TimeSignal:
    freq_preamble = np.asarray(freq_preamble)
    if freq_preamble.shape != (cfg.l_ra,):
        raise ValueError(f"expected {cfg.l_ra} subcarriers, got {freq_preamble.shape}")
    grid = np.zeros(cfg.n_fft, dtype=np.complex128)
    grid[cfg.k0:cfg.k0 + cfg.l_ra] = freq_preamble
    body = np.fft.ifft(grid)
    symbol = np.concatenate([body[cfg.n_fft - cfg.cp_len:], body])
    return TimeSignal(np.tile(symbol, cfg.n_symbols), cfg.sample_rate)


def apply_delay(sig: TimeSignal, delay_samples: int) -> TimeSignal:
    if delay_samples < 0:
        raise ValueError("delay must be non-negative")
    if delay_samples == 0:
        return TimeSignal(sig.samples.copy(), sig.sample_rate_hz)
    out = np.concatenate([np.zeros(delay_samples, dtype=sig.samples.dtype), sig.samples])
    return TimeSignal(out, sig.sample_rate_hz)


def demodulate_extract(sig: TimeSignal, cfg: WaveformConfig) -> np.ndarray:
    """FFT each nominal symbol window and pull out the PRACH bins.

    Returns a complex array of shape ``(l_ra, n_symbols)``.
    """
    x = sig.samples
    if len(x) < cfg.frame_len:
        raise SignalTooShortError(f"need {cfg.frame_len} samples, got {len(x)}")
    starts = cfg.cp_len + cfg.symbol_len * np.arange(cfg.n_symbols)
    windows = np.stack([x[s:s + cfg.n_fft] for s in starts])
    spec = np.fft.fft(windows, axis=1)
    return spec[:, cfg.k0:cfg.k0 + cfg.l_ra].T.copy()


def delay_phase(cfg: WaveformConfig, delay_samples: float) -> np.ndarray:
    """Per-PRACH-bin phase factor produced by a pure delay."""
    k = cfg.k0 + np.arange(cfg.l_ra)
    return np.exp(-2j * np.pi * k * delay_samples / cfg.n_fft)
