"""Zadoff-Chu base sequences, RAPID cyclic shifts and their DFT images.

The forward DFT is unnormalized and runs over n = 0 .. l_ra-1; the inverse
carries the 1/l_ra factor.  A cyclically shifted sequence
``x_v(n) = x(n + c_v)`` therefore has the DFT ``X(k) * exp(+j*2*pi*k*c_v/l_ra)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidConfigError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ZcConfig:
    l_ra: int = 139
    u: int = 1
    n_cs: int = 13

    def __post_init__(self):
        if self.l_ra < 2:
            raise InvalidConfigError(f"l_ra must be >= 2, got {self.l_ra}")
        if not 1 <= self.u < self.l_ra:
            raise InvalidConfigError(f"root index u={self.u} outside [1, {self.l_ra})")
        if math.gcd(self.u, self.l_ra) != 1:
            raise InvalidConfigError(f"gcd(u={self.u}, l_ra={self.l_ra}) != 1")
        if self.n_cs < 1 or self.l_ra // self.n_cs < 1:
            raise InvalidConfigError(f"n_cs={self.n_cs} invalid for l_ra={self.l_ra}")

    @property
    def num_rapids(self) -> int:
        return num_rapids(self)


@dataclass(frozen=True)
class Preamble:
    v: int
    n_cs: int = 13

    @property
    def c_v(self) -> int:
        return self.v * self.n_cs

    def check(self, cfg: ZcConfig) -> None:
        if self.n_cs != cfg.n_cs:
            raise InvalidConfigError(f"preamble n_cs={self.n_cs} != config n_cs={cfg.n_cs}")
        if not 0 <= self.v < num_rapids(cfg):
            raise InvalidConfigError(f"RAPID {self.v} outside [0, {num_rapids(cfg)})")


def num_rapids(cfg: ZcConfig) -> int:
    return cfg.l_ra // cfg.n_cs


def generate_base_sequence(cfg: ZcConfig) -> np.ndarray:
    """Return ``x_u(n) = exp(-j*pi*u*n*(n+1)/l_ra)`` for n = 0 .. l_ra-1."""
    n = np.arange(cfg.l_ra, dtype=np.int64)
    # reduce the integer phase first so large n(n+1) stays exact
    num = (cfg.u * n * (n + 1)) % (2 * cfg.l_ra)
    return np.exp(-1j * np.pi * num / cfg.l_ra)


def apply_cyclic_shift(x: np.ndarray, p: Preamble, l_ra: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    if l_ra is not None and x.shape != (l_ra,):
        raise LengthMismatchError(f"expected length {l_ra}, got {x.shape}")
    # output(n) = x((n + c_v) mod L)
    return np.roll(x, -p.c_v)


def to_frequency_domain(x: np.ndarray, l_ra: int | None = None) -> np.ndarray:
    x = np.asarray(x)
    if l_ra is not None and x.shape != (l_ra,):
        raise LengthMismatchError(f"expected length {l_ra}, got {x.shape}")
    return np.fft.fft(x)


def from_frequency_domain(X: np.ndarray) -> np.ndarray:
    return np.fft.ifft(X)


def shift_phase_ramp(l_ra: int, c_v: float) -> np.ndarray:
    """Per-bin factor mapping ``DFT(x)`` onto ``DFT(x(n + c_v))``."""
    k = np.arange(l_ra)
    return np.exp(2j * np.pi * k * c_v / l_ra)


def preamble_spectrum(cfg: ZcConfig, rapid: int) -> np.ndarray:
    """Frequency-domain preamble ``y_{u,v}(k)`` for one RAPID."""
    p = Preamble(rapid, cfg.n_cs)
    p.check(cfg)
    return to_frequency_domain(apply_cyclic_shift(generate_base_sequence(cfg), p))
