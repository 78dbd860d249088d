"""TDL-C multipath fading and AWGN.

Tap gains are quasi-static (one draw per transmission, no Doppler) and the
fractional tap delays are rounded to the nearest sample.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from .waveform import TimeSignal

# TR 38.901 Table 7.7.2-3 (TDL-C): normalized delay, power in dB
TDLC_TABLE = np.array([
    [0.0000, -4.4],
    [0.2099, -1.2],
    [0.2219, -3.5],
    [0.2329, -5.2],
    [0.2176, -2.5],
    [0.6366, 0.0],
    [0.6448, -2.2],
    [0.6560, -3.9],
    [0.6584, -7.4],
    [0.7935, -7.1],
    [0.8213, -10.7],
    [0.9336, -11.1],
    [1.2285, -5.1],
    [1.3083, -6.8],
    [2.1704, -8.7],
    [2.7105, -13.2],
    [4.2589, -13.9],
    [4.6003, -13.9],
    [5.4902, -15.8],
    [5.6077, -17.1],
    [6.3065, -16.0],
    [6.6374, -15.7],
    [7.0427, -21.6],
    [8.6523, -22.8],
])


class Profile(enum.Enum):
    AWGN_ONLY = "awgn"
    TDLC = "tdlc"
    HARDWARE = "hardware"


@dataclass(frozen=True)
class ChannelConfig:
    profile: Profile = Profile.AWGN_ONLY
    delay_spread_ns: float = 0.0
    snr_db: float = float("inf")
    seed: int = 0

    def __post_init__(self):
        if self.profile is Profile.TDLC and not self.delay_spread_ns > 0:
            raise ValueError("TDLC needs a positive delay spread")

    @property
    def name(self) -> str:
        return channel_name(self.profile, self.delay_spread_ns)

    @property
    def code(self) -> int:
        return channel_code(self.profile, self.delay_spread_ns)


def channel_name(profile: Profile, delay_spread_ns: float = 0.0) -> str:
    if profile is Profile.TDLC:
        return f"tdlc{delay_spread_ns:g}"
    return profile.value


def parse_channel(name: str, snr_db: float = float("inf"), seed: int = 0) -> ChannelConfig:
    """``"awgn"``, ``"tdlc150"`` and friends -> ChannelConfig."""
    key = name.strip().lower()
    if key in ("awgn", "awgn_only"):
        return ChannelConfig(Profile.AWGN_ONLY, 0.0, snr_db, seed)
    m = re.fullmatch(r"tdl-?c(\d+(?:\.\d+)?)", key)
    if m:
        return ChannelConfig(Profile.TDLC, float(m.group(1)), snr_db, seed)
    if key == "hardware":
        return ChannelConfig(Profile.HARDWARE, 0.0, snr_db, seed)
    raise ValueError(f"unknown channel {name!r}")


# one-byte channel tag used in record files:
#   0 = AWGN only, 1..254 = TDL-C with spread code*10 ns, 255 = hardware capture
def channel_code(profile: Profile, delay_spread_ns: float = 0.0) -> int:
    if profile is Profile.AWGN_ONLY:
        return 0
    if profile is Profile.HARDWARE:
        return 255
    code = delay_spread_ns / 10.0
    if code != int(code) or not 1 <= code <= 254:
        raise ValueError(f"delay spread {delay_spread_ns} ns not representable as a channel code")
    return int(code)


def channel_from_code(code: int) -> tuple[Profile, float]:
    if code == 0:
        return Profile.AWGN_ONLY, 0.0
    if code == 255:
        return Profile.HARDWARE, 0.0
    return Profile.TDLC, 10.0 * code


@dataclass
class TapSet:
    delays_samples: np.ndarray
    gains: np.ndarray

    @property
    def rounded_delays(self) -> np.ndarray:
        return np.rint(self.delays_samples).astype(np.int64)


def tdlc_profile(delay_spread_ns: float, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Sorted (delay in samples, linear power) with powers summing to one."""
    order = np.argsort(TDLC_TABLE[:, 0], kind="stable")
    table = TDLC_TABLE[order]
    delays = table[:, 0] * delay_spread_ns * 1e-9 * sample_rate
    powers = 10.0 ** (table[:, 1] / 10.0)
    return delays, powers / powers.sum()


def realize_channel(cfg: ChannelConfig, rng: np.random.Generator,
                    sample_rate: float = 122.88e6) -> TapSet:
    if cfg.profile is not Profile.TDLC:
        return TapSet(np.zeros(1), np.ones(1, dtype=np.complex128))
    delays, powers = tdlc_profile(cfg.delay_spread_ns, sample_rate)
    g = rng.standard_normal(len(powers)) + 1j * rng.standard_normal(len(powers))
    return TapSet(delays, g * np.sqrt(powers / 2.0))


def apply_channel(sig: TimeSignal, taps: TapSet) -> TimeSignal:
    d = taps.rounded_delays
    x = sig.samples
    out = np.zeros(len(x) + int(d.max()), dtype=np.complex128)
    for delay, g in zip(d, taps.gains):
        out[delay:delay + len(x)] += g * x
    return TimeSignal(out, sig.sample_rate_hz)


def add_awgn(sig: TimeSignal, snr_db: float, signal_power_ref: float,
             rng: np.random.Generator) -> TimeSignal:
    """Add circular complex Gaussian noise of variance ``signal_power_ref / snr``.

    ``snr_db = inf`` is the noiseless mode and leaves the rng untouched.
    """
    if np.isposinf(snr_db):
        return TimeSignal(sig.samples.copy(), sig.sample_rate_hz)
    if not signal_power_ref > 0:
        raise ValueError("signal_power_ref must be positive")
    var = signal_power_ref / 10.0 ** (snr_db / 10.0)
    n = len(sig.samples)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(var / 2.0)
    return TimeSignal(sig.samples + noise, sig.sample_rate_hz)
