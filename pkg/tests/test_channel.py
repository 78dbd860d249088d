import numpy as np
import pytest

from nrprach import channel as ch
from nrprach.waveform import TimeSignal

FS = 122.88e6


def white(n, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSignal(rng.standard_normal(n) + 1j * rng.standard_normal(n), FS)


def test_awgn_only_is_single_identity_tap():
    taps = ch.realize_channel(ch.ChannelConfig(), np.random.default_rng(0))
    assert taps.delays_samples.tolist() == [0.0]
    assert taps.gains.tolist() == [1 + 0j]


@pytest.mark.parametrize("spread", [10, 150, 300])
def test_tdlc_profile_normalized_and_sorted(spread):
    delays, powers = ch.tdlc_profile(spread, FS)
    assert powers.sum() == pytest.approx(1.0, abs=1e-12)
    assert delays[0] == 0.0
    assert np.all(np.diff(delays) >= 0)
    assert len(delays) == 24


def test_tdlc300_delay_span():
    delays, _ = ch.tdlc_profile(300, FS)
    # longest normalized TDL-C delay 8.6523 x 300 ns x 122.88 MHz
    assert delays[-1] == pytest.approx(8.6523 * 300e-9 * FS, rel=1e-12)
    assert delays[-1] == pytest.approx(318.96, abs=0.01)
    taps = ch.realize_channel(ch.parse_channel("tdlc300"), np.random.default_rng(1), FS)
    assert taps.rounded_delays.max() == 319


def test_mean_channel_power_is_one():
    cfg = ch.parse_channel("tdlc300")
    rng = np.random.default_rng(7)
    p = [np.sum(np.abs(ch.realize_channel(cfg, rng, FS).gains) ** 2) for _ in range(10_000)]
    assert 0.99 <= np.mean(p) <= 1.01


def test_same_seed_same_realization():
    cfg = ch.parse_channel("tdlc150", snr_db=3.0, seed=11)
    a = ch.realize_channel(cfg, np.random.default_rng(cfg.seed), FS)
    b = ch.realize_channel(cfg, np.random.default_rng(cfg.seed), FS)
    np.testing.assert_array_equal(a.gains, b.gains)
    sig = white(500)
    na = ch.add_awgn(sig, 3.0, 1.0, np.random.default_rng(cfg.seed))
    nb = ch.add_awgn(sig, 3.0, 1.0, np.random.default_rng(cfg.seed))
    np.testing.assert_array_equal(na.samples, nb.samples)


def test_identity_taps_leave_signal_unchanged():
    sig = white(1000)
    out = ch.apply_channel(sig, ch.TapSet(np.zeros(1), np.ones(1, complex)))
    np.testing.assert_array_equal(out.samples, sig.samples)


def test_single_tap_scales():
    sig = white(1000)
    g = 0.3 - 0.4j
    out = ch.apply_channel(sig, ch.TapSet(np.zeros(1), np.array([g])))
    np.testing.assert_allclose(out.samples, g * sig.samples)


def test_output_length_and_fractional_rounding():
    sig = white(100)
    taps = ch.TapSet(np.array([0.0, 2.4, 6.6]), np.array([1, 0.5, 0.25], complex))
    out = ch.apply_channel(sig, taps)
    assert len(out) == 107
    ref = np.zeros(107, complex)
    ref[:100] += sig.samples
    ref[2:102] += 0.5 * sig.samples
    ref[7:107] += 0.25 * sig.samples
    np.testing.assert_allclose(out.samples, ref)


def test_two_equal_taps_preserve_energy():
    d = 37
    taps = ch.TapSet(np.array([0.0, d]), np.full(2, 1 / np.sqrt(2), complex))
    ratios = []
    for seed in range(20):
        sig = white(200_000, seed)
        x = sig.samples
        out = ch.apply_channel(sig, taps).samples
        e_in = np.sum(np.abs(x) ** 2)
        cross = np.real(np.sum(x[d:] * np.conj(x[:-d])))
        # exact decomposition: the taps add their energies plus one cross term
        assert abs(np.sum(np.abs(out) ** 2) - (e_in + cross)) / e_in < 1e-6
        ratios.append(np.sum(np.abs(out) ** 2) / e_in)
    # for white input the cross term averages out
    assert abs(np.mean(ratios) - 1.0) < 2e-3


def test_apply_channel_is_linear():
    rng = np.random.default_rng(5)
    taps = ch.realize_channel(ch.parse_channel("tdlc300"), rng, FS)
    s1, s2 = white(3000, 1), white(3000, 2)
    a = 2.0 - 1.0j
    lhs = ch.apply_channel(TimeSignal(a * s1.samples + s2.samples, FS), taps).samples
    rhs = a * ch.apply_channel(s1, taps).samples + ch.apply_channel(s2, taps).samples
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_noiseless_mode_unchanged():
    sig = white(100)
    out = ch.add_awgn(sig, float("inf"), 1.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.samples, sig.samples)


@pytest.mark.parametrize("snr_db,ratio", [(0.0, 1.0), (-20.0, 100.0)])
def test_noise_power(snr_db, ratio):
    n = 1_000_000
    sig = TimeSignal(np.zeros(n, complex), FS)
    out = ch.add_awgn(sig, snr_db, 1.0, np.random.default_rng(9))
    measured = np.mean(np.abs(out.samples) ** 2)
    assert measured / ratio == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("name,code", [("awgn", 0), ("tdlc10", 1), ("tdlc150", 15), ("TDLC300", 30),
                                       ("hardware", 255)])
def test_channel_codes_round_trip(name, code):
    cfg = ch.parse_channel(name)
    assert cfg.code == code
    assert ch.channel_name(*ch.channel_from_code(code)) == cfg.name


def test_bad_channel_names():
    with pytest.raises(ValueError):
        ch.parse_channel("rayleigh")
    with pytest.raises(ValueError):
        ch.ChannelConfig(ch.Profile.TDLC, 0.0)
