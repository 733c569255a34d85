import numpy as np
import pytest

from ftnsim.channel import (
    ChannelProfile,
    ChannelRealization,
    NoiseConfig,
    discretize_profile,
    ebn0_to_sigma,
    effective_isi,
    gen_static,
    gen_time_invariant,
    gen_time_varying,
    itu_poor_profile,
    profile_for,
    transmit_receive,
)
from ftnsim.dsp import PulseConfig, make_isi
from ftnsim.exceptions import ParameterError


def received_oracle(s, taps, v):
    """Direct double sum r_k = sum_j sum_l c_{k,l} v_{j-l} s_{k-j}."""
    n = s.size
    out = np.zeros(n, dtype=complex)
    for k in range(n):
        for l in range(taps.shape[1]):
            for m in range(v.size):
                j = l + m
                if k - j >= 0:
                    out[k] += taps[k, l] * v[m] * s[k - j]
    return out


def test_single_path_has_no_memory():
    p = ChannelProfile(paths=((0.0, 1.0),), model_id="awgn")
    L_c, powers = discretize_profile(p, PulseConfig(beta=0.35, tau=0.8))
    assert L_c == 0 and powers.tolist() == [1.0]


@pytest.mark.parametrize("tau,L_c", [(1.0, 5), (0.8, 6), (0.84, 6), (0.72, 7)])
def test_itu_poor_tap_count(tau, L_c):
    got, powers = discretize_profile(itu_poor_profile(), PulseConfig(beta=0.35, tau=tau))
    assert got == L_c == round(2.0e-3 / (tau * 0.41667e-3))
    assert powers[0] == powers[-1] == 0.5 and powers[1:-1].sum() == 0


def test_coincident_paths_add():
    p = ChannelProfile(paths=((0.0, 0.25), (1e-6, 0.25), (1e-3, 0.5)))
    _, powers = discretize_profile(p, PulseConfig(beta=0.35, tau=1.0))
    assert powers[0] == 0.5


def test_profile_validation():
    with pytest.raises(ParameterError):
        ChannelProfile(paths=((0.0, 0.7),))
    with pytest.raises(ParameterError):
        profile_for("model9", PulseConfig(beta=0.35, tau=0.8))


def test_time_varying_statistics():
    # a fast Doppler keeps the 10^6-sample average well inside the 2% band
    cfg = PulseConfig(beta=0.35, tau=0.8)
    fd = 50.0
    p = ChannelProfile(paths=((0.0, 0.3), (1e-3, 0.7)), doppler_hz=fd, model_id="model1")
    ch = gen_time_varying(p, cfg, 10**6, 1)
    L_c, powers = discretize_profile(p, cfg)
    var = np.mean(np.abs(ch.taps) ** 2, axis=0)
    nz = powers > 0
    assert np.allclose(var[nz], powers[nz], rtol=0.02)
    assert np.all(var[~nz] == 0)
    x = ch.taps[:, 0]
    dt = cfg.sample_spacing
    for lag in (0, 50, 150, 300):
        r = np.mean(x[lag:] * np.conj(x[: x.size - lag])).real / np.mean(np.abs(x) ** 2)
        assert r == pytest.approx(np.exp(-2 * (np.pi * fd * lag * dt) ** 2), abs=0.03)


def test_time_invariant_blocks():
    cfg = PulseConfig(beta=0.35, tau=0.72)
    ch = gen_time_invariant(itu_poor_profile(False), cfg, 576 * 400, 576, 3)
    blocks = ch.taps.reshape(400, 576, -1)
    assert np.all(blocks == blocks[:, :1])
    first = blocks[:, 0, 0]
    # independence across pairs and unit average energy
    assert abs(np.mean(first[1:] * np.conj(first[:-1]))) < 4 * 0.5 / np.sqrt(399)
    assert np.mean(np.sum(np.abs(blocks[:, 0]) ** 2, axis=-1)) == pytest.approx(1.0, abs=0.15)


def test_nyquist_identity():
    s = np.random.default_rng(0).choice([-1.0, 1.0], 64)
    cfg = PulseConfig(beta=0.35, tau=1.0)
    ch = gen_static(profile_for("awgn", cfg), cfg, 64)
    r = transmit_receive(s, ch, make_isi(cfg).v, 0.0)
    assert np.array_equal(r, s)


def test_received_samples_match_double_sum(rng):
    v = make_isi(PulseConfig(beta=0.35, tau=0.72)).v
    taps = rng.standard_normal((80, 4)) + 1j * rng.standard_normal((80, 4))
    s = rng.choice([-1.0, 1.0], 80)
    r = transmit_receive(s, ChannelRealization(taps), v, 0.0)
    assert np.max(np.abs(r - received_oracle(s, taps, v))) < 1e-12


def test_linearity_and_determinism(rng):
    v = make_isi(PulseConfig(beta=0.35, tau=0.8)).v
    taps = rng.standard_normal((100, 3)) + 0j
    s1, s2 = rng.standard_normal(100), rng.standard_normal(100)
    f = lambda s: transmit_receive(s, taps, v, 0.3, rng_seed=9)
    noise = f(np.zeros(100))
    assert np.allclose(f(s1 + s2) - noise, (f(s1) - noise) + (f(s2) - noise))
    assert np.array_equal(f(s1), f(s1))


def test_frame_boundary_interference_reach(rng):
    v = make_isi(PulseConfig(beta=0.35, tau=0.72)).v
    taps = rng.standard_normal((200, 8)) + 1j * rng.standard_normal((200, 8))
    L_eff = v.size + 7
    s = rng.choice([-1.0, 1.0], 200)
    s0 = s.copy()
    s0[100 - (L_eff - 1) : 100] = 0
    diff = transmit_receive(s, taps, v, 0.0) - transmit_receive(s0, taps, v, 0.0)
    changed = np.flatnonzero(np.abs(diff[100:]) > 1e-12)
    assert changed.max() <= L_eff - 2


def test_noise_is_white_with_requested_variance():
    n = 10**5
    noise = NoiseConfig(ebn0_db=3.0)
    w = transmit_receive(np.zeros(n), np.ones((n, 1)), [1.0], noise, rng_seed=4)
    assert np.mean(np.abs(w) ** 2) == pytest.approx(noise.noise_var, rel=0.02)
    for lag in range(1, 6):
        rho = np.mean(w[lag:] * np.conj(w[:-lag])) / np.mean(np.abs(w) ** 2)
        assert abs(rho) < 3 * np.sqrt(2) / np.sqrt(n)


def test_energy_conservation():
    cfg = PulseConfig(beta=0.35, tau=0.8)
    n = 200_000
    ch = gen_time_invariant(itu_poor_profile(False), cfg, n, 100, 0)
    s = np.random.default_rng(1).choice([-1.0, 1.0], n)
    noise = NoiseConfig(ebn0_db=5.0)
    r = transmit_receive(s, ch, make_isi(cfg).v, noise, rng_seed=2)
    assert np.mean(np.abs(r[50:]) ** 2) == pytest.approx(1 + noise.noise_var, rel=0.05)


def test_ebn0_mapping():
    assert ebn0_to_sigma(NoiseConfig(0.0)) ** 2 == pytest.approx(1.0)
    assert ebn0_to_sigma(NoiseConfig(10.0)) ** 2 == pytest.approx(0.1)
    r = ebn0_to_sigma(NoiseConfig(2.0, code_rate=0.75)) ** 2 / ebn0_to_sigma(NoiseConfig(2.0)) ** 2
    assert r == pytest.approx(2 / 3)
    assert ebn0_to_sigma(NoiseConfig(np.inf)) == 0.0


def test_effective_isi_is_convolution(rng):
    v = rng.standard_normal(5)
    c = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    p = effective_isi(c, v)
    for k in range(3):
        assert np.allclose(p[k], np.convolve(c[k], v))


def test_text_round_trip(tmp_path, rng):
    ch = ChannelRealization(rng.standard_normal((7, 3)) + 1j * rng.standard_normal((7, 3)), 3.3e-4)
    ch.save_text(tmp_path / "ch.txt")
    back = ChannelRealization.load_text(tmp_path / "ch.txt")
    assert np.array_equal(back.taps, ch.taps)
    assert back.sample_spacing == ch.sample_spacing


def test_short_channel_is_rejected():
    with pytest.raises(ParameterError):
        transmit_receive(np.ones(10), np.ones((5, 1)), [1.0], 0.0)
