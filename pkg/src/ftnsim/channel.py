"""Tapped-delay-line Rayleigh channels and the whitened FTN reception model.

Received samples follow

    r_k = sum_j p_{k,j} s_{k-j} + w_k,    p_{k,j} = sum_l c_{k,l} v_{j-l},

with ``w`` white circular complex Gaussian noise added directly after the
whitening filter.  Noise variance is ``sigma^2`` per real dimension, i.e.
``E|w|^2 = 2 sigma^2 = N0`` for unit-energy symbols.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from ._validation import as_1d, check_int, check_range
from .exceptions import ParameterError

MODELS = ("model1", "model2", "model3", "awgn")

ITU_POOR_DELAY = 2.0e-3
ITU_POOR_DOPPLER = 1.0


@dataclass(frozen=True)
class ChannelProfile:
    """Continuous-delay multipath profile.

    ``paths`` is a tuple of ``(delay_seconds, mean_power)``; powers sum to 1.
    ``doppler_hz`` is the RMS width of the Gaussian Doppler spectrum and is 0
    for block-constant channels.
    """

    paths: tuple
    doppler_hz: float = 0.0
    model_id: str = "model2"

    def __post_init__(self):
        paths = tuple((float(d), float(p)) for d, p in self.paths)
        if not paths:
            raise ParameterError("profile needs at least one path")
        if any(d < 0 or p < 0 for d, p in paths):
            raise ParameterError("delays and powers must be non-negative")
        if not np.isclose(sum(p for _, p in paths), 1.0, atol=1e-9):
            raise ParameterError("path powers must sum to 1")
        check_range(self.doppler_hz, "doppler_hz", 0.0)
        if self.model_id not in MODELS:
            raise ParameterError(f"unknown model_id {self.model_id!r}")
        object.__setattr__(self, "paths", paths)

    def fading_rate(self, cfg):
        """Doppler normalized to the FTN sample spacing."""
        return self.doppler_hz * cfg.sample_spacing

    @property
    def time_varying(self):
        return self.model_id == "model1"


def itu_poor_profile(time_varying=True):
    """Two equal-power paths 2 ms apart; 1 Hz Doppler when time-varying."""
    return ChannelProfile(
        paths=((0.0, 0.5), (ITU_POOR_DELAY, 0.5)),
        doppler_hz=ITU_POOR_DOPPLER if time_varying else 0.0,
        model_id="model1" if time_varying else "model2",
    )


def profile_for(model_id, cfg, n_taps_model3=9):
    """Named channel profile; model 3 has ``n_taps_model3`` equal-power taps at ``tau T`` spacing."""
    if model_id == "model1":
        return itu_poor_profile(True)
    if model_id == "model2":
        return itu_poor_profile(False)
    if model_id == "model3":
        n = n_taps_model3
        return ChannelProfile(
            paths=tuple((l * cfg.sample_spacing, 1.0 / n) for l in range(n)), model_id="model3"
        )
    if model_id == "awgn":
        return ChannelProfile(paths=((0.0, 1.0),), model_id="awgn")
    raise ParameterError(f"unknown channel model {model_id!r}")


def discretize_profile(profile, cfg, max_delay=0.05):
    """Round each path delay to the nearest multiple of ``tau T``.

    Returns ``(L_c, powers)`` where ``powers`` has ``L_c + 1`` entries; paths that
    land on the same tap add, empty taps stay as structural zeros.
    """
    delays = np.array([d for d, _ in profile.paths])
    if np.any(delays >= max_delay):
        raise ParameterError(f"path delay exceeds max_delay={max_delay}")
    idx = np.rint(delays / cfg.sample_spacing).astype(int)
    L_c = int(idx.max())
    powers = np.zeros(L_c + 1)
    np.add.at(powers, idx, [p for _, p in profile.paths])
    return L_c, powers


@dataclass
class ChannelRealization:
    """Complex tap matrix ``taps[k, l]`` = gain of tap ``l`` at sample ``k``."""

    taps: np.ndarray
    sample_spacing: float = field(default=1.0)

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)
        if self.taps.ndim != 2:
            raise ParameterError("taps must be a (samples, L_c + 1) matrix")
        if not np.all(np.isfinite(self.taps)):
            raise ParameterError("taps must be finite")

    @property
    def L_c(self):
        return self.taps.shape[1] - 1

    @property
    def n_samples(self):
        return self.taps.shape[0]

    def save_text(self, path):
        """Write ``k l re im`` rows (one per sample and tap)."""
        n, m = self.taps.shape
        k, l = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        rows = np.column_stack([k.ravel(), l.ravel(), self.taps.real.ravel(), self.taps.imag.ravel()])
        np.savetxt(
            path,
            rows,
            fmt=["%d", "%d", "%.17g", "%.17g"],
            header=f"sample_spacing {self.sample_spacing!r}\nk l re im",
        )

    @classmethod
    def load_text(cls, path):
        spacing = 1.0
        with open(path) as fh:
            first = fh.readline()
        if first.startswith("# sample_spacing"):
            spacing = float(first.split()[-1])
        data = np.loadtxt(path, ndmin=2)
        k = data[:, 0].astype(int)
        l = data[:, 1].astype(int)
        taps = np.zeros((k.max() + 1, l.max() + 1), dtype=complex)
        taps[k, l] = data[:, 2] + 1j * data[:, 3]
        return cls(taps=taps, sample_spacing=spacing)


def _complex_normal(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def doppler_filter(doppler_hz, sample_spacing, span=5.0):
    """Unit-energy FIR whose output autocorrelation is ``exp(-2 (pi f_d t)^2)``."""
    s = 1.0 / (2.0 * np.sqrt(2.0) * np.pi * doppler_hz * sample_spacing)
    half = max(1, int(np.ceil(span * s)))
    n = np.arange(-half, half + 1)
    g = np.exp(-(n**2) / (2.0 * s**2))
    return g / np.sqrt(np.sum(g**2))


def gen_time_varying(profile, cfg, n_samples, rng_seed):
    """Independent Gaussian-Doppler Rayleigh processes on each nonzero tap."""
    n_samples = check_int(n_samples, "n_samples", minimum=1)
    if profile.doppler_hz <= 0:
        raise ParameterError("time-varying channel needs doppler_hz > 0")
    L_c, powers = discretize_profile(profile, cfg)
    rng = np.random.default_rng(rng_seed)
    g = doppler_filter(profile.doppler_hz, cfg.sample_spacing)
    taps = np.zeros((n_samples, L_c + 1), dtype=complex)
    for l in np.flatnonzero(powers):
        noise = _complex_normal(rng, n_samples + g.size - 1)
        taps[:, l] = np.sqrt(powers[l]) * fftconvolve(noise, g, mode="valid")
    return ChannelRealization(taps=taps, sample_spacing=cfg.sample_spacing)


def gen_time_invariant(profile, cfg, n_samples, hold, rng_seed):
    """Rayleigh taps redrawn independently every ``hold`` samples.

    ``hold`` is two frame lengths for the block-constant models.
    """
    n_samples = check_int(n_samples, "n_samples", minimum=1)
    hold = check_int(hold, "hold", minimum=1)
    L_c, powers = discretize_profile(profile, cfg)
    rng = np.random.default_rng(rng_seed)
    n_blocks = -(-n_samples // hold)
    draws = _complex_normal(rng, (n_blocks, L_c + 1)) * np.sqrt(powers)
    taps = np.repeat(draws, hold, axis=0)[:n_samples]
    return ChannelRealization(taps=taps, sample_spacing=cfg.sample_spacing)


def gen_static(profile, cfg, n_samples):
    """Deterministic channel with tap amplitudes ``sqrt(power)`` (no fading)."""
    L_c, powers = discretize_profile(profile, cfg)
    taps = np.tile(np.sqrt(powers).astype(complex), (n_samples, 1))
    return ChannelRealization(taps=taps, sample_spacing=cfg.sample_spacing)


def generate_channel(profile, cfg, n_samples, frame_len, rng_seed):
    """Dispatch on the profile's model id."""
    if profile.model_id == "model1":
        return gen_time_varying(profile, cfg, n_samples, rng_seed)
    if profile.model_id in ("model2", "model3"):
        return gen_time_invariant(profile, cfg, n_samples, 2 * frame_len, rng_seed)
    return gen_static(profile, cfg, n_samples)


@dataclass(frozen=True)
class NoiseConfig:
    ebn0_db: float
    code_rate: float = 0.5
    bits_per_symbol: int = 1

    def __post_init__(self):
        check_range(self.code_rate, "code_rate", 0.0, 1.0, low_open=True)
        check_int(self.bits_per_symbol, "bits_per_symbol", minimum=1)

    @property
    def sigma(self):
        return ebn0_to_sigma(self)

    @property
    def noise_var(self):
        """Complex noise variance ``E|w|^2 = N0``."""
        return 2.0 * self.sigma**2


def ebn0_to_sigma(noise):
    """Per-real-dimension noise std for unit-energy symbols.

    ``sigma^2 = 1 / (2 R b 10^(EbN0/10))``; ``+inf`` dB gives 0.
    """
    if noise.ebn0_db == np.inf:
        return 0.0
    ebn0 = 10.0 ** (noise.ebn0_db / 10.0)
    return float(np.sqrt(1.0 / (2.0 * noise.code_rate * noise.bits_per_symbol * ebn0)))


def effective_isi(taps, v):
    """``p[k, j] = sum_l c[k, l] v[j - l]`` for ``j = 0 .. L_h + L_c``."""
    taps = np.atleast_2d(taps)
    v = np.asarray(v)
    L_c = taps.shape[1] - 1
    p = np.zeros((taps.shape[0], v.size + L_c), dtype=complex)
    for l in range(L_c + 1):
        p[:, l : l + v.size] += taps[:, l : l + 1] * v
    return p


def transmit_receive(symbols, channel, isi, noise, rng_seed=None, return_clean=False):
    """Whitened received samples for a symbol stream.

    Symbols before index 0 are taken as zero.  ``noise`` may be a
    :class:`NoiseConfig` or a per-real-dimension sigma.
    """
    s = as_1d(symbols, "symbols")
    taps = channel.taps if isinstance(channel, ChannelRealization) else np.atleast_2d(channel)
    if taps.shape[0] < s.size:
        raise ParameterError(f"channel covers {taps.shape[0]} samples, need {s.size}")
    taps = taps[: s.size]
    v = isi.v if hasattr(isi, "v") else np.asarray(isi)
    u = np.convolve(s, v)[: s.size]
    clean = np.zeros(s.size, dtype=complex)
    for l in range(taps.shape[1]):
        clean[l:] += taps[l:, l] * u[: s.size - l]
    sigma = noise.sigma if isinstance(noise, NoiseConfig) else float(noise)
    r = clean
    if sigma > 0:
        rng = np.random.default_rng(rng_seed)
        r = clean + sigma * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
    return (r, clean) if return_clean else r
