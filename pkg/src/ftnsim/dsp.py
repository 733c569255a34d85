"""Sampled FTN intersymbol interference and its whitening factor.

The matched-filter output of a raised-cosine (RRC * RRC) link sampled every
``tau * T`` carries ISI taps ``h_j = h(j tau T)`` and noise coloured by the
same taps.  ``spectral_factorize`` splits ``H(z) = V(z) V*(1/z*)`` into a
causal minimum-phase ``v``; filtering with ``1 / V*(1/z*)`` whitens the noise
and leaves the signal convolved with ``v``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d, check_int, check_range
from .exceptions import FactorizationError, ParameterError

#: Default nominal symbol period T in seconds (2400 baud).
SYMBOL_PERIOD = 0.41667e-3

_L_H_CAP = 1024


@dataclass(frozen=True)
class PulseConfig:
    """Raised-cosine link parameters.

    Attributes
    ----------
    beta : float
        Roll-off factor in ``[0, 1]``.
    tau : float
        FTN acceleration in ``(0, 1]``; symbols are sent every ``tau * T``.
    symbol_period : float
        Nyquist symbol period ``T`` in seconds.
    """

    beta: float = 0.35
    tau: float = 1.0
    symbol_period: float = SYMBOL_PERIOD

    def __post_init__(self):
        check_range(self.beta, "beta", 0.0, 1.0)
        check_range(self.tau, "tau", 0.0, 1.0, low_open=True)
        check_range(self.symbol_period, "symbol_period", 0.0, low_open=True)

    @property
    def sample_spacing(self):
        """FTN symbol spacing ``tau * T`` in seconds."""
        return self.tau * self.symbol_period


@dataclass(frozen=True)
class IsiTaps:
    """Two-sided ISI taps ``h`` (index ``-L_h..L_h``) and the causal factor ``v``.

    ``v`` has ``L_h + 1`` taps so that ``conv(v, conj(v[::-1]))`` has the
    length ``2 L_h + 1`` of ``h``.  It is ``None`` until factorized.
    """

    h: np.ndarray
    L_h: int
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        h = np.asarray(self.h)
        if h.ndim != 1 or h.size != 2 * self.L_h + 1:
            raise ParameterError(f"h must have 2*L_h+1 = {2 * self.L_h + 1} taps, got {h.shape}")
        object.__setattr__(self, "h", h)
        if self.v is not None:
            object.__setattr__(self, "v", np.asarray(self.v))

    def with_v(self, v):
        return IsiTaps(h=self.h, L_h=self.L_h, v=v)


def raised_cosine(t, beta, symbol_period=1.0):
    """Unit-energy raised-cosine pulse ``h(t) = g(t) * g(t)`` for an RRC ``g``.

    The removable singularity at ``|t| = T / (2 beta)`` is replaced by its limit
    ``(pi / 4) sinc(1 / (2 beta))``.
    """
    x = np.asarray(t, dtype=float) / symbol_period
    out = np.sinc(x)
    if beta == 0:
        return out
    arg = 2.0 * beta * x
    den = 1.0 - arg**2
    singular = np.isclose(np.abs(arg), 1.0, rtol=0.0, atol=1e-12)
    safe_den = np.where(singular, 1.0, den)
    out = out * np.cos(np.pi * beta * x) / safe_den
    return np.where(singular, np.pi / 4.0 * np.sinc(1.0 / (2.0 * beta)), out)


def raised_cosine_isi(cfg, L_h):
    """Sample the raised cosine at ``t = j tau T`` for ``j = -L_h..L_h``.

    Returns an :class:`IsiTaps` without a whitening factor.  ``h_0 = 1`` and the
    taps are real and even.
    """
    L_h = check_int(L_h, "L_h", minimum=0)
    j = np.arange(-L_h, L_h + 1)
    h = raised_cosine(j * cfg.tau, cfg.beta)
    # exact symmetry, independent of floating-point evaluation order
    h = 0.5 * (h + h[::-1])
    h[L_h] = 1.0
    return IsiTaps(h=h, L_h=L_h)


def choose_L_h(cfg, tail_energy_budget=1e-4, cap=_L_H_CAP):
    """Smallest ``L_h >= 0`` whose discarded tail energy fraction is within budget.

    Energy fractions are taken relative to the taps inside ``|j| <= cap``; a
    budget that needs more than ``cap`` taps raises :class:`ParameterError`.
    """
    budget = check_range(tail_energy_budget, "tail_energy_budget", 0.0, 1.0, True, True)
    j = np.arange(0, cap + 1)
    e = raised_cosine(j * cfg.tau, cfg.beta) ** 2
    total = e[0] + 2.0 * e[1:].sum()
    # tail[L] = energy with |j| > L
    tail = 2.0 * (np.cumsum(e[::-1])[::-1][1:])
    tail = np.append(tail, 0.0)
    for L in range(0, cap + 1):
        if tail[L] / total <= budget:
            return L
    raise ParameterError(f"tail energy budget {budget} needs L_h > {cap}")


def isi_spectrum(h, n_freq=4096):
    """Real part of ``H(e^{jw})`` on a uniform grid over ``[0, 2 pi)``."""
    h = np.asarray(h)
    L = (h.size - 1) // 2
    w = np.linspace(0.0, 2.0 * np.pi, n_freq, endpoint=False)
    j = np.arange(-L, L + 1)
    return np.real(np.exp(-1j * np.outer(w, j)) @ h)


def spectral_floor(h, floor=1e-3, n_freq=4096):
    """Load ``h_0`` so that the spectrum of ``h`` stays above ``floor``, then renormalize.

    Truncated FTN taps with ``tau < 1 / (1 + beta)`` have a spectrum that dips
    slightly below zero (the untruncated spectrum vanishes on a band), which
    makes an exact factorization impossible.  The returned taps keep ``h_0 = 1``.
    """
    h = np.array(h, dtype=np.result_type(h, float))
    L = (h.size - 1) // 2
    lowest = isi_spectrum(h, n_freq).min()
    if lowest < floor:
        h[L] += floor - lowest
        h = h / h[L].real
    return h


def spectral_factorize(taps, tol_fac=1e-9, n_freq=4096):
    """Causal minimum-phase factor ``v`` with ``conv(v, conj(v[::-1])) == h``.

    Parameters
    ----------
    taps : IsiTaps or array_like
        Conjugate-symmetric two-sided sequence of odd length ``2 L + 1``.
    tol_fac : float
        Relative tolerance on the reconstruction residual.

    Returns
    -------
    numpy.ndarray
        ``L + 1`` taps; ``v[0]`` is real and positive. Real input gives real output.

    Raises
    ------
    FactorizationError
        If the spectrum of ``h`` is not strictly positive on the unit circle or
        the reconstruction misses ``h`` by more than ``tol_fac``.
    """
    h = np.asarray(taps.h if isinstance(taps, IsiTaps) else taps)
    h = as_1d(h, "h")
    if h.size % 2 != 1:
        raise FactorizationError("h must have odd length")
    L = (h.size - 1) // 2
    scale = np.max(np.abs(h))
    if not np.allclose(h, np.conj(h[::-1]), rtol=0, atol=1e-12 * scale):
        raise FactorizationError("h is not conjugate-symmetric")
    if L == 0:
        if h[0].real <= 0:
            raise FactorizationError("non-positive spectrum")
        return np.array([np.sqrt(h[0].real)])
    # outer taps at rounding level carry no information and break root finding
    trim = 0
    while L - trim > 0 and abs(h[trim]) <= 1e-15 * scale:
        trim += 1
    if trim:
        h_full = h
        v = spectral_factorize(h[trim : h.size - trim], tol_fac, n_freq)
        v = np.concatenate([v, np.zeros(trim, dtype=v.dtype)])
        if np.max(np.abs(np.convolve(v, np.conj(v[::-1])) - h_full)) > tol_fac * scale:
            raise FactorizationError("factorization residual exceeds tolerance")
        return v
    if isi_spectrum(h, n_freq).min() <= 0:
        raise FactorizationError("z-spectrum of h is not strictly positive on the unit circle")

    # roots of z^L H(z); they pair as (r, 1/r*), keep the L inside the circle
    roots = np.roots(h)
    inside = roots[np.argsort(np.abs(roots))][:L]
    if np.any(np.abs(inside) >= 1.0):
        raise FactorizationError("no clean inside/outside root split")
    v = np.poly(inside)
    v = v * np.sqrt(h[L].real / np.sum(np.abs(v) ** 2))
    if np.isrealobj(h):
        v = v.real
    residual = np.max(np.abs(np.convolve(v, np.conj(v[::-1])) - h))
    if residual > tol_fac * scale:
        raise FactorizationError(f"factorization residual {residual:.3g} exceeds tolerance")
    return v


def whiten(samples, v):
    """Apply the anti-causal whitening filter ``1 / V*(1/z*)``.

    Realized as time-reverse, causal all-pole filter with coefficients
    ``conj(v)``, time-reverse, with zero initial state.  ``v`` must be minimum
    phase so the recursion is stable.
    """
    x = np.asarray(samples)
    if x.size == 0:
        return x.copy()
    v = as_1d(v, "v")
    return signal.lfilter([1.0], np.conj(v), x[::-1])[::-1]


def make_isi(cfg, L_h=None, tail_energy_budget=1e-4, floor=1e-3):
    """Sampled taps plus whitening factor for a pulse configuration.

    Picks ``L_h`` from the tail-energy budget when not given and applies the
    spectral floor before factorizing.  At ``tau = 1`` this returns a unit
    impulse and ``v = [1, 0, ...]``.
    """
    if L_h is None:
        L_h = choose_L_h(cfg, tail_energy_budget)
    taps = raised_cosine_isi(cfg, L_h)
    h = spectral_floor(taps.h, floor) if cfg.tau < 1.0 else taps.h
    return IsiTaps(h=h, L_h=L_h, v=spectral_factorize(h))


class WhiteningFilter(TransformerMixin, BaseEstimator):
    """Noise-whitening front end for FTN matched-filter samples.

    ``fit`` designs ``v_`` from the pulse parameters; ``transform`` whitens each
    row of ``X`` (or a single 1-D sequence).

    Parameters
    ----------
    tau, beta : float
        FTN acceleration and roll-off.
    L_h : int or None
        One-sided ISI length; chosen from ``tail_energy_budget`` when None.
    tail_energy_budget : float
    spectral_floor : float
    """

    def __init__(self, tau=0.8, beta=0.35, L_h=None, tail_energy_budget=1e-4, spectral_floor=1e-3):
        self.tau = tau
        self.beta = beta
        self.L_h = L_h
        self.tail_energy_budget = tail_energy_budget
        self.spectral_floor = spectral_floor

    def fit(self, X=None, y=None):
        taps = make_isi(
            PulseConfig(beta=self.beta, tau=self.tau),
            L_h=self.L_h,
            tail_energy_budget=self.tail_energy_budget,
            floor=self.spectral_floor,
        )
        self.isi_ = taps
        self.h_ = taps.h
        self.v_ = taps.v
        self.L_h_ = taps.L_h
        return self

    def transform(self, X):
        check_is_fitted(self, "v_")
        X = np.asarray(X)
        if X.ndim == 1:
            return whiten(X, self.v_)
        return np.stack([whiten(row, self.v_) for row in X])
