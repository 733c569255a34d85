"""Time-varying linear SISO MMSE equalizer and the turbo loop around the APP decoder.

For a data symbol at sample ``k`` the equalizer sees the window
``r_k = [r_{k+L1}, ..., r_{k-L2}]`` (``L_eq = L1 + L2 + 1`` samples), modelled as
``r_k = P_k s_k + w_k`` where row ``i`` of ``P_k`` holds the effective ISI of
sample ``k + L1 - i`` shifted right by ``i``.  With a-priori means ``m`` and
variances ``Sigma`` of the symbols,

    q_k = (P Sigma P^H + N0 I + (1 - sigma_k) p p^H)^{-1} p,   p = P u_k,
    s_hat_k = q_k^H (r_k - P m + p m_k).

Extrinsic LLRs use a Gaussian model of ``Re(s_hat_k)`` given ``s_k``: mean
``mu_k s_k`` with ``mu_k = q_k^H p`` and the exact real-part variance of the
residual interference plus noise (the residual is not circular because the
BPSK symbols are real).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int
from .channel import effective_isi
from .coding import CodeConfig, app_decode, depuncture, hard_decision, puncture
from .exceptions import ParameterError, SingularityError

LLR_CAP = 60.0


@dataclass(frozen=True)
class EqualizerConfig:
    """Window extents and loop settings.

    ``L1``/``L2`` default to ``L_eff + 2`` when left as None.
    """

    L1: int = None
    L2: int = None
    iterations: int = 2
    recursive_update: bool = False
    llr_cap: float = LLR_CAP
    min_noise_var: float = 1e-10

    def __post_init__(self):
        for name in ("L1", "L2"):
            if getattr(self, name) is not None:
                check_int(getattr(self, name), name, minimum=0)
        check_int(self.iterations, "iterations", minimum=0)

    def extents(self, L_eff):
        L1 = L_eff + 2 if self.L1 is None else self.L1
        L2 = L_eff + 2 if self.L2 is None else self.L2
        return L1, L2


@dataclass
class EqualizerWindow:
    """Window model around one symbol; symbol column ``c`` is ``s_{k+L1-c}``."""

    P: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    noise_var: float
    center: int

    @property
    def p(self):
        return self.P[:, self.center]

    @property
    def L_eq(self):
        return self.P.shape[0]


def effective_isi_at(k, track, v):
    """Effective ISI taps ``p_{k,j}``, ``j = 0..L_eff-1``, from the channel track at ``k``."""
    return effective_isi(np.asarray(track)[k : k + 1], v)[0]


def apriori_stats(llrs):
    """BPSK a-priori mean ``tanh(L/2)`` and variance ``1 - mean^2``."""
    mean = np.tanh(0.5 * np.asarray(llrs, dtype=float))
    return mean, 1.0 - mean**2


def build_window(k, p_rows, means, variances, L1, L2, noise_var):
    """Window model for the symbol at sample ``k``.

    ``p_rows[a]`` is the effective ISI of sample ``a``; ``means``/``variances``
    are indexed by symbol with an offset of ``L_eff - 1`` (entry ``t`` is symbol
    ``t - L_eff + 1``).  Requires ``L2 <= k`` and ``k + L1 < len(p_rows)``.
    """
    p_rows = np.asarray(p_rows)
    n, L_eff = p_rows.shape
    off = L_eff - 1
    if k - L2 < 0 or k + L1 >= n:
        raise ParameterError(f"window around {k} leaves the block of {n} samples")
    L_eq = L1 + L2 + 1
    width = L_eq + L_eff - 1
    P = np.zeros((L_eq, width), dtype=complex)
    for i in range(L_eq):
        P[i, i : i + L_eff] = p_rows[k + L1 - i]
    sym = k + L1 - np.arange(width) + off
    return EqualizerWindow(
        P=P,
        means=np.asarray(means)[sym],
        variances=np.asarray(variances)[sym],
        noise_var=float(noise_var),
        center=L1,
    )


def _window_system(w):
    p = w.p
    sk = w.variances[w.center]
    return (w.P * w.variances) @ w.P.conj().T + w.noise_var * np.eye(w.L_eq) + (1.0 - sk) * np.outer(p, p.conj())


def mmse_filter(w):
    """Filter ``q_k`` for one window (direct solve)."""
    M = _window_system(w)
    try:
        q = np.linalg.solve(M, w.p)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("equalizer system is singular") from exc
    if not np.all(np.isfinite(q)):
        raise SingularityError("equalizer system is singular")
    return q


def estimate_symbol(w, q, r_win):
    """``q^H (r - P m + p m_k)``."""
    m_k = w.means[w.center]
    return np.vdot(q, np.asarray(r_win) - w.P @ w.means + w.p * m_k)


def real_part_variance(w, q):
    """Variance of ``Re(q^H (interference + noise))`` with the center symbol excluded."""
    var0 = w.variances.copy()
    var0[w.center] = 0.0
    Pv = w.P * var0
    cov = Pv @ w.P.conj().T + w.noise_var * np.eye(w.L_eq)
    pcov = Pv @ w.P.T
    return 0.5 * (np.vdot(q, cov @ q).real + np.vdot(q, pcov @ q.conj()).real)


def extrinsic_llr(s_hat, mu, real_var=None, cap=LLR_CAP):
    """Gaussian-approximation extrinsic LLR of the bit carried by ``s_hat``.

    ``Re(s_hat) ~ N(mu s, real_var)``.  Without ``real_var`` the residual is
    taken as circular, ``real_var = mu (1 - mu) / 2``, which gives
    ``4 Re(s_hat) / (1 - mu)``.  Output is clipped to ``+-cap``.
    """
    s_hat = np.asarray(s_hat)
    mu = np.asarray(mu, dtype=float)
    if real_var is None:
        real_var = 0.5 * mu * (1.0 - mu)
    real_var = np.asarray(real_var, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        llr = 2.0 * mu * s_hat.real / real_var
    llr = np.where(s_hat.real == 0, 0.0, llr)
    llr = np.where(np.isnan(llr), 0.0, llr)
    return np.clip(llr, -cap, cap)


# --- batched equalization over banded covariances -------------------------------------


def _band_cov(p_rows, variances, conj=True):
    """``C[a, d] = cov(y_a, y_{a+d})`` of the noiseless samples for ``d = 0..L_eff-1``.

    ``p_rows``: (..., n, L_eff); ``variances``: (..., n + L_eff - 1) with offset
    ``L_eff - 1``.  With ``conj=False`` the pseudo-covariance ``E[y_a y_{a+d}]``
    is returned (real symbols).
    """
    n, L_eff = p_rows.shape[-2:]
    off = L_eff - 1
    a = np.arange(n)
    # var of symbol a - j, shape (..., n, L_eff)
    sym = a[:, None] - np.arange(L_eff)[None, :] + off
    sv = variances[..., sym]
    weighted = p_rows * sv
    other = np.conj(p_rows) if conj else p_rows
    C = np.zeros(p_rows.shape[:-2] + (n, L_eff), dtype=complex)
    for d in range(L_eff):
        m = n - d
        C[..., :m, d] = np.sum(weighted[..., :m, : L_eff - d] * other[..., d:, d:], axis=-1)
    return C


def _window_index(rows, L_eff, n, hermitian):
    """Flat indices into ``[C, conj(C), 0]`` band storage for window matrices.

    ``rows`` is (K, L_eq); entry ``(k, i, i')`` of the window matrix is
    ``C(rows[k, i], rows[k, i'])``.
    """
    a = rows[:, :, None]
    b = rows[:, None, :]
    lo = np.minimum(a, b)
    d = np.abs(a - b)
    size = n * L_eff
    idx = lo * L_eff + np.minimum(d, L_eff - 1)
    if hermitian:
        idx = np.where(b < a, idx + size, idx)
    return np.where(d < L_eff, idx, 2 * size)


def _gather_windows(C, index, hermitian):
    B = C.shape[0]
    flat = C.reshape(B, -1)
    parts = [flat, np.conj(flat)] if hermitian else [flat, flat]
    parts.append(np.zeros((B, 1), dtype=C.dtype))
    return np.concatenate(parts, axis=1)[:, index]


def _pad_block(r, p_rows, means, variances, L1, L2):
    """Zero-pad samples (and symbols) so every window stays inside the block."""
    L_eff = p_rows.shape[-1]
    pad_s = [(0, 0)] * (r.ndim - 1) + [(L2, L1)]
    r = np.pad(r, pad_s)
    p_rows = np.pad(p_rows, [(0, 0)] * (p_rows.ndim - 2) + [(L2, L1), (0, 0)])
    means = np.pad(means, pad_s)
    variances = np.pad(variances, pad_s)
    return r, p_rows, means, variances


def equalize(r, p_rows, means, variances, positions, L1, L2, noise_var):
    """Batched SISO MMSE estimates for symbols at sample ``positions``.

    Parameters
    ----------
    r : ndarray (B, n)
    p_rows : ndarray (B, n, L_eff)
        Effective ISI per sample.
    means, variances : ndarray (B, n + L_eff - 1)
        Symbol priors with offset ``L_eff - 1``.  Known symbols have variance 0.
    positions : ndarray (K,)
        Sample indices of the symbols to estimate.

    Returns
    -------
    s_hat, mu, real_var : ndarray (B, K)
    q : ndarray (B, K, L_eq)
        Filters in window order ``[k+L1, ..., k-L2]``.
    """
    r = np.atleast_2d(r)
    p_rows = np.asarray(p_rows)
    if p_rows.ndim == 2:
        p_rows = p_rows[None]
    means = np.atleast_2d(means)
    variances = np.atleast_2d(variances)
    L_eff = p_rows.shape[-1]
    off = L_eff - 1
    r, p_rows, means, variances = _pad_block(r, p_rows, means, variances, L1, L2)
    pos = np.asarray(positions) + L2
    B = r.shape[0]
    L_eq = L1 + L2 + 1

    C = _band_cov(p_rows, variances, conj=True)
    C[..., 0] += noise_var
    Cp = _band_cov(p_rows, variances, conj=False)
    rows = pos[:, None] + L1 - np.arange(L_eq)[None, :]  # (K, L_eq)
    n_pad = r.shape[1]
    M = _gather_windows(C, _window_index(rows, L_eff, n_pad, True), True)

    # p[r] = p_rows[k + L1 - r, L1 - r]
    j = L1 - np.arange(L_eq)
    valid = (j >= 0) & (j < L_eff)
    jj = np.where(valid, j, 0)
    p = p_rows[:, rows, jj[None, :]] * valid
    sk = variances[:, pos + off]
    mk = means[:, pos + off]

    # window system: P Sigma P^H + N0 I + (1 - sigma_k) p p^H
    M += (1.0 - sk)[..., None, None] * p[..., :, None] * p.conj()[..., None, :]
    try:
        q = np.linalg.solve(M, p[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularityError("equalizer system is singular") from exc
    if not np.all(np.isfinite(q)):
        raise SingularityError("equalizer system is singular")
    mu = np.einsum("bki,bki->bk", q.conj(), p).real

    # interference mean per sample, then window and add back the center symbol
    sym = np.arange(n_pad)[:, None] - np.arange(L_eff)[None, :] + off
    interf = np.sum(p_rows * means[:, sym], axis=-1)
    y = (r - interf)[:, rows]
    s_hat = np.einsum("bki,bki->bk", q.conj(), y + p * mk[..., None])

    # Re-part variance of the residual (center symbol removed).  The system
    # matrix equals C0 + p p^H, so q^H C0 q = mu (1 - mu); the pseudo-covariance
    # term needs the pseudo window Cp0 = Cpw - sigma_k p p^T.
    Cpw = _gather_windows(Cp, _window_index(rows, L_eff, n_pad, False), False)
    qc = q.conj()
    pquad = np.einsum("bki,bki->bk", qc, (Cpw @ qc[..., None])[..., 0]).real
    pquad -= sk * np.einsum("bki,bki->bk", qc, p).real ** 2
    real_var = 0.5 * (mu * (1.0 - mu) + pquad)
    return s_hat, mu, real_var, q


class RecursiveMMSE:
    """Sliding-window filter updates in O(L_eq^2) per step.

    The window system without the center term depends only on absolute sample
    indices, so moving from ``k`` to ``k + 1`` drops the oldest sample and adds
    a new one.  Its inverse is downdated/bordered in place and the rank-one
    center term is applied with Sherman-Morrison.  ``flops`` counts
    multiply-adds of the update path.
    """

    def __init__(self, p_rows, variances, noise_var, L1, L2):
        self.p_rows = np.asarray(p_rows)
        self.variances = np.asarray(variances, dtype=float)
        self.noise_var = float(noise_var)
        self.L1, self.L2 = L1, L2
        self.L_eff = self.p_rows.shape[1]
        self.C = _band_cov(self.p_rows, self.variances)
        self.flops = 0
        self._k = None
        self._inv = None

    def _entry(self, a, b):
        d = b - a
        if abs(d) >= self.L_eff:
            return 0.0
        val = self.C[a, d] if d >= 0 else np.conj(self.C[b, -d])
        return val + (self.noise_var if d == 0 else 0.0)

    def _matrix(self, lo, hi):
        idx = np.arange(lo, hi + 1)
        return np.array([[self._entry(a, b) for b in idx] for a in idx])

    def _p_vector(self, k):
        # ascending sample order a = k - L2 .. k + L1, entry p_rows[a, a - k]
        a = np.arange(k - self.L2, k + self.L1 + 1)
        j = a - k
        valid = (j >= 0) & (j < self.L_eff)
        return np.where(valid, self.p_rows[a, np.where(valid, j, 0)], 0.0)

    def step(self, k):
        """Filter for the symbol at sample ``k`` in window order ``[k+L1, ..., k-L2]``."""
        lo, hi = k - self.L2, k + self.L1
        n = self.L1 + self.L2 + 1
        if self._k is None or k != self._k + 1:
            self._inv = np.linalg.inv(self._matrix(lo, hi))
            self.flops += n**3
        else:
            inv = self._inv
            # drop the oldest sample (index 0)
            alpha = inv[0, 0].real
            b = inv[1:, 0]
            inv = inv[1:, 1:] - np.outer(b, b.conj()) / alpha
            # border with the new sample hi
            c = np.array([self._entry(a, hi) for a in range(lo, hi)])
            d = self._entry(hi, hi).real
            u = inv @ c
            s = d - np.vdot(c, u).real
            new = np.empty((n, n), dtype=complex)
            new[:-1, :-1] = inv + np.outer(u, u.conj()) / s
            new[:-1, -1] = -u / s
            new[-1, :-1] = -u.conj() / s
            new[-1, -1] = 1.0 / s
            self._inv = new
            self.flops += 4 * n * n
        self._k = k
        p = self._p_vector(k)
        z = self._inv @ p
        sk = self.variances[k + self.L_eff - 1]
        q = z / (1.0 + (1.0 - sk) * np.vdot(p, z).real)
        self.flops += 2 * n * n
        return q[::-1]


def mmse_filter_recursive(p_rows, variances, noise_var, positions, L1, L2, return_cost=False):
    """Filters for consecutive ``positions`` via :class:`RecursiveMMSE`."""
    rec = RecursiveMMSE(p_rows, variances, noise_var, L1, L2)
    qs = np.array([rec.step(int(k)) for k in positions])
    return (qs, rec.flops) if return_cost else qs


# --- turbo loop -------------------------------------------------------------------------


@dataclass
class DetectionBlock:
    """A batch of equally shaped frame blocks handed to :func:`turbo_detect`.

    Attributes
    ----------
    r : ndarray (B, n)
        Whitened samples of each block.
    taps : ndarray (B, n, L_c + 1)
        Channel track (estimated or true) at each sample.
    prior_mean, prior_var : ndarray (B, n + L_eff - 1)
        Fixed priors for non-data symbols (pilots: value / 0; unknown
        neighbours: 0 / 1).  Entry ``t`` is symbol ``t - L_eff + 1``.
    data_pos : ndarray (N_d,)
        Sample indices of the frame's data symbols, in transmission order.
    perms : ndarray (B, N_d)
        Interleaver of each frame: transmitted bit ``i`` is coded bit ``perms[b, i]``.
    """

    r: np.ndarray
    taps: np.ndarray
    prior_mean: np.ndarray
    prior_var: np.ndarray
    data_pos: np.ndarray
    perms: np.ndarray


@dataclass
class TurboResult:
    info_bits: np.ndarray  # (iterations + 1, B, K)
    posteriors: np.ndarray  # (iterations + 1, B, n_coded) decoder a-posteriori LLRs
    equalizer_llrs: list = field(default_factory=list)


def turbo_detect(block, v, noise_var, code=CodeConfig(), cfg=EqualizerConfig()):
    """Iterate SISO MMSE equalization and APP decoding on a batch of frames.

    Iteration 0 uses zero a-priori LLRs on data; pilots are perfect priors in
    every iteration.  Each iteration equalizes, deinterleaves and depunctures
    the extrinsic LLRs, decodes, forms the decoder extrinsic (posterior minus
    prior), then punctures and interleaves it as the next a-priori input.
    """
    v = np.asarray(v)
    r = np.atleast_2d(block.r)
    taps = np.asarray(block.taps)
    if taps.ndim == 2:
        taps = taps[None]
    B, n = r.shape
    L_c = taps.shape[-1] - 1
    L_eff = v.size + L_c
    off = L_eff - 1
    L1, L2 = cfg.extents(L_eff)
    if L1 + L2 + 1 < L_eff:
        warnings.warn("equalizer window is shorter than the ISI support")
    nv = max(float(noise_var), cfg.min_noise_var)

    p_rows = effective_isi(taps.reshape(-1, L_c + 1), v).reshape(B, n, L_eff)
    data_pos = np.asarray(block.data_pos)
    N_d = data_pos.size
    perms = np.broadcast_to(np.asarray(block.perms), (B, N_d))
    n_coded = N_d * len(code.puncture_mask) // sum(code.puncture_mask)

    means = np.array(block.prior_mean, dtype=float, copy=True)
    variances = np.array(block.prior_var, dtype=float, copy=True)
    apriori = np.zeros((B, N_d))
    bits_out, post_out, eq_out = [], [], []
    rows_b = np.arange(B)[:, None]
    for it in range(cfg.iterations + 1):
        m, s2 = apriori_stats(apriori)
        means[:, data_pos + off] = m
        variances[:, data_pos + off] = s2
        if cfg.recursive_update:
            s_hat, mu, rv = _equalize_recursive(r, p_rows, means, variances, data_pos, L1, L2, nv)
        else:
            s_hat, mu, rv, _ = equalize(r, p_rows, means, variances, data_pos, L1, L2, nv)
        le = extrinsic_llr(s_hat, mu, rv, cfg.llr_cap)
        eq_out.append(le)
        # deinterleave: coded bit perms[i] was sent at position i
        coded = np.empty_like(le)
        coded[rows_b, perms] = le
        la = depuncture(coded, code.puncture_mask, n_coded)
        post, bits, _ = app_decode(la, code)
        ext = np.clip(post - la, -cfg.llr_cap, cfg.llr_cap)
        bits_out.append(bits)
        post_out.append(post)
        apriori = puncture_batch(ext, code.puncture_mask)[rows_b, perms]
    return TurboResult(np.array(bits_out), np.array(post_out), eq_out)


def puncture_batch(x, mask):
    x = np.asarray(x)
    keep = np.resize(np.asarray(mask, dtype=bool), x.shape[-1])
    return x[..., keep]


def _equalize_recursive(r, p_rows, means, variances, positions, L1, L2, nv):
    """Recursive-filter variant of :func:`equalize` (filters only; estimates as usual)."""
    B = r.shape[0]
    L_eff = p_rows.shape[-1]
    rp, pp, mp, vp = _pad_block(r, p_rows, means, variances, L1, L2)
    pos = np.asarray(positions) + L2
    out_s, out_mu, out_v = [], [], []
    for b in range(B):
        qs = mmse_filter_recursive(pp[b], vp[b], nv, pos, L1, L2)
        s_row, mu_row, v_row = [], [], []
        for k, q in zip(pos, qs):
            w = build_window(k, pp[b], mp[b], vp[b], L1, L2, nv)
            r_win = rp[b, k + L1 - np.arange(L1 + L2 + 1)]
            s_row.append(estimate_symbol(w, q, r_win))
            mu_row.append(np.vdot(q, w.p).real)
            v_row.append(real_part_variance(w, q))
        out_s.append(s_row)
        out_mu.append(mu_row)
        out_v.append(v_row)
    return np.array(out_s), np.array(out_mu), np.array(out_v)


class TurboEqualizer(BaseEstimator):
    """Estimator wrapper around :func:`turbo_detect`.

    ``fit`` stores the whitening factor and validates the configuration;
    ``predict`` returns the final-iteration information bits of a
    :class:`DetectionBlock`.
    """

    def __init__(self, v=None, noise_var=1.0, L1=None, L2=None, iterations=2,
                 recursive_update=False, code=CodeConfig()):
        self.v = v
        self.noise_var = noise_var
        self.L1 = L1
        self.L2 = L2
        self.iterations = iterations
        self.recursive_update = recursive_update
        self.code = code

    def fit(self, X=None, y=None):
        if self.v is None:
            raise ParameterError("whitening factor v is required")
        self.v_ = np.asarray(self.v)
        self.config_ = EqualizerConfig(L1=self.L1, L2=self.L2, iterations=self.iterations,
                                       recursive_update=self.recursive_update)
        return self

    def detect(self, block):
        check_is_fitted(self, "v_")
        return turbo_detect(block, self.v_, self.noise_var, self.code, self.config_)

    def predict(self, block):
        return self.detect(block).info_bits[-1]


__all__ = [
    "EqualizerConfig",
    "EqualizerWindow",
    "DetectionBlock",
    "TurboResult",
    "TurboEqualizer",
    "apriori_stats",
    "build_window",
    "effective_isi_at",
    "equalize",
    "estimate_symbol",
    "extrinsic_llr",
    "hard_decision",
    "mmse_filter",
    "mmse_filter_recursive",
    "real_part_variance",
    "turbo_detect",
]
