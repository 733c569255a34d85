"""LSSE channel estimation from the useful pilot tail, and channel tracking.

Frame layout (indices inside one frame of ``N = N_p + N_d`` symbols)::

    [0, L_h + L_c)        pilot head, hit by previous-frame data -> discarded
    [L_h + L_c, N_p)      useful pilot tail, one row of T each
    [N_p, N)              data

With ``v`` holding ``L_h + 1`` taps the effective ISI spans ``L_eff = L_h + L_c + 1``
symbols, so the tail gives ``N_p - L_eff + 1`` equations in ``L_c + 1`` unknowns.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d, check_int
from .exceptions import ParameterError, RankError

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class FrameLayout:
    N_p: int = 32
    N_d: int = 256
    L_h: int = 5
    L_c: int = 7
    frames_per_superframe: int = 144

    def __post_init__(self):
        for name in ("N_p", "N_d", "frames_per_superframe"):
            check_int(getattr(self, name), name, minimum=1)
        check_int(self.L_h, "L_h", minimum=0)
        check_int(self.L_c, "L_c", minimum=0)
        if self.N_p <= self.L_eff:
            raise ParameterError(f"N_p={self.N_p} must exceed L_eff={self.L_eff}")

    @property
    def L_eff(self):
        return self.L_h + self.L_c + 1

    @property
    def discard_head(self):
        return self.L_h + self.L_c

    @property
    def N(self):
        return self.N_p + self.N_d

    @property
    def n_useful(self):
        return self.N_p - self.discard_head

    @property
    def superframe_length(self):
        """Symbols per superframe, including the trailing pilot block."""
        return self.frames_per_superframe * self.N + self.N_p


def build_T(pilots, L_eff):
    """Pilot matrix; row ``m`` is ``[s[L_eff-1+m], s[L_eff-2+m], ..., s[m]]``."""
    s = as_1d(pilots, "pilots")
    L_eff = check_int(L_eff, "L_eff", minimum=1)
    if s.size <= L_eff:
        raise ParameterError(f"need more than L_eff={L_eff} pilots, got {s.size}")
    windows = np.lib.stride_tricks.sliding_window_view(s, L_eff)
    return windows[:, ::-1].copy()


def build_V(v, L_c):
    """``(len(v) + L_c) x (L_c + 1)`` matrix whose column ``l`` is ``v`` shifted down by ``l``."""
    v = as_1d(v, "v")
    L_c = check_int(L_c, "L_c", minimum=0)
    V = np.zeros((v.size + L_c, L_c + 1), dtype=np.result_type(v, float))
    for l in range(L_c + 1):
        V[l : l + v.size, l] = v
    return V


def _qr_checked(A):
    Q, R = np.linalg.qr(A)
    d = np.abs(np.diag(R))
    bad = np.flatnonzero(d <= _RANK_TOL * max(d.max(initial=0.0), 1e-300))
    if A.shape[0] < A.shape[1] or bad.size:
        dim = int(bad[0]) if bad.size else A.shape[0]
        raise RankError(
            f"TV ({A.shape[0]}x{A.shape[1]}) is rank deficient at column {dim}", deficient_dim=dim
        )
    return Q, R


def lsse_estimate(r_p, T, V):
    """Least-squares channel taps ``argmin_c ||r_p - T V c||^2`` via QR."""
    A = np.asarray(T) @ np.asarray(V)
    r_p = np.asarray(r_p)
    if r_p.shape[-1] != A.shape[0]:
        raise ParameterError(f"r_p has {r_p.shape[-1]} samples, T has {A.shape[0]} rows")
    Q, R = _qr_checked(A)
    return np.linalg.solve(R, Q.conj().T @ r_p.T).T


def theoretical_mse(T, V, noise_var):
    """``noise_var * tr(((TV)^H TV)^{-1})``; ``noise_var`` is ``E|w|^2``."""
    A = np.asarray(T) @ np.asarray(V)
    _, R = _qr_checked(A)
    Rinv = np.linalg.inv(R)
    return float(noise_var * np.sum(np.abs(Rinv) ** 2))


def pilot_tails(r, layout, n_frames=None, offset=0):
    """Stack the useful pilot-tail samples of consecutive frames, shape ``(frames, n_useful)``."""
    r = np.asarray(r)
    if n_frames is None:
        n_frames = (r.size - offset - layout.N_p) // layout.N + 1
    starts = offset + np.arange(n_frames) * layout.N + layout.discard_head
    return r[starts[:, None] + np.arange(layout.n_useful)]


def interpolate_track(c_i, c_next, N_d, include_end=False):
    """Linear track ``c_i + k (c_next - c_i) / N_d`` for data symbols ``k = 0..N_d-1``.

    With ``include_end`` the row ``k = N_d`` (equal to ``c_next``) is appended.
    """
    c_i = np.asarray(c_i)
    c_next = np.asarray(c_next)
    if c_i.shape != c_next.shape:
        raise ParameterError("channel vectors must have the same shape")
    N_d = check_int(N_d, "N_d", minimum=1)
    k = np.arange(N_d + 1 if include_end else N_d)
    track = c_i + np.multiply.outer(k, c_next - c_i) / N_d
    if include_end:
        track[-1] = c_next
    return track


def interpolate_track_alt(estimates, N_d, method="linear"):
    """Track through per-frame estimates placed every ``N_d`` data symbols.

    Parameters
    ----------
    estimates : array_like, shape (K, L_c + 1)
        Pilot estimates of ``K`` consecutive frames (``K >= 2``; 4 or more for
        the cubic methods to differ from linear).
    N_d : int
    method : {"linear", "cubic", "spline"}
        ``cubic`` is uniform Catmull-Rom with linearly extrapolated end knots;
        ``spline`` is a natural cubic spline.

    Returns
    -------
    ndarray, shape (K - 1, N_d, L_c + 1)
        Track at each data symbol of the first ``K - 1`` frames.
    """
    est = np.asarray(estimates)
    if est.ndim == 1:
        est = est[:, None]
    K = est.shape[0]
    if K < 2:
        raise ParameterError("need at least two knots")
    N_d = check_int(N_d, "N_d", minimum=1)
    x = np.arange(K - 1)[:, None] + np.arange(N_d)[None, :] / N_d
    if method == "linear":
        i = x.astype(int)
        f = (x - i)[..., None]
        return est[i] + f * (est[i + 1] - est[i])
    if method == "cubic":
        pad = np.concatenate([2 * est[:1] - est[1:2], est, 2 * est[-1:] - est[-2:-1]])
        i = x.astype(int)
        t = (x - i)[..., None]
        p0, p1, p2, p3 = pad[i], pad[i + 1], pad[i + 2], pad[i + 3]
        return 0.5 * (
            2 * p1
            + (p2 - p0) * t
            + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2
            + (3 * p1 - p0 - 3 * p2 + p3) * t**3
        )
    if method == "spline":
        cs = CubicSpline(np.arange(K), est, axis=0, bc_type="natural")
        return cs(x)
    raise ParameterError(f"unknown interpolation method {method!r}")


class LSSEChannelEstimator(TransformerMixin, BaseEstimator):
    """Pilot-tail least-squares estimator with an offline-factored system.

    ``fit`` builds ``T``, ``V`` and the QR factors of ``TV``; ``transform``
    maps rows of useful pilot-tail samples to channel estimates.

    Parameters
    ----------
    pilots : array_like
        The ``N_p`` pilot symbols.
    v : array_like
        Causal whitening factor (``L_h + 1`` taps).
    L_c : int
        Channel memory.
    """

    def __init__(self, pilots=None, v=None, L_c=0):
        self.pilots = pilots
        self.v = v
        self.L_c = L_c

    def fit(self, X=None, y=None):
        if self.pilots is None or self.v is None:
            raise ParameterError("pilots and v are required")
        v = as_1d(self.v, "v")
        L_eff = v.size + self.L_c
        self.T_ = build_T(self.pilots, L_eff)
        self.V_ = build_V(v, self.L_c)
        self.A_ = self.T_ @ self.V_
        Q, R = _qr_checked(self.A_)
        self.solver_ = np.linalg.solve(R, Q.conj().T)
        self.n_features_in_ = self.A_.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "solver_")
        X = np.asarray(X)
        if X.shape[-1] != self.n_features_in_:
            raise ParameterError(f"expected {self.n_features_in_} tail samples, got {X.shape[-1]}")
        return X @ self.solver_.T

    def theoretical_mse(self, noise_var):
        check_is_fitted(self, "solver_")
        return float(noise_var * np.sum(np.abs(self.solver_) ** 2))

    def isi_error_var(self, noise_var):
        """Expected ``sum_j |p_hat_j - p_j|^2`` of the effective ISI built from the estimate."""
        check_is_fitted(self, "solver_")
        return float(noise_var * np.sum(np.abs(self.V_ @ self.solver_) ** 2))
