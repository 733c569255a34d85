"""Pilot sequences that minimize the LSSE estimation MSE.

The MSE of the pilot-tail estimator is ``noise_var * tr((V^H T^H T V)^{-1})``;
the noise variance is a common factor, so the minimizer does not depend on it.
BPSK pilots only.  Sequences are compared on the trace term and reported in
canonical sign (first symbol +1), since ``s`` and ``-s`` give the same MSE.
"""

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d, check_int
from .chanest import build_V
from .dsp import PulseConfig, make_isi
from .exceptions import BudgetError, ParameterError, SearchError

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 2**24
_CHUNK = 1 << 14
_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class PilotSearchSpec:
    """Pilot design problem.

    ``v`` is the causal whitening factor and ``L_c`` the channel memory, so the
    effective ISI length is ``len(v) + L_c``.  ``noise_var`` only scales the
    reported MSE.
    """

    N_p: int
    v: tuple
    L_c: int
    noise_var: float = 1.0
    restarts: int = 10
    budget: int = DEFAULT_BUDGET
    alphabet: tuple = (1.0, -1.0)

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(np.asarray(self.v).tolist()))
        check_int(self.N_p, "N_p", minimum=1)
        check_int(self.L_c, "L_c", minimum=0)
        check_int(self.restarts, "restarts", minimum=1)
        if sorted(self.alphabet) != [-1.0, 1.0]:
            raise ParameterError("only the BPSK alphabet (+1, -1) is supported")
        if self.N_p <= self.L_eff:
            raise ParameterError(f"N_p={self.N_p} must exceed L_eff={self.L_eff}")

    @property
    def L_eff(self):
        return len(self.v) + self.L_c

    @property
    def V(self):
        return build_V(np.asarray(self.v), self.L_c)


def batch_trace(S, V, L_eff):
    """``tr((A^H A)^{-1})`` for every row of ``S``; ``inf`` where ``A = T V`` is rank deficient."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    T = np.lib.stride_tricks.sliding_window_view(S, L_eff, axis=1)[..., ::-1]
    # G = V^H (T^T T) V with T real
    R = np.einsum("bma,bmc->bac", T, T)
    G = np.einsum("ai,bac,cj->bij", V.conj(), R, V)
    lam = np.linalg.eigvalsh(G)
    out = np.sum(1.0 / np.where(lam > 0, lam, np.inf), axis=1)
    singular = lam[:, 0] <= 1e-10 * np.maximum(lam[:, -1], 1e-300)
    out[singular] = np.inf
    return out


def pilot_mse(pilots, spec):
    """Closed-form estimation MSE of ``pilots`` (``inf`` when the system is rank deficient)."""
    s = as_1d(pilots, "pilots", dtype=float)
    if s.size != spec.N_p:
        raise ParameterError(f"expected {spec.N_p} pilots, got {s.size}")
    return float(spec.noise_var * batch_trace(s, spec.V, spec.L_eff)[0])


def canonical_sign(pilots):
    s = np.asarray(pilots, dtype=float)
    return -s if s[0] < 0 else s.copy()


def _bits_to_symbols(idx, n_free):
    """Candidates with ``s_0 = +1``; index bits (MSB first) fill positions 1.. in lexicographic order."""
    shifts = np.arange(n_free - 1, -1, -1)
    bits = (idx[:, None] >> shifts) & 1
    syms = 1.0 - 2.0 * bits
    return np.hstack([np.ones((idx.size, 1)), syms])


def exhaustive_search(spec):
    """Global minimizer over ``{+1, -1}^N_p``.

    Only sequences with ``s_0 = +1`` are enumerated (sign symmetry).  Among
    sequences whose MSE is within a relative ``1e-9`` of the best, the first in
    lexicographic order (with +1 before -1) is returned.

    Raises
    ------
    BudgetError
        When ``2**N_p`` exceeds ``spec.budget``; use :func:`relaxed_search`.
    """
    if 2**spec.N_p > spec.budget:
        raise BudgetError(
            f"2**{spec.N_p} candidates exceed the budget {spec.budget}; use relaxed_search"
        )
    V = spec.V
    n_free = spec.N_p - 1
    total = 1 << n_free
    best_f, best_idx = np.inf, None
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        f = batch_trace(_bits_to_symbols(idx, n_free), V, spec.L_eff)
        fmin = f.min()
        if not np.isfinite(fmin):
            continue
        if best_idx is None or fmin < best_f * (1.0 - _TIE_RTOL):
            first = np.flatnonzero(f <= fmin * (1.0 + _TIE_RTOL))[0]
            best_f, best_idx = f[first], idx[first]
    if best_idx is None:
        raise SearchError("every pilot sequence gives a rank-deficient system")
    pilots = _bits_to_symbols(np.array([best_idx]), n_free)[0]
    return pilots, float(spec.noise_var * best_f)


def _trace_and_grad(x, V, L_eff, n_rows, a_idx, m_idx, n_idx):
    T = np.lib.stride_tricks.sliding_window_view(x, L_eff)[:, ::-1]
    A = T @ V
    G = A.conj().T @ A
    try:
        Gi = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros_like(x)
    f = float(np.trace(Gi).real)
    if not np.isfinite(f) or f <= 0:
        return np.inf, np.zeros_like(x)
    # df/ds_n = -2 Re tr(G^-2 A^H dA/ds_n), dA/ds_n = E_n V
    M = V @ Gi @ Gi @ A.conj().T
    grad = np.zeros_like(x)
    np.add.at(grad, n_idx, -2.0 * M[a_idx, m_idx].real)
    return f, grad


def relaxed_objective(spec):
    """``(f, grad)`` callable of the box-relaxed trace objective (unit noise)."""
    V = spec.V
    L_eff = spec.L_eff
    n_rows = spec.N_p - L_eff + 1
    a_idx, m_idx = np.meshgrid(np.arange(L_eff), np.arange(n_rows), indexing="ij")
    a_idx, m_idx = a_idx.ravel(), m_idx.ravel()
    n_idx = L_eff - 1 + m_idx - a_idx
    return lambda x: _trace_and_grad(np.asarray(x, float), V, L_eff, n_rows, a_idx, m_idx, n_idx)


def round_to_alphabet(x):
    """Elementwise sign with zeros mapped to +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def relaxed_search(spec, m=None, seed=0, maxiter=500, gtol=1e-8, trace_log=None):
    """Multi-start box-constrained quasi-Newton search, rounded to BPSK.

    Each of ``m`` starts is drawn uniformly from ``[-1, 1]^N_p`` and minimized
    with L-BFGS-B on the analytic gradient.  Starts that do not converge are
    dropped with a warning.  Returns the rounded candidate with the lowest exact
    MSE.

    ``trace_log``, when a list, receives the objective sequence of each start.
    """
    m = spec.restarts if m is None else check_int(m, "m", minimum=1)
    rng = np.random.default_rng(seed)
    fun = relaxed_objective(spec)
    bounds = [(-1.0, 1.0)] * spec.N_p
    candidates = []
    for start in range(m):
        x0 = rng.uniform(-1.0, 1.0, spec.N_p)
        history = [fun(x0)[0]]
        res = minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            callback=lambda xk: history.append(fun(xk)[0]),
            options={"maxiter": maxiter, "gtol": gtol},
        )
        if trace_log is not None:
            trace_log.append(history)
        if not res.success or not np.isfinite(res.fun):
            warnings.warn(f"relaxed pilot search start {start} did not converge: {res.message}")
            continue
        candidates.append(canonical_sign(round_to_alphabet(res.x)))
    if not candidates:
        raise SearchError("all relaxed-search starts failed")
    f = batch_trace(np.array(candidates), spec.V, spec.L_eff)
    best = int(np.argmin(f))
    if not np.isfinite(f[best]):
        raise SearchError("every rounded candidate is rank deficient")
    return candidates[best], float(spec.noise_var * f[best])


def local_search(pilots, spec, max_sweeps=1000):
    """Best-improvement single-symbol-flip descent from ``pilots``."""
    s = canonical_sign(as_1d(pilots, "pilots", dtype=float))
    V = spec.V
    f = batch_trace(s, V, spec.L_eff)[0]
    flips = 1.0 - 2.0 * np.eye(s.size)
    for _ in range(max_sweeps):
        neigh = s * flips
        fn = batch_trace(neigh, V, spec.L_eff)
        j = int(np.argmin(fn))
        if not fn[j] < f * (1.0 - 1e-12):
            break
        s, f = neigh[j], fn[j]
    return canonical_sign(s), float(spec.noise_var * f)


def design_pilot(spec, mode="auto", m=None, seed=0):
    """Pilot design front door.

    ``exhaustive`` and ``relaxed`` call the matching search; ``auto`` runs the
    exhaustive search when the budget allows and otherwise polishes the
    relaxed result with :func:`local_search`.
    """
    if mode == "exhaustive":
        return exhaustive_search(spec)
    if mode == "relaxed":
        return relaxed_search(spec, m=m, seed=seed)
    if mode == "auto":
        if 2**spec.N_p <= spec.budget:
            return exhaustive_search(spec)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s, _ = relaxed_search(spec, m=m, seed=seed)
        return local_search(s, spec)
    raise ParameterError(f"unknown pilot design mode {mode!r}")


def nyquist_spec(spec):
    """Same problem with the ISI replaced by a unit impulse (``tau = 1``)."""
    delta = np.zeros(len(spec.v))
    delta[0] = 1.0
    return replace(spec, v=tuple(delta))


def nyquist_baseline_pilot(spec, mode="auto", m=None, seed=0):
    """Pilot optimized as if the link were Nyquist (no FTN ISI).

    Symbols that do not affect the Nyquist criterion are set to +1 so the
    result is canonical.
    """
    nspec = nyquist_spec(spec)
    s, f = design_pilot(nspec, mode=mode, m=m, seed=seed)
    s = s.copy()
    for n in range(s.size):
        if s[n] < 0:
            trial = s.copy()
            trial[n] = 1.0
            ft = batch_trace(trial, nspec.V, nspec.L_eff)[0]
            if abs(ft - f / nspec.noise_var) <= 1e-12 * abs(ft):
                s = trial
    return canonical_sign(s)


def format_pilots(pilots):
    return "".join(f"{'+1' if x > 0 else '-1'}\n" for x in pilots)


def parse_pilots(text):
    vals = [float(tok) for tok in text.split()]
    s = np.array(vals)
    if not np.all(np.isin(s, (1.0, -1.0))):
        raise ParameterError("pilot file must contain only +1/-1 values")
    return s


class PilotDesigner(BaseEstimator):
    """Estimator-style wrapper: ``fit`` designs the pilot for the given link.

    Parameters
    ----------
    n_pilots : int
    tau, beta : float
    L_c : int
    L_h : int or None
    mode : {"auto", "exhaustive", "relaxed"}
    restarts : int
    seed : int
    nyquist : bool
        Design under the unit-impulse (Nyquist) criterion instead.
    """

    def __init__(self, n_pilots=32, tau=0.8, beta=0.35, L_c=6, L_h=None, mode="auto",
                 restarts=10, seed=0, nyquist=False, budget=DEFAULT_BUDGET):
        self.n_pilots = n_pilots
        self.tau = tau
        self.beta = beta
        self.L_c = L_c
        self.L_h = L_h
        self.mode = mode
        self.restarts = restarts
        self.seed = seed
        self.nyquist = nyquist
        self.budget = budget

    def fit(self, X=None, y=None):
        isi = make_isi(PulseConfig(beta=self.beta, tau=self.tau), L_h=self.L_h)
        spec = PilotSearchSpec(N_p=self.n_pilots, v=isi.v, L_c=self.L_c,
                               restarts=self.restarts, budget=self.budget)
        if self.nyquist:
            pilots = nyquist_baseline_pilot(spec, mode=self.mode, seed=self.seed)
        else:
            pilots, _ = design_pilot(spec, mode=self.mode, seed=self.seed)
        self.spec_ = spec
        self.v_ = isi.v
        self.pilots_ = pilots
        self.mse_ = pilot_mse(pilots, spec)
        return self

    def score(self, X=None, y=None):
        """Negative unit-noise MSE of the designed pilot (higher is better)."""
        check_is_fitted(self, "pilots_")
        return -self.mse_
