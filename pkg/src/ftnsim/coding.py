"""Convolutional coding, puncturing, interleaving and APP decoding.

LLR convention used throughout the package: ``L = log P(bit=0) / P(bit=1)``,
so a positive value favours bit 0, and BPSK maps bit 0 to +1 and bit 1 to -1.
A hard decision is therefore ``bit = (L < 0)`` and ``sign(L)`` equals the
BPSK symbol.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._validation import as_1d, check_bits, check_int
from .exceptions import FramingError, ParameterError

RATE_HALF_MASK = (1, 1)
RATE_THREE_QUARTERS_MASK = (1, 1, 1, 0, 0, 1)


@dataclass(frozen=True)
class CodeConfig:
    """Feed-forward rate-1/n convolutional code.

    Generators are integers whose most significant of ``constraint_length``
    bits taps the current input; ``(0x5b, 0x79)`` is the (133, 171) octal
    pair.  The puncture mask is applied cyclically to the serialized output
    ``c0[0], c1[0], c0[1], c1[1], ...``.
    """

    constraint_length: int = 7
    generators: tuple = (0x5B, 0x79)
    puncture_mask: tuple = RATE_HALF_MASK
    terminated: bool = True

    def __post_init__(self):
        K = check_int(self.constraint_length, "constraint_length", minimum=2)
        gens = tuple(int(g) for g in self.generators)
        if not gens or any(g <= 0 or g >= 1 << K for g in gens):
            raise ParameterError(f"generators must be nonzero and fit in {K} bits")
        mask = tuple(int(m) for m in self.puncture_mask)
        if not mask or any(m not in (0, 1) for m in mask) or sum(mask) == 0:
            raise ParameterError("puncture mask must be a non-empty 0/1 pattern with a 1")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "puncture_mask", mask)

    @property
    def n_out(self):
        return len(self.generators)

    @property
    def memory(self):
        return self.constraint_length - 1

    @property
    def n_states(self):
        return 1 << self.memory

    @property
    def rate(self):
        """Code rate after puncturing (termination ignored)."""
        return len(self.puncture_mask) / (self.n_out * sum(self.puncture_mask))

    def info_length(self, n_transmitted):
        """Information bits per block that fill exactly ``n_transmitted`` coded bits."""
        mask = self.puncture_mask
        full, rem = divmod(n_transmitted * len(mask), sum(mask))
        if rem or full % len(mask) or full % self.n_out:
            raise FramingError(f"{n_transmitted} transmitted bits do not fit mask {mask}")
        k = full // self.n_out - (self.memory if self.terminated else 0)
        if k < 1:
            raise FramingError(f"{n_transmitted} coded bits leave no room for information")
        return k

    @cached_property
    def trellis(self):
        return _Trellis(self)


class _Trellis:
    """Next-state / output tables. State bit ``m-1`` is the most recent input."""

    def __init__(self, code):
        m = code.memory
        S = code.n_states
        states = np.arange(S)
        self.next_state = np.empty((S, 2), dtype=np.int64)
        self.outputs = np.empty((S, 2, code.n_out), dtype=np.int8)
        for u in (0, 1):
            reg = (u << m) | states
            self.next_state[:, u] = reg >> 1
            for i, g in enumerate(code.generators):
                self.outputs[:, u, i] = [bin(g & r).count("1") & 1 for r in reg]
        # every next state has two predecessors: prev = ((ns << 1) & mask) | b
        ns = np.arange(S)
        self.prev_state = np.stack([((ns << 1) & (S - 1)) | b for b in (0, 1)], axis=1)
        self.prev_input = ns >> (m - 1) if m >= 1 else np.zeros(S, dtype=np.int64)
        # BPSK-valued sign (+1 for bit 0) for each branch output
        self.signs = 1.0 - 2.0 * self.outputs


def conv_encode(bits, code=CodeConfig()):
    """Encode ``bits``; appends ``constraint_length - 1`` flush zeros when terminated.

    Returns the serialized rate-1/n stream (before puncturing).
    """
    u = check_bits(bits)
    if code.terminated:
        u = np.concatenate([u, np.zeros(code.memory, dtype=np.int8)])
    trellis = code.trellis
    out = np.empty((u.size, code.n_out), dtype=np.int8)
    state = 0
    for t, b in enumerate(u):
        out[t] = trellis.outputs[state, b]
        state = trellis.next_state[state, b]
    return out.reshape(-1)


def puncture(coded, mask=RATE_HALF_MASK):
    """Keep the positions where the cyclically repeated ``mask`` is 1."""
    coded = as_1d(coded, "coded")
    keep = _mask_for(coded.size, mask)
    return coded[keep]


def depuncture(llrs, mask=RATE_HALF_MASK, n_coded=None):
    """Re-insert zero LLRs at the discarded positions.

    ``n_coded`` is the full (unpunctured) length; inferred from the mask period
    when omitted.
    """
    llrs = np.asarray(llrs, dtype=float)
    mask = tuple(mask)
    kept_per_period = sum(mask)
    if n_coded is None:
        periods, rem = divmod(llrs.shape[-1], kept_per_period)
        if rem:
            raise FramingError(f"{llrs.shape[-1]} LLRs is not a whole number of mask periods")
        n_coded = periods * len(mask)
    keep = _mask_for(n_coded, mask)
    if keep.sum() != llrs.shape[-1]:
        raise FramingError(f"expected {keep.sum()} surviving LLRs, got {llrs.shape[-1]}")
    out = np.zeros(llrs.shape[:-1] + (n_coded,))
    out[..., keep] = llrs
    return out


def _mask_for(n, mask):
    mask = np.asarray(mask, dtype=bool)
    reps = -(-n // mask.size)
    return np.tile(mask, reps)[:n]


def interleaver(n, seed):
    """Seeded uniform random permutation of ``range(n)``."""
    return np.random.default_rng(seed).permutation(check_int(n, "n", minimum=1))


def interleave(seq, seed):
    seq = np.asarray(seq)
    return seq[..., interleaver(seq.shape[-1], seed)]


def deinterleave(seq, seed):
    seq = np.asarray(seq)
    perm = interleaver(seq.shape[-1], seed)
    out = np.empty_like(seq)
    out[..., perm] = seq
    return out


def map_bpsk(bits):
    """0 -> +1, 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def hard_decision(llrs):
    """Bits from LLRs under the positive-means-zero convention (ties go to 0)."""
    return (np.asarray(llrs) < 0).astype(np.int8)


def app_decode(apriori, code=CodeConfig()):
    """Log-domain BCJR (exact Jacobian logarithm) for a terminated codeword.

    Parameters
    ----------
    apriori : array_like, shape (..., n_coded)
        Depunctured channel/a-priori LLRs of the serialized coded bits.  Leading
        axes are independent codewords decoded together.
    code : CodeConfig

    Returns
    -------
    posterior : ndarray, shape (..., n_coded)
        A-posteriori LLRs of the coded bits (prior included).
    info_bits : ndarray of int8, shape (..., n_info)
        Hard decisions on the information-bit posteriors.
    info_llrs : ndarray, shape (..., n_info)
    """
    L = np.asarray(apriori, dtype=float)
    if not np.all(np.isfinite(L)):
        raise ParameterError("a-priori LLRs must be finite")
    n = code.n_out
    if L.shape[-1] % n:
        raise FramingError(f"coded length {L.shape[-1]} is not a multiple of {n}")
    batch_shape = L.shape[:-1]
    steps = L.shape[-1] // n
    n_info = steps - (code.memory if code.terminated else 0)
    if n_info < 1:
        raise FramingError("codeword shorter than the encoder memory")
    L = L.reshape(-1, steps, n)
    B = L.shape[0]
    tr = code.trellis
    S = code.n_states

    # gamma[b, t, s, u] = sum_i sign(c_i) L_i / 2
    gamma = 0.5 * np.einsum("bti,sui->btsu", L, tr.signs)
    if code.terminated:
        gamma[:, n_info:, :, 1] = -np.inf

    alpha = np.full((B, steps + 1, S), -np.inf)
    alpha[:, 0, 0] = 0.0
    beta = np.full((B, steps + 1, S), -np.inf)
    if code.terminated:
        beta[:, steps, 0] = 0.0
    else:
        beta[:, steps, :] = 0.0

    p0, p1 = tr.prev_state[:, 0], tr.prev_state[:, 1]
    u_in = tr.prev_input
    nxt0, nxt1 = tr.next_state[:, 0], tr.next_state[:, 1]
    for t in range(steps):
        a = alpha[:, t]
        g = gamma[:, t]
        alpha[:, t + 1] = np.logaddexp(a[:, p0] + g[:, p0, u_in], a[:, p1] + g[:, p1, u_in])
        alpha[:, t + 1] -= alpha[:, t + 1].max(axis=1, keepdims=True)
    for t in range(steps - 1, -1, -1):
        b = beta[:, t + 1]
        g = gamma[:, t]
        beta[:, t] = np.logaddexp(b[:, nxt0] + g[:, :, 0], b[:, nxt1] + g[:, :, 1])
        beta[:, t] -= beta[:, t].max(axis=1, keepdims=True)

    # branch metrics m[b, t, s, u]
    metric = alpha[:, :-1, :, None] + gamma + beta[:, 1:][:, :, tr.next_state]
    info_llr = _lse(metric[..., 0], axis=-1) - _lse(metric[..., 1], axis=-1)
    post = np.empty((B, steps, n))
    flat = metric.reshape(B, steps, S * 2)
    for i in range(n):
        zero = (tr.outputs[:, :, i] == 0).reshape(-1)
        post[:, :, i] = _lse(flat[..., zero], axis=-1) - _lse(flat[..., ~zero], axis=-1)

    info_llr = info_llr[:, :n_info]
    post = post.reshape(batch_shape + (steps * n,))
    info_llr = info_llr.reshape(batch_shape + (n_info,))
    return post, hard_decision(info_llr), info_llr


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))
