"""Superframe simulation, MSE and BER sweeps, and result files.

A superframe is ``frames_per_superframe`` frames of ``[N_p pilots | N_d data]``
followed by one extra pilot block so the last frame has a closing estimate.

Randomness is derived from ``SeedSequence([master_seed, superframe, stream,
...])`` so every superframe (and every Eb/N0 point inside it) is reproducible
on its own, whatever order or process it runs in.  Channel, data and
interleavers are shared across the Eb/N0 grid; only the noise differs.
"""

import csv
import hashlib
import io
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache

import numpy as np
import scipy

from . import __version__
from .chanest import FrameLayout, LSSEChannelEstimator, interpolate_track_alt, pilot_tails
from .channel import (
    NoiseConfig,
    discretize_profile,
    generate_channel,
    profile_for,
    transmit_receive,
)
from .coding import (
    RATE_HALF_MASK,
    RATE_THREE_QUARTERS_MASK,
    CodeConfig,
    conv_encode,
    map_bpsk,
    puncture,
)
from .dsp import PulseConfig, make_isi
from .exceptions import ConfigError
from .pilots import PilotSearchSpec, design_pilot, nyquist_baseline_pilot, relaxed_search
from .turbo import DetectionBlock, EqualizerConfig, turbo_detect

SCENARIOS = ("F-F", "N-F", "N-N", "Numerical-F")
CHANNEL_MODELS = ("model1", "model2", "model3", "awgn")
INTERP_METHODS = ("linear", "cubic", "spline")
CODE_MASKS = {"1/2": RATE_HALF_MASK, "3/4": RATE_THREE_QUARTERS_MASK}
CSV_HEADER = ("ebno_db", "metric", "iteration", "value", "trials", "stderr")
PLOT_HEADER = ("x", "series", "y", "yerr")
WORKERS_ENV = "FTNSIM_WORKERS"

# seed streams
_BITS, _CHANNEL, _INTERLEAVER, _NOISE = range(4)
_FRAME_CHUNK = 8


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: scenario, link parameters and Monte-Carlo settings.

    ``superframes`` is the number of superframes for MSE runs and the cap for
    BER runs, which stop early once every iteration has ``target_errors`` bit
    errors.  ``scenario`` picks the pilot: ``F-F`` designed for the FTN link,
    ``N-F`` designed as if Nyquist and used under FTN, ``N-N`` Nyquist link
    (``tau = 1``) and pilot, ``Numerical-F`` the raw relaxed-search pilot.
    """

    scenario: str = "F-F"
    channel_model: str = "model2"
    tau: float = 0.72
    beta: float = 0.35
    N_p: int = 32
    N_d: int = 256
    ebn0_grid_db: tuple = (0.0, 10.0, 20.0)
    iterations: int = 2
    superframes: int = 1
    master_seed: int = 0
    interp: str = "linear"
    frames_per_superframe: int = 144
    code_rate: str = "1/2"
    known_channel: bool = False
    target_errors: int = 200
    restarts: int = 10
    pilot_seed: int = 0
    L1: int = None
    L2: int = None

    def __post_init__(self):
        grid = tuple(float(x) for x in np.atleast_1d(self.ebn0_grid_db))
        object.__setattr__(self, "ebn0_grid_db", grid)
        if not grid:
            raise ConfigError("ebn0_grid_db must not be empty")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.channel_model not in CHANNEL_MODELS:
            raise ConfigError(f"channel_model must be one of {CHANNEL_MODELS}")
        if self.interp not in INTERP_METHODS:
            raise ConfigError(f"interp must be one of {INTERP_METHODS}")
        if self.code_rate not in CODE_MASKS:
            raise ConfigError(f"code_rate must be one of {tuple(CODE_MASKS)}")
        if not 0 < self.tau <= 1 or not 0 <= self.beta <= 1:
            raise ConfigError("need 0 < tau <= 1 and 0 <= beta <= 1")
        if self.scenario == "N-N" and self.tau != 1.0:
            raise ConfigError("scenario N-N needs tau = 1")
        for name in ("N_p", "N_d", "superframes", "frames_per_superframe", "target_errors", "restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        L_eff = self.isi.L_h + self.L_c + 1
        if self.N_p < L_eff + self.L_c:
            raise ConfigError(f"N_p={self.N_p} too short: the pilot tail needs N_p >= {L_eff + self.L_c}")

    @property
    def pulse(self):
        return PulseConfig(beta=self.beta, tau=self.tau)

    @property
    def isi(self):
        return _isi(self.tau, self.beta)

    @property
    def profile(self):
        return profile_for(self.channel_model, self.pulse)

    @property
    def L_c(self):
        return discretize_profile(self.profile, self.pulse)[0]

    @property
    def layout(self):
        return FrameLayout(N_p=self.N_p, N_d=self.N_d, L_h=self.isi.L_h, L_c=self.L_c,
                           frames_per_superframe=self.frames_per_superframe)

    @property
    def code(self):
        return CodeConfig(puncture_mask=CODE_MASKS[self.code_rate])

    def noise(self, ebn0_db):
        return NoiseConfig(ebn0_db=ebn0_db, code_rate=self.code.rate)

    def digest(self):
        """Short stable hash of the configuration."""
        return hashlib.sha256(format_config(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    ebno_db: float
    metric: str
    iteration: int
    value: float
    trials: int
    stderr: float = float("nan")

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"{self.metric} value must be non-negative, got {self.value}")


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    pilots: np.ndarray = None

    def select(self, metric, iteration=0):
        return [r for r in self.rows if r.metric == metric and r.iteration == iteration]

    def values(self, metric, iteration=0):
        return np.array([r.value for r in self.select(metric, iteration)])


@lru_cache(maxsize=None)
def _isi(tau, beta):
    return make_isi(PulseConfig(beta=beta, tau=tau))


@lru_cache(maxsize=None)
def _pilots_cached(scenario, N_p, v, L_c, restarts, seed):
    spec = PilotSearchSpec(N_p=N_p, v=v, L_c=L_c, restarts=restarts)
    if scenario in ("F-F", "N-N"):
        s, _ = design_pilot(spec, mode="auto", m=restarts, seed=seed)
    elif scenario == "N-F":
        s = nyquist_baseline_pilot(spec, mode="auto", m=restarts, seed=seed)
    else:
        s, _ = relaxed_search(spec, m=restarts, seed=seed)
    s.setflags(write=False)
    return s


def scenario_pilots(cfg):
    """Pilot sequence used by ``cfg.scenario`` (designs are cached per process)."""
    return _pilots_cached(cfg.scenario, cfg.N_p, tuple(cfg.isi.v), cfg.L_c, cfg.restarts, cfg.pilot_seed)


def spectral_efficiency(N_d, N_p, tau, beta, bits_per_symbol=1):
    """``N_d / (N_d + N_p) * log2(M) / (tau (1 + beta))`` in bit/s/Hz."""
    if N_d < 0 or N_p < 0 or N_d + N_p == 0:
        raise ConfigError("need N_d, N_p >= 0 with N_d + N_p > 0")
    if not 0 < tau <= 1 or beta < 0:
        raise ConfigError("need 0 < tau <= 1 and beta >= 0")
    return N_d / (N_d + N_p) * bits_per_symbol / (tau * (1.0 + beta))


def seed_for(master_seed, *key):
    return np.random.SeedSequence([int(master_seed), *map(int, key)])


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def _map(fn, args):
    workers = _workers()
    if workers == 1 or len(args) == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*args)))


# --- superframe construction ------------------------------------------------------------


def superframe_symbols(layout, pilots, data):
    """Interleave pilot blocks with ``data`` (frames x N_d) and close with a pilot block."""
    F = data.shape[0]
    frames = np.concatenate([np.broadcast_to(pilots, (F, layout.N_p)), data], axis=1)
    return np.concatenate([frames.reshape(-1), pilots])


def _clean_superframe(cfg, sf, symbols):
    layout = cfg.layout
    chan = generate_channel(cfg.profile, cfg.pulse, symbols.size, layout.N, seed_for(cfg.master_seed, sf, _CHANNEL))
    clean = transmit_receive(symbols, chan, cfg.isi.v, 0.0)
    return chan.taps, clean


def _add_noise(cfg, sf, point, clean):
    noise = cfg.noise(cfg.ebn0_grid_db[point])
    rng = np.random.default_rng(seed_for(cfg.master_seed, sf, _NOISE, point))
    w = noise.sigma * (rng.standard_normal(clean.size) + 1j * rng.standard_normal(clean.size))
    return clean + w, noise.noise_var


def _estimator(cfg, pilots):
    return LSSEChannelEstimator(pilots=pilots, v=cfg.isi.v, L_c=cfg.L_c).fit()


# --- MSE --------------------------------------------------------------------------------


def _mse_superframe(cfg, sf, pilots):
    """Per-frame squared estimation errors at each grid point, shape (points, frames)."""
    layout = cfg.layout
    F = layout.frames_per_superframe
    rng = np.random.default_rng(seed_for(cfg.master_seed, sf, _BITS))
    data = map_bpsk(rng.integers(0, 2, (F, layout.N_d)))
    symbols = superframe_symbols(layout, pilots, data)
    taps, clean = _clean_superframe(cfg, sf, symbols)
    est_model = _estimator(cfg, pilots)
    out = []
    for point in range(len(cfg.ebn0_grid_db)):
        r, _ = _add_noise(cfg, sf, point, clean)
        est = est_model.transform(pilot_tails(r, layout, n_frames=F + 1))
        if cfg.profile.time_varying:
            track = interpolate_track_alt(est, layout.N_d, cfg.interp)
            idx = np.arange(F)[:, None] * layout.N + layout.N_p + np.arange(layout.N_d)
            err = np.sum(np.abs(track - taps[idx]) ** 2, axis=-1).mean(axis=-1)
        else:
            tail = np.arange(F + 1) * layout.N + layout.discard_head
            err = np.sum(np.abs(est - taps[tail]) ** 2, axis=-1)
        out.append(err)
    return np.array(out)


def run_mse_experiment(cfg):
    """Simulated and theoretical channel-estimation MSE over the Eb/N0 grid.

    For block-constant channels the error is taken at the pilot tail of every
    frame; for the time-varying model it is the interpolated track against the
    true taps, averaged over data positions.
    """
    pilots = scenario_pilots(cfg)
    est = _estimator(cfg, pilots)
    errs = _map(_mse_superframe, [(cfg, sf, pilots) for sf in range(cfg.superframes)])
    errs = np.concatenate(errs, axis=1)
    rows = []
    for point, ebn0 in enumerate(cfg.ebn0_grid_db):
        e = errs[point]
        n = e.size
        rows.append(ResultRow(ebn0, "mse_sim", 0, float(e.mean()), n, float(e.std(ddof=1) / np.sqrt(n))))
        theory = est.theoretical_mse(cfg.noise(ebn0).noise_var)
        rows.append(ResultRow(ebn0, "mse_theory", 0, theory, 0))
    return RunResult(cfg, rows, np.array(pilots))


# --- BER --------------------------------------------------------------------------------


def frame_payload(cfg, sf):
    """Information bits, transmitted data symbols and interleavers of one superframe."""
    layout = cfg.layout
    code = cfg.code
    F = layout.frames_per_superframe
    K = code.info_length(layout.N_d)
    rng = np.random.default_rng(seed_for(cfg.master_seed, sf, _BITS))
    info = rng.integers(0, 2, (F, K)).astype(np.int8)
    irng = np.random.default_rng(seed_for(cfg.master_seed, sf, _INTERLEAVER))
    perms = np.array([irng.permutation(layout.N_d) for _ in range(F)])
    coded = np.array([puncture(conv_encode(b, code), code.puncture_mask) for b in info])
    sent = np.take_along_axis(coded, perms, axis=1)
    return info, map_bpsk(sent), perms


def _track(cfg, est, taps, frames):
    """Channel track over each frame's detection block ``[iN, (i+1)N + N_p)``."""
    layout = cfg.layout
    N, N_p, N_d = layout.N, layout.N_p, layout.N_d
    if cfg.known_channel:
        idx = frames[:, None] * N + np.arange(N + N_p)
        return taps[idx]
    cur, nxt = est[frames], est[frames + 1]
    head = np.broadcast_to(cur[:, None], (frames.size, N_p, cur.shape[-1]))
    tail = np.broadcast_to(nxt[:, None], (frames.size, N_p, cur.shape[-1]))
    if cfg.profile.time_varying:
        mid = interpolate_track_alt(est, N_d, cfg.interp)[frames]
    else:
        mid = np.broadcast_to(cur[:, None], (frames.size, N_d, cur.shape[-1]))
    return np.concatenate([head, mid, tail], axis=1)


def detection_blocks(cfg, r, pilots, track, perms, frames):
    """Assemble :class:`DetectionBlock` inputs for the given frame indices."""
    layout = cfg.layout
    N, N_p = layout.N, layout.N_p
    off = layout.L_eff - 1
    n = N + N_p
    B = frames.size
    r_blk = r[frames[:, None] * N + np.arange(n)]
    mean = np.zeros((B, n + off))
    var = np.zeros((B, n + off))
    var[:, :off] = np.where(frames[:, None] > 0, 1.0, 0.0)  # tail of the previous frame's data
    mean[:, off : off + N_p] = pilots
    mean[:, off + N : off + N + N_p] = pilots
    return DetectionBlock(
        r=r_blk, taps=track, prior_mean=mean, prior_var=var,
        data_pos=N_p + np.arange(layout.N_d), perms=perms[frames],
    )


def _ber_superframe(cfg, sf, pilots, points=None):
    """Per-frame bit-error statistics for one superframe.

    Returns ``(sum, sum of squares)`` of the per-frame error counts, each of
    shape (points, iterations + 1), and the number of frames.
    """
    layout = cfg.layout
    F = layout.frames_per_superframe
    info, data, perms = frame_payload(cfg, sf)
    symbols = superframe_symbols(layout, pilots, data)
    taps, clean = _clean_superframe(cfg, sf, symbols)
    est_model = None if cfg.known_channel else _estimator(cfg, pilots)
    eq = EqualizerConfig(L1=cfg.L1, L2=cfg.L2, iterations=cfg.iterations)
    points = range(len(cfg.ebn0_grid_db)) if points is None else points
    errors = np.zeros((len(points), cfg.iterations + 1), dtype=np.int64)
    squares = np.zeros_like(errors)
    for j, point in enumerate(points):
        r, noise_var = _add_noise(cfg, sf, point, clean)
        est = None
        if est_model is not None:
            est = est_model.transform(pilot_tails(r, layout, n_frames=F + 1))
            # channel-estimate error enters the equalizer as extra white noise
            noise_var = noise_var + est_model.isi_error_var(noise_var)
        for start in range(0, F, _FRAME_CHUNK):
            frames = np.arange(start, min(start + _FRAME_CHUNK, F))
            track = _track(cfg, est, taps, frames)
            blk = detection_blocks(cfg, r, pilots, track, perms, frames)
            res = turbo_detect(blk, cfg.isi.v, noise_var, cfg.code, eq)
            per_frame = np.sum(res.info_bits != info[frames], axis=2)
            errors[j] += per_frame.sum(axis=1)
            squares[j] += (per_frame**2).sum(axis=1)
    return errors, squares, F


def run_ber_experiment(cfg):
    """Coded BER per iteration over the Eb/N0 grid.

    Superframes run in index order until every iteration at every point has
    ``target_errors`` errors or ``cfg.superframes`` is reached; each point stops
    independently but the stopping decision only depends on completed
    superframes, so results do not depend on the worker count.
    """
    pilots = scenario_pilots(cfg)
    n_points = len(cfg.ebn0_grid_db)
    K = cfg.code.info_length(cfg.N_d)
    errors = np.zeros((n_points, cfg.iterations + 1), dtype=np.int64)
    squares = np.zeros_like(errors)
    frames = np.zeros(n_points, dtype=np.int64)
    active = list(range(n_points))
    wave = _workers()
    sf = 0
    while active and sf < cfg.superframes:
        batch = list(range(sf, min(sf + wave, cfg.superframes)))
        results = _map(_ber_superframe, [(cfg, s, pilots, tuple(active)) for s in batch])
        for e, e2, nf in results:
            if not active:
                break
            for j, p in enumerate(active):
                errors[p] += e[j]
                squares[p] += e2[j]
                frames[p] += nf
            active = [p for p in active if errors[p].min() < cfg.target_errors]
        sf = batch[-1] + 1
    rows = []
    for p, ebn0 in enumerate(cfg.ebn0_grid_db):
        n = frames[p]
        for it in range(cfg.iterations + 1):
            mean = errors[p, it] / n
            var = max(squares[p, it] / n - mean**2, 0.0) * n / max(n - 1, 1)
            # frames are the independent trials; errors cluster inside a frame
            rows.append(ResultRow(ebn0, "ber", it, float(mean / K), int(n * K), float(np.sqrt(var / n) / K)))
    return RunResult(cfg, rows, np.array(pilots))


# --- result files -----------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_csv(rows, path_or_buf):
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(r.ebno_db), r.metric, r.iteration, _fmt(r.value), r.trials, _fmt(r.stderr)])
    finally:
        if own:
            fh.close()


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != CSV_HEADER:
            raise ConfigError(f"unexpected CSV header {reader.fieldnames}")
        return [
            ResultRow(float(d["ebno_db"]), d["metric"], int(d["iteration"]), float(d["value"]),
                      int(d["trials"]), float(d["stderr"]))
            for d in reader
        ]


def write_plot_data(rows, path):
    """``x, series, y, yerr`` sidecar; one series per metric and iteration."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for r in rows:
            series = r.metric if r.metric != "ber" else f"ber_iter{r.iteration}"
            w.writerow([_fmt(r.ebno_db), series, _fmt(r.value), _fmt(r.stderr)])


# --- config files -----------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_INT_FIELDS = {"N_p", "N_d", "iterations", "superframes", "master_seed", "frames_per_superframe",
               "target_errors", "restarts", "pilot_seed", "L1", "L2"}
_FLOAT_FIELDS = {"tau", "beta"}
_BOOL_FIELDS = {"known_channel"}


def valid_keys():
    return tuple(_FIELD_TYPES)


def _convert(key, text):
    text = str(text).strip()
    try:
        if key in _INT_FIELDS:
            return None if text.lower() in ("", "none") else int(text)
        if key in _FLOAT_FIELDS:
            return float(text)
        if key in _BOOL_FIELDS:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if key == "ebn0_grid_db":
            return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_config_text(text):
    """``key = value`` lines (``#`` comments) to a dict of raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def config_from_mapping(mapping):
    unknown = sorted(set(mapping) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}; valid keys: {', '.join(valid_keys())}")
    return ExperimentConfig(**{k: _convert(k, v) for k, v in mapping.items()})


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            raw = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw.update(overrides or {})
    return config_from_mapping(raw)


def format_config(cfg):
    lines = []
    for k, v in asdict(cfg).items():
        if isinstance(v, tuple):
            v = ", ".join(_fmt(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def manifest(cfg):
    return {
        "config_hash": cfg.digest(),
        "master_seed": cfg.master_seed,
        "ftnsim": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "argv": " ".join(sys.argv),
    }


def rows_to_text(rows):
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()
