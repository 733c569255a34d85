"""Command-line entry point: ``ftnsim {design-pilot,mse,ber,se}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .dsp import PulseConfig, make_isi
from .exceptions import ConfigError, ParameterError
from .pilots import PilotSearchSpec, design_pilot, format_pilots, nyquist_baseline_pilot, pilot_mse

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

# flag -> config key, for options shared by mse and ber
_OVERRIDES = {
    "scenario": "scenario",
    "model": "channel_model",
    "tau": "tau",
    "beta": "beta",
    "np": "N_p",
    "nd": "N_d",
    "ebn0": "ebn0_grid_db",
    "iterations": "iterations",
    "superframes": "superframes",
    "seed": "master_seed",
    "interp": "interp",
    "frames": "frames_per_superframe",
    "rate": "code_rate",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_run_options(p):
    p.add_argument("--config", help="key = value config file (see 'Config keys' below)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--scenario", choices=harness.SCENARIOS)
    p.add_argument("--model", choices=harness.CHANNEL_MODELS, help="channel model")
    p.add_argument("--tau", type=float, help="FTN compression factor")
    p.add_argument("--beta", type=float, help="raised-cosine roll-off")
    p.add_argument("--np", type=int, help="pilot symbols per frame")
    p.add_argument("--nd", type=int, help="data symbols per frame")
    p.add_argument("--ebn0", help="comma-separated Eb/N0 grid in dB")
    p.add_argument("--iterations", type=int, help="turbo iterations after the first pass")
    p.add_argument("--superframes", type=int, help="superframes (MSE) or superframe cap (BER)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--interp", choices=harness.INTERP_METHODS, help="model-1 channel tracking")
    p.add_argument("--frames", type=int, help="frames per superframe")
    p.add_argument("--rate", choices=tuple(harness.CODE_MASKS), help="code rate")
    p.add_argument("--known-channel", action="store_true", help="bypass channel estimation (BER)")
    p.add_argument("--out", help="CSV result file (default: <command>_results.csv)")
    p.add_argument("--plot-data", help="plot-data file (default: <out stem>_plot.csv)")


def build_parser():
    keys = ", ".join(harness.valid_keys())
    parser = _Parser(
        prog="ftnsim",
        description="FTN signaling channel estimation, pilot design and turbo detection experiments.",
        epilog=f"Config keys: {keys}.  Worker processes: ${harness.WORKERS_ENV} (default 1).",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design-pilot", help="design a pilot sequence and print it")
    p.add_argument("--np", type=int, default=32, help="pilot length")
    p.add_argument("--tau", type=float, default=0.72)
    p.add_argument("--beta", type=float, default=0.35)
    p.add_argument("--lc", type=int, required=True, help="channel memory L_c")
    p.add_argument("--mode", choices=("auto", "exhaustive", "relaxed"), default="auto")
    p.add_argument("--restarts", type=int, default=10, help="relaxed-search starts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nyquist", action="store_true", help="design under the Nyquist (tau = 1) criterion")
    p.add_argument("--out", help="write the sequence here (one +1/-1 per line)")

    for name, text in (("mse", "channel-estimation MSE sweep"), ("ber", "coded BER sweep")):
        p = sub.add_parser(name, help=text, epilog=f"Config keys: {keys}.")
        _add_run_options(p)

    p = sub.add_parser("se", help="spectral efficiency in bit/s/Hz")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--np", type=int, default=32)
    p.add_argument("--nd", type=int, default=256)
    p.add_argument("--bits-per-symbol", type=int, default=1)
    return parser


def _experiment_config(args):
    overrides = {}
    for flag, key in _OVERRIDES.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = str(val)
    if getattr(args, "known_channel", False):
        overrides["known_channel"] = "true"
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.config:
        return harness.load_config(args.config, overrides)
    return harness.config_from_mapping(overrides)


def _run(args, out):
    cfg = _experiment_config(args)
    result = harness.run_mse_experiment(cfg) if args.command == "mse" else harness.run_ber_experiment(cfg)
    csv_path = Path(args.out or f"{args.command}_results.csv")
    plot_path = Path(args.plot_data or csv_path.with_name(csv_path.stem + "_plot.csv"))
    harness.write_csv(result.rows, csv_path)
    harness.write_plot_data(result.rows, plot_path)
    info = harness.manifest(cfg)
    info.update(csv=str(csv_path), plot_data=str(plot_path), pilots="".join("+" if x > 0 else "-" for x in result.pilots))
    print(json.dumps(info, indent=2), file=out)


def _design(args, out):
    isi = make_isi(PulseConfig(beta=args.beta, tau=args.tau))
    spec = PilotSearchSpec(N_p=args.np, v=isi.v, L_c=args.lc, restarts=args.restarts)
    if args.nyquist:
        s = nyquist_baseline_pilot(spec, mode=args.mode, seed=args.seed)
    else:
        s, _ = design_pilot(spec, mode=args.mode, seed=args.seed)
    text = format_pilots(s)
    if args.out:
        Path(args.out).write_text(text)
    else:
        out.write(text)
    print(f"# unit-noise MSE {pilot_mse(s, spec):.6g}", file=sys.stderr)


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        if args.command == "se":
            se = harness.spectral_efficiency(args.nd, args.np, args.tau, args.beta, args.bits_per_symbol)
            print(f"{se:.4f}", file=out)
        elif args.command == "design-pilot":
            _design(args, out)
        else:
            _run(args, out)
    except (ConfigError, ParameterError) as exc:
        print(f"ftnsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any failure as a runtime error
        print(f"ftnsim: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
