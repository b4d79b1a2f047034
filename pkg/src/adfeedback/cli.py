"""``simulate`` command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .channel import MobilityProfile, generate_trajectory
from .codec import (CodecConfig, CodecError, decode_matrix_stream, encode_matrix_stream,
                    read_channel_bitstream, write_bitstream)
from .link import NumericError
from .svd import (UserLayout, decode_singular_stream, encode_singular_stream, read_singular_bitstream,
                  write_singular_bitstream)

log = logging.getLogger("adfeedback")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

JSON_EXPERIMENTS = ("codebook_table", "haar_moments", "overhead_table")


def _experiment_parser(sub, name):
    p = sub.add_parser(name, help=f"run the {name} experiment")
    p.add_argument("--config", required=True, help="JSON experiment spec")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="override the config's seed list")
    return p


def _channel_args(p):
    p.add_argument("--speed", type=float, default=10.0, help="km/h")
    p.add_argument("--dims", type=int, nargs=2, default=(4, 8), metavar=("M", "N"))
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sample-rate", type=float, default=200.0)
    p.add_argument("--out", required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="simulate", description="Adaptive differential CSI feedback simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ex.EXPERIMENTS:
        _experiment_parser(sub, name)

    p = sub.add_parser("trajectory", help="dump a channel trajectory as CSV")
    _channel_args(p)

    p = sub.add_parser("encode", help="encode a generated trajectory to a bitstream file")
    _channel_args(p)
    p.add_argument("--scheme", choices=("channel", "svd"), default="channel")
    p.add_argument("--mode", choices=("rls", "lls"), default="rls")
    p.add_argument("--n-rx", type=int, nargs="+", default=None, help="per-user receive antennas (svd)")
    p.add_argument("--n-streams", type=int, nargs="+", default=None, help="per-user streams (svd)")

    p = sub.add_parser("decode", help="decode a bitstream file to reconstructed CSI")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("rls", "lls"), default="rls")
    p.add_argument("--out", required=True)
    return parser


def run_experiment(args):
    spec = ex.load_spec(args.config, args.command)
    if args.seed is not None:
        spec = ex.with_seed(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runner = ex.RUNNERS[args.command]
    log.info("running %s", args.command)
    result = runner(spec, threads=args.threads)
    name = spec.output or args.command
    if args.command in JSON_EXPERIMENTS:
        (out / f"{name}.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        return
    rows, summary = result if args.command == "transient" else (result, None)
    if not ex.is_finite_rows(rows):
        raise NumericError("non-finite value in experiment output")
    (out / f"{name}.csv").write_text(ex.rows_to_csv(rows))
    if summary is not None:
        (out / f"{name}_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _trajectory(args):
    prof = MobilityProfile(args.speed, sample_rate=args.sample_rate)
    return generate_trajectory(args.seed, tuple(args.dims), prof, args.n_samples)


def run_trajectory(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _trajectory(args).to_csv(out / "trajectory.csv")


def run_encode(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = _trajectory(args)
    config = CodecConfig().with_mode(args.mode)
    if args.scheme == "channel":
        fb = encode_matrix_stream(traj, config)
        write_bitstream(out / "feedback.adqf", fb.indices, fb.bits, traj.dims, args.sample_rate)
        np.save(out / "reconstruction.npy", fb.reconstruction)
    else:
        m, n = traj.dims
        n_rx = tuple(args.n_rx) if args.n_rx else (n // 2, n - n // 2)
        n_streams = tuple(args.n_streams) if args.n_streams else tuple(min(2, k) for k in n_rx)
        layout = UserLayout(n_rx, n_streams)
        fb = encode_singular_stream(traj, layout, config)
        write_singular_bitstream(out / "feedback.adqs", fb.indices, m, layout, args.sample_rate)
        np.save(out / "reconstruction.npy", fb.f_hat)


def run_decode(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = CodecConfig().with_mode(args.mode)
    with open(args.input, "rb") as fh:
        magic = fh.read(4)
    if magic == b"ADQF":
        header, idx = read_channel_bitstream(args.input)
        recon = decode_matrix_stream(idx, (header["M"], header["N"]), config)
    elif magic == b"ADQS":
        header, layout, idx = read_singular_bitstream(args.input)
        recon = decode_singular_stream(idx, header["M"], layout, config)
    else:
        raise CodecError(f"unrecognized bitstream magic {magic!r}")
    np.save(out / "reconstruction.npy", recon)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"trajectory": run_trajectory, "encode": run_encode, "decode": run_decode}
    try:
        handlers.get(args.command, run_experiment)(args)
    except (ex.ConfigError, CodecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
