"""Command-line interface: generate, build, verify, solve, near-cell-check, selftest, report."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from .coreset import Coreset, cost
from .eval import TooLarge, bicriterion, near_cell_check, verify_coreset, weighted_local_search
from .general import AllGuessesFailed, GeneralStream, offline_construct
from .grid import GridSystem
from .heavy_hitter import SketchTooLarge
from .model import Params
from .positive import InfeasibleRectification, PositiveStream
from .presets import PRESETS, apply_preset
from .streams import KINDS, StreamFile, StreamParseError, generate

EXIT_OK, EXIT_ERROR, EXIT_VERIFY, EXIT_GUESSES, EXIT_PARSE = 0, 1, 2, 3, 4
CHUNK = 1 << 16
MODES = ("offline", "general", "positive")


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_ERROR):
        self.code = code
        super().__init__(msg)


def _seed(args) -> int:
    env = os.environ.get("COR_SEED")
    return int(env) if env not in (None, "") else int(args.seed)


def _lambda_overrides(items) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--lambda expects NAME=VALUE, got {item!r}")
        out[name.strip()] = float(value)
    return out


def params_from_args(args, d: int, delta: int) -> Params:
    try:
        p = Params(d=d, k=args.k, delta=delta, eps=args.eps, rho=args.rho, fail_prob=args.fail_prob,
                   seed=_seed(args))
        if args.preset:
            p = apply_preset(p, args.preset)
        lam = p.lambdas.with_overrides(_lambda_overrides(args.lam))
        scale = p.constant_scale if args.constant_scale is None else args.constant_scale
        return p.with_(lambdas=lam, constant_scale=scale)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def read_stream(path) -> StreamFile:
    try:
        return StreamFile.read(path)
    except StreamParseError as exc:
        raise CliError(f"{path}: {exc}", EXIT_PARSE) from exc
    except OSError as exc:
        raise CliError(str(exc)) from exc


def read_coreset(path) -> Coreset:
    try:
        return Coreset.read(path)
    except (ValueError, KeyError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_PARSE) from exc
    except OSError as exc:
        raise CliError(str(exc)) from exc


def feed(sketch, stream: StreamFile) -> None:
    for s in range(0, len(stream), CHUNK):
        sketch.update_points(stream.points[s:s + CHUNK], stream.signs[s:s + CHUNK])


def build(stream: StreamFile, params: Params, mode: str, load_state: bytes | None = None):
    """Returns (coreset, stats dict, sketch or None)."""
    t0 = time.perf_counter()
    sketch = None
    if mode == "offline":
        P = stream.live_points()
        grid = GridSystem(params)
        if len(P) == 0:
            cs, o = Coreset.empty(params.d, params.delta, params.k), 1.0
        else:
            Zp, o, _ = bicriterion(P, params.k, params.seed)
            cs = offline_construct(grid, P, params, (Zp, o))
        live, nbytes, o_star = len(P), 0, o
    else:
        cls = GeneralStream if mode == "general" else PositiveStream
        sketch = cls.from_bytes(load_state) if load_state is not None else cls(params)
        feed(sketch, stream)
        cs = sketch.query()
        live, nbytes, o_star = sketch.m, sketch.nbytes, cs.info.get("o_star")
    stats = {
        "mode": mode,
        "live_points": live,
        "coreset_size": len(cs),
        "sketch_bytes": nbytes,
        "o_star": o_star,
        "total_weight": str(cs.total_weight),
        "min_weight": cs.min_weight,
        "wall_time_s": round(time.perf_counter() - t0, 4),
    }
    return cs, stats, sketch


def write_stats(stats: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(stats))
        w.writerow(list(stats.values()))


def parse_centers(text: str, d: int) -> np.ndarray:
    try:
        Z = np.array([[float(x) for x in c.split(",")] for c in text.split(";") if c.strip()])
    except ValueError as exc:
        raise CliError(f"bad --centers: {exc}") from exc
    if Z.ndim != 2 or Z.shape[1] != d:
        raise CliError(f"--centers needs {d} coordinates per center")
    return Z


# commands


def cmd_generate(args) -> int:
    try:
        st = generate(args.kind, args.n, args.d, args.delta, _seed(args))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    text = st.to_text()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
    return EXIT_OK


def cmd_build(args) -> int:
    stream = read_stream(args.stream)
    blob = Path(args.load_state).read_bytes() if args.load_state else None
    if blob is not None and args.mode == "offline":
        raise CliError("--load-state needs a streaming mode")
    params = params_from_args(args, stream.d, stream.delta)
    cs, stats, sketch = build(stream, params, args.mode, blob)
    if args.output in (None, "-"):
        sys.stdout.write(cs.to_text())
    else:
        cs.write(args.output)
    if args.stats:
        write_stats(stats, args.stats)
    if args.save_state:
        if sketch is None:
            raise CliError("--save-state needs a streaming mode")
        Path(args.save_state).write_bytes(sketch.to_bytes())
    print(",".join(f"{k}={v}" for k, v in stats.items()), file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    stream = read_stream(args.stream)
    cs = read_coreset(args.coreset)
    if (cs.d, cs.delta) != (stream.d, stream.delta):
        raise CliError("coreset and stream disagree on d or delta")
    k = args.k if args.k is not None else cs.k
    try:
        rep = verify_coreset(stream.live_points(), cs, k, args.eps, mode=args.mode, n_random=args.n_random,
                             seed=_seed(args), grid_size=args.grid_size)
    except TooLarge as exc:
        raise CliError(f"exhaustive verification too large: {exc}") from exc
    if args.output in (None, "-"):
        rep.write_csv(sys.stdout)
    else:
        rep.write_csv(args.output)
    print(f"max_rel_err={rep.max_rel_err:.6g} eps={args.eps} pass={rep.passed}", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_solve(args) -> int:
    cs = read_coreset(args.coreset)
    k = args.k if args.k is not None else cs.k
    negative = len(cs) > 0 and cs.min_weight < 0
    if negative and not args.allow_negative:
        raise CliError("coreset has negative weights; use --allow-negative with --centers")
    if args.centers:
        Z = parse_centers(args.centers, cs.d)
    elif negative:
        raise CliError("negative weights: pass --centers to evaluate a given center set")
    else:
        Z = weighted_local_search(cs, k, seed=_seed(args))
    out = csv.writer(sys.stdout)
    out.writerow(["center", *[f"x{j + 1}" for j in range(cs.d)]])
    for j, z in enumerate(Z):
        out.writerow([j, *[repr(float(x)) for x in z]])
    out.writerow(["cost_S", repr(cs.cost(Z))])
    if args.stream:
        stream = read_stream(args.stream)
        P = stream.live_points()
        out.writerow(["cost_P", repr(cost(P, Z) if len(P) else 0.0)])
    return EXIT_OK


def cmd_near_cells(args) -> int:
    params = params_from_args(args, args.d, args.delta)
    if args.centers:
        Z = parse_centers(args.centers, args.d).astype(np.int64)
    else:
        rng = np.random.default_rng(params.seed)
        Z = rng.integers(1, args.delta + 1, size=(args.n_centers, args.d))
    try:
        stats = near_cell_check(params, Z, trials=args.trials, discrete=not args.box_distance)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    stats.write_csv(args.output if args.output not in (None, "-") else sys.stdout)
    return EXIT_OK if stats.ok.all() else EXIT_VERIFY


def cmd_selftest(args) -> int:
    from . import selftest
    ok = selftest.run(verbose=True)
    return EXIT_OK if ok else EXIT_ERROR


def cmd_report(args) -> int:
    from . import report
    stream = read_stream(args.stream)
    params = params_from_args(args, stream.d, stream.delta)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    cs, stats, _ = build(stream, params, args.mode)
    cs.write(out / "coreset.txt")
    P = stream.live_points()
    rep = verify_coreset(P, cs, 1, args.eps, mode="grid-scan", grid_size=args.grid_size, seed=params.seed)
    stats["max_rel_err"] = rep.max_rel_err
    write_stats(stats, out / "stats.csv")
    rep.write_csv(out / "surface.csv")
    if stream.d == 2:
        report.error_surface(rep, out / "error_surface.png")
        report.coreset_layers(cs, params.side, out / "layers.png")
        report.data_scatter(P, stream.delta, out / "data.png")
    print(f"entries={len(cs)} max_rel_err={rep.max_rel_err:.6g} -> {out}", file=sys.stderr)
    return EXIT_OK


# parser


def _add_params(p: argparse.ArgumentParser, k: bool = True) -> None:
    g = p.add_argument_group("parameters")
    if k:
        g.add_argument("--k", type=int, default=1)
    g.add_argument("--eps", type=float, default=0.25)
    g.add_argument("--rho", type=float, default=0.1)
    g.add_argument("--fail-prob", type=float, default=0.1)
    g.add_argument("--preset", choices=sorted(PRESETS),
                   help="tuned constant_scale and lambdas; explicit flags still override")
    g.add_argument("--constant-scale", type=float,
                   help="multiplier on sampling probabilities and sketch sizes (default 1 = worst-case constants)")
    g.add_argument("--lambda", dest="lam", action="append", metavar="NAME=VALUE",
                   help="override a constant (l1..l9, general, alpha, beta); repeatable")
    g.add_argument("--seed", type=int, default=0, help="master seed (COR_SEED overrides)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dyncoreset", description="k-median coresets over dynamic point streams")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic stream file")
    p.add_argument("--kind", choices=KINDS, default="gaussian-mixture")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--delta", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build", help="build a coreset from a stream file")
    p.add_argument("stream")
    p.add_argument("--mode", choices=MODES, default="positive")
    p.add_argument("-o", "--output")
    p.add_argument("--stats", help="write build statistics as CSV")
    p.add_argument("--save-state", help="write the sketch snapshot after the stream")
    p.add_argument("--load-state", help="resume from a snapshot before applying the stream")
    _add_params(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("verify", help="compare stream and coreset costs")
    p.add_argument("stream")
    p.add_argument("coreset")
    p.add_argument("--mode", choices=("exhaustive", "random", "grid-scan"), default="random")
    p.add_argument("--k", type=int)
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--n-random", type=int, default=1000)
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("solve", help="k-median centers from a coreset")
    p.add_argument("coreset")
    p.add_argument("--k", type=int)
    p.add_argument("--stream", help="also report the cost on the live points")
    p.add_argument("--centers", help="evaluate these centers instead of solving: 'x,y;x,y'")
    p.add_argument("--allow-negative", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("near-cell-check", help="near-cell counts over random grid shifts")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--delta", type=int, default=64)
    p.add_argument("--centers", help="'x,y;x,y'; default draws --n-centers uniform centers")
    p.add_argument("--n-centers", type=int, default=1)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--box-distance", action="store_true", help="use continuous cell boxes")
    p.add_argument("-o", "--output")
    _add_params(p)
    p.set_defaults(func=cmd_near_cells)

    p = sub.add_parser("selftest", help="run quick built-in checks")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("report", help="build, scan 1-median errors, and render figures")
    p.add_argument("stream")
    p.add_argument("outdir")
    p.add_argument("--mode", choices=MODES, default="positive")
    p.add_argument("--grid-size", type=int, default=64)
    _add_params(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except AllGuessesFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        for j, levels in sorted(exc.failures.items()):
            print(f"  guess {j}: failed levels {levels}", file=sys.stderr)
        return EXIT_GUESSES
    except (SketchTooLarge, InfeasibleRectification) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
