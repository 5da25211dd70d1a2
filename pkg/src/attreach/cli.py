"""Command-line entry point: ``attreach run | ball | verify``.

Exit codes: 0 ok, 2 no feasible rate (partial results written), 3 bad config
or input, 4 ball straddles charts, 5 verification found violations, 6 tube
bound diverged (partial results written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, sdp
from .charts import ball_boundary, ball_interior_samples
from .errors import BallStraddlesCharts, NoFeasibleRate, TubeBoundDiverged
from .reach import ReachResult, Verdict, check_avoid, conreach, monte_carlo_verify

log = logging.getLogger("attreach")

EXIT_OK = 0
EXIT_NO_RATE = 2
EXIT_INPUT = 3
EXIT_STRADDLE = 4
EXIT_VIOLATION = 5
EXIT_DIVERGED = 6


def ball_csv(q, center, radius: float, n_boundary: int, n_interior: int, chart=None) -> str:
    pts = ball_boundary(q, center, radius, n_boundary, chart) + ball_interior_samples(
        q, center, radius, n_interior, chart
    )
    return io.csv_text(["chart", "x", "y", "z"], ([str(p.chart), *p.r] for p in pts))


def _write_results(out: Path, raw: dict, result: ReachResult) -> None:
    io.write_json_atomic(out / "config.json", raw)
    io.write_json_atomic(out / "reach.json", io.reach_to_json(result, raw))
    io.write_json_atomic(out / "regions.json", io.regions_to_json(result))
    io.write_text_atomic(out / "nominal.csv", io.nominal_csv(result.nominal))


def _dump_sdp(target: Path, settings: io.RunSettings, result: ReachResult) -> None:
    for i, region in enumerate(result.regions):
        if i + 1 >= len(result.steps):
            break
        prev = result.steps[i].metric
        problem = sdp.formulate(prev.q, prev.p, result.steps[i + 1].rate, region, settings.reach.vertex_cap)
        io.write_text_atomic(target / f"step_{i:03d}.txt", sdp.dump_problem(problem, f"step {i}"))


def _export_balls(out: Path, n: int, result: ReachResult) -> None:
    for i, st in enumerate(result.steps):
        try:
            text = ball_csv(st.metric.q, st.center.r, st.radius, n, n)
        except (BallStraddlesCharts, ValueError) as exc:
            log.warning("step %d ball not exported: %s", i, exc)
            continue
        io.write_text_atomic(out / "balls" / f"step_{i:03d}.csv", text)


def cmd_run(args) -> int:
    raw, settings = io.load_config(args.config)
    out = Path(args.out)
    code = EXIT_OK
    try:
        result = conreach(settings.reach)
    except NoFeasibleRate as exc:
        log.error("%s", exc)
        result, code = exc.partial, EXIT_NO_RATE
    except TubeBoundDiverged as exc:
        log.error("%s", exc)
        result, code = exc.partial, EXIT_DIVERGED
    if result is None:
        return code
    _write_results(out, raw, result)
    if args.dump_sdp:
        _dump_sdp(Path(args.dump_sdp), settings, result)
    if settings.ball_samples > 0:
        _export_balls(out, settings.ball_samples, result)
    last = result.steps[-1]
    print(f"{len(result.steps) - 1} steps, final radius {last.radius:.6g}, complete={result.complete}")
    return code


def _parse_center(values: list[float]) -> np.ndarray:
    if len(values) not in (3, 9):
        raise io.ConfigError("--center takes 3 (axis-angle) or 9 (matrix) numbers")
    return io.parse_rotation(values)


def cmd_ball(args) -> int:
    q = np.asarray(args.q, dtype=float).reshape(3, 3)
    center = _parse_center(args.center)
    if not np.all(np.isfinite(q)) or not np.isfinite(args.radius) or args.radius < 0:
        raise io.ConfigError("Q and radius must be finite, radius non-negative")
    n_int = args.samples if args.interior is None else args.interior
    try:
        text = ball_csv(q, center, args.radius, args.samples, n_int, args.chart)
    except BallStraddlesCharts as exc:
        log.error("%s", exc)
        return EXIT_STRADDLE
    except ValueError as exc:
        raise io.ConfigError(str(exc)) from exc
    io.write_text_atomic(args.out, text)
    return EXIT_OK


def cmd_verify(args) -> int:
    _, settings, result = io.load_results(args.results)
    n = settings.mc_n if args.samples is None else args.samples
    report = monte_carlo_verify(settings.reach, result, n, settings.mc_seed if args.seed is None else args.seed)
    payload = report.to_dict()
    if settings.unsafe_omega is not None or settings.unsafe_rotation is not None:
        verdicts = check_avoid(result, settings.unsafe_omega, settings.unsafe_rotation)
        payload["avoid"] = [v.value for v in verdicts]
        payload["avoid_safe"] = all(v is Verdict.SAFE for v in verdicts)
    out = Path(args.out) if args.out else Path(args.results) / "verify.json"
    io.write_json_atomic(out, payload)
    print(
        f"{n} samples: {report.violations} violations, worst margin {payload['worst_margin']}, "
        f"{report.shooting_failures} shooting failures"
    )
    return EXIT_VIOLATION if report.violations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="attreach", description="Reachable-set bounds for rigid-body attitude systems.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compute a reachable-set over-approximation")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--dump-sdp", metavar="DIR", help="write each accepted step problem as text")
    run.set_defaults(func=cmd_run)

    ball = sub.add_parser("ball", help="export chart coordinates of a left-invariant metric ball")
    ball.add_argument("--q", nargs=9, type=float, required=True, metavar="Q", help="Q row-major")
    ball.add_argument("--center", nargs="+", type=float, required=True, help="axis-angle (3) or matrix (9)")
    ball.add_argument("--radius", type=float, required=True)
    ball.add_argument("--samples", type=int, default=200, help="boundary points")
    ball.add_argument("--interior", type=int, help="interior points (default: same as --samples)")
    ball.add_argument("--chart", type=int, choices=range(4), help="chart index (default: best for the center)")
    ball.add_argument("--out", required=True)
    ball.set_defaults(func=cmd_ball)

    ver = sub.add_parser("verify", help="Monte-Carlo audit of a results directory")
    ver.add_argument("--results", required=True)
    ver.add_argument("--samples", type=int)
    ver.add_argument("--seed", type=int)
    ver.add_argument("--out", help="report path (default: RESULTS/verify.json)")
    ver.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except io.ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
