"""``homlab`` command line: simulate, analyze, histogram, scan, fit, oracle, selftest."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from typing import List, Optional

import numpy as np

from homlab import fock
from homlab.clicksim import SimPlan, simulate
from homlab.config import ConfigError, RunConfig
from homlab.correlator import CoincidenceSpec, correlation_histogram, delayed_coincidences
from homlab.fringe import FitError, fit_fringe, read_curves_csv, run_scan, write_curves_csv
from homlab.optics import OpticalConfig, Pairing, coincidence_rate_closed_form
from homlab.tags import merge_sorted, read_ttag, write_ttag

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_PAIRINGS = {"cross": fock.CROSS, "self": fock.SELF}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so ``main`` can report usage errors uniformly."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage().strip()}")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HOMLAB_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"HOMLAB_THREADS must be an integer, got {env!r}")


def _config(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig.from_dict({})


def cmd_simulate(args) -> int:
    cfg = _config(args)
    plan = SimPlan(
        n_pulses=args.pulses,
        dwell_block_pulses=cfg.dwell_block_pulses,
        seed=args.seed,
        dx_mm=args.dx_mm,
        coincidence_delays_ps=tuple(s.delay_ps for s in cfg.specs),
    )
    streams = simulate(plan, cfg.optics, cfg.detector, threads=_threads(args))
    merged = merge_sorted(*(streams[ch] for ch in sorted(streams)))
    nbytes = write_ttag(merged, args.out)
    _emit(
        {
            "out": str(args.out),
            "bytes": nbytes,
            "duration_ps": plan.n_pulses * cfg.optics.pulse_period_ps,
            "tags": {str(ch): len(s) for ch, s in sorted(streams.items())},
        }
    )
    return EXIT_OK


def _duration(args, stream) -> int:
    if args.duration_ps is not None:
        return args.duration_ps
    return int(stream.t_ps[-1]) + 1 if len(stream) else 0


def cmd_analyze(args) -> int:
    stream = read_ttag(args.tags)
    spec = CoincidenceSpec(
        args.ch_a,
        args.ch_a if args.self_mode else args.ch_b,
        args.delay_ps,
        args.window_ps,
        self_mode=args.self_mode,
    )
    a = stream.select(spec.channel_a)
    b = a if spec.self_mode else stream.select(spec.channel_b)
    count = delayed_coincidences(a, b, spec)
    duration = _duration(args, stream)
    rate = count / (duration * 1e-12) if duration > 0 else 0.0
    _emit({"count": count, "duration_ps": duration, "rate_hz": rate})
    return EXIT_OK


def cmd_histogram(args) -> int:
    stream = read_ttag(args.tags)
    a = stream.select(args.ch_a)
    b = a if args.self_mode else stream.select(args.ch_b)
    h = correlation_histogram(a, b, args.bin_ps, args.range_ps, args.self_mode, args.start_ps)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("bin_start_ps,count\n")
        for start, n in zip(h.bin_starts.tolist(), h.counts.tolist()):
            out.write(f"{start},{n}\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = _config(args)
    sc = cfg.scan
    points = args.points if args.points is not None else sc.points
    lo = args.dx_min if args.dx_min is not None else sc.dx_min_mm
    hi = args.dx_max if args.dx_max is not None else sc.dx_max_mm
    pulses = args.pulses_per_point if args.pulses_per_point is not None else sc.pulses_per_point
    seed = args.seed if args.seed is not None else sc.seed
    dx = np.linspace(lo, hi, points)
    curves = run_scan(
        dx,
        pulses,
        cfg.optics,
        cfg.detector,
        cfg.specs,
        seed,
        dwell_block_pulses=cfg.dwell_block_pulses,
        threads=_threads(args),
    )
    write_curves_csv(curves.values(), args.out)
    _emit({"out": str(args.out), "labels": list(curves), "points": points})
    return EXIT_OK


def cmd_fit(args) -> int:
    curves = read_curves_csv(args.fringe)
    if args.label not in curves:
        raise UsageError(f"label {args.label!r} not in {sorted(curves)}")
    fit = fit_fringe(curves[args.label])
    out = fit.to_dict()
    out["label"] = args.label
    _emit(out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    pairing = _PAIRINGS[args.pairing]
    p = fock.phase_averaged_prob(
        args.theta1,
        args.theta2,
        args.gamma,
        args.bs_sign,
        pairing,
        n_phase_samples=args.phase_samples,
        normalize=True,
    )
    _emit(
        {
            "theta1_deg": args.theta1,
            "theta2_deg": args.theta2,
            "gamma": args.gamma,
            "pairing": pairing,
            "probability_normalized": p,
        }
    )
    return EXIT_OK


def oracle_grid_max_error(n_phase_samples: int = 4096) -> float:
    """Largest |oracle - closed form| over the angle x overlap x pairing grid."""
    angles = np.arange(-90, 91, 15)
    gammas = (0.0, 0.25, 0.5, 0.75, 1.0)
    worst = 0.0
    for t1 in angles:
        for t2 in angles:
            cfg = OpticalConfig(theta1_deg=float(t1), theta2_deg=float(t2))
            model = cfg.coherence()
            for g in gammas:
                # invert the envelope so the closed form sees exactly this overlap
                dx = 0.0 if g == 1.0 else (np.inf if g == 0.0 else
                                           model.coherence_scale_mm * np.sqrt(-2.0 * np.log(g)) / 2.0)
                for name, pairing in ((fock.CROSS, Pairing.CROSS_D1D2), (fock.SELF, Pairing.SELF_D1)):
                    got = fock.phase_averaged_prob(
                        t1, t2, g, cfg.bs_sign, name, n_phase_samples, normalize=True
                    )
                    want = coincidence_rate_closed_form(dx, cfg, pairing)
                    worst = max(worst, abs(got - want))
    return worst


def correlator_fuzz_failures(n_streams: int = 200, seed: int = 0) -> int:
    """Count mismatches between the correlator and an O(n^2) pair scan."""
    from homlab.tags import TagStream

    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_streams):
        na, nb = rng.integers(0, 1001, size=2)
        span = int(rng.integers(1_000, 1_000_000))
        ta = np.sort(rng.integers(0, span, na))
        tb = np.sort(rng.integers(0, span, nb))
        self_mode = bool(rng.integers(0, 2))
        delay = int(rng.integers(1, span // 4 + 2))
        if not self_mode and rng.integers(0, 2):
            delay = -delay
        window = int(rng.integers(1, span // 10 + 2))
        if self_mode:
            tb = ta
        spec = CoincidenceSpec(0, 0 if self_mode else 1, delay, window, self_mode)
        a, b = TagStream.from_times(ta), TagStream.from_times(tb)
        got = delayed_coincidences(a, a if self_mode else b, spec)
        d = tb[None, :].astype(np.int64) - ta[:, None].astype(np.int64)
        ok = 2 * np.abs(d - delay) <= window
        if self_mode:
            ok &= d > 0
        bad += int(got != int(ok.sum()))
    return bad


def cmd_selftest(args) -> int:
    t = time.perf_counter()
    err = oracle_grid_max_error()
    oracle_ok = err <= 1e-9
    print(f"{'PASS' if oracle_ok else 'FAIL'} oracle/closed-form grid: max |diff| = {err:.3e} "
          f"({time.perf_counter() - t:.1f} s)")
    t = time.perf_counter()
    bad = correlator_fuzz_failures()
    fuzz_ok = bad == 0
    print(f"{'PASS' if fuzz_ok else 'FAIL'} correlator fuzz vs brute force: {bad} mismatches "
          f"({time.perf_counter() - t:.1f} s)")
    return EXIT_OK if oracle_ok and fuzz_ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (env HOMLAB_THREADS)")
    common.add_argument("--error-json", action="store_true", help="report failures as JSON on stderr")

    p = _Parser(prog="homlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate one run into a .ttag file")
    s.add_argument("--config")
    s.add_argument("--dx-mm", type=float, required=True)
    s.add_argument("--pulses", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", parents=[common], help="count delayed coincidences")
    s.add_argument("--tags", required=True)
    s.add_argument("--ch-a", type=int, default=0)
    s.add_argument("--ch-b", type=int, default=1)
    s.add_argument("--delay-ps", type=int, required=True)
    s.add_argument("--window-ps", type=int, default=4000)
    s.add_argument("--self", dest="self_mode", action="store_true")
    s.add_argument("--duration-ps", type=int, default=None)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("histogram", parents=[common], help="pair-time histogram as CSV")
    s.add_argument("--tags", required=True)
    s.add_argument("--ch-a", type=int, default=0)
    s.add_argument("--ch-b", type=int, default=1)
    s.add_argument("--bin-ps", type=int, required=True)
    s.add_argument("--range-ps", type=int, required=True)
    s.add_argument("--start-ps", type=int, default=0)
    s.add_argument("--self", dest="self_mode", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_histogram)

    s = sub.add_parser("scan", parents=[common], help="mirror scan into a fringe CSV")
    s.add_argument("--config")
    s.add_argument("--points", type=int)
    s.add_argument("--dx-min", type=float)
    s.add_argument("--dx-max", type=float)
    s.add_argument("--pulses-per-point", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("fit", parents=[common], help="fit one fringe curve")
    s.add_argument("--fringe", required=True)
    s.add_argument("--label", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("oracle", parents=[common], help="phase-averaged two-photon oracle")
    s.add_argument("--theta1", type=float, required=True)
    s.add_argument("--theta2", type=float, default=45.0)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--pairing", choices=sorted(_PAIRINGS), default="cross")
    s.add_argument("--bs-sign", type=int, choices=(-1, 1), default=-1)
    s.add_argument("--phase-samples", type=int, default=4096)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("selftest", parents=[common], help="oracle grid and correlator fuzz")
    s.set_defaults(func=cmd_selftest)
    return p


def _fail(args, code: int, exc: Exception, extra: Optional[dict] = None) -> int:
    if getattr(args, "error_json", False):
        body = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        body.update(extra or {})
        print(json.dumps(body, sort_keys=True), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        flags = argparse.Namespace(error_json="--error-json" in argv)
        return _fail(flags, EXIT_USAGE, exc)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(args, EXIT_USAGE, exc)
    except FitError as exc:
        last = exc.last.to_dict() if exc.last is not None else None
        return _fail(args, EXIT_FAIL, exc, {"last_iterate": last})
    except (OSError, ValueError, RuntimeError) as exc:
        return _fail(args, EXIT_FAIL, exc)


if __name__ == "__main__":
    sys.exit(main())
