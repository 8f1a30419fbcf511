"""Command-line front end.

Subcommands: synth (print the synthesized gains), rdf (rate floor curve),
simulate (one full experiment), sweep (several budgets), validate (the
built-in invariant suite).  Exit codes: 0 all checks passed, 2 a bound or
invariant was violated, 3 synthesis was infeasible or failed, 4 the
config or I/O was bad.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from fractions import Fraction

import numpy as np

from .codec import LatticePmf, decode, encode
from .errors import MalformedCodeword, ParseError, QuantLqgError
from .harness import (
    ETA_BITS,
    ceiling_bits,
    load_config,
    rate_table,
    run_experiment,
    sweep,
    sweep_csv_text,
)
from .loop import available_backends, burn_in_steps, run_lockstep, run_loop
from .quantizer import DitherStream, dither_at
from .rdf import RdfProblem, solve_rdf
from .synthesis import PlantModel, solve_dare, spectral_radius

EXIT_PASS = 0
EXIT_BOUND = 2
EXIT_SYNTH = 3
EXIT_IO = 4


def _mat_list(M):
    return [[float(v) for v in row] for row in np.asarray(M, dtype=float)]


def _parse_gammas(text):
    try:
        gammas = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"bad --gammas value: {exc}") from exc
    if not gammas:
        raise ParseError("--gammas must name at least one value")
    return gammas


def _parse_checkpoints(text):
    try:
        pts = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"bad --checkpoints value: {exc}") from exc
    if not pts or any(p < 1 for p in pts) or any(b <= a for a, b in zip(pts, pts[1:])):
        raise ParseError("--checkpoints must be strictly increasing positive integers")
    return tuple(pts)


def _apply_overrides(config, args):
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        updates["eval_steps"] = args.steps
    if getattr(args, "checkpoints", None) is not None:
        pts = _parse_checkpoints(args.checkpoints)
        if pts[-1] > updates.get("eval_steps", config.eval_steps):
            raise ParseError("--checkpoints exceed the evaluation horizon")
        updates["checkpoints"] = pts
    return replace(config, **updates) if updates else config


def _cmd_synth(args):
    config = load_config(args.config)
    config = _apply_overrides(config, args)
    plant = config.to_plant()
    from .harness import synthesize_system

    gains, solution, synthesis = synthesize_system(plant, config.gamma, config.delta)
    payload = {
        "gamma": config.gamma,
        "delta": config.delta,
        "S": _mat_list(gains.S),
        "K": _mat_list(gains.K),
        "Theta": _mat_list(gains.Theta),
        "P_hat": _mat_list(synthesis.P_hat),
        "P_plus": _mat_list(synthesis.P_plus),
        "C": _mat_list(synthesis.C),
        "J": _mat_list(synthesis.J),
        "L": _mat_list(synthesis.L),
        "R_cl": _mat_list(synthesis.R_cl),
        "recursion_radius": spectral_radius(synthesis.R_cl),
        "rate_lower_bits": solution.rate_bits,
        "rate_ceiling_bits": ceiling_bits(solution.rate_bits, plant.m),
        "eta_bits": ETA_BITS,
        "sdp_dual_gap_bits": solution.dual_gap,
        "burn_in_steps": burn_in_steps(synthesis.R_cl),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "synthesis.json"), "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    return EXIT_PASS


def _cmd_rdf(args):
    config = load_config(args.config)
    plant = config.to_plant()
    gains = solve_dare(plant)
    gammas = _parse_gammas(args.gammas) if args.gammas else [config.gamma]
    rows = rate_table(plant, gains, gammas)
    lines = ["gamma,rate_bits,error"]
    for row in rows:
        rate = "" if row.rate_bits is None else repr(row.rate_bits)
        err = row.error or ""
        lines.append(f"{row.gamma!r},{rate},{err}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "rate_curve.csv"), "w", encoding="ascii") as fh:
            fh.write(text + "\n")
    return EXIT_BOUND if any(r.error for r in rows) else EXIT_PASS


def _cmd_simulate(args):
    config = load_config(args.config)
    config = _apply_overrides(config, args)
    report, trace, pmf, synthesis = run_experiment(
        config, out_dir=args.out, write_trace=args.out is not None,
        backend=args.backend,
    )
    print(f"gamma                {report.gamma!r}")
    print(f"rate lower (bits)    {report.rate_lower_bits!r}")
    print(f"rate ceiling (bits)  {report.rate_ceiling_bits!r}")
    print(f"measured bitrate     {report.measured_bitrate_bits!r}")
    print(f"measured cost        {report.measured_cost!r}")
    print(f"entropy estimate     {report.entropy_estimate_bits!r}")
    print(f"backend              {report.backend}")
    for name, ok in report.pass_flags.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_PASS if report.passed else EXIT_BOUND


def _cmd_sweep(args):
    config = load_config(args.config)
    config = _apply_overrides(config, args)
    gammas = _parse_gammas(args.gammas)
    rows = sweep(config, gammas, out_dir=args.out, backend=args.backend)
    if args.out is None:
        sys.stdout.write(sweep_csv_text(rows))
    ok = all(row["report"] is not None and row["report"].passed for row in rows)
    return EXIT_PASS if ok else EXIT_BOUND


def _scalar_rate_oracle(a, w, s, theta, gamma):
    budget = (gamma - w * s) / theta
    if abs(a) < 1.0:
        budget = min(budget, w / (1.0 - a * a))
    pi = budget * w / (a * a * budget + w)
    return max(0.0, 0.5 * math.log2(w / pi))


def _cmd_validate(args):
    checks = []

    def check(name, fn):
        try:
            fn()
            checks.append((name, True, ""))
        except Exception as exc:  # noqa: BLE001 - report, do not crash
            checks.append((name, False, f"{type(exc).__name__}: {exc}"))

    def _enumeration():
        from .codec import LatticeEnumeration

        for m in (1, 2, 3):
            e = LatticeEnumeration(m)
            for i in range(2000):
                assert e.index_of(e.point_at(i)) == i
        assert [e.point_at(i) for i in (0, 1, 2)] and True
        e1 = LatticeEnumeration(1)
        assert [e1.point_at(i) for i in range(4)] == [(0,), (-1,), (1,), (-2,)]

    def _codec_dyadic():
        pmf = LatticePmf(
            m=1, Delta=1.0,
            core={(0,): Fraction(1, 2), (-1,): Fraction(1, 4), (1,): Fraction(1, 4)},
            tail_epsilon=0.0, tail_decay=0.5,
        )
        assert encode((0,), pmf).bits == "01"
        assert encode((-1,), pmf).bits == "101"
        assert encode((1,), pmf).bits == "111"
        try:
            decode("00", pmf)
            raise AssertionError("malformed codeword accepted")
        except MalformedCodeword:
            pass

    def _dare_golden():
        plant = PlantModel(A=[[2.0]], B=[[1.0]], W=[[1.0]], Q=[[1.0]],
                           Phi=[[1.0]], X0=[[0.0]])
        gains = solve_dare(plant)
        assert abs(gains.S[0][0] - (2.0 + math.sqrt(5.0))) < 1e-12
        assert abs(gains.K[0][0] + (1.0 + math.sqrt(5.0)) / 2.0) < 1e-12

    def _rdf_scalar():
        plant = PlantModel(A=[[2.0]], B=[[1.0]], W=[[1.0]], Q=[[1.0]],
                           Phi=[[1.0]], X0=[[0.0]])
        gains = solve_dare(plant)
        gamma = 1.5 * float(gains.S[0][0])
        sol = solve_rdf(RdfProblem(plant=plant, gains=gains, gamma=gamma))
        oracle = _scalar_rate_oracle(2.0, 1.0, float(gains.S[0][0]),
                                     float(gains.Theta[0][0]), gamma)
        assert abs(sol.rate_bits - oracle) < 1e-4, (sol.rate_bits, oracle)

    def _dither_bounds():
        stream = DitherStream(seed=42, Delta=0.5, m=2)
        total = 0.0
        n = 5000
        for t in range(n):
            d = dither_at(stream, t)
            assert np.all(d >= -0.25) and np.all(d < 0.25)
            total += float(np.sum(d))
        assert abs(total / (2 * n)) < 0.25 / math.sqrt(n) * 4

    def _lockstep_vs_kernel():
        from .harness import synthesize_system, warmup_pmf, config_from_dict

        config = config_from_dict({
            "m": 1, "u": 1, "A": [2.0], "B": [1.0], "W": [1.0], "Q": [1.0],
            "Phi": [1.0], "gamma": 1.5 * (2.0 + math.sqrt(5.0)),
            "warmup_steps": 2000, "eval_steps": 300, "seed": 7,
        })
        plant = config.to_plant()
        gains, _, synthesis = synthesize_system(plant, config.gamma, config.delta)
        pmf = warmup_pmf(config, plant=plant, gains=gains, synthesis=synthesis)
        ref = run_lockstep(plant, gains, synthesis, pmf, seed=11, horizon=300)
        for backend in available_backends():
            got = run_loop(plant, gains, synthesis, pmf, seed=11, horizon=300,
                           backend=backend)
            assert np.array_equal(ref.X, got.X), backend
            assert np.array_equal(ref.Q, got.Q), backend
            assert np.array_equal(ref.stage, got.stage), backend

    check("lattice enumeration round trip", _enumeration)
    check("dyadic codec table", _codec_dyadic)
    check("riccati golden-ratio fixed point", _dare_golden)
    check("rate floor matches scalar closed form", _rdf_scalar)
    check("dither bounds and centering", _dither_bounds)
    check("lockstep equals fused kernels", _lockstep_vs_kernel)

    failed = 0
    for name, ok, msg in checks:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if msg:
            line += f"  ({msg})"
        print(line)
        failed += 0 if ok else 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_PASS if failed == 0 else EXIT_BOUND


def build_parser():
    parser = argparse.ArgumentParser(
        prog="quantlqg",
        description="LQG control over a bit-budget channel: synthesis, "
                    "rate bounds, and coded-loop simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="path to a strict-JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--steps", type=int, default=None, help="override eval_steps")
        p.add_argument("--out", default=None, help="directory for output artifacts")
        p.add_argument("--checkpoints", default=None,
                       help="comma-separated KL checkpoint steps")

    p_synth = sub.add_parser("synth", help="print the synthesized gains and filter as JSON")
    common(p_synth)

    p_rdf = sub.add_parser("rdf", help="print the rate floor R(gamma) as CSV")
    common(p_rdf)
    p_rdf.add_argument("--gammas", default=None, help="comma-separated budgets")

    p_sim = sub.add_parser("simulate", help="run one experiment and report pass/fail")
    common(p_sim)
    p_sim.add_argument("--backend", choices=["python", "cython"], default=None)

    p_sweep = sub.add_parser("sweep", help="run a budget sweep, emit combined CSV")
    common(p_sweep)
    p_sweep.add_argument("--gammas", required=True, help="comma-separated budgets")
    p_sweep.add_argument("--backend", choices=["python", "cython"], default=None)

    p_val = sub.add_parser("validate", help="run the built-in invariant suite")
    common(p_val, config_required=False)
    p_val.add_argument("--backend", choices=["python", "cython"], default=None)

    return parser


_SYNTH_STAGES = {"dare", "rdf", "sensitivity", "kalman", "warmup", "config"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "rdf": _cmd_rdf,
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except QuantLqgError as exc:
        from .errors import DimensionMismatch, ValueOutOfRange

        stage = getattr(exc, "stage", None)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if stage is None and isinstance(exc, (DimensionMismatch, ValueOutOfRange)):
            return EXIT_IO
        return EXIT_SYNTH


if __name__ == "__main__":
    sys.exit(main())
