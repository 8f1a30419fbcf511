"""Experiment orchestration: config -> synthesis -> warm-up -> evaluation.

The pipeline solves the control Riccati equation, the rate SDP, and the
filter synthesis, warm-starts the symbol PMF by running the very same
loop under a broad bootstrap code, then evaluates the final coded loop
and compares the measured bitrate against the SDP floor and the
floor + 2 + m*eta ceiling.  Everything downstream of the config is a
pure function of (config, seed); reports and CSVs are byte-reproducible.
"""

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from ._rng import derive_key
from .codec import LatticePmf, build_pmf, geometric_pmf
from .errors import (
    DimensionMismatch,
    EmptyHistogram,
    InsufficientWarmup,
    ParseError,
    QuantLqgError,
    ValueOutOfRange,
)
from .loop import Trace, burn_in_steps, run_loop
from .rdf import RdfProblem, rate_curve, solve_rdf
from .synthesis import (
    CoderSynthesis,
    PlantModel,
    kalman_synthesis,
    sensitivity_factorization,
    solve_dare,
)

# Warm-up and evaluation runs get distinct substreams of the master seed,
# so the histogram the code is built from never shares noise with the
# data it is scored on.
_WARMUP_SALT = 0xA24BAED4963EE407
_EVAL_SALT = 0x8C6E1C8B2C8F3A61

_BOOTSTRAP_DECAY = 0.9

ETA_BITS = 1.0 + 0.5 * math.log2(2.0 * math.pi * math.e / 12.0)
CEILING_GAP_BITS = 2.0


def ceiling_bits(rate_lower: float, m: int) -> float:
    return rate_lower + CEILING_GAP_BITS + m * ETA_BITS


# --------------------------------------------------------------------------
# configuration


_REQUIRED = ("m", "u", "A", "B", "W", "Q", "Phi", "gamma")
_OPTIONAL = {
    "X0": None,
    "delta": 1.0,
    "seed": 1,
    "warmup_steps": 10_000,
    "eval_steps": 100_000,
    "tail_epsilon": 1e-3,
    "tail_decay": 0.5,
    "checkpoints": None,
}


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    u: int
    A: tuple
    B: tuple
    W: tuple
    Q: tuple
    Phi: tuple
    X0: tuple
    gamma: float
    delta: float
    seed: int
    warmup_steps: int
    eval_steps: int
    tail_epsilon: float
    tail_decay: float
    checkpoints: tuple

    def matrix(self, name: str) -> np.ndarray:
        flat = getattr(self, name)
        rows = self.u if name == "Phi" else self.m
        cols = self.u if name == "B" else (self.u if name == "Phi" else self.m)
        return np.array(flat, dtype=float).reshape(rows, cols)

    def to_plant(self) -> PlantModel:
        return PlantModel(
            A=self.matrix("A"), B=self.matrix("B"), W=self.matrix("W"),
            Q=self.matrix("Q"), Phi=self.matrix("Phi"), X0=self.matrix("X0"),
        )


def _want_int(field, value, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"field {field!r} must be an integer, got {value!r}")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ValueOutOfRange(f"field {field!r} = {value} outside [{lo}, {hi}]")
    return value


def _want_real(field, value, positive=False, open_unit=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"field {field!r} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueOutOfRange(f"field {field!r} must be finite")
    if positive and not value > 0.0:
        raise ValueOutOfRange(f"field {field!r} must be positive, got {value}")
    if open_unit and not (0.0 < value < 1.0):
        raise ValueOutOfRange(f"field {field!r} must lie in (0, 1), got {value}")
    return value


def _want_flat_matrix(field, value, rows, cols):
    if not isinstance(value, list) or any(
        isinstance(v, (list, dict, bool)) or not isinstance(v, (int, float)) for v in value
    ):
        raise ParseError(f"field {field!r} must be a flat row-major array of numbers")
    if len(value) != rows * cols:
        raise DimensionMismatch(
            f"field {field!r} has {len(value)} entries, expected {rows}x{cols}={rows * cols}"
        )
    vals = tuple(float(v) for v in value)
    if any(not math.isfinite(v) for v in vals):
        raise ValueOutOfRange(f"field {field!r} contains a non-finite entry")
    return vals


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Strict parse: unknown fields rejected, shapes cross-checked."""
    if not isinstance(raw, dict):
        raise ParseError("config root must be a JSON object")
    known = set(_REQUIRED) | set(_OPTIONAL)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ParseError(f"unknown config fields: {', '.join(unknown)}")
    missing = [f for f in _REQUIRED if f not in raw]
    if missing:
        raise ParseError(f"missing config fields: {', '.join(missing)}")

    m = _want_int("m", raw["m"], lo=1)
    u = _want_int("u", raw["u"], lo=1)
    A = _want_flat_matrix("A", raw["A"], m, m)
    B = _want_flat_matrix("B", raw["B"], m, u)
    W = _want_flat_matrix("W", raw["W"], m, m)
    Q = _want_flat_matrix("Q", raw["Q"], m, m)
    Phi = _want_flat_matrix("Phi", raw["Phi"], u, u)
    if "X0" in raw and raw["X0"] is not None:
        X0 = _want_flat_matrix("X0", raw["X0"], m, m)
    else:
        X0 = tuple(0.0 for _ in range(m * m))
    gamma = _want_real("gamma", raw["gamma"], positive=True)
    delta = _want_real("delta", raw.get("delta", _OPTIONAL["delta"]), positive=True)
    seed = _want_int("seed", raw.get("seed", _OPTIONAL["seed"]), lo=0, hi=2**64 - 1)
    warmup = _want_int("warmup_steps", raw.get("warmup_steps", _OPTIONAL["warmup_steps"]), lo=1)
    evals = _want_int("eval_steps", raw.get("eval_steps", _OPTIONAL["eval_steps"]), lo=1)
    eps = _want_real("tail_epsilon", raw.get("tail_epsilon", _OPTIONAL["tail_epsilon"]), open_unit=True)
    decay = _want_real("tail_decay", raw.get("tail_decay", _OPTIONAL["tail_decay"]), open_unit=True)

    checkpoints = raw.get("checkpoints")
    if checkpoints is not None:
        if not isinstance(checkpoints, list) or not checkpoints:
            raise ParseError("field 'checkpoints' must be a nonempty array of step counts")
        pts = tuple(_want_int(f"checkpoints[{i}]", v, lo=1) for i, v in enumerate(checkpoints))
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueOutOfRange("checkpoints must be strictly increasing")
        if pts[-1] > evals:
            raise ValueOutOfRange(
                f"last checkpoint {pts[-1]} exceeds eval_steps {evals}"
            )
        checkpoints = pts

    return ExperimentConfig(
        m=m, u=u, A=A, B=B, W=W, Q=Q, Phi=Phi, X0=X0, gamma=gamma, delta=delta,
        seed=seed, warmup_steps=warmup, eval_steps=evals, tail_epsilon=eps,
        tail_decay=decay, checkpoints=checkpoints,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"config {path} is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc
    return config_from_dict(raw)


# --------------------------------------------------------------------------
# synthesis chain with stage attribution


def _staged(stage, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except QuantLqgError as exc:
        message = exc.args[0] if exc.args else exc.__class__.__name__
        exc.args = (f"{stage}: {message}",) + tuple(exc.args[1:])
        exc.stage = stage
        raise


def synthesize_system(plant: PlantModel, gamma: float, delta: float):
    """solve_dare -> solve_rdf -> sensitivity -> filter gains.

    The SDP's optimal posterior covariance becomes the filter's target:
    the prior is propagated one step through the plant and the
    sensitivity matrix extracts exactly the information gap between them.
    """
    gains = _staged("dare", solve_dare, plant)
    solution = _staged(
        "rdf", lambda: solve_rdf(RdfProblem(plant=plant, gains=gains, gamma=gamma))
    )
    p_hat = solution.P
    p_plus = plant.A @ p_hat @ plant.A.T + plant.W
    p_plus = 0.5 * (p_plus + p_plus.T)
    C = _staged("sensitivity", sensitivity_factorization, p_hat, p_plus, delta)
    J, L, R_cl = _staged("kalman", kalman_synthesis, plant.A, p_plus, C, delta)
    synthesis = CoderSynthesis(
        P_hat=p_hat, P_plus=p_plus, C=C, Delta=delta, J=J, L=L, R_cl=R_cl,
        rate_bound=solution.rate_bits,
    )
    return gains, solution, synthesis


def warmup_pmf(config: ExperimentConfig, plant=None, gains=None, synthesis=None) -> LatticePmf:
    """Histogram the symbol stream under a bootstrap code, then freeze it.

    The loop dynamics do not depend on which lossless code carries the
    symbols, so running the warm-up with a broad two-sided-geometric
    prior gives an unbiased sample of the invariant symbol law.
    """
    if plant is None or gains is None or synthesis is None:
        plant = _staged("config", config.to_plant)
        gains, _, synthesis = synthesize_system(plant, config.gamma, config.delta)
    burn = burn_in_steps(synthesis.R_cl)
    if config.warmup_steps <= burn:
        raise InsufficientWarmup(
            f"warmup_steps={config.warmup_steps} does not clear the burn-in of {burn} steps"
        )
    bootstrap = geometric_pmf(plant.m, config.delta, decay=_BOOTSTRAP_DECAY)
    trace = _staged(
        "warmup", run_loop, plant, gains, synthesis, bootstrap,
        derive_key(config.seed, _WARMUP_SALT), config.warmup_steps,
    )
    seg = trace.Q[burn:]
    uniq, counts = np.unique(seg, axis=0, return_counts=True)
    histogram = {tuple(int(v) for v in row): int(c) for row, c in zip(uniq, counts)}
    return build_pmf(histogram, tail_epsilon=config.tail_epsilon,
                     tail_decay=config.tail_decay, Delta=config.delta)


# --------------------------------------------------------------------------
# estimators


def _histogram(rows: np.ndarray) -> dict:
    if rows.shape[0] == 0:
        raise EmptyHistogram("no samples in the requested window")
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return {tuple(int(v) for v in row): int(c) for row, c in zip(uniq, counts)}


def kl_estimate(histogram: dict, pmf: LatticePmf) -> float:
    """Plug-in KL divergence (bits) of the empirical law from the pmf.

    Finite for any histogram because the pmf's geometric tail keeps every
    lattice point at positive mass.
    """
    if not histogram:
        raise EmptyHistogram("histogram has no entries")
    total = sum(histogram.values())
    if total <= 0:
        raise EmptyHistogram("histogram counts are all zero")
    out = 0.0
    for k, c in histogram.items():
        if c <= 0:
            continue
        f = c / total
        out += f * math.log2(f / pmf.mass_float(k))
    return out


def _kl_with_se(histogram: dict, pmf: LatticePmf):
    """Plug-in KL and its delta-method standard error."""
    total = sum(histogram.values())
    kl = kl_estimate(histogram, pmf)
    var = 0.0
    for k, c in histogram.items():
        if c <= 0:
            continue
        f = c / total
        g = math.log2(f / pmf.mass_float(k))
        var += f * (g - kl) ** 2
    return kl, math.sqrt(max(var, 0.0) / total)


def entropy_estimate(histogram: dict) -> float:
    """Plug-in entropy (bits) of an empirical law."""
    if not histogram:
        raise EmptyHistogram("histogram has no entries")
    total = sum(histogram.values())
    out = 0.0
    for c in histogram.values():
        if c > 0:
            f = c / total
            out -= f * math.log2(f)
    return out


def default_checkpoints(eval_steps: int, burn_in: int, count: int = 7) -> tuple:
    """Logarithmically spaced checkpoints after burn-in, ending at T."""
    start = max(2 * burn_in, 100)
    if start >= eval_steps:
        return (eval_steps,)
    pts = np.geomspace(start, eval_steps, num=count)
    out = sorted({int(round(p)) for p in pts} | {eval_steps})
    return tuple(p for p in out if p >= start) or (eval_steps,)


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class Report:
    gamma: float
    m: int
    seed: int
    eta_bits: float
    rate_lower_bits: float
    rate_ceiling_bits: float
    measured_bitrate_bits: float
    bitrate_se: float
    measured_cost: float
    entropy_estimate_bits: float
    kl_curve: tuple
    kl_se: tuple
    pass_flags: dict
    warmup_steps: int
    eval_steps: int
    backend: str

    @property
    def passed(self) -> bool:
        return all(self.pass_flags.values())

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "m": self.m,
            "seed": self.seed,
            "eta_bits": self.eta_bits,
            "rate_lower_bits": self.rate_lower_bits,
            "rate_ceiling_bits": self.rate_ceiling_bits,
            "measured_bitrate_bits": self.measured_bitrate_bits,
            "bitrate_se": self.bitrate_se,
            "measured_cost": self.measured_cost,
            "entropy_estimate_bits": self.entropy_estimate_bits,
            "kl_curve": [[int(t), kl] for t, kl in self.kl_curve],
            "kl_se": list(self.kl_se),
            "pass_flags": dict(self.pass_flags),
            "passed": self.passed,
            "warmup_steps": self.warmup_steps,
            "eval_steps": self.eval_steps,
            "backend": self.backend,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def write(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_json())
            fh.write("\n")


_BITRATE_SLACK = 0.05
_COST_SLACK = 1.05
_ENTROPY_SLACK = 0.1
_CONVERGENCE_TOL = 0.01


def _kl_monotone(kls, ses) -> bool:
    for (k0, s0), (k1, s1) in zip(zip(kls, ses), zip(kls[1:], ses[1:])):
        if k1 > k0 + 2.0 * math.sqrt(s0 * s0 + s1 * s1):
            return False
    return True


def _converged(trace: Trace) -> bool:
    """Running averages at T and T/10 agree within 1%."""
    T = trace.T
    if T < 10:
        return False
    cost = np.cumsum(trace.stage)
    bits = np.cumsum(trace.lengths)
    early = T // 10
    c_early, c_full = cost[early - 1] / early, cost[T - 1] / T
    b_early, b_full = bits[early - 1] / early, bits[T - 1] / T
    c_ok = abs(c_full - c_early) <= _CONVERGENCE_TOL * max(abs(c_full), 1e-30)
    b_ok = abs(b_full - b_early) <= _CONVERGENCE_TOL * max(abs(b_full), 1e-30)
    return bool(c_ok and b_ok)


def analyze_trace(trace: Trace, pmf: LatticePmf, gamma: float, rate_lower: float,
                  m: int, burn_in: int, checkpoints, seed: int,
                  warmup_steps: int) -> Report:
    rate_ceiling = ceiling_bits(rate_lower, m)
    lengths = trace.lengths.astype(float)
    bitrate = float(np.mean(lengths))
    bitrate_se = float(np.std(lengths) / math.sqrt(trace.T))
    cost = trace.mean_cost

    pts = tuple(checkpoints) if checkpoints else default_checkpoints(trace.T, burn_in)
    kls, ses, curve = [], [], []
    prev = burn_in
    for t in pts:
        lo = min(prev, t - 1)
        seg = trace.Q[lo:t]
        if seg.shape[0] == 0:
            continue
        kl, se = _kl_with_se(_histogram(seg), pmf)
        kls.append(kl)
        ses.append(se)
        curve.append((int(t), kl))
        prev = t
    final_lo = min(max(burn_in, pts[-2] if len(pts) > 1 else burn_in), trace.T - 1)
    entropy = entropy_estimate(_histogram(trace.Q[final_lo:]))

    flags = {
        "bitrate_in_band": rate_lower - _BITRATE_SLACK <= bitrate <= rate_ceiling + _BITRATE_SLACK,
        "cost_within_budget": cost <= _COST_SLACK * gamma,
        "entropy_sandwich": entropy <= rate_lower + m * ETA_BITS + _ENTROPY_SLACK,
        "kl_monotone": _kl_monotone(kls, ses),
        "converged": _converged(trace),
    }
    return Report(
        gamma=gamma, m=m, seed=seed, eta_bits=ETA_BITS,
        rate_lower_bits=rate_lower, rate_ceiling_bits=rate_ceiling,
        measured_bitrate_bits=bitrate, bitrate_se=bitrate_se, measured_cost=cost,
        entropy_estimate_bits=entropy, kl_curve=tuple(curve), kl_se=tuple(ses),
        pass_flags=flags, warmup_steps=warmup_steps, eval_steps=trace.T,
        backend=trace.backend,
    )


def run_experiment(config: ExperimentConfig, out_dir=None, write_trace: bool = False,
                   backend: str = None):
    """Full pipeline; returns (Report, Trace, LatticePmf, CoderSynthesis)."""
    plant = _staged("config", config.to_plant)
    gains, solution, synthesis = synthesize_system(plant, config.gamma, config.delta)
    pmf = warmup_pmf(config, plant=plant, gains=gains, synthesis=synthesis)
    burn = burn_in_steps(synthesis.R_cl)
    trace = _staged(
        "loop", run_loop, plant, gains, synthesis, pmf,
        derive_key(config.seed, _EVAL_SALT), config.eval_steps, backend=backend,
    )
    report = analyze_trace(
        trace, pmf, config.gamma, solution.rate_bits, plant.m, burn,
        config.checkpoints, config.seed, config.warmup_steps,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.write(os.path.join(out_dir, "report.json"))
        pmf.save(os.path.join(out_dir, "pmf.json"))
        if write_trace:
            trace.to_csv(os.path.join(out_dir, "trace.csv"))
            trace.write_summary_json(os.path.join(out_dir, "trace_summary.json"))
    return report, trace, pmf, synthesis


def sweep(config: ExperimentConfig, gamma_list, out_dir=None, backend: str = None):
    """One experiment per gamma; failures are isolated per row.

    Returns a list of {gamma, report, error} dicts in input order.  All
    rows share the master seed (common random numbers), which makes the
    rate-vs-budget curve smoother than independent seeding would.
    """
    gammas = [float(g) for g in gamma_list]
    if not gammas or any(b <= a for a, b in zip(gammas, gammas[1:])) or gammas[0] <= 0:
        raise ValueOutOfRange("gamma list must be positive and strictly increasing")
    rows = []
    for g in gammas:
        cfg = replace(config, gamma=g)
        try:
            report, _, _, _ = run_experiment(cfg, backend=backend)
            rows.append({"gamma": g, "report": report, "error": None})
        except QuantLqgError as exc:
            rows.append({"gamma": g, "report": None, "error": f"{type(exc).__name__}: {exc}"})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_sweep_csv(rows, os.path.join(out_dir, "sweep.csv"))
    return rows


def sweep_csv_text(rows) -> str:
    lines = ["gamma,rate_lower,rate_ceiling,measured_bitrate,measured_cost,entropy_est,pass"]
    for row in rows:
        rep = row["report"]
        if rep is None:
            lines.append(f"{row['gamma']!r},,,,,,error")
        else:
            lines.append(
                f"{rep.gamma!r},{rep.rate_lower_bits!r},{rep.rate_ceiling_bits!r},"
                f"{rep.measured_bitrate_bits!r},{rep.measured_cost!r},"
                f"{rep.entropy_estimate_bits!r},{1 if rep.passed else 0}"
            )
    return "\n".join(lines) + "\n"


def write_sweep_csv(rows, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(sweep_csv_text(rows))


def rate_table(plant: PlantModel, gains, gammas):
    """R(gamma) curve rows as (gamma, rate_bits or None, error or None)."""
    return rate_curve(plant, gains, gammas)
