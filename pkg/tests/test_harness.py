"""Config parsing, warm-up, information metrics, reports, sweep, CLI exits."""

import json
import math
from fractions import Fraction

import numpy as np
import pytest

from _oracles import two_sided_geometric_samples
from quantlqg import cli
from quantlqg.codec import LatticePmf, geometric_pmf
from quantlqg.errors import (
    DimensionMismatch,
    Infeasible,
    InsufficientWarmup,
    ParseError,
    ValueOutOfRange,
)
from quantlqg.harness import (
    ETA_BITS,
    Report,
    ceiling_bits,
    config_from_dict,
    default_checkpoints,
    entropy_estimate,
    kl_estimate,
    load_config,
    run_experiment,
    sweep,
    sweep_csv_text,
    synthesize_system,
    warmup_pmf,
)

SCALAR = {
    "m": 1, "u": 1,
    "A": [2.0], "B": [1.0], "W": [1.0], "Q": [1.0], "Phi": [1.0],
    "gamma": 6.354101966249685,
}


def scalar_config(**overrides):
    raw = dict(SCALAR)
    raw.update(overrides)
    return config_from_dict(raw)


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = scalar_config()
        assert cfg.delta == 1.0
        assert cfg.tail_epsilon == 1e-3
        assert cfg.tail_decay == 0.5
        assert cfg.seed == 1
        assert cfg.warmup_steps == 10_000
        assert cfg.eval_steps == 100_000
        assert cfg.checkpoints is None
        np.testing.assert_array_equal(cfg.matrix("X0"), [[0.0]])

    def test_unknown_fields_rejected(self):
        with pytest.raises(ParseError, match="wavelength"):
            scalar_config(wavelength=3)

    def test_missing_fields_rejected(self):
        raw = dict(SCALAR)
        del raw["gamma"]
        with pytest.raises(ParseError, match="gamma"):
            config_from_dict(raw)

    def test_wrong_matrix_size_rejected(self):
        raw = dict(SCALAR, m=2, u=1,
                   A=[1.0, 0.0, 0.0, 1.0, 0.0, 0.0],  # 2x3, not square
                   B=[1.0, 0.0], W=[1.0, 0.0, 0.0, 1.0],
                   Q=[1.0, 0.0, 0.0, 1.0], Phi=[1.0])
        with pytest.raises(DimensionMismatch):
            config_from_dict(raw)

    def test_tail_epsilon_range_checked(self):
        with pytest.raises(ValueOutOfRange):
            scalar_config(tail_epsilon=1.5)
        with pytest.raises(ValueOutOfRange):
            scalar_config(tail_decay=0.0)

    def test_strict_types(self):
        with pytest.raises(ParseError):
            scalar_config(m=True)
        with pytest.raises(ParseError):
            scalar_config(A=[[2.0]])  # nested, not flat row-major
        with pytest.raises(ValueOutOfRange):
            scalar_config(eval_steps=-5)
        with pytest.raises(ValueOutOfRange):
            scalar_config(seed=-1)

    def test_checkpoints_must_ascend_within_horizon(self):
        cfg = scalar_config(checkpoints=[10, 100, 1000], eval_steps=1000)
        assert cfg.checkpoints == (10, 100, 1000)
        with pytest.raises(ValueOutOfRange):
            scalar_config(checkpoints=[100, 10])
        with pytest.raises(ValueOutOfRange):
            scalar_config(checkpoints=[10, 2_000_000], eval_steps=1000)

    def test_load_config_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"m": 1,\n  "u": oops}\n')
        with pytest.raises(ParseError, match="line"):
            load_config(path)
        with pytest.raises(ParseError):
            load_config(tmp_path / "absent.json")

    def test_config_round_trips_through_plant(self):
        cfg = scalar_config()
        plant = cfg.to_plant()
        assert plant.A[0, 0] == 2.0
        assert plant.m == 1


class TestWarmup:
    def test_mode_sits_at_the_origin(self):
        cfg = scalar_config(warmup_steps=100_000, seed=4)
        pmf = warmup_pmf(cfg)
        assert pmf.top_symbols(1)[0] == (0,)
        assert pmf.m == 1

    def test_too_short_warmup_is_refused(self):
        cfg = scalar_config(warmup_steps=10)
        with pytest.raises(InsufficientWarmup):
            warmup_pmf(cfg)

    def test_same_seed_same_pmf(self):
        a = warmup_pmf(scalar_config(warmup_steps=5000, seed=12))
        b = warmup_pmf(scalar_config(warmup_steps=5000, seed=12))
        assert a.to_json() == b.to_json()
        c = warmup_pmf(scalar_config(warmup_steps=5000, seed=13))
        assert a.to_json() != c.to_json()


class TestInformationMetrics:
    def test_kl_of_samples_from_the_law_itself(self):
        rho = 0.5
        pmf = geometric_pmf(1, 1.0, decay=rho)
        rng = np.random.default_rng(5)
        draws = two_sided_geometric_samples(rng, rho, 1_000_000)
        vals, counts = np.unique(draws, return_counts=True)
        hist = {(int(v),): int(c) for v, c in zip(vals, counts)}
        assert kl_estimate(hist, pmf) <= 0.02

    def test_kl_of_the_law_against_itself(self):
        pmf = geometric_pmf(1, 1.0, decay=0.5)
        hist = {}
        for k in pmf.top_symbols(1000):
            hist[k] = int(round(pmf.mass_float(k) * 10**9))
        assert kl_estimate(hist, pmf) <= 1e-3

    def test_kl_of_a_point_mass_on_a_half_probability_symbol(self):
        core = {(0,): Fraction(1, 2), (-1,): Fraction(1, 4), (1,): Fraction(1, 4)}
        pmf = LatticePmf(m=1, Delta=1.0, core=core, tail_epsilon=0.0, tail_decay=0.5)
        assert pmf.mass((0,)) == Fraction(1, 2)
        assert kl_estimate({(0,): 12345}, pmf) == 1.0

    def test_entropy_estimate(self):
        hist = {(0,): 1, (1,): 1, (2,): 1, (3,): 1}
        assert entropy_estimate(hist) == pytest.approx(2.0)
        assert entropy_estimate({(7,): 99}) == 0.0

    def test_default_checkpoints_are_log_spaced_and_end_at_t(self):
        pts = default_checkpoints(100_000, 28)
        assert pts[-1] == 100_000
        assert all(a < b for a, b in zip(pts, pts[1:]))
        assert pts[0] >= 56


class TestReport:
    def test_ceiling_identity(self):
        eta = 1.0 + 0.5 * math.log2(2.0 * math.pi * math.e / 12.0)
        assert ETA_BITS == pytest.approx(eta, abs=1e-15)
        for m in (1, 2, 5):
            assert ceiling_bits(1.7, m) - 1.7 == pytest.approx(2.0 + m * eta, abs=1e-12)

    def test_run_is_deterministic(self):
        cfg = scalar_config(warmup_steps=2000, eval_steps=3000, seed=8)
        rep1 = run_experiment(cfg)[0]
        rep2 = run_experiment(cfg)[0]
        assert rep1.to_json() == rep2.to_json()

    def test_report_fields_are_consistent(self):
        cfg = scalar_config(warmup_steps=2000, eval_steps=3000, seed=8)
        report, trace, pmf, synthesis = run_experiment(cfg)
        assert report.eval_steps == trace.T == 3000
        assert report.measured_bitrate_bits == pytest.approx(trace.mean_bitrate_bits)
        assert report.rate_ceiling_bits - report.rate_lower_bits == pytest.approx(
            2.0 + ETA_BITS, abs=1e-12
        )
        assert report.kl_curve[-1][0] == 3000
        parsed = json.loads(report.to_json())
        assert parsed["backend"] == trace.backend

    def test_infeasible_budget_carries_its_stage(self):
        cfg = scalar_config(gamma=1.0)
        with pytest.raises(Infeasible) as info:
            run_experiment(cfg)
        assert getattr(info.value, "stage", None) == "rdf"
        assert "rdf" in str(info.value)

    def test_artifacts_land_in_the_out_dir(self, tmp_path):
        cfg = scalar_config(warmup_steps=2000, eval_steps=3000, seed=8)
        run_experiment(cfg, out_dir=tmp_path, write_trace=True)
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "pmf.json").exists()
        assert (tmp_path / "trace.csv").exists()
        assert (tmp_path / "trace_summary.json").exists()
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["gamma"] == pytest.approx(SCALAR["gamma"])


class TestSweep:
    def test_rows_follow_the_rate_curve(self):
        s = 2.0 + math.sqrt(5.0)
        cfg = scalar_config(warmup_steps=20_000, eval_steps=100_000, seed=3)
        gammas = [1.2 * s, 1.5 * s, 2.0 * s, 3.0 * s, 5.0 * s]
        rows = sweep(cfg, gammas)
        assert len(rows) == 5
        rates = []
        for row, gamma in zip(rows, gammas):
            rep = row["report"]
            assert row["error"] is None
            assert rep.gamma == pytest.approx(gamma)
            assert rep.rate_lower_bits - 0.05 <= rep.measured_bitrate_bits
            assert rep.measured_bitrate_bits <= rep.rate_ceiling_bits + 0.05
            rates.append((rep.measured_bitrate_bits, rep.bitrate_se))
        for (r1, se1), (r2, se2) in zip(rates, rates[1:]):
            assert r2 <= r1 + 2.0 * math.hypot(se1, se2)

    def test_singleton_sweep_equals_run_experiment(self):
        cfg = scalar_config(warmup_steps=2000, eval_steps=3000, seed=8)
        row = sweep(cfg, [SCALAR["gamma"]])[0]
        direct = run_experiment(cfg)[0]
        assert row["report"].to_json() == direct.to_json()

    def test_bad_budget_is_isolated(self):
        cfg = scalar_config(warmup_steps=2000, eval_steps=3000, seed=8)
        rows = sweep(cfg, [1.0, SCALAR["gamma"]])
        assert rows[0]["report"] is None
        assert "floor" in rows[0]["error"]
        assert rows[1]["report"] is not None

    def test_csv_rendering(self):
        cfg = scalar_config(warmup_steps=2000, eval_steps=3000, seed=8)
        rows = sweep(cfg, [1.0, SCALAR["gamma"]])
        text = sweep_csv_text(rows)
        lines = text.strip().split("\n")
        assert lines[0] == ("gamma,rate_lower,rate_ceiling,measured_bitrate,"
                            "measured_cost,entropy_est,pass")
        assert lines[1].endswith("error")
        assert len(lines) == 3


class TestCliExitCodes:
    def write_config(self, tmp_path, **overrides):
        raw = dict(SCALAR)
        raw.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(raw))
        return str(path)

    def test_simulate_passing_run_exits_zero(self, tmp_path, capsys):
        # seed chosen so the 10%-prefix and full running averages already
        # agree inside the 1% convergence gate at this short horizon
        path = self.write_config(tmp_path, warmup_steps=20_000,
                                 eval_steps=100_000, seed=5)
        assert cli.main(["simulate", "--config", path]) == 0
        out = capsys.readouterr().out
        assert "PASS  bitrate_in_band" in out
        assert "FAIL" not in out

    def test_unconverged_run_exits_two(self, tmp_path, capsys):
        path = self.write_config(tmp_path, warmup_steps=2000, eval_steps=600,
                                 seed=8)
        assert cli.main(["simulate", "--config", path]) == 2

    def test_infeasible_budget_exits_three(self, tmp_path, capsys):
        path = self.write_config(tmp_path, gamma=1.0)
        assert cli.main(["simulate", "--config", path]) == 3

    def test_parse_failure_exits_four(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{this is not json")
        assert cli.main(["simulate", "--config", str(bad)]) == 4
        assert cli.main(["simulate", "--config", str(tmp_path / "nope.json")]) == 4

    def test_validate_suite_passes(self, capsys):
        assert cli.main(["validate"]) == 0

    def test_synth_prints_the_gains(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        assert cli.main(["synth", "--config", path]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["S"][0][0] == pytest.approx(2.0 + math.sqrt(5.0), abs=1e-9)

    def test_rdf_curve_subcommand(self, tmp_path, capsys):
        path = self.write_config(tmp_path)
        code = cli.main(["rdf", "--config", path,
                         "--gammas", "6.0,6.354101966249685,8.0"])
        assert code == 0
        out = capsys.readouterr().out
        assert "6.354101966249685" in out

    def test_sweep_writes_combined_csv(self, tmp_path):
        path = self.write_config(tmp_path, warmup_steps=2000, eval_steps=3000,
                                 seed=8)
        out_dir = tmp_path / "out"
        code = cli.main(["sweep", "--config", path,
                         "--gammas", "6.354101966249685,12.0",
                         "--out", str(out_dir)])
        assert code in (0, 2)  # tiny horizons may fail convergence flags
        text = (out_dir / "sweep.csv").read_text()
        assert text.startswith("gamma,rate_lower")
        assert len(text.strip().split("\n")) == 3
