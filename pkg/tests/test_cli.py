import json

import pytest

from upliftemm.cli import main
from upliftemm.io import dump_json, market_to_json
from upliftemm.model import DiscreteJumpSpec, MarketSpec

from conftest import make_three_stock_market


@pytest.fixture
def workdir(tmp_path):
    dump_json(market_to_json(make_three_stock_market()), tmp_path / "market.json")
    dump_json({"retain": [0, 1], "neglect": [2]}, tmp_path / "plan.json")
    dump_json(
        {"type": "call", "asset": 0, "strike": 100.0, "discounted": True},
        tmp_path / "payoff.json",
    )
    return tmp_path


def run(*argv) -> int:
    return main([str(a) for a in argv])


class TestValidate:
    def test_ok_market(self, workdir, capsys):
        code = run("validate", "-m", workdir / "market.json")
        assert code == 0
        assert "OK" in capsys.readouterr().out

    def test_violations_exit_one(self, workdir, tmp_path):
        spec = make_three_stock_market()
        bad = MarketSpec(
            horizon=1.0, s0=spec.s0, alpha=spec.alpha, rate=spec.rate,
            sigma=spec.sigma,
            jumps=DiscreteJumpSpec(
                intensities=[2.0, 1.0, 3.0],
                loadings=[
                    [0.1, -1.5, 0.2],
                    [0.05, 0.1, -0.15],
                    [-0.1, 0.3, 0.25],
                ],
            ),
        )
        dump_json(market_to_json(bad), tmp_path / "bad.json")
        assert run("validate", "-m", tmp_path / "bad.json") == 1

    def test_missing_file_is_config_error(self, tmp_path):
        assert run("validate", "-m", tmp_path / "nope.json") == 2

    def test_usage_error(self):
        assert run("validate") == 2


class TestSolve:
    def test_reports_minimum_norm_for_incomplete(self, workdir):
        out = workdir / "solve.json"
        assert run("solve", "-m", workdir / "market.json", "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["tag"] == "IncompleteArbitrageFree"
        assert doc["nullspace_dim"] == 1

    def test_reduced_market_solution(self, workdir):
        # reduce, then solve the fictitious market file
        fict_path = workdir / "fict.json"
        assert run(
            "reduce", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--out", fict_path,
        ) == 0
        out = workdir / "solve.json"
        assert run("solve", "-m", fict_path, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["tag"] == "Complete"
        assert doc["theta"][0] == pytest.approx(0.5, abs=1e-10)
        assert doc["lambda_tilde"] == pytest.approx([1.5, 1.2], abs=1e-10)
        assert doc["residual"] < 1e-10


class TestRoundTrips:
    def test_reduce_output_validates(self, workdir):
        fict_path = workdir / "fict.json"
        run("reduce", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--out", fict_path)
        assert run("validate", "-m", fict_path) == 0

    def test_uplift_output_prices(self, workdir):
        emm_path = workdir / "emm.json"
        assert run(
            "uplift", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--out", emm_path,
        ) == 0
        doc = json.loads(emm_path.read_text())
        assert doc["verify"]["passed"]
        out = workdir / "price.json"
        assert run(
            "price", "-m", workdir / "market.json", "-e", emm_path,
            "--payoff", workdir / "payoff.json",
            "--paths", "2000", "--seed", "5", "--out", out,
        ) == 0
        rep = json.loads(out.read_text())
        assert rep["n_paths"] == 2000 and rep["estimate"] > 0

    def test_incomplete_uplift_exits_one(self, workdir, capsys):
        dump_json({"retain": [0], "neglect": [1, 2]}, workdir / "short.json")
        with pytest.warns(UserWarning):
            code = run(
                "uplift", "-m", workdir / "market.json", "-p", workdir / "short.json"
            )
        assert code == 1
        assert "NotComplete" in capsys.readouterr().err


class TestSimulate:
    def test_jsonl_records(self, workdir):
        out = workdir / "paths.jsonl"
        assert run(
            "simulate", "-m", workdir / "market.json", "--paths", "5",
            "--seed", "9", "--out", out,
        ) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 5
        rec = json.loads(lines[0])
        assert set(rec) == {"stream", "events", "terminal", "z"}
        assert len(rec["terminal"]) == 3

    def test_measure_flag_changes_law_not_schema(self, workdir):
        emm_path = workdir / "emm.json"
        run("uplift", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--out", emm_path)
        out = workdir / "q.jsonl"
        assert run(
            "simulate", "-m", workdir / "market.json", "--paths", "3",
            "--seed", "9", "--measure", emm_path, "--out", out,
        ) == 0
        assert len(out.read_text().strip().splitlines()) == 3


class TestVerifySuite:
    def test_pass_and_byte_identical_across_threads(self, workdir):
        args = [
            "verify", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--paths", "10000", "--seed", "42",
        ]
        out1, out2 = workdir / "r1.json", workdir / "r2.json"
        assert run(*args, "--threads", "1", "--out", out1) == 0
        assert run(*args, "--threads", "4", "--out", out2) == 0
        b1, b2 = out1.read_bytes(), out2.read_bytes()
        assert b1 == b2
        doc = json.loads(b1)
        assert doc["aggregate"] == "PASS"
        assert set(doc["checks"]) == {
            "uplift", "restriction", "projection", "martingale", "density_mass",
        }

    def test_check_filter(self, workdir):
        out = workdir / "only.json"
        assert run(
            "verify", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--paths", "4000", "--seed", "1", "--checks", "martingale",
            "--out", out,
        ) == 0
        doc = json.loads(out.read_text())
        assert list(doc["checks"]) == ["martingale"]

    def test_unknown_check_is_usage_error(self, workdir):
        assert run(
            "verify", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--checks", "nonsense",
        ) == 2

    def test_env_var_overrides_default_seed(self, workdir, monkeypatch):
        monkeypatch.setenv("UPLIFTEMM_SEED", "0x123")
        emm_path = workdir / "emm.json"
        run("uplift", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--out", emm_path)
        out = workdir / "price_env.json"
        assert run(
            "price", "-m", workdir / "market.json", "-e", emm_path,
            "--payoff", workdir / "payoff.json", "--paths", "500", "--out", out,
        ) == 0
        assert json.loads(out.read_text())["seed"] == 0x123

    def test_tampered_emm_fails_suite(self, workdir):
        emm_path = workdir / "emm.json"
        run("uplift", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "--out", emm_path)
        doc = json.loads(emm_path.read_text())
        doc["lambda_tilde"][2] = {"const": 3.1}  # perturb the neglected rate
        dump_json(doc, workdir / "tampered.json")
        out = workdir / "tampered_report.json"
        code = run(
            "verify", "-m", workdir / "market.json", "-p", workdir / "plan.json",
            "-e", workdir / "tampered.json",
            "--paths", "4000", "--seed", "3", "--checks", "uplift",
            "--out", out,
        )
        assert code == 1
        report = json.loads(out.read_text())
        assert report["aggregate"] == "FAIL"
        assert not report["checks"]["uplift"]["passed"]
