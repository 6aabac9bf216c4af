"""Command-line pipelines: flags, outputs, manifests, exit codes."""

import json

import numpy as np
from click.testing import CliRunner

from riskeig.cli import main


def _run(args):
    return CliRunner().invoke(main, args)


def _solve(outdir, *extra):
    return _run(["solve", "--model", "ou_quadratic", "--r", "8", "--h", "0.01",
                 "--out", str(outdir), *extra])


class TestSolve:
    def test_writes_result_fields_and_manifest(self, tmp_path):
        out = tmp_path / "run"
        res = _solve(out)
        assert res.exit_code == 0, res.output
        result = json.loads((out / "result.json").read_text())
        assert 0.2 < result["lambda"] < 0.25
        assert result["residual"] < 1e-10
        assert result["hjb_residual"] < 1e-9
        assert result["grid"] == {"r": 8.0, "h": 0.01, "dim": 1}
        assert len(result["v"]) == 1599
        assert (out / "fields" / "eigenfunction.csv").read_text().splitlines()[0] == "x1,v"

        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "solve"
        assert manifest["seed"] == 12345
        assert len(manifest["config_hash"]) == 64
        assert manifest["config"]["r"] == 8.0
        assert set(manifest["versions"]) == {"riskeig", "numpy", "scipy", "python"}

    def test_flags_change_the_config_hash(self, tmp_path):
        a = _solve(tmp_path / "a")
        b = _run(["solve", "--model", "ou_quadratic", "--r", "6", "--h", "0.01",
                  "--out", str(tmp_path / "b")])
        assert a.exit_code == 0 and b.exit_code == 0
        ha = json.loads((tmp_path / "a" / "manifest.json").read_text())["config_hash"]
        hb = json.loads((tmp_path / "b" / "manifest.json").read_text())["config_hash"]
        assert ha != hb

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        assert _solve(tmp_path / "a").exit_code == 0
        assert _solve(tmp_path / "b").exit_code == 0
        assert (tmp_path / "a" / "result.json").read_bytes() == \
            (tmp_path / "b" / "result.json").read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_floats_are_emitted_with_full_precision(self, tmp_path):
        out = tmp_path / "run"
        assert _solve(out).exit_code == 0
        text = (out / "result.json").read_text()
        lam_text = next(l for l in text.splitlines() if '"lambda"' in l)
        printed = lam_text.split(":")[1].strip().rstrip(",")
        assert f"{float(printed):.17g}" == printed


class TestSweep:
    def test_double_well_lambda_column_is_monotone(self, tmp_path):
        out = tmp_path / "run"
        res = _run(["sweep", "--model", "double_well", "--radii", "2,4,8",
                    "--h", "0.05", "--out", str(out)])
        assert res.exit_code == 0, res.output
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "radius,spacing,lambda,residual,policy_sweeps"
        lams = [float(l.split(",")[2]) for l in lines[1:]]
        assert len(lams) == 3
        # nondecreasing up to solver noise at saturated radii, with real
        # growth before saturation
        assert all(b >= a - 1e-8 for a, b in zip(lams, lams[1:]))
        assert lams[1] > lams[0] + 1e-3
        result = json.loads((out / "result.json").read_text())
        assert result["lambda_star"] >= lams[-1]
        assert [row["radius"] for row in result["rows"]] == [2.0, 4.0, 8.0]

    def test_thread_count_leaves_outputs_byte_identical(self, tmp_path):
        args = ["sweep", "--model", "ou_quadratic", "--radii", "1,2,3", "--h", "0.05"]
        assert _run(args + ["--threads", "1", "--out", str(tmp_path / "a")]).exit_code == 0
        assert _run(args + ["--threads", "3", "--out", str(tmp_path / "b")]).exit_code == 0
        assert (tmp_path / "a" / "result.json").read_bytes() == \
            (tmp_path / "b" / "result.json").read_bytes()
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == \
            (tmp_path / "b" / "sweep.csv").read_bytes()


class TestCertify:
    def test_benchmark_certifies_at_reduced_scale(self, tmp_path):
        out = tmp_path / "run"
        res = _run(["certify", "--model", "ou_quadratic", "--radii", "2,3,4",
                    "--h", "0.05", "--paths", "200", "--horizon", "10",
                    "--out", str(out)])
        assert res.exit_code == 0, res.output
        result = json.loads((out / "result.json").read_text())
        assert result["classification"] == "geometric-certified"
        assert result["certificate"]["delta_hat"] > 0
        header = (out / "fields" / "ground_state.csv").read_text().splitlines()[0]
        assert header.split(",")[:2] == ["x1", "psi"]
        assert "classification: geometric-certified" in res.output


class TestConfigFile:
    def test_flags_override_file_values(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(
            {"model": "ou_quadratic", "radii": [1.0, 2.0], "h": 0.1, "seed": 7}))
        out = tmp_path / "run"
        res = _run(["sweep", "--config", str(cfg), "--h", "0.05", "--out", str(out)])
        assert res.exit_code == 0, res.output
        conf = json.loads((out / "manifest.json").read_text())["config"]
        assert conf["h"] == 0.05          # flag wins
        assert conf["radii"] == [1.0, 2.0]
        assert conf["seed"] == 7

    def test_unknown_config_key_is_a_usage_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"model": "ou_quadratic", "bogus": 1}))
        res = _run(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert res.exit_code == 2
        assert "bogus" in res.output


class TestExitCodes:
    def test_missing_model_is_usage_error(self, tmp_path):
        res = _run(["solve", "--out", str(tmp_path / "o")])
        assert res.exit_code == 2
        assert "model" in res.output

    def test_zero_spacing_is_usage_error(self, tmp_path):
        res = _run(["solve", "--model", "ou_quadratic", "--h", "0",
                    "--out", str(tmp_path / "o")])
        assert res.exit_code == 2

    def test_unknown_subcommand_is_usage_error(self):
        assert _run(["frobnicate"]).exit_code == 2

    def test_unparseable_radii_is_usage_error(self, tmp_path):
        res = _run(["sweep", "--model", "ou_quadratic", "--radii", "2,foo",
                    "--out", str(tmp_path / "o")])
        assert res.exit_code == 2

    def test_decreasing_radii_is_usage_error(self, tmp_path):
        res = _run(["sweep", "--model", "ou_quadratic", "--radii", "4,2",
                    "--out", str(tmp_path / "o")])
        assert res.exit_code == 2

    def test_verify_rejects_non_benchmark_model(self, tmp_path):
        res = _run(["verify", "--model", "double_well", "--out", str(tmp_path / "o")])
        assert res.exit_code == 2

    def test_oversized_grid_is_infrastructure_error(self, tmp_path):
        out = tmp_path / "o"
        res = _run(["solve", "--model", "ou_quadratic", "--r", "8", "--h", "1e-7",
                    "--out", str(out)])
        assert res.exit_code == 3
        err = json.loads((out / "error.json").read_text())
        assert err["error"] == "ResourceError"
        # the manifest is written before compute starts, so the failed run
        # is still attributable
        assert (out / "manifest.json").exists()
