import csv
import json

import numpy as np
import pytest

from pgff import cli, sk_solver
from pgff.errors import SolverDivergedError

SMALL = """
[references]
count = 2
seed = 3
duration_range = [0.3, 0.4]

[solver]
inner_steps = 5
max_sk_iterations = 3
"""


def read_columns(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.toml").write_text(SMALL)
    assert cli.main(["generate", "--config", str(d / "small.toml"), "--out", str(d / "data")]) == 0
    return d


@pytest.fixture(scope="module")
def fitted(workdir):
    out = workdir / "pg"
    args = ["fit", "--config", str(workdir / "small.toml"), "--data", str(workdir / "data"), "--out", str(out)]
    assert cli.main(args) == 0
    rat = workdir / "rat"
    args = args[:-1] + [str(rat), "--model", "rational-10th-order"]
    assert cli.main(args) == 0
    return out, rat


class TestConfig:
    def test_defaults(self):
        cfg = cli.load_config(None)
        assert cfg.selector == "pgff-parallel" and cfg.layer_sizes == (5, 10, 10, 1)
        sk = cfg.sk_config(initial_theta=sk_solver.ModelTheta([1.0], []))
        assert sk.lam == 1e-2 and sk.inner_optimizer == "lbfgs" and sk.warmup_iterations == 2

    def test_rational_defaults(self):
        cfg = cli.config_from_dict({"model": {"selector": "rational-10th-order"}})
        assert cfg.sk_config().lam == 0.0

    def test_overrides(self):
        cfg = cli.config_from_dict({"solver": {"lam": 0.5, "seed": 4}})
        sk = cfg.sk_config(lam=0.0, seed=9, initial_theta=sk_solver.ModelTheta([1.0], []))
        assert sk.lam == 0.0 and sk.seed == 9

    @pytest.mark.parametrize(
        "doc",
        [
            {"model": {"selector": "nope"}},
            {"model": {"depth": 3}},
            {"solver": {"learning": 1.0}},
            {"plant": {"mass": 1.0}},
            {"extra": {}},
            {"model": {"layer_sizes": [5, 10, 2]}},
        ],
    )
    def test_invalid(self, doc):
        with pytest.raises(cli.ConfigError):
            cli.config_from_dict(doc)

    def test_dump_roundtrip(self, tmp_path):
        cfg = cli.config_from_dict(
            {
                "plant": {"k2": 1.0 / 3.0},
                "references": {"count": 4, "stroke_range": [0.1, 0.2]},
                "solver": {"lam": 0.1, "initial_theta": {"a": [0.1, 1e-17], "b": [-0.3]}},
                "out": "runs/x",
            }
        )
        path = tmp_path / "c.toml"
        path.write_text(cli.dump_config(cfg))
        back = cli.load_config(path)
        assert back.plant == cfg.plant and back.profile == cfg.profile
        assert back.reference_count == 4 and back.out == "runs/x"
        assert back.solver["initial_theta"] == {"a": [0.1, 1e-17], "b": [-0.3]}

    def test_malformed_toml_exit_code(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[plant\nm1 = ")
        assert cli.main(["generate", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


class TestGenerate:
    def test_default_count(self, tmp_path):
        assert cli.main(["generate", "--out", str(tmp_path)]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["trajectories"]) == 9 and manifest["validation"] == "validation.csv"

    def test_deterministic(self, workdir, tmp_path):
        args = ["generate", "--config", str(workdir / "small.toml"), "--out", str(tmp_path)]
        assert cli.main(args) == 0
        for name in ("manifest.json", "trajectory_01.csv", "validation.csv"):
            assert (tmp_path / name).read_bytes() == (workdir / "data" / name).read_bytes()

    def test_seed_flag(self, workdir, tmp_path):
        args = ["generate", "--config", str(workdir / "small.toml"), "--seed", "4", "--out", str(tmp_path)]
        assert cli.main(args) == 0
        assert (tmp_path / "validation.csv").read_bytes() != (workdir / "data" / "validation.csv").read_bytes()

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["generate", "--out", str(blocker / "sub")]) == cli.EXIT_IO


class TestEvaluate:
    def test_exact_inverse(self, workdir):
        report = cli.cmd_evaluate(workdir / "data", workdir / "oracle")
        assert all(m.e2 < 1e-12 and m.f_err2 == 0 for m in report.references)
        assert report.validation.e2 < 1e-12

    def test_missing_dataset(self, tmp_path):
        assert cli.main(["evaluate", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == cli.EXIT_IO

    def test_metrics_must_be_finite(self):
        with pytest.raises(cli.SimulationError):
            cli.MetricsReport([cli.TrajectoryMetrics("a", float("nan"), 0.0)], None, [], [], 0.0)


class TestFit:
    def test_outputs(self, fitted):
        out, _ = fitted
        record = json.loads((out / "fit.json").read_text())
        assert record["procedure"] == "sk_fit_regularized" and record["solver"]["lam"] == 1e-2
        hist = read_columns(out / "history.csv")
        assert list(hist) == ["iteration", "J_SK", "J_OE", "R", "step"]
        assert len(hist["J_OE"]) == record["state"]["iteration"]
        assert np.array_equal(hist["J_OE"], record["state"]["oe_costs"])

    def test_rational_runs_unregularized(self, fitted):
        record = json.loads((fitted[1] / "fit.json").read_text())
        assert record["procedure"] == "sk_fit" and record["net"] is None
        assert len(record["theta"]["a"]) == 10 and len(record["theta"]["b"]) == 9

    def test_deterministic(self, workdir, fitted, tmp_path):
        args = ["fit", "--config", str(workdir / "small.toml"), "--data", str(workdir / "data"), "--out", str(tmp_path)]
        assert cli.main(args) == 0
        a = json.loads((tmp_path / "fit.json").read_text())
        b = json.loads((fitted[0] / "fit.json").read_text())
        assert a["theta"] == b["theta"] and a["net"] == b["net"]

    def test_lambda_zero_is_unregularized(self, workdir, tmp_path):
        args = ["fit", "--config", str(workdir / "small.toml"), "--data", str(workdir / "data"),
                "--lambda", "0", "--out", str(tmp_path)]
        assert cli.main(args) == 0
        record = json.loads((tmp_path / "fit.json").read_text())
        assert record["procedure"] == "sk_fit"
        assert all(r == 0 for r in record["state"]["reg_values"])

    def test_evaluation_split_identity(self, workdir, fitted):
        out = workdir / "ev"
        report = cli.cmd_evaluate(workdir / "data", out, fitted[0] / "fit.json", fitted[1] / "fit.json")
        cols = read_columns(out / "signals_validation.csv")
        assert np.abs(cols["f"] - cols["f_M"] - cols["f_C"]).max() <= 1e-12 * (1 + np.abs(cols["f"]).max())
        assert np.abs(cols["e"] - (cols["r"] - cols["y"])).max() == 0
        assert report.baseline_ratio is not None and report.baseline_ratio >= 0
        assert np.isclose(report.validation.e2, cols["e"] @ cols["e"], rtol=1e-12)
        saved = json.loads((out / "metrics.json").read_text())
        assert saved["validation"]["e2"] == report.validation.e2

    def test_solver_failure_exit_code(self, workdir, tmp_path, monkeypatch):
        def boom(*args):
            raise SolverDivergedError("diverged")

        monkeypatch.setattr(cli, "sk_fit_regularized", boom)
        args = ["fit", "--config", str(workdir / "small.toml"), "--data", str(workdir / "data"), "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_SOLVER

    def test_bad_fit_file(self, workdir, tmp_path):
        bad = tmp_path / "fit.json"
        bad.write_text("{}")
        args = ["evaluate", "--data", str(workdir / "data"), "--fit", str(bad), "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_CONFIG


def test_gradcheck(capsys):
    assert cli.main(["gradcheck", "--cases", "3", "--seed", "1"]) == 0
    assert "gradcheck passed" in capsys.readouterr().out
