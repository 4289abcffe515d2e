import csv
import json
import math

import pytest

from reinsopt import cli
from reinsopt.experiments import TABLES, ExperimentConfig, run_asymptotics, run_figure_sweep, run_table

TINY = dict(m=5000, reps=3, n_grid=[5000, 500], history_policies=[100_000, 10_000], bayes_m=3000,
            bayes_reps=2, rmse_targets=[0.4], samplesize_models=[[4.0, 2.5]], a1_points=5,
            loadings_grid=[0.2, 0.5], omega_grid=[0.001, 0.004], models=["gaussian", "gamma"],
            samplesize_bounds=[200.0, 50_000.0])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def assert_numeric_cells_finite(header, rows):
    for row in rows:
        assert len(row) == len(header)
        for cell in row:
            try:
                value = float(cell)
            except ValueError:
                continue
            assert math.isfinite(value)


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig(**TINY)
        again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
        assert again == cfg
        assert again.dumps() == cfg.dumps()

    def test_file_round_trip(self, tmp_path):
        cfg = ExperimentConfig(family="pareto", seed=7)
        path = tmp_path / "cfg.json"
        path.write_text(cfg.dumps())
        assert ExperimentConfig.load(path) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            ExperimentConfig.from_dict({"m": 10, "bogus": 1})

    @pytest.mark.parametrize("changes", [
        {"family": "weibull"}, {"m": 0}, {"eps": 1.2}, {"principle": "variance"},
        {"rmse_targets": [1.5]}, {"a1_min": 900.0}, {"intensity": -1.0}, {"prior": "flat"},
    ])
    def test_validation(self, changes):
        with pytest.raises((ValueError, TypeError)):
            ExperimentConfig(**changes)

    def test_replace(self):
        cfg = ExperimentConfig().replace(m=123)
        assert cfg.m == 123
        with pytest.raises(ValueError):
            ExperimentConfig().replace(nope=1)

    def test_gaussian_surrogate(self):
        g = ExperimentConfig().model("gaussian")
        assert g.mean == pytest.approx(500.0)
        assert g.sd == pytest.approx(math.sqrt(50 * 325))

    def test_severity_override(self):
        cfg = ExperimentConfig(family="gamma", severity_params=[4.0, 2.5])
        assert cfg.model().params == (4.0, 2.5)


class TestTables:
    @pytest.fixture(scope="class")
    @classmethod
    def outputs(cls, tmp_path_factory):
        out = tmp_path_factory.mktemp("tables")
        cfg = ExperimentConfig(**TINY, out=str(out))
        return cfg, {tid: run_table(tid, cfg) for tid in TABLES}

    @pytest.mark.parametrize("table_id", sorted(TABLES))
    def test_schema(self, outputs, table_id):
        _, paths = outputs
        header, rows = read_csv(paths[table_id])
        assert rows
        assert "seed" in header
        assert_numeric_cells_finite(header, rows)
        manifest = json.loads(paths[table_id].with_suffix(".manifest.json").read_text())
        assert manifest["seed"] == TINY.get("seed", ExperimentConfig().seed)
        assert manifest["wall_time_s"] >= 0
        assert manifest["config"]["m"] == TINY["m"]

    @pytest.mark.parametrize("table_id", ["reserves", "optima", "bootstrap", "bayes-jeffreys"])
    def test_byte_identical(self, outputs, tmp_path, table_id):
        cfg, paths = outputs
        again = run_table(table_id, cfg.replace(out=str(tmp_path)))
        assert again.read_bytes() == paths[table_id].read_bytes()

    def test_optima_layout(self, outputs):
        _, paths = outputs
        header, rows = read_csv(paths["optima"])
        assert header[:5] == ["model", "principle", "a1", "a2_minus_a1", "ratio"]
        assert len(rows) == 2 * len(TINY["models"])

    def test_bootstrap_positive(self, outputs):
        _, paths = outputs
        header, rows = read_csv(paths["bootstrap"])
        mean_d = [float(r[header.index("mean_D")]) for r in rows]
        assert all(d > 0 for d in mean_d)

    def test_unknown_table(self):
        with pytest.raises(ValueError):
            run_table("table99", ExperimentConfig())


class TestFigureSweep:
    def test_curves(self, tmp_path):
        cfg = ExperimentConfig(m=200_000, models=["gaussian", "gamma", "lognormal", "pareto"], out=str(tmp_path))
        grid = list(range(440, 620, 4))
        header, rows = read_csv(run_figure_sweep(cfg, grid))
        minima = {}
        for row in rows:
            if row[header.index("feasible")] == "1":
                model, a1, ratio = row[0], float(row[1]), float(row[header.index("ratio")])
                if ratio < minima.get(model, (math.inf,))[0]:
                    minima[model] = (ratio, a1)
        published = {"gaussian": 12.43, "gamma": 12.46, "lognormal": 12.39, "pareto": 12.39}
        for model, (ratio, _) in minima.items():
            assert ratio == pytest.approx(published[model], abs=0.15)
        assert minima["gamma"][1] == pytest.approx(523, abs=30)
        values = [v[0] for v in minima.values()]
        assert max(values) - min(values) < 0.1

    def test_infeasible_flagged(self, tmp_path):
        cfg = ExperimentConfig(m=5000, models=["gamma"], out=str(tmp_path))
        # a tiny retention cedes so much that the surplus turns negative
        header, rows = read_csv(run_figure_sweep(cfg, [50.0, 300.0, 500.0, 5000.0]))
        flags = [row[header.index("feasible")] for row in rows]
        assert flags == ["0", "1", "1", "0"]
        assert rows[0][header.index("ratio")] == rows[-1][header.index("ratio")] == ""
        assert_numeric_cells_finite(header, rows)

    def test_empty_grid(self, tmp_path):
        with pytest.raises(ValueError):
            run_figure_sweep(ExperimentConfig(out=str(tmp_path)), [])


class TestAsymptotics:
    def test_columns(self, tmp_path):
        cfg = ExperimentConfig(m=20_000, reps=4, n_grid=[5000, 500], out=str(tmp_path))
        header, rows = read_csv(run_asymptotics(cfg))
        assert {r[1] for r in rows} == {"VaR", "CVaR"}
        for col in ("boot_slope", "asym_slope", "asym_mean_D", "boot_mean_D"):
            assert all(r[header.index(col)] not in ("", "nan") for r in rows)
        var_slope = float(rows[0][header.index("asym_slope")])
        cvar_slope = float(rows[-1][header.index("asym_slope")])
        assert var_slope == pytest.approx(-0.5)
        assert cvar_slope == pytest.approx(-1.0)


class TestCli:
    def test_table(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"m": 2000, "models": ["gamma"]}))
        code = cli.main(["table", "reserves", "--config", str(cfg), "--out", str(tmp_path), "--seed", "3"])
        assert code == 0
        assert (tmp_path / "reserves.csv").exists()
        manifest = json.loads((tmp_path / "reserves.manifest.json").read_text())
        assert manifest["seed"] == 3

    @pytest.mark.parametrize("command", ["simulate", "optimize"])
    def test_single_model(self, tmp_path, command):
        assert cli.main([command, "--m", "2000", "--out", str(tmp_path), "--family", "lognormal"]) == 0

    def test_error_is_structured(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code = cli.main(["table", "optima", "--config", str(cfg)])
        err = json.loads(capsys.readouterr().err)
        assert code == 1
        assert err["error"] == "ValueError"
        assert "bogus" in err["message"]

    def test_paper_scale(self):
        args = cli._parser().parse_args(["bootstrap", "--paper-scale"])
        cfg = cli.build_config(args)
        assert (cfg.m, cfg.reps) == (1_000_000, 100)
        args = cli._parser().parse_args(["bootstrap", "--paper-scale", "--m", "5000"])
        assert cli.build_config(args).m == 5000

    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"m": 2000, "reps": 3, "seed": 9}))
        args = cli._parser().parse_args(["bootstrap", "--config", str(cfg), "--paper-scale", "--reps", "7"])
        built = cli.build_config(args)
        assert (built.m, built.reps, built.seed) == (1_000_000, 7, 9)

    def test_defaults(self):
        cfg = cli.build_config(cli._parser().parse_args(["sweep"]))
        assert (cfg.m, cfg.reps) == (100_000, 20)
