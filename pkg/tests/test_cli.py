import json
import os

import pytest

from zoclip import cli, harness


def write_config(tmp_path, **extra):
    lines = [
        "d = 10",
        "M = 16",
        "iter_budget = 25",
        "validation_seeds = 2",
        "evaluation_seeds = 2",
        "stepsize_grid = 0.05, 0.1",
        "tau_grid = 1, 4",
        "rvec_grid = 1, 4",
    ]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path = tmp_path / "exp.cfg"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestParser:
    def test_requires_subcommand(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([])

    def test_run_defaults(self):
        args = cli.build_parser().parse_args(["run"])
        assert args.method == "scalar_clip"
        assert args.format == "csv"

    def test_seed_and_out_override(self, tmp_path):
        cfg = write_config(tmp_path)
        args = cli.build_parser().parse_args(
            ["tune", "--config", cfg, "--seed", "7", "--out", "elsewhere"]
        )
        config = cli.load_config(args)
        assert config.master_seed == 7
        assert config.output_dir == "elsewhere"
        assert config.d == 10


class TestCommands:
    def test_run_writes_records(self, tmp_path, capsys):
        cfg = write_config(tmp_path, output_dir=str(tmp_path / "out"))
        rc = cli.main(["run", "--config", cfg, "--method", "scalar_clip", "--alpha", "0.05"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "final_grad_norm=" in out
        records = harness.parse_csv(str(tmp_path / "out" / "records.csv"))
        assert len(records) == 25
        assert records[0]["method"] == "scalar_clip"

    def test_run_jsonl_format(self, tmp_path):
        cfg = write_config(tmp_path, output_dir=str(tmp_path / "out"))
        rc = cli.main(["run", "--config", cfg, "--method", "raw", "--format", "jsonl"])
        assert rc == 0
        path = tmp_path / "out" / "records.jsonl"
        rows = [json.loads(ln) for ln in path.read_text().splitlines()]
        assert len(rows) == 25
        assert set(rows[0]) == set(harness.RECORD_COLUMNS)

    def test_tune_prints_cells(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert cli.main(["tune", "--config", cfg]) == 0
        out = capsys.readouterr().out
        for method in ("raw", "vector_clip", "scalar_clip"):
            assert method in out

    def test_rep_writes_artifacts(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out_dir = str(tmp_path / "rep")
        assert cli.main(["rep", "--config", cfg, "--out", out_dir]) == 0
        assert os.path.exists(os.path.join(out_dir, "summary.csv"))
        assert os.path.exists(os.path.join(out_dir, "records.csv"))
        assert "median_final" in capsys.readouterr().out

    def test_plan_base_and_momentum(self, capsys):
        assert cli.main(["plan", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "alpha = 0.25" in out
        assert "variant = base" in out
        assert "eps_exponent = 5.0" in out
        assert cli.main(["plan", "--beta", "0.5"]) == 0
        out = capsys.readouterr().out
        assert "variant = momentum" in out
        assert "constant_approximate = True" in out

    def test_check_small_sample(self, tmp_path, capsys):
        cfg = write_config(tmp_path, output_dir=str(tmp_path / "chk"))
        rc = cli.main(["check", "--config", cfg, "--samples", "20000"])
        out = capsys.readouterr().out
        assert rc == 0, out
        rows = harness.parse_csv(str(tmp_path / "chk" / "checks.csv"))
        assert rows and all(r["passed"] for r in rows)
