import math

import pytest
from click.testing import CliRunner

from fedlamb.cli import main
from fedlamb.config import ConfigError, parse_config, write_config
from fedlamb.federation import RoundMetrics
from fedlamb.runner import (
    DEFAULT_GRIDS,
    METRIC_COLUMNS,
    compare_protocols,
    grid_sweep,
    rounds_to_target,
    run_experiment,
    run_single,
)

MINIMAL = """\
protocol = fed-lamb
model = logistic
input_dim = 4
classes = 2
n_clients = 2
rounds = 3
"""

SMALL = MINIMAL + """\
train_per_class = 20
test_per_class = 10
batch_size = 16
alpha = 0.05
seed = 1
"""


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def rows_without_wall_time(path):
    lines = path.read_text().splitlines()
    return [",".join(line.split(",")[:-1]) for line in lines]


class TestParseConfig:
    def test_minimal_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, MINIMAL))
        assert cfg.beta1 == 0.9
        assert cfg.beta2 == 0.999
        assert cfg.eps == 1e-8
        assert cfg.lazy_period == 1
        assert cfg.lam == 0.0
        assert cfg.phi == "identity"

    def test_zero_participation_rejected(self, tmp_path):
        path = write(tmp_path, MINIMAL + "participation = 0\n")
        with pytest.raises(ConfigError, match="participation"):
            parse_config(path)

    def test_unknown_key_names_line(self, tmp_path):
        path = write(tmp_path, MINIMAL + "learning_rate = 0.1\n")
        with pytest.raises(ConfigError, match=":7"):
            parse_config(path)

    def test_type_mismatch_names_key(self, tmp_path):
        path = write(tmp_path, MINIMAL + "rounds = many\n")
        with pytest.raises(ConfigError, match="rounds"):
            parse_config(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        text = "# header\n\n" + MINIMAL + "alpha = 0.05  # tuned\n"
        cfg = parse_config(write(tmp_path, text))
        assert cfg.alpha == 0.05

    def test_write_then_parse_round_trip(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL))
        cfg.milestones = (30, 70)
        cfg.hidden = (128, 64)
        cfg.iid = False
        cfg.noise = 2.5
        out = tmp_path / "copy.cfg"
        write_config(cfg, out)
        assert parse_config(out) == cfg

    def test_adp_fed_requires_both_rates(self, tmp_path):
        path = write(tmp_path, MINIMAL.replace("fed-lamb", "adp-fed"))
        with pytest.raises(ConfigError, match="eta_local"):
            parse_config(path)

    def test_bad_phi_spec(self, tmp_path):
        path = write(tmp_path, MINIMAL + "phi = clipped:2\n")
        with pytest.raises(ConfigError, match="phi"):
            parse_config(path)


class TestRunExperiment:
    def test_row_count_matches_rounds(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL))
        out = tmp_path / "m.csv"
        run_experiment(cfg, out=out)
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(METRIC_COLUMNS)
        assert len(lines) == 1 + 3
        summary = (tmp_path / "m.csv.summary.txt").read_text()
        assert "best_test_accuracy" in summary

    def test_replay_identical_excluding_wall_time(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_experiment(cfg, out=a)
        run_experiment(cfg, out=b)
        assert rows_without_wall_time(a) == rows_without_wall_time(b)

    def test_repeat_writes_per_seed_files_and_stats(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL + "repeat = 3\n"))
        out = tmp_path / "r.csv"
        summary = run_experiment(cfg, out=out)
        for seed in (1, 2, 3):
            assert (tmp_path / f"r_seed{seed}.csv").exists()
        assert summary["repeats"] == 3
        assert summary["stddev_best_test_accuracy"] >= 0.0

    def test_reshard_each_round_runs(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL + "reshard_each_round = true\n"))
        history = run_single(cfg, cfg.seed)
        assert len(history) == 3


class TestGridSweep:
    def test_single_value_matches_run_experiment(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL))
        rows = grid_sweep(cfg, grid=[0.05], out_dir=tmp_path / "sweep")
        assert len(rows) == 1
        direct = run_experiment(cfg, out=tmp_path / "direct.csv")
        assert rows[0]["mean_best_test_accuracy"] == direct["mean_best_test_accuracy"]

    def test_default_layerwise_grid_has_nine_entries(self):
        grid = DEFAULT_GRIDS["fed-lamb"]
        assert grid == [0.001, 0.003, 0.005, 0.01, 0.03, 0.05, 0.1, 0.3, 0.5]

    def test_report_ranked_by_best_accuracy(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL))
        rows = grid_sweep(cfg, grid=[0.001, 0.05, 0.3], out_dir=tmp_path / "sweep")
        accs = [row["mean_best_test_accuracy"] for row in rows]
        assert accs == sorted(accs, reverse=True)
        report = (tmp_path / "sweep" / "fed-lamb_sweep.csv").read_text().splitlines()
        assert len(report) == 4
        top = float(report[1].split(",")[2])
        assert top == max(accs)

    def test_empty_grid_rejected(self, tmp_path):
        cfg = parse_config(write(tmp_path, SMALL))
        with pytest.raises(ConfigError):
            grid_sweep(cfg, grid=[], out_dir=tmp_path / "sweep")


class TestCompare:
    def test_identical_configs_identical_columns(self, tmp_path):
        a = parse_config(write(tmp_path, SMALL))
        b = parse_config(write(tmp_path, SMALL, name="b.cfg"))
        table = compare_protocols([a, b], target=0.5)
        la, lb = table["protocols"]
        assert table["accuracy"][la] == table["accuracy"][lb]
        assert table["rounds_to_target"][la] == table["rounds_to_target"][lb]

    def test_rounds_to_target_definition(self):
        def m(r, acc):
            return RoundMetrics(r, 0.0, acc, 0.0, 0, 0, 0, 0.0)

        history = [m(1, 0.5), m(2, 0.91), m(3, 0.89), m(4, 0.95)]
        assert rounds_to_target(history, 0.9) == 2
        assert rounds_to_target(history, 0.99) == math.inf

    def test_mismatched_data_rejected(self, tmp_path):
        a = parse_config(write(tmp_path, SMALL))
        b = parse_config(write(tmp_path, SMALL + "noise = 9.0\n", name="b.cfg"))
        with pytest.raises(ConfigError, match="noise"):
            compare_protocols([a, b])

    def test_table_file_layout(self, tmp_path):
        a = parse_config(write(tmp_path, SMALL))
        b = parse_config(write(tmp_path, SMALL.replace("fed-lamb", "fed-sgd"), name="b.cfg"))
        out = tmp_path / "cmp.csv"
        compare_protocols([a, b], target=0.5, out=out)
        lines = out.read_text().splitlines()
        assert lines[0] == "round,fed-lamb,fed-sgd"
        assert len(lines) == 1 + 3 + 1
        assert lines[-1].startswith("rounds_to_target,")


class TestCli:
    def test_run_command(self, tmp_path):
        path = write(tmp_path, SMALL)
        out = tmp_path / "cli.csv"
        result = CliRunner().invoke(main, ["run", str(path), "--out", str(out), "--quiet"])
        assert result.exit_code == 0, result.output
        assert "best accuracy" in result.output
        assert out.exists()

    def test_run_seed_override_changes_metrics(self, tmp_path):
        path = write(tmp_path, SMALL)
        outs = []
        for seed in (1, 2):
            out = tmp_path / f"s{seed}.csv"
            result = CliRunner().invoke(
                main, ["run", str(path), "--seed", str(seed), "--out", str(out), "--quiet"]
            )
            assert result.exit_code == 0, result.output
            outs.append(rows_without_wall_time(out))
        assert outs[0] != outs[1]

    def test_run_invalid_config_nonzero_exit(self, tmp_path):
        path = write(tmp_path, MINIMAL + "participation = 0\n")
        result = CliRunner().invoke(main, ["run", str(path)])
        assert result.exit_code != 0
        assert "participation" in result.output

    def test_sweep_command_custom_grid(self, tmp_path):
        path = write(tmp_path, SMALL)
        result = CliRunner().invoke(
            main, ["sweep", str(path), "0.01,0.05", "--out", str(tmp_path / "sw")]
        )
        assert result.exit_code == 0, result.output
        assert result.output.count("best_acc=") == 2

    def test_compare_command(self, tmp_path):
        a = write(tmp_path, SMALL)
        b = write(tmp_path, SMALL.replace("fed-lamb", "fed-sgd"), name="b.cfg")
        result = CliRunner().invoke(
            main, ["compare", str(a), str(b), "--target", "0.5"]
        )
        assert result.exit_code == 0, result.output
        assert "fed-lamb" in result.output and "fed-sgd" in result.output
