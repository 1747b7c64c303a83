"""
Tests for the command-line interface: exit codes, run-directory contents and sweeps.
"""

import csv
import json

import pytest

from cli.commands import UsageError
from cli.sweep import expand_grid, flags_to_argv, parse_grid
from main import main


def data_args(files):
    train, valid, test = files
    return ["--train", str(train), "--valid", str(valid), "--test", str(test)]


def train_args(files, run_dir, *extra):
    return [
        "train", *data_args(files),
        "--model", "nsf-transe", "--dim", "8", "--lr", "0.001", "--batch-size", "32",
        "--max-epochs", "2", "--no-wall-time", "--run-dir", str(run_dir), *extra,
    ]


class TestStats:
    """Tests for the stats command"""

    def test_prints_counts(self, toy_files, capsys):
        """Test the five counts of the toy files"""
        assert main(["stats", *data_args(toy_files)]) == 0
        assert "entities=5 relations=2 train=4 valid=1 test=1" in capsys.readouterr().out

    def test_check_match(self, toy_files):
        """Test --check with the right counts"""
        assert main(["stats", *data_args(toy_files), "--check", "5,2,4,1,1"]) == 0

    def test_check_mismatch(self, toy_files):
        """Test --check with wrong counts exits 3"""
        assert main(["stats", *data_args(toy_files), "--check", "5,2,4,1,2"]) == 3

    def test_preset_mismatch(self, toy_files):
        """Test a dataset preset against toy files"""
        assert main(["stats", *data_args(toy_files), "--preset", "wn18"]) == 3

    def test_malformed_check(self, toy_files):
        """Test --check with too few counts is a usage error"""
        assert main(["stats", *data_args(toy_files), "--check", "5,2"]) == 2

    def test_missing_file(self, toy_files, tmp_path):
        """Test that an unreadable file exits 1"""
        train, valid, _ = toy_files
        assert main(["stats", "--train", str(train), "--valid", str(valid), "--test", str(tmp_path / "nope.txt")]) == 1


class TestTrainCommand:
    """Tests for the train command"""

    def test_missing_train_flag(self, toy_files):
        """Test argparse usage exit"""
        with pytest.raises(SystemExit) as exc_info:
            main(["train", "--valid", "v", "--test", "t", "--model", "transe", "--dim", "4", "--lr", "0.1", "--batch-size", "2"])
        assert exc_info.value.code == 2

    def test_negatives_with_nsf_model(self, planted_files, tmp_path):
        """Test that --n-neg with an NSF model is a usage error"""
        assert main(train_args(planted_files, tmp_path / "run", "--n-neg", "3")) == 2

    def test_sdbn_with_baseline(self, planted_files, tmp_path):
        """Test that NSF-only flags are refused for baselines"""
        args = train_args(planted_files, tmp_path / "run", "--sdbn")
        args[args.index("nsf-transe")] = "transe"
        assert main(args) == 2

    def test_invalid_alpha(self, planted_files, tmp_path):
        """Test that an out-of-range alpha is a usage error"""
        assert main(train_args(planted_files, tmp_path / "run", "--alpha", "1.5")) == 2

    def test_run_directory_contents(self, planted_files, tmp_path):
        """Test that a run writes manifest, metrics, checkpoint, reports and log"""
        run_dir = tmp_path / "run"
        assert main(train_args(planted_files, run_dir, "--sdbn")) == 0

        for name in ("manifest.json", "metrics.jsonl", "best.kgnsf", "eval_test_raw.json", "eval_test_filt.json", "train.log"):
            assert (run_dir / name).exists(), name

        records = [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in records] == [1, 2]
        assert all(r["wall_seconds"] == 0.0 for r in records)

        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["seed"] == 0
        assert manifest["config"]["flags"]["sdbn"] == 5
        assert set(json.loads((run_dir / "eval_test_filt.json").read_text())) == {
            "mr", "mrr", "hits1", "hits3", "hits10", "n_triples",
        }

    def test_refuses_existing_run_dir(self, planted_files, tmp_path):
        """Test that reruns need --force"""
        run_dir = tmp_path / "run"
        assert main(train_args(planted_files, run_dir)) == 0
        assert main(train_args(planted_files, run_dir)) == 1
        assert main(train_args(planted_files, run_dir, "--force")) == 0

    def test_bad_data_leaves_no_run_dir(self, planted_files, tmp_path):
        """Test that a failed load creates nothing, so the corrected rerun needs no --force"""
        run_dir = tmp_path / "run"
        _, valid, test = planted_files
        typo = (tmp_path / "missing.txt", valid, test)
        assert main(train_args(typo, run_dir)) == 1
        assert not run_dir.exists()
        assert main(train_args(planted_files, run_dir)) == 0

    def test_metrics_byte_identical(self, planted_files, tmp_path):
        """Test determinism of metrics.jsonl across runs"""
        assert main(train_args(planted_files, tmp_path / "a", "--seed", "3")) == 0
        assert main(train_args(planted_files, tmp_path / "b", "--seed", "3")) == 0
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()

    def test_baseline_model(self, planted_files, tmp_path):
        """Test a DistMult negative-sampling run"""
        args = train_args(planted_files, tmp_path / "run", "--n-neg", "2")
        args[args.index("nsf-transe")] = "distmult"
        assert main(args) == 0


class TestEvalCommand:
    """Tests for the eval command"""

    def test_valid_filtered_matches_best_epoch(self, planted_files, tmp_path, capsys):
        """Test that re-evaluating the checkpoint reproduces the best validation MRR"""
        run_dir = tmp_path / "run"
        assert main(train_args(planted_files, run_dir)) == 0
        capsys.readouterr()

        args = ["eval", "--checkpoint", str(run_dir / "best.kgnsf"), *data_args(planted_files), "--split", "valid", "--filtered"]
        assert main(args) == 0
        assert capsys.readouterr().out.startswith("MRR=")

        report = json.loads((run_dir / "eval_valid_filt.json").read_text())
        records = [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]
        assert report["mrr"] == pytest.approx(max(r["val_mrr_filtered"] for r in records), abs=1e-12)

    def test_raw_report(self, planted_files, tmp_path):
        """Test --raw writes the raw report"""
        run_dir = tmp_path / "run"
        assert main(train_args(planted_files, run_dir)) == 0
        assert main(["eval", "--checkpoint", str(run_dir / "best.kgnsf"), *data_args(planted_files), "--raw"]) == 0
        assert (run_dir / "eval_test_raw.json").exists()

    def test_corrupt_checkpoint(self, planted_files, tmp_path):
        """Test that a bad magic exits 1"""
        bad = tmp_path / "bad.kgnsf"
        bad.write_bytes(b"NOTAKG" + bytes(40))
        assert main(["eval", "--checkpoint", str(bad), *data_args(planted_files)]) == 1

    def test_checkpoint_kg_mismatch(self, planted_files, toy_files, tmp_path):
        """Test evaluating a checkpoint against a different KG"""
        run_dir = tmp_path / "run"
        assert main(train_args(planted_files, run_dir)) == 0
        assert main(["eval", "--checkpoint", str(run_dir / "best.kgnsf"), *data_args(toy_files)]) == 1


class TestSweep:
    """Tests for grid parsing and the sweep command"""

    def test_parse_grid(self, tmp_path):
        """Test comments, blank lines and optional dashes"""
        grid = tmp_path / "grid.txt"
        grid.write_text("# learning rates\nlr=0.001,0.0005\n\n--dim = 8, 16  # dims\n", encoding="utf-8")
        assert parse_grid(grid) == {"lr": ["0.001", "0.0005"], "dim": ["8", "16"]}

    def test_parse_grid_errors(self, tmp_path):
        """Test malformed and empty grids"""
        bad = tmp_path / "bad.txt"
        bad.write_text("lr 0.1\n", encoding="utf-8")
        with pytest.raises(UsageError):
            parse_grid(bad)
        empty = tmp_path / "empty.txt"
        empty.write_text("# nothing\n", encoding="utf-8")
        with pytest.raises(UsageError):
            parse_grid(empty)

    def test_expand_grid(self):
        """Test the cartesian product"""
        combos = expand_grid({"lr": ["0.1", "0.2"], "dim": ["4", "8", "16"]})
        assert len(combos) == 6
        assert combos[0] == {"lr": "0.1", "dim": "4"}
        assert combos[-1] == {"lr": "0.2", "dim": "16"}

    def test_boolean_flags(self):
        """Test true/false switch handling"""
        assert flags_to_argv({"extended-terms": "true", "sdbn": "off", "alpha": "0.3"}) == ["--extended-terms", "--alpha", "0.3"]

    @pytest.mark.slow
    def test_two_by_two_sweep(self, planted_files, tmp_path):
        """Test 4 run directories and a 4-row summary"""
        grid = tmp_path / "grid.txt"
        grid.write_text("lr=0.001,0.01\nalpha=0.0,1.0\n", encoding="utf-8")
        sweep_dir = tmp_path / "sweep"
        base = [*data_args(planted_files), "--model", "nsf-transe", "--dim", "8", "--batch-size", "32", "--max-epochs", "1"]

        assert main(["sweep", "--grid", str(grid), "--jobs", "2", "--sweep-dir", str(sweep_dir), "--", *base]) == 0

        with open(sweep_dir / "sweep_summary.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 4
        assert list(rows[0]) == ["run_dir", "model", "dim", "lr", "batch", "alpha", "loss", "sdbn",
                                 "val_mrr_filt", "test_mrr_filt", "epochs_to_best"]
        mrrs = [float(r["val_mrr_filt"]) for r in rows]
        assert mrrs == sorted(mrrs, reverse=True)
        assert all((sweep_dir / f"run_{i:03d}" / "metrics.jsonl").exists() for i in range(4))

    @pytest.mark.slow
    def test_all_failures(self, tmp_path):
        """Test that a sweep whose every child fails exits 1 and lists the failures"""
        grid = tmp_path / "grid.txt"
        grid.write_text("lr=0.1,0.2\n", encoding="utf-8")
        sweep_dir = tmp_path / "sweep"

        assert main(["sweep", "--grid", str(grid), "--sweep-dir", str(sweep_dir), "--", "--model", "nsf-transe"]) == 1

        with open(sweep_dir / "sweep_summary.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert all(r["val_mrr_filt"] == "" for r in rows)
