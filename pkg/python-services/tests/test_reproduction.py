"""
Desk-scale WN18 reproduction. Hours of CPU time; runs only when KGNSF_WN18_DIR
points at a directory holding train.txt, valid.txt and test.txt.
"""

import json
import os
from pathlib import Path

import pytest

from main import main

WN18_DIR = os.getenv("KGNSF_WN18_DIR")

pytestmark = [
    pytest.mark.reproduction,
    pytest.mark.slow,
    pytest.mark.skipif(not WN18_DIR, reason="KGNSF_WN18_DIR not set"),
]


def wn18_args():
    root = Path(WN18_DIR or ".")
    return ["--train", str(root / "train.txt"), "--valid", str(root / "valid.txt"), "--test", str(root / "test.txt")]


def test_wn18_statistics():
    """WN18 split counts"""
    assert main(["stats", *wn18_args(), "--preset", "wn18"]) == 0


def test_nsf_distmult_wn18(tmp_path):
    """NSF-DistMult without SDBN at lr=0.0001, d=500, b=500"""
    run_dir = tmp_path / "wn18"
    args = [
        "train", *wn18_args(), "--model", "nsf-distmult",
        "--dim", "500", "--lr", "0.0001", "--batch-size", "500",
        "--max-epochs", "200", "--patience", "5", "--run-dir", str(run_dir),
    ]
    assert main(args) == 0

    report = json.loads((run_dir / "eval_test_filt.json").read_text())
    assert report["mrr"] == pytest.approx(0.7955, abs=0.05)
    assert report["hits10"] == pytest.approx(0.9329, abs=0.02)

    records = [json.loads(line) for line in (run_dir / "metrics.jsonl").read_text().splitlines()]
    best_epoch = max(records, key=lambda r: (r["val_mrr_filtered"] or 0.0, -r["epoch"]))["epoch"]
    assert best_epoch <= 60
