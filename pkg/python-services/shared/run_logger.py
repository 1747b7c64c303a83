"""
Run Logger - self-describing run directories
Writes the manifest, the append-only per-epoch metrics stream and evaluation reports
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

from .config import get_settings
from .errors import RunDirError
from .models import MetricsReport, RunManifest, TrainRecord


class RunLogger:
    """
    JSON writer for one run directory.

    Layout:
    - manifest.json       resolved configuration, written once before training
    - metrics.jsonl       one TrainRecord per epoch, append-only
    - eval_<split>_<raw|filt>.json   aggregate reports
    - best.kgnsf          checkpoint (written by the training command)
    """

    def __init__(self, run_dir: str, force: bool = False, create: bool = True):
        """
        Args:
            run_dir: Directory for this run
            force: Allow reusing a non-empty directory (existing metrics are truncated)
            create: Create the directory; False opens an existing run read-only
        """
        settings = get_settings()
        self.run_dir = Path(run_dir)
        self.metrics_path = self.run_dir / settings.metrics_name
        self.manifest_path = self.run_dir / settings.manifest_name
        self.checkpoint_path = self.run_dir / settings.checkpoint_name

        if create:
            if self.run_dir.exists() and any(self.run_dir.iterdir()) and not force:
                raise RunDirError(f"Run directory {self.run_dir} already exists (use --force to overwrite)")
            self.run_dir.mkdir(parents=True, exist_ok=True)
            if self.metrics_path.exists():
                self.metrics_path.unlink()
            logger.info(f"Run directory: {self.run_dir}")

    def log_manifest(self, manifest: RunManifest) -> Path:
        """Serialize the manifest once, before training begins."""
        self._write_json(self.manifest_path, json.loads(manifest.model_dump_json()))
        return self.manifest_path

    def log_record(self, record: TrainRecord) -> None:
        """Append one per-epoch record."""
        self._append_jsonl(self.metrics_path, record.model_dump())

    def write_report(self, split: str, report: MetricsReport) -> Path:
        """Write eval_<split>_<raw|filt>.json"""
        kind = "filt" if report.filtered else "raw"
        path = self.run_dir / f"eval_{split}_{kind}.json"
        self._write_json(path, report.to_report_dict())
        return path

    def read_manifest(self) -> Dict[str, Any]:
        return self.read_json(self.manifest_path)

    @staticmethod
    def read_json(path: Path) -> Dict[str, Any]:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def read_records(self) -> List[TrainRecord]:
        records = []
        if self.metrics_path.exists():
            with open(self.metrics_path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        records.append(TrainRecord(**json.loads(line)))
        return records

    def best_record(self) -> Optional[TrainRecord]:
        evaluated = [r for r in self.read_records() if r.val_mrr_filtered is not None]
        if not evaluated:
            return None
        return max(evaluated, key=lambda r: (r.val_mrr_filtered, -r.epoch))

    @staticmethod
    def _write_json(path: Path, payload: Dict) -> None:
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(payload, f, indent=2, sort_keys=False)
                f.write("\n")
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise

    @staticmethod
    def _append_jsonl(path: Path, payload: Dict) -> None:
        try:
            with open(path, "a", encoding="utf-8") as f:
                f.write(json.dumps(payload) + "\n")
        except OSError as e:
            logger.error(f"Failed to append to {path}: {e}")
            raise

