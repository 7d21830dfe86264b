"""Result files: JSON-lines, CSV and the run manifest.

Every float is written with 17 significant digits (``%.17g``), files are
UTF-8 with LF line endings, and NaN becomes ``null`` (JSON) or ``nan``
(CSV). Nothing time dependent goes into data files, so identical inputs
give byte-identical outputs; timestamps live only in the manifest.
"""
import csv
import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

def _encode(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ",".join(_encode(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(x)}" for k, x in v.items()) + "}"
    return json.dumps(str(v), ensure_ascii=False)


def dumps(record):
    return _encode(record)


def write_jsonl(path, records):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def run_id(command, config):
    """Deterministic id tying outputs to their manifest."""
    blob = json.dumps({"command": command, "config": config}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    started: str = field(default_factory=now)
    finished: str = None
    outputs: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    version: str = __version__

    @property
    def run_id(self):
        return run_id(self.command, self.config)

    def as_dict(self):
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "started": self.started,
            "finished": self.finished,
            "outputs": [str(p) for p in self.outputs],
            "results": self.results,
        }

    def write(self, path):
        self.finished = now()
        path = Path(path)
        text = json.dumps(json.loads(dumps(self.as_dict())), indent=2, sort_keys=True)
        path.write_text(text + "\n", encoding="utf-8")
        return path
