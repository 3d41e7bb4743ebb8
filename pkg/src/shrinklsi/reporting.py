"""Run records: machine-readable reports, verdicts, and CSV sidecars.

A verdict is a pure function of a stored number and its threshold, so the
pass/fail column of any saved record can be re-derived from the record
alone.  Floats in CSV files carry 17 significant digits; JSON uses
shortest round-trip representation.  Identical configs produce identical
records apart from the timestamp fields.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import json
import os

import numpy as np

__all__ = ["Verdict", "RunRecord", "make_verdict", "write_record", "write_csv"]

_OPS = {
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
    "==": lambda v, t: v == t,
}


@dataclasses.dataclass(frozen=True)
class Verdict:
    name: str
    value: float
    op: str
    threshold: float
    passed: bool

    def as_dict(self):
        return dataclasses.asdict(self)


def make_verdict(name, value, op, threshold):
    if op not in _OPS:
        raise ValueError(f"unknown verdict op {op!r}")
    value = float(value)
    threshold = float(threshold)
    return Verdict(name=name, value=value, op=op, threshold=threshold,
                   passed=bool(_OPS[op](value, threshold)))


def _jsonable(obj):
    if isinstance(obj, Verdict):
        return obj.as_dict()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        for f in dataclasses.fields(obj):
            if f.name in ("values", "log_values", "samples", "probes", "landscape",
                          "matrix", "chart", "raw"):
                continue
            out[f.name] = _jsonable(getattr(obj, f.name))
        return out
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


@dataclasses.dataclass
class RunRecord:
    """One CLI run: config echo, per-module reports, verdicts."""

    command: str
    config_hash: str
    config: dict
    seed: int
    started_at: str
    finished_at: str = ""
    reports: dict = dataclasses.field(default_factory=dict)
    verdicts: list = dataclasses.field(default_factory=list)

    @classmethod
    def begin(cls, command, cfg):
        return cls(
            command=command,
            config_hash=cfg.config_hash(),
            config=cfg.raw,
            seed=cfg.seed,
            started_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        )

    def add_verdict(self, name, value, op, threshold):
        v = make_verdict(name, value, op, threshold)
        self.verdicts.append(v)
        return v

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)

    def finish(self):
        self.finished_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        return self

    def as_dict(self):
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "config": self.config,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "reports": _jsonable(self.reports),
            "verdicts": [v.as_dict() for v in self.verdicts],
            "passed": self.passed,
        }


def write_record(record, outdir, name="run_record.json"):
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w") as fh:
        json.dump(record.as_dict(), fh, indent=2)
        fh.write("\n")
    return path


def write_csv(outdir, name, header, rows):
    """CSV sidecar with 17-significant-digit floats.  Returns the path."""
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, name)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                f"{v:.17g}" if isinstance(v, (float, np.floating)) else v
                for v in row
            ])
    return path
