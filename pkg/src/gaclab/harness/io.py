"""CSV and manifest persistence for harness runs."""
from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np


def format_value(v):
    """Deterministic text for one CSV cell (shortest round-trip float repr)."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def write_csv(path, columns, rows):
    """Write dict rows under a fixed header. Missing keys become empty cells."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256_file(path, chunk=1 << 16):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while block := fh.read(chunk):
            h.update(block)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Plain ``key = value`` record of one harness run.

    ``config`` holds the fully resolved settings, ``results`` the headline
    numbers, ``outputs`` maps a short name to a file written by the run.
    Checkpoint hashes are filled in by :meth:`write`.
    """

    command: str
    subcommand: str
    seed: int
    config: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    start_time: str = field(default_factory=_now)
    end_time: str = ""

    def write(self, path):
        self.end_time = _now()
        lines = [
            f"command = {self.command}",
            f"subcommand = {self.subcommand}",
            f"seed = {self.seed}",
            f"start_time = {self.start_time}",
            f"end_time = {self.end_time}",
        ]
        lines += [f"config.{k} = {format_value(v)}" for k, v in self.config.items()]
        lines += [f"result.{k} = {format_value(v)}" for k, v in self.results.items()]
        for name, p in self.outputs.items():
            if os.path.exists(p):
                lines.append(f"output.{name} = {p}")
        for name, p in self.checkpoints.items():
            if os.path.exists(p):
                lines.append(f"checkpoint.{name} = {p}")
                lines.append(f"sha256.{name} = {sha256_file(p)}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return path


def read_manifest(path):
    """Parse a manifest back into a flat ``{key: str}`` dict."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise ValueError(f"malformed manifest line: {line!r}")
            out[key.strip()] = value
    return out


def manifest_section(entries, prefix):
    """Sub-dict of ``entries`` whose keys start with ``prefix.`` (prefix stripped)."""
    n = len(prefix) + 1
    return {k[n:]: v for k, v in entries.items() if k.startswith(prefix + ".")}
