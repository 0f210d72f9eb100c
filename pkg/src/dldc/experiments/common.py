"""Run context, acceptance checks and deterministic output writers shared by all experiments."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..optim import fmt


@dataclass
class Check:
    """One acceptance criterion as evaluated by an experiment."""

    criterion: int
    claim: str
    passed: bool
    measured: dict = field(default_factory=dict)
    tolerance: str = ""
    runtime_s: float = 0.0
    budget_s: float | None = None

    def to_json(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


class RunContext:
    """Owns one output directory; every file written through it is inventoried."""

    def __init__(self, out_dir, seed: int, figures: bool = True):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seed = int(seed)
        self.figures = figures
        self.outputs: list[str] = []
        self.checks: list[Check] = []

    def path(self, name: str) -> Path:
        if name not in self.outputs:
            self.outputs.append(name)
        return self.out / name

    def write_csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        return p

    def figure(self, name: str, draw: Callable) -> Path | None:
        """Render ``draw(fig)`` to a PNG unless figures are disabled."""
        if not self.figures:
            return None
        from .. import plotting
        p = self.path(name)
        plotting.render(p, draw)
        return p

    def check(self, criterion: int, claim: str, passed: bool, measured: dict,
              tolerance: str, started: float, budget_s: float | None = None) -> Check:
        c = Check(criterion, claim, bool(passed), measured, tolerance,
                  round(time.perf_counter() - started, 3), budget_s)
        self.checks.append(c)
        return c


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def curve_is_monotone(losses, jump: float = 10.0, skip: float = 0.0) -> bool:
    """Final loss below the initial one and no epoch-to-epoch increase above ``jump`` times.

    The jump rule ignores the first ``skip`` fraction of the logged epochs.
    """
    L = np.asarray(losses, dtype=float)
    if L.size < 2:
        return True
    tail = L[int(skip * L.size):]
    return bool(L[-1] < L[0] and np.all(tail[1:] <= jump * tail[:-1]))
