"""Experiment registry, config handling, manifests and the reproduce-all harness."""

from __future__ import annotations

import copy
import datetime as _dt
import json
import logging
import sys
import time
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .. import __version__
from .calculus_runs import run_euler, run_quadrature, run_stencil
from .chidenn_run import run_chidenn
from .common import Check, RunContext, config_hash, sha256_file
from .sca_run import run_sca
from .stfem_run import run_stfem

log = logging.getLogger(__name__)

RUNNERS = {
    "stencil": run_stencil,
    "euler": run_euler,
    "quadrature": run_quadrature,
    "chidenn": run_chidenn,
    "stfem": run_stfem,
    "sca": run_sca,
}

# criterion -> (owning experiment, claim)
CRITERIA = {
    1: ("stencil", "trained 2- and 3-point stencils recover the classical weights"),
    2: ("stencil", "sine-trained stencil transfers to the cosine derivative"),
    3: ("euler", "Euler net recovers (1, dt) and integrates 15t^2 + 8t like classical Euler"),
    4: ("quadrature", "learned 2-, 3-, 4-point rules equal Gauss-Legendre"),
    5: ("chidenn", "C-HiDeNN delta, partition of unity and reproduction"),
    6: ("chidenn", "C-HiDeNN with s = 0 is linear FEM"),
    7: ("chidenn", "C-HiDeNN convergence rates and accuracy/DOF gains over FEM"),
    8: ("stfem", "clean SMD identification of (m, c, k)"),
    9: ("stfem", "identified SMD predicts new initial and load conditions"),
    10: ("stfem", "noisy SMD identification and prediction"),
    11: ("stfem", "autoregressive stepping equals direct solve; gradients verified"),
    12: ("sca", "SCA cluster strains equal the analytic solution at k = 33"),
    13: ("sca", "GKN training NMSE drops tenfold"),
    14: ("sca", "GKN extrapolates to 300 clusters"),
    15: ("reproduce-all", "two identical reproduce-all runs give byte-identical CSVs"),
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    experiment: str
    parameters: dict
    seed: int = 0
    output_dir: Path = field(default_factory=lambda: Path("runs"))

    def resolved(self) -> dict:
        return dict(experiment=self.experiment, seed=self.seed, parameters=self.parameters)


def default_config(experiment: str) -> ExperimentConfig:
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(RUNNERS)}")
    text = resources.files("dldc.configs").joinpath(f"{experiment}.toml").read_text()
    raw = tomllib.loads(text)
    return ExperimentConfig(raw["experiment"], raw["parameters"], int(raw.get("seed", 0)))


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"parameter {key!r} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"parameter {key!r} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"parameter {key!r} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"parameter {key!r} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"parameter {key!r} must be a list, got {value!r}")
        if default and value:
            return [_coerce(key, v, default[0]) for v in value]
        return value
    return value


def merge_parameters(experiment: str, base: dict, updates: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in updates.items():
        if key not in base:
            raise ConfigError(f"unknown parameter {key!r} for experiment {experiment!r}")
        out[key] = _coerce(key, value, base[key])
    return out


def parse_config(raw: dict, experiment: str | None = None) -> ExperimentConfig:
    """Validate a parsed config table against the experiment's defaults."""
    unknown = set(raw) - {"experiment", "seed", "parameters"}
    if unknown:
        raise ConfigError(f"unknown top-level key {sorted(unknown)[0]!r}")
    name = raw.get("experiment", experiment)
    if name is None:
        raise ConfigError("missing key 'experiment'")
    if experiment is not None and name != experiment:
        raise ConfigError(f"config is for {name!r}, not {experiment!r}")
    base = default_config(name)
    seed = raw.get("seed", base.seed)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"key 'seed' must be an integer, got {seed!r}")
    params = merge_parameters(name, base.parameters, raw.get("parameters", {}))
    return ExperimentConfig(name, params, seed)


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, experiment)


def parse_assignment(text: str) -> tuple[str, object]:
    """``key=value`` with the value read as a TOML literal (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, value = (s.strip() for s in text.split("=", 1))
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return key, parsed


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run(config: ExperimentConfig, figures: bool = True) -> dict:
    """Run one experiment; writes outputs, ``resolved_config.json`` and ``manifest.json``."""
    out = Path(config.output_dir)
    ctx = RunContext(out, config.seed, figures)
    resolved = config.resolved()
    ctx.write_json("resolved_config.json", resolved)
    started, t0 = _now(), time.perf_counter()
    try:
        RUNNERS[config.experiment](ctx, config.parameters)
    except Exception as exc:
        raise RuntimeError(f"experiment {config.experiment!r} failed: {exc}") from exc
    manifest = dict(
        experiment=config.experiment, config_hash=config_hash(resolved), version=__version__,
        started=started, finished=_now(), runtime_s=round(time.perf_counter() - t0, 3),
        checks=[c.to_json() for c in ctx.checks],
        outputs=[dict(file=name, sha256=sha256_file(out / name)) for name in ctx.outputs],
        passed=all(c.passed for c in ctx.checks))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def csv_digests(root) -> dict[str, str]:
    root = Path(root)
    return {str(p.relative_to(root)): sha256_file(p) for p in sorted(root.rglob("*.csv"))}


def _run_suite(out: Path, figures: bool, overrides: dict, only) -> dict[str, dict]:
    results = {}
    for name in RUNNERS:
        if only is not None and name not in only:
            continue
        cfg = default_config(name)
        cfg.parameters = merge_parameters(name, cfg.parameters, overrides.get(name, {}))
        cfg.output_dir = out / name
        try:
            results[name] = run(cfg, figures)
        except Exception as exc:  # isolate failures per experiment
            log.error("%s", exc)
            results[name] = dict(experiment=name, error=str(exc),
                                 traceback=traceback.format_exc(), checks=[], passed=False)
    return results


def reproduce_all(out_dir, figures: bool = True, repeat: bool = False,
                  overrides: dict | None = None, only=None) -> list[dict]:
    """Run every experiment at its default config and tabulate the criteria.

    With ``repeat`` the suite runs a second time under ``out_dir/repeat`` and
    criterion 15 compares the CSV bytes of both runs.
    """
    out = Path(out_dir)
    overrides = overrides or {}
    t0 = time.perf_counter()
    results = _run_suite(out, figures, overrides, only)
    table = []
    for crit, (name, claim) in CRITERIA.items():
        if name == "reproduce-all":
            continue
        res = results.get(name)
        row = dict(criterion=crit, experiment=name, claim=claim)
        if res is None:
            row.update(status="not run")
        else:
            found = [c for c in res["checks"] if c["criterion"] == crit]
            if "error" in res:
                row.update(status="FAIL", detail=res["error"])
            elif len(found) != 1:
                row.update(status="FAIL", detail=f"{len(found)} checks recorded")
            else:
                row.update(status="PASS" if found[0]["passed"] else "FAIL",
                           runtime_s=found[0]["runtime_s"])
        table.append(row)
    row = dict(criterion=15, experiment="reproduce-all", claim=CRITERIA[15][1])
    if repeat:
        _run_suite(out / "repeat", False, overrides, only)
        first = {k: v for k, v in csv_digests(out).items() if not k.startswith("repeat/")}
        second = csv_digests(out / "repeat")
        diff = sorted(k for k in set(first) | set(second) if first.get(k) != second.get(k))
        row.update(status="PASS" if first and not diff else "FAIL", n_csv=len(first),
                   detail=", ".join(diff[:5]))
    else:
        row.update(status="not run", detail="use --repeat")
    table.append(row)
    summary = dict(version=__version__, runtime_s=round(time.perf_counter() - t0, 3),
                   table=table, finished=_now())
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return table


__all__ = ["CRITERIA", "Check", "ConfigError", "ExperimentConfig", "RUNNERS", "csv_digests",
           "default_config", "load_config", "merge_parameters", "parse_assignment",
           "parse_config", "reproduce_all", "run"]
