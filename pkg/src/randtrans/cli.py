"""Command-line runner: ``randtrans run`` and ``randtrans validate``.

Exit codes: 0 when every check of the selected pipelines passes, 1 when a
check fails (a ``failures.json`` report is written), 2 for configuration
and usage errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import load_config
from .errors import ConfigError, RandTransError
from .pipelines import PIPELINES, Context, PipelineResult, run_pipeline

log = logging.getLogger("randtrans")

MANIFEST = "manifest.json"

# artifact -> (x column, y columns) for the long-format plot files
PLOT_SPECS = {
    "correlations.csv": ("n", ("value",)),
    "correlations_mc.csv": ("n", ("operator", "monte_carlo")),
    "density_convergence.csv": ("k", ("holder_diff",)),
    "uniform_bound.csv": ("n", ("max_L_hat_n_1",)),
    "contraction.csv": ("n", ("D_n", "D_n_isometry")),
    "clt_quantiles.csv": ("normal", ("empirical",)),
    "characteristic.csv": ("r", ("A", "T")),
    "lambdas.csv": ("fiber", ("lambda",)),
}


class MissingArtifactError(RandTransError, FileNotFoundError):
    """A report needed for plot data is not present."""


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path) -> dict:
    """Hash every file under ``out`` except the manifest itself."""
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST)
    entries = {p.relative_to(out).as_posix(): sha256_file(p) for p in files}
    (out / MANIFEST).write_text(json.dumps({"files": entries}, sort_keys=True, indent=2) + "\n")
    return entries


def write_result(result: PipelineResult, out: Path, config_json: str) -> list:
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in sorted(result.tables.items()):
        write_csv(out / name, header, rows)
    for name, text in sorted(result.texts.items()):
        (out / name).write_text(text)
    (out / "config.json").write_text(config_json + "\n")
    write_csv(out / "checks.csv", ("check", "passed"), sorted(result.checks.items()))
    failed = sorted(k for k, ok in result.checks.items() if not ok)
    stale = out / "failures.json"
    if failed:
        stale.write_text(json.dumps({"failed": failed}, sort_keys=True, indent=2) + "\n")
    elif stale.exists():
        stale.unlink()
    emit_plot_data(out, names=[n for n in PLOT_SPECS if (out / n).exists()] or None, strict=False)
    write_manifest(out)
    return failed


def emit_plot_data(artifact_dir, names: Optional[Sequence[str]] = None, out_dir=None,
                   strict: bool = True) -> list:
    """Convert report CSVs into long-format ``(series, x, y)`` files named ``plot_<report>.csv``.

    Raises :class:`MissingArtifactError` when a requested report is absent
    or, with ``strict``, when no known report exists at all.
    """
    src = Path(artifact_dir)
    dst = Path(out_dir) if out_dir is not None else src
    dst.mkdir(parents=True, exist_ok=True)
    if names is None:
        names = [n for n in PLOT_SPECS if (src / n).exists()]
        if not names:
            if strict:
                raise MissingArtifactError(f"no plottable reports in {src}")
            return []
    written = []
    for name in names:
        if name not in PLOT_SPECS:
            raise ValueError(f"no plot layout for {name!r}")
        path = src / name
        if not path.exists():
            raise MissingArtifactError(f"missing report {path}")
        xcol, ycols = PLOT_SPECS[name]
        with open(path, newline="") as fh:
            table = list(csv.DictReader(fh))
        rows = [(yc, r[xcol], r[yc]) for yc in ycols for r in table]
        target = dst / f"plot_{name}"
        write_csv(target, ("series", "x", "y"), rows)
        written.append(target)
    return written


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="randtrans", description="Random transcendental dynamics experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a named pipeline")
    run.add_argument("--config", required=True)
    run.add_argument("--pipeline", required=True, choices=list(PIPELINES) + ["all"])
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    val = sub.add_parser("validate", help="validate a configuration file")
    val.add_argument("--config", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    if args.command == "validate":
        log.info("configuration is valid")
        return 0
    out = Path(cfg.out)
    log.info("running %s into %s", args.pipeline, out)
    result = run_pipeline(args.pipeline, Context(cfg))
    failed = write_result(result, out, cfg.to_json())
    for name in failed:
        log.warning("check failed: %s", name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
