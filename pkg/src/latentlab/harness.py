"""Experiment runner: deterministic artifacts, manifests, and comparisons.

``run`` executes trials x solvers from a validated config and writes
metrics.csv, field dumps, PGM/PPM renders and a manifest with content hashes.
Re-running the same config byte-reproduces every artifact: floats are
serialized via repr, JSON keys are sorted, and nothing time- or
platform-dependent is recorded.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .codec import decode
from .config import ExperimentConfig, mask_field
from .errors import UndefinedMetricError, ValidationError
from .field import Field, load_field_dump, save_field_dump, write_pgm, write_ppm
from .metrics import boundary_score, posterior_error, psnr, ssim
from .trajectory import run_trajectory

__all__ = ["run", "compare", "render", "verify_manifest", "CSV_COLUMNS"]

CSV_COLUMNS = (
    "trial",
    "solver",
    "psnr",
    "ssim",
    "boundary_score",
    "posterior_error",
    "measurement_residual",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _render_field(f: Field, path) -> None:
    lo = float(f.data.min())
    hi = float(f.data.max())
    if hi <= lo:
        hi = lo + 1.0
    if f.channels == 3:
        write_ppm(path, f, lo, hi)
    else:
        for ch in range(f.channels):
            plane = Field(f.data[ch : ch + 1])
            target = path if f.channels == 1 else f"{path[:-4]}_c{ch}.pgm"
            write_pgm(target, plane, lo, hi)


def _metrics_row(trial, name, output, x_true, m, cfg):
    try:
        bscore, heat = boundary_score(output, m.mask, cfg.boundary_band)
    except UndefinedMetricError:
        bscore, heat = float("nan"), None
    resid = float(np.max(np.abs(m.mask.data * (output.data - m.y.data))))
    row = {
        "trial": trial,
        "solver": name,
        "psnr": psnr(output, x_true, cfg.peak),
        "ssim": ssim(output, x_true, cfg.ssim_window),
        "boundary_score": bscore,
        # per-trial proxy: deviation from the ground truth over the free region
        "posterior_error": posterior_error([output], x_true, m.mask),
        "measurement_residual": resid,
    }
    return row, heat


def _run_trial(cfg: ExperimentConfig, trial: int):
    x_true, m = cfg.build_measurement(trial)
    rows = []
    artifacts = []  # (relpath, Field, kind) for trial 0
    for entry in cfg.solvers:
        strategy = entry.init if entry.init is not None else cfg.init
        log = run_trajectory(
            cfg.plan, strategy, entry.spec, cfg.model, m, cfg.codec, cfg.sched,
            seed=cfg.seed + trial, c=cfg.condition, guidance=cfg.guidance,
            keep_latents=False, diagnostics=False,
        )
        row, heat = _metrics_row(trial, entry.name, log.output, x_true, m, cfg)
        rows.append(row)
        if trial == 0:
            artifacts.append((f"{entry.name}_output.fld", log.output, "dump"))
            artifacts.append((f"{entry.name}_output", log.output, "render"))
            if heat is not None:
                artifacts.append((f"{entry.name}_boundary_heatmap.pgm", heat, "pgm"))
    if trial == 0:
        artifacts.append(("x_true.fld", x_true, "dump"))
        artifacts.append(("x_true", x_true, "render"))
        artifacts.append(("mask.pgm", Field(m.mask.data[0:1]), "pgm"))
    return rows, artifacts


def run(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    """Execute all trials and write artifacts; returns the manifest dict."""
    os.makedirs(out_dir, exist_ok=True)
    trials = list(range(cfg.trials))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda tr: _run_trial(cfg, tr), trials))
    else:
        results = [_run_trial(cfg, tr) for tr in trials]

    files = {}

    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rows, _ in results:  # committed in trial order
            for row in rows:
                fh.write(",".join(_fmt(row[col]) for col in CSV_COLUMNS) + "\n")
    files["metrics.csv"] = _sha256(csv_path)

    for _, artifacts in results:
        for relname, fld, kind in artifacts:
            if kind == "dump":
                path = os.path.join(out_dir, relname)
                save_field_dump(path, fld)
                files[relname] = _sha256(path)
            elif kind == "pgm":
                path = os.path.join(out_dir, relname)
                lo, hi = float(fld.data.min()), float(fld.data.max())
                write_pgm(path, fld, lo, hi if hi > lo else lo + 1.0)
                files[relname] = _sha256(path)
            else:  # render with channel-dependent extension
                ext = ".ppm" if fld.channels == 3 else ".pgm"
                path = os.path.join(out_dir, relname + ext)
                _render_field(fld, path)
                if fld.channels in (1, 3):
                    files[relname + ext] = _sha256(path)
                else:
                    for ch in range(fld.channels):
                        sub = f"{relname}_c{ch}.pgm"
                        files[sub] = _sha256(os.path.join(out_dir, sub))

    # floats go through repr so the manifest stays strict JSON (inf/nan included)
    json_rows = [
        {k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()}
        for rows, _ in results
        for row in rows
    ]
    manifest = {"config": cfg.raw, "rows": json_rows, "files": files}
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def verify_manifest(out_dir) -> dict:
    """Recompute artifact hashes against the manifest; raises on any mismatch."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for rel, expect in manifest["files"].items():
        path = os.path.join(out_dir, rel)
        if not os.path.exists(path):
            raise ValidationError(f"manifest lists missing file {rel}")
        actual = _sha256(path)
        if actual != expect:
            raise ValidationError(f"hash mismatch for {rel}: {actual} != {expect}")
    return manifest


def compare(manifest_dirs) -> str:
    """Verify and aggregate manifests into a per-solver summary table."""
    groups: dict[str, dict[str, list]] = {}
    for d in manifest_dirs:
        manifest = verify_manifest(d)
        for row in manifest["rows"]:
            g = groups.setdefault(row["solver"], {})
            for col in CSV_COLUMNS[2:]:
                v = row[col]
                if isinstance(v, str):
                    v = float(v)
                g.setdefault(col, []).append(v)

    headers = ["solver"] + [f"{c}(mean)" for c in CSV_COLUMNS[2:]] + [
        f"{c}(median)" for c in CSV_COLUMNS[2:]
    ]
    lines = ["  ".join(f"{h:>24s}" for h in headers)]
    for solver in sorted(groups):
        vals = groups[solver]
        cells = [solver]
        for agg in (np.nanmean, np.nanmedian):
            for col in CSV_COLUMNS[2:]:
                arr = np.asarray(vals[col], dtype=np.float64)
                finite = arr[np.isfinite(arr)]
                cells.append(f"{agg(finite):.6g}" if finite.size else "nan")
        lines.append("  ".join(f"{c:>24s}" for c in cells))
    return "\n".join(lines)


def render(dump_path, out_path=None, vmin=None, vmax=None) -> str:
    """Convert a raw field dump to PGM (1 channel) or PPM (3 channels)."""
    f = load_field_dump(dump_path)
    lo = float(f.data.min()) if vmin is None else float(vmin)
    hi = float(f.data.max()) if vmax is None else float(vmax)
    if hi <= lo:
        hi = lo + 1.0
    if out_path is None:
        base = os.path.splitext(dump_path)[0]
        out_path = base + (".ppm" if f.channels == 3 else ".pgm")
    if f.channels == 3:
        write_ppm(out_path, f, lo, hi)
    elif f.channels == 1:
        write_pgm(out_path, f, lo, hi)
    else:
        raise ValidationError(f"render supports 1 or 3 channels, got {f.channels}")
    return out_path
