"""Command line entry point: ``run``, ``compare`` and ``stats``.

Exit codes: 0 success, 1 runtime failure (partial artifacts kept),
2 invalid configuration or unparseable input.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, config_hash, load_config, semantic_dict
from .errors import ConfigInvalid, ParseError
from .metrics import CoverageCurve, compare, max_p, summarise
from .numkit import mann_whitney_u
from .search import Variant, run

logger = logging.getLogger("poms")

BASELINE = "mape-iso"
MANIFOLD_VARIANTS = ("poms", "poms-pca", "poms-no-jacobian", "mape-isolinedd")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_coverage_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["evals", "coverage"])
        for e, c in curve:
            w.writerow([int(e), _fmt(c)])


def write_mixing_csv(path, mixing) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loop", "ratio"])
        for loop, r in mixing:
            w.writerow([int(loop), _fmt(r)])


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def read_coverage_csv(path) -> CoverageCurve:
    header, rows = _read_rows(path)
    if header != ["evals", "coverage"]:
        raise ParseError(f"{path}: expected header 'evals,coverage', got {','.join(header)!r}")
    try:
        return CoverageCurve([(int(e), float(c)) for e, c in rows])
    except ParseError:
        raise
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_mixing_csv(path) -> list[tuple[int, float]]:
    header, rows = _read_rows(path)
    if header != ["loop", "ratio"]:
        raise ParseError(f"{path}: expected header 'loop,ratio'")
    try:
        return [(int(a), float(b)) for a, b in rows]
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def read_finals_csv(path) -> list[float]:
    """Per-seed final coverages.

    Accepts a ``seed,final_coverage`` table (as written by ``run``), a single
    ``coverage`` column, or a coverage curve (``evals,coverage``), whose last
    row is taken as one sample.
    """
    header, rows = _read_rows(path)
    try:
        if "final_coverage" in header:
            col = header.index("final_coverage")
            vals = [float(r[col]) for r in rows]
        elif header == ["evals", "coverage"]:
            vals = [read_coverage_csv(path).final]
        elif header == ["coverage"]:
            vals = [float(r[0]) for r in rows]
        else:
            raise ParseError(f"{path}: unrecognised header {','.join(header)!r}")
    except ParseError:
        raise
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not vals:
        raise ParseError(f"{path}: no final checkpoints found")
    return vals


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: RunConfig, status: str, files: list[str], command: str) -> dict:
    return {
        "engine": "poms",
        "engine_version": __version__,
        "command": command,
        "config_hash": config_hash(cfg),
        "config": semantic_dict(cfg),
        "status": status,
        "files": sorted(files),
    }


def _run_cell(cfg: RunConfig, variant: Variant, seed: int, out: Path) -> dict:
    """Run one (variant, seed) cell and write its artifacts; returns file names."""
    tag = f"{variant.kind}_{seed}"

    def on_loop(loop, evals, archive):
        if cfg.checkpoint_every and loop % cfg.checkpoint_every == 0 and loop < cfg.budget.loops:
            archive.save(out / f"archive_{tag}_loop{loop}.json", variant=variant.kind, seed=seed,
                         evals=evals, policy_shape=cfg.shape.to_dict())

    res = run(variant, cfg.env, cfg.shape, cfg.budget, seed, workers=cfg.workers, on_loop=on_loop)
    files = [f"coverage_{tag}.csv", f"mixing_{tag}.csv", f"archive_{tag}.json"]
    write_coverage_csv(out / files[0], res.coverage_curve)
    write_mixing_csv(out / files[1], res.mixing)
    res.archive.save(out / files[2], variant=variant.kind, seed=seed, evals=res.eval_count,
                     policy_shape=cfg.shape.to_dict())
    return {"variant": variant.kind, "seed": seed, "files": files,
            "curve": res.coverage_curve, "final": res.archive.coverage()}


def _run_cells(cfg: RunConfig, cells, out: Path) -> list[dict]:
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futs = [pool.submit(_run_cell, cfg, v, s, out) for v, s in cells]
            return [f.result() for f in futs]
    return [_run_cell(cfg, v, s, out) for v, s in cells]


def _write_finals(out: Path, results: list[dict], kind: str) -> str:
    name = f"finals_{kind}.csv"
    with open(out / name, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "final_coverage"])
        for r in results:
            if r["variant"] == kind:
                w.writerow([r["seed"], _fmt(r["final"])])
    return name


def cmd_run(config_path) -> int:
    cfg = load_config(config_path)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    _write_json(out / "manifest.json", _manifest(cfg, "running", files, "run"))
    try:
        for seed in cfg.seeds:
            files += _run_cell(cfg, cfg.variant, seed, out)["files"]
    except Exception:
        logger.exception("run failed")
        _write_json(out / "manifest.json", _manifest(cfg, "failed", files, "run"))
        return 1
    results = [{"variant": cfg.variant.kind, "seed": s,
                "final": read_coverage_csv(out / f"coverage_{cfg.variant.kind}_{s}.csv").final}
               for s in cfg.seeds]
    files.append(_write_finals(out, results, cfg.variant.kind))
    _write_json(out / "manifest.json", _manifest(cfg, "complete", files, "run"))
    return 0


def stats_pairs(kinds: list[str]) -> list[tuple[str, str]]:
    """Pairs ``(a, b)`` tested as "a greater than b"; each unordered pair once."""
    if BASELINE in kinds:
        return [(k, BASELINE) for k in kinds if k != BASELINE]
    return list(combinations(kinds, 2))


def cmd_compare(campaign_path) -> int:
    cfg = load_config(campaign_path, campaign=True)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    files: list[str] = []
    _write_json(out / "manifest.json", _manifest(cfg, "running", files, "compare"))
    cells = [(v, s) for v in cfg.variants for s in cfg.seeds]
    try:
        results = _run_cells(cfg, cells, out)
    except Exception:
        logger.exception("campaign failed")
        _write_json(out / "manifest.json", _manifest(cfg, "failed", files, "compare"))
        return 1
    kinds = [v.kind for v in cfg.variants]
    for r in results:
        files += r["files"]
    for k in kinds:
        files.append(_write_finals(out, results, k))

    curves = {k: [CoverageCurve(r["curve"], r["seed"], k) for r in results if r["variant"] == k]
              for k in kinds}
    checkpoints = np.unique(np.concatenate([c.evals for cs in curves.values() for c in cs]))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "checkpoint", "median", "q25", "q75"])
        for k in kinds:
            s = summarise(curves[k], checkpoints)
            for e, m, lo, hi in zip(s.checkpoints, s.median, s.q25, s.q75):
                w.writerow([k, int(e), _fmt(m), _fmt(lo), _fmt(hi)])
    files.append("summary.csv")

    finals = {k: [c.final for c in curves[k]] for k in kinds}
    with open(out / "stats.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant_a", "variant_b", "U", "p", "method"])
        manifold = []
        for a, b in stats_pairs(kinds):
            res = compare(finals[a], finals[b])
            w.writerow([a, b, _fmt(res.u_statistic), _fmt(res.p_value), res.method])
            if b == BASELINE and a in MANIFOLD_VARIANTS:
                manifold.append((a, res))
        if len(manifold) >= 2:
            names = "|".join(a for a, _ in manifold)
            w.writerow([f"max-p[{names}]", BASELINE, "", _fmt(max_p([r for _, r in manifold])), "max"])
    files.append("stats.csv")
    _write_json(out / "manifest.json", _manifest(cfg, "complete", files, "compare"))
    return 0


def cmd_stats(csv_a, csv_b, alternative: str = "greater") -> int:
    a = read_finals_csv(csv_a)
    b = read_finals_csv(csv_b)
    res = mann_whitney_u(a, b, alternative=alternative)
    print(f"U={_fmt(res.u_statistic)} p={_fmt(res.p_value)} method={res.method}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poms", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one variant over the configured seeds")
    r.add_argument("config")
    c = sub.add_parser("compare", help="run a multi-variant campaign and summarise it")
    c.add_argument("campaign")
    s = sub.add_parser("stats", help="Mann-Whitney U test on two final-coverage CSVs")
    s.add_argument("csv_a")
    s.add_argument("csv_b")
    s.add_argument("--alternative", choices=["greater", "two-sided"], default="greater")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "compare":
            return cmd_compare(args.campaign)
        return cmd_stats(args.csv_a, args.csv_b, args.alternative)
    except (ConfigInvalid, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
