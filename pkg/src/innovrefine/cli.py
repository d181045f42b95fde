"""Command-line front end: ``innovrefine {gen,refine,eval,sweep}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import plotting
from .errors import InnovRefineError, InvalidSpec
from .experiment import ExperimentConfig, SceneResult, run_scene, validate_sweep
from .geometry import Pose
from .metrics import PoseErrorReport, add_metric, add_s_metric, aggregate, judge, proj2d_metric
from .synth import generate_scene, load_scene, save_scene

log = logging.getLogger("innovrefine")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _recorded_config(cfg: ExperimentConfig) -> dict:
    raw = cfg.to_dict()
    # where and how fast a run happens must not change its results files
    raw.pop("out", None)
    raw.pop("jobs", None)
    return raw


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _overrides(args) -> dict:
    over: dict = {}
    if getattr(args, "out", None):
        over["out"] = args.out
    if args.seed is not None:
        over["seed"] = args.seed
    if args.jobs is not None:
        over["jobs"] = args.jobs
    if getattr(args, "n_scenes", None) is not None:
        over["scenes"] = args.n_scenes
    refine_over: dict = {}
    if args.tol is not None:
        refine_over["tol"] = args.tol
    if args.command == "sweep":
        grid = {}
        if args.alpha is not None:
            grid["alpha"] = _float_list(args.alpha)
        if args.iters is not None:
            grid["iters"] = _int_list(args.iters)
        if args.noise_sigma is not None:
            grid["noise_sigma"] = _float_list(args.noise_sigma)
        if grid:
            over["sweep"] = grid
    else:
        if args.alpha is not None:
            refine_over["alpha"] = float(args.alpha)
            refine_over["alpha_table"] = None
        if args.iters is not None:
            refine_over["iters"] = int(args.iters)
        if args.noise_sigma is not None:
            over["noise"] = {"sigma": float(args.noise_sigma)}
    if refine_over:
        over["refine"] = refine_over
    return over


def _scene_name(i: int) -> str:
    return f"scene_{i:04d}"


def cmd_gen(cfg: ExperimentConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    model, sampler = cfg.model(), cfg.sampler()
    intr, grid = cfg.intrinsics(), cfg.grid()
    entries = []
    for i, seed in enumerate(cfg.scene_seeds()):
        scene = generate_scene(model, sampler, intr, grid, seed)
        save_scene(out / _scene_name(i), scene)
        entries.append({"name": _scene_name(i), "seed": seed})
    _dump(out / "manifest.json", {"master_seed": cfg.seed, "scenes": entries,
                                   "config": _recorded_config(cfg)})
    log.info("wrote %d scenes to %s", len(entries), out)
    return EXIT_OK


def _run_one(job):
    scene_dir, name, cfg = job
    try:
        return run_scene(load_scene(scene_dir), cfg, name), None
    except (InnovRefineError, OSError, KeyError, ValueError) as exc:
        return None, {"scene": name, "error": type(exc).__name__, "message": str(exc)}


def _run_all(jobs, n_jobs: int):
    if n_jobs <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        # map preserves submission order, so outputs do not depend on scheduling
        return list(pool.map(_run_one, jobs))


def _scene_dirs(scenes: Path) -> list[tuple[str, Path]]:
    manifest = scenes / "manifest.json"
    if manifest.exists():
        names = [e["name"] for e in json.loads(manifest.read_text())["scenes"]]
    else:
        names = sorted(p.name for p in scenes.iterdir() if (p / "scene.json").exists())
    return [(n, scenes / n) for n in names]


def _write_plots(results: list[SceneResult], out: Path) -> None:
    try:
        for res in results:
            plotting.plot_trace(res.trace, out / f"plot_{res.name}.svg", res.record["diameter"],
                                title=res.name)
        if results:
            plotting.plot_batch(results, out / "convergence.svg")
    except Exception as exc:  # plots are best effort; CSV/JSON are the record
        log.warning("plotting failed: %s", exc)


def cmd_refine(cfg: ExperimentConfig, scenes: Path) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    dirs = _scene_dirs(scenes)
    outcomes = _run_all([(d, n, cfg) for n, d in dirs], cfg.jobs)
    results = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    for res in results:
        res.trace.to_csv(out / f"trace_{res.name}.csv", len(res.record["sd_initial"] or []))
    summary = {
        "scenes_dir": str(scenes),
        "config": _recorded_config(cfg),
        "scenes": [r.record for r in results],
        "aggregate": {
            "initial": aggregate([r.initial for r in results]).to_dict(),
            "final": aggregate([r.final for r in results]).to_dict(),
        },
    }
    _dump(out / "results.json", summary)
    _dump(out / "errors.json", errors)
    _write_plots(results, out)
    agg = summary["aggregate"]
    log.info("ADD correct %.1f%% -> %.1f%%, 2D proj %.1f%% -> %.1f%%",
             agg["initial"]["add_pct"], agg["final"]["add_pct"],
             agg["initial"]["proj_pct"], agg["final"]["proj_pct"])
    print(json.dumps(summary["aggregate"], sort_keys=True))
    return EXIT_FAILED if errors else EXIT_OK


def cmd_eval(results_dir: Path) -> int:
    """Recompute metrics from the poses stored in results.json."""
    summary = json.loads((results_dir / "results.json").read_text())
    scenes_dir = Path(summary["scenes_dir"])
    per_stage: dict[str, list[PoseErrorReport | None]] = {"initial": [], "final": []}
    rows = []
    for rec in summary["scenes"]:
        scene = load_scene(scenes_dir / rec["scene"])
        for stage in ("initial", "final"):
            pose = rec[stage].get("pose")
            rep = None
            if pose is not None:
                est = Pose.from_dict(pose)
                rep = judge(add_metric(scene.pose, est, scene.model),
                            add_s_metric(scene.pose, est, scene.model),
                            proj2d_metric(scene.pose, est, scene.model, scene.intrinsics),
                            scene.model)
            per_stage[stage].append(rep)
    for stage, reps in per_stage.items():
        rows.append({"stage": stage, **aggregate(reps).to_dict()})
    with open(results_dir / "eval.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["stage", "n_scenes", "add_pct", "proj_pct"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    _dump(results_dir / "eval.json", {r["stage"]: {k: v for k, v in r.items() if k != "stage"}
                                      for r in rows})
    print(json.dumps(rows, sort_keys=True))
    return EXIT_OK


SWEEP_COLUMNS = ["alpha", "iters", "noise_sigma", "n_scenes", "initial_add_pct", "final_add_pct",
                 "initial_proj_pct", "final_proj_pct", "mean_initial_sd", "mean_final_sd",
                 "mean_sd_reduction", "mean_rho"]


def sweep_cell(cfg: ExperimentConfig, scenes, alpha: float, iters: int, sigma: float) -> dict:
    cell = cfg.with_cell(alpha, iters, sigma)
    results = [run_scene(sc, cell, _scene_name(i)) for i, sc in enumerate(scenes)]
    sd0 = np.array([np.mean(r.record["sd_initial"]) for r in results])
    sd1 = np.array([np.mean(r.record["sd_final"]) for r in results])
    red = np.where(sd0 > 0, 1.0 - sd1 / np.where(sd0 > 0, sd0, 1.0), 0.0)
    a0 = aggregate([r.initial for r in results])
    a1 = aggregate([r.final for r in results])
    return {"alpha": alpha, "iters": iters, "noise_sigma": sigma, "n_scenes": len(results),
            "initial_add_pct": a0.add_pct, "final_add_pct": a1.add_pct,
            "initial_proj_pct": a0.proj_pct, "final_proj_pct": a1.proj_pct,
            "mean_initial_sd": float(sd0.mean()), "mean_final_sd": float(sd1.mean()),
            "mean_sd_reduction": float(red.mean()),
            "mean_rho": float(np.mean([r.record["rho"] for r in results]))}


def _sweep_job(job):
    cfg, scenes, cell = job
    return sweep_cell(cfg, scenes, *cell)


def cmd_sweep(cfg: ExperimentConfig) -> int:
    alphas, iters, sigmas = validate_sweep(cfg.raw.get("sweep", {}))
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    model, sampler, intr, grid = cfg.model(), cfg.sampler(), cfg.intrinsics(), cfg.grid()
    scenes = [generate_scene(model, sampler, intr, grid, s) for s in cfg.scene_seeds()]
    cells = [(a, t, s) for a in alphas for t in iters for s in sigmas]
    jobs = [(cfg, scenes, c) for c in cells]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    try:
        plotting.plot_sweep(rows, out / "sweep.svg")
    except Exception as exc:
        log.warning("plotting failed: %s", exc)
    log.info("wrote %d sweep rows to %s", len(rows), out / "sweep.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--jobs", type=int, help="parallel worker processes")
    common.add_argument("--alpha", help="step size (comma-separated list for sweep)")
    common.add_argument("--iters", help="maximum iterations T (list for sweep)")
    common.add_argument("--tol", type=float, help="convergence tolerance on mean gradient norm")
    common.add_argument("--noise-sigma", help="oracle noise sigma (list for sweep)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="innovrefine",
                                description="Iterative vector-field pose refinement experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", parents=[common], help="generate synthetic scenes")
    g.add_argument("--n-scenes", type=int, help="number of scenes")
    r = sub.add_parser("refine", parents=[common], help="corrupt, refine and evaluate scenes")
    r.add_argument("scenes", type=Path, help="directory written by `gen`")
    e = sub.add_parser("eval", parents=[common], help="recompute metrics of a refine run")
    e.add_argument("results", type=Path, help="directory holding results.json")
    s = sub.add_parser("sweep", parents=[common], help="grid over alpha, T and oracle noise")
    s.add_argument("--n-scenes", type=int, help="number of scenes per cell")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, _overrides(args))
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "refine":
            return cmd_refine(cfg, args.scenes)
        if args.command == "eval":
            return cmd_eval(args.results)
        return cmd_sweep(cfg)
    except InvalidSpec as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"IoError: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except InnovRefineError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
