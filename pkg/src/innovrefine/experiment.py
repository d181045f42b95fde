"""Experiment configuration and the per-scene corrupt -> refine -> decode pipeline."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InnovRefineError, InvalidSpec
from .geometry import CameraIntrinsics, ObjectModel, load_model
from .innovation import ExactOracle, NoiseSpec, StepSchedule, noisy_oracle
from .metrics import PoseErrorReport, evaluate
from .pose_recovery import VotingConfig, decode_pose
from .refine import RefineConfig, RefineTrace, refine
from .synth import CorruptionSpec, PoseSampler, Scene, box_model, corrupt
from .vectorfield import PixelGrid

DEFAULTS: dict = {
    "model": {"path": None, "symmetric": False, "n_points": 400, "n_keypoints": 8,
              "fps_seed_index": 0, "seed": 0},
    "scenes": 10,
    "grid": [32, 32],
    "intrinsics": None,
    "pose_sampler": {"depth_range": [3.0, 5.0], "center_margin": 0.25},
    "corruption": {"kind": "angular_noise", "sigma_deg": 20.0, "shifts": [], "fraction": 0.0,
                   "seed": 0},
    "noise": {"sigma": 0.0, "bias": [0.0, 0.0], "dropout_p": 0.0, "seed": 0},
    "refine": {"alpha": 0.01, "alpha_table": None, "iters": 2000, "tol": 1e-4,
               "decode_every": 0, "record_trace": True},
    "voting": {"hypothesis_count": 128, "inlier_dot_threshold": 0.99,
               "min_inlier_fraction": 0.05, "score_margin": 0.1},
    "sweep": {"alpha": [0.01], "iters": [2000], "noise_sigma": [0.0]},
    "out": "out",
    "seed": 0,
    "jobs": 1,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def derive_seed(*keys) -> int:
    """Deterministic 32-bit seed from integer/string keys."""
    ints = []
    for key in keys:
        if isinstance(key, str):
            ints.extend(key.encode())
        else:
            ints.append(int(key))
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> ExperimentConfig:
        """Defaults, then the JSON file, then command-line overrides."""
        raw = copy.deepcopy(DEFAULTS)
        base = Path.cwd()
        if path is not None:
            raw = _merge(raw, json.loads(Path(path).read_text()))
            base = Path(path).resolve().parent
        if overrides:
            raw = _merge(raw, overrides)
        return cls(raw, base)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def n_scenes(self) -> int:
        return int(self.raw["scenes"])

    @property
    def jobs(self) -> int:
        return max(1, int(self.raw.get("jobs", 1)))

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    def grid(self) -> PixelGrid:
        w, h = self.raw["grid"]
        return PixelGrid(int(w), int(h))

    def intrinsics(self) -> CameraIntrinsics:
        if self.raw.get("intrinsics"):
            return CameraIntrinsics.from_dict(self.raw["intrinsics"])
        g = self.grid()
        f = 1.25 * min(g.width, g.height)
        return CameraIntrinsics(f, f, (g.width - 1) / 2.0, (g.height - 1) / 2.0, g.width, g.height)

    def model(self) -> ObjectModel:
        m = self.raw["model"]
        if m.get("path"):
            path = Path(m["path"])
            if not path.is_absolute():
                path = self.base_dir / path
            return load_model(path, n_keypoints=int(m["n_keypoints"]),
                              symmetric=bool(m["symmetric"]))
        return box_model(n_points=int(m["n_points"]), n_keypoints=int(m["n_keypoints"]),
                         seed=int(m.get("seed", 0)), symmetric=bool(m["symmetric"]))

    def sampler(self) -> PoseSampler:
        p = self.raw["pose_sampler"]
        return PoseSampler(tuple(float(v) for v in p["depth_range"]), float(p["center_margin"]))

    def corruption(self) -> CorruptionSpec:
        return CorruptionSpec.from_dict(self.raw["corruption"])

    def noise(self) -> NoiseSpec:
        return NoiseSpec.from_dict(self.raw["noise"])

    def refine_config(self) -> RefineConfig:
        r = self.raw["refine"]
        if r.get("alpha_table"):
            schedule = StepSchedule.tabulated(r["alpha_table"])
        else:
            schedule = StepSchedule.constant(float(r["alpha"]))
        return RefineConfig(schedule, int(r["iters"]), float(r["tol"]),
                            bool(r.get("record_trace", True)), int(r.get("decode_every", 0)))

    def voting(self) -> VotingConfig:
        return VotingConfig.from_dict(self.raw["voting"])

    def scene_seeds(self) -> list[int]:
        return [derive_seed(self.seed, "scene", i) for i in range(self.n_scenes)]

    def with_cell(self, alpha: float, iters: int, noise_sigma: float) -> ExperimentConfig:
        over = {"refine": {"alpha": alpha, "alpha_table": None, "iters": iters},
                "noise": {"sigma": noise_sigma}}
        return ExperimentConfig(_merge(self.raw, over), self.base_dir)


@dataclass
class SceneResult:
    name: str
    seed: int
    initial: PoseErrorReport | None
    final: PoseErrorReport | None
    trace: RefineTrace
    record: dict


def _decoder(scene: Scene, voting: VotingConfig):
    def decode(state):
        pose, kps = decode_pose(state, scene.mask, scene.model, scene.intrinsics, voting)
        rep = evaluate(scene.pose, pose, scene.model, scene.intrinsics)
        return pose, {"add": rep.add, "add_s": rep.add_s, "proj2d": rep.proj2d,
                      "report": rep, "keypoints": kps}
    return decode


def _stage(row) -> dict:
    if row.metrics is None:
        return {"error": row.decode_error, "report": None, "pose": None}
    return {"report": row.metrics["report"].to_dict(), "pose": row.pose.to_dict(),
            "keypoints": [kp.to_dict() for kp in row.metrics["keypoints"]]}


def run_scene(scene: Scene, cfg: ExperimentConfig, name: str) -> SceneResult:
    """Corrupt the true field, refine it with the configured oracle, decode before/after."""
    seed = scene.seed
    x0 = corrupt(scene, cfg.corruption(), seed=derive_seed(seed, "corrupt", cfg.corruption().seed))
    base = ExactOracle(scene.gt_field, scene.mask)
    noise = cfg.noise()
    if noise.sigma == 0.0 and noise.bias == (0.0, 0.0) and noise.dropout_p == 0.0:
        oracle = base
    else:
        oracle = noisy_oracle(base, noise, derive_seed(seed, "oracle", noise.seed))
    voting = replace(cfg.voting(), rng_seed=derive_seed(seed, "voting") % (2 ** 31))
    decode = _decoder(scene, voting)
    rcfg = cfg.refine_config()

    _, trace = refine(x0, oracle, rcfg, truth=scene.gt_field, mask=scene.mask, decode=decode)
    first, last = trace.rows[0], trace.rows[-1]
    if first.metrics is None and first.decode_error is None:
        try:
            first.pose, first.metrics = decode(x0)
        except InnovRefineError as exc:
            first.decode_error = f"{type(exc).__name__}: {exc}"
    init_rep = first.metrics["report"] if first.metrics else None
    final_rep = last.metrics["report"] if last.metrics else None
    record = {
        "scene": name,
        "seed": seed,
        "diameter": scene.model.diameter,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "rho": last.rho,
        "grad_norm_initial": first.grad_norm,
        "grad_norm_final": last.grad_norm,
        "sd_initial": first.sd,
        "sd_final": last.sd,
        "initial": _stage(first),
        "final": _stage(last),
    }
    return SceneResult(name, seed, init_rep, final_rep, trace, record)


def validate_sweep(grid: dict) -> tuple[list[float], list[int], list[float]]:
    alphas = [float(a) for a in grid.get("alpha", [])]
    iters = [int(t) for t in grid.get("iters", [])]
    sigmas = [float(s) for s in grid.get("noise_sigma", [])]
    if not (alphas and iters and sigmas):
        raise InvalidSpec("sweep grid needs at least one alpha, iters and noise_sigma value")
    return alphas, iters, sigmas
