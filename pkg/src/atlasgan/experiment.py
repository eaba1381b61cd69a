"""Surface experiments: one trial = fresh dataset, two-phase training, evaluation.

Each trial lives in ``<root>/<preset>/seed<k>/`` with the config snapshot,
loss logs, the final checkpoint and ``trial.json``. Evaluation is
recomputed from the checkpoint, so stored numbers can always be re-derived.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .config import TrainConfig, config_from_ini, preset
from .data import SurfaceSpec, write_cloud
from .metrics import evaluate_cloud, octant_counts, surface_by_name
from .model import load_model, sample_model, save_model
from .rng import stream
from .training import train_phase1, train_phase2, write_log_csv

GATES = {
    "sphere": {"w1": 0.10, "q99": 0.15},
    "torus": {"w1": 0.25, "q99": 0.20},
}
TARGET_W1 = {"sphere": 0.056, "torus": 0.17}


def trial_dir(root, name, seed) -> Path:
    return Path(root) / name / f"seed{seed}"


def trial_config(name, seed, **overrides) -> TrainConfig:
    return preset(name, seed=seed, **overrides)


def trial_data(cfg: TrainConfig):
    spec = SurfaceSpec.by_name(cfg.surface)
    return spec.sample(cfg.n, stream(cfg.seed, "data", spec.kind)).points


def run_trial(name, seed, root, progress=None, **overrides) -> Path:
    """Train one trial and write its directory; returns the directory."""
    cfg = trial_config(name, seed, **overrides)
    out = trial_dir(root, name, seed)
    out.mkdir(parents=True, exist_ok=True)
    data = trial_data(cfg)
    write_cloud(data, out / "data.f64")
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    t0 = time.perf_counter()
    p1 = train_phase1(cfg, data, progress=progress)
    write_log_csv(p1.log, out / "phase1_loss.csv")
    save_model(p1.model, out / "phase1.ckpt")
    final = p1
    if cfg.phase2_steps:
        final = train_phase2(cfg, p1, data, progress=progress)
        write_log_csv(final.log, out / "phase2_loss.csv")
    save_model(final.model, out / "final.ckpt")
    info = dict(final.info, train_seconds=time.perf_counter() - t0)
    (out / "train_info.json").write_text(json.dumps(info, indent=2, default=float), encoding="utf-8")
    return out


def evaluate_trial(directory, threads=1) -> dict:
    """Metrics of a finished trial, recomputed from its final checkpoint."""
    directory = Path(directory)
    cfg = config_from_ini((directory / "config.ini").read_text(encoding="utf-8"))
    model = load_model(directory / "final.ckpt")
    surf = surface_by_name(cfg.surface)
    glue = model.has_inverses
    cloud = sample_model(model, cfg.eval_count, glue, stream(cfg.seed, "eval", "model")).points
    ref = SurfaceSpec.by_name(cfg.surface).sample(cfg.eval_count, stream(cfg.seed, "eval", "reference")).points
    rep = evaluate_cloud(cloud, ref, stream(cfg.seed, "eval", "blocks"), cfg.block_size, surf, threads)
    theta, phi = surf.angles(cloud)
    res = {
        "seed": cfg.seed,
        "w1": rep.w1,
        "w1_blocks": rep.extra["blocks"],
        "block_size": rep.w1_support_size,
        "hausdorff_max": rep.hausdorff,
        "q99": rep.hausdorff_q99,
        "glue": glue,
        "theta_octants": octant_counts(theta).tolist(),
        "phi_octants": octant_counts(phi).tolist(),
    }
    (directory / "trial.json").write_text(json.dumps(res, indent=2), encoding="utf-8")
    return res


def reference_floor(name, seed=0, count=10000, block_size=4096):
    """Block-W1 between two independent samples of the true distribution: the
    value a perfect model would score under the protocol."""
    spec = SurfaceSpec.by_name(name)
    a = spec.sample(count, stream(seed, "floor", "a")).points
    b = spec.sample(count, stream(seed, "floor", "b")).points
    return evaluate_cloud(a, b, stream(seed, "floor", "blocks"), block_size).w1


def summarize(name, results) -> dict:
    g = GATES[name]
    w1 = float(np.mean([r["w1"] for r in results]))
    q99 = max(r["q99"] for r in results)
    out = {"preset": name, "seeds": [r["seed"] for r in results], "w1_mean": w1, "w1_trials": [r["w1"] for r in results],
           "q99_worst": q99, "w1_gate": g["w1"], "q99_gate": g["q99"], "target_w1": TARGET_W1[name],
           "pass_w1": w1 <= g["w1"], "pass_q99": q99 <= g["q99"]}
    if name == "torus":
        out["octants_ok"] = all(min(r["theta_octants"]) > 0 and min(r["phi_octants"]) > 0 for r in results)
    return out
