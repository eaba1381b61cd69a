"""Command line entry point: gen-data, train, sample, eval, check-grad.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numeric
divergence (including failed gradient checks). Progress goes to stderr;
machine-readable output goes to files (clouds, CSV logs, JSON manifests).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, TrainConfig, config_from_ini, load_config, preset
from .data import CloudFormatError, SurfaceSpec, read_cloud, write_cloud
from .funcspace import FormatError
from .geometry import DomainError, ResourceError
from .metrics import MetricInputError, MetricReport, evaluate_cloud, surface_by_name
from .model import StateError, load_model, sample_model, save_model
from .rng import stream
from .training import DivergenceError, train_phase1, train_phase2, write_log_csv

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
SEED_ENV = "ATLASGAN_SEED"

log = logging.getLogger("atlasgan")


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


# -- helpers -----------------------------------------------------------------


def build_id() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}", EXIT_VALIDATION) from None


def pick_seed(flag):
    if flag is not None:
        return flag
    env = env_seed()
    return 0 if env is None else env


def write_manifest(path, command, args_dict, seed, inputs, outputs, started, extra=None):
    man = {
        "command": command,
        "arguments": args_dict,
        "seed": seed,
        "build": build_id(),
        "started": started,
        "finished": _now(),
        "inputs": {k: {"path": os.fspath(v), "sha256": file_digest(v)} for k, v in inputs.items()},
        "outputs": {k: {"path": os.fspath(v), "sha256": file_digest(v)} for k, v in outputs.items()},
    }
    if extra:
        man.update(extra)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
    return man


def _manifest_path(out):
    return os.fspath(out) + ".manifest.json"


# -- commands ----------------------------------------------------------------


def cmd_gen_data(a):
    started = _now()
    spec = SurfaceSpec.by_name(a.surface)
    seed = pick_seed(a.seed)
    cloud = spec.sample(a.count, stream(seed, "data", spec.kind))
    write_cloud(cloud, a.out, a.format)
    write_manifest(_manifest_path(a.out), "gen-data", vars_of(a), seed, {}, {"cloud": a.out}, started,
                   {"surface": spec.kind, "count": a.count, "sampler": _jsonable(cloud.meta)})
    log.info("wrote %d points to %s", len(cloud), a.out)


def _load_train_config(a) -> tuple[TrainConfig, str]:
    if a.from_manifest:
        with open(a.from_manifest, encoding="utf-8") as fh:
            man = json.load(fh)
        cfg = config_from_ini(man["config_ini"])
        return cfg, man["config_ini"]
    if a.preset:
        cfg = preset(a.preset)
    else:
        cfg = load_config(a.config)
        if cfg.data_path and not os.path.isabs(cfg.data_path):
            cfg.data_path = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(a.config)), cfg.data_path))
    if a.data:
        cfg.data_path = a.data
    for key in ("phase1_steps", "phase2_steps"):
        val = getattr(a, key)
        if val is not None:
            setattr(cfg, key, val)
    if a.seed is not None:
        cfg.seed = a.seed
    else:
        env = env_seed()
        if env is not None:
            cfg.seed = env
    cfg.validate()
    return cfg, cfg.to_ini()


def cmd_train(a):
    started = _now()
    cfg, ini = _load_train_config(a)
    if not cfg.data_path:
        raise CliError("no data file: set [data] data_path or pass --data", EXIT_VALIDATION)
    data = read_cloud(cfg.data_path).points
    if data.shape[1] != cfg.p:
        raise CliError(f"data has dimension {data.shape[1]}, config says p={cfg.p}", EXIT_VALIDATION)
    if len(data) != cfg.n:
        log.warning("data has %d points, config n=%d; using the data count", len(data), cfg.n)
        cfg.n = len(data)
        ini = cfg.to_ini()
    run = Path(a.run_dir)
    (run / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run / "config.ini").write_text(ini, encoding="utf-8")

    def progress(phase, step, total, row):
        if step % max(1, total // 20) == 0 or step + 1 == total:
            log.info("%s %d/%d adversarial=%.5f total=%.5f", phase, step + 1, total, row["adversarial"], row["total"])

    outputs = {}
    try:
        p1 = train_phase1(cfg, data, run_dir=run / "checkpoints", progress=progress)
        write_log_csv(p1.log, run / "phase1_loss.csv")
        outputs["phase1_loss"] = run / "phase1_loss.csv"
        save_model(p1.model, run / "phase1.ckpt")
        outputs["phase1_checkpoint"] = run / "phase1.ckpt"
        final = p1
        if cfg.phase2_steps > 0:
            final = train_phase2(cfg, p1, data, run_dir=run / "checkpoints", progress=progress)
            write_log_csv(final.log, run / "phase2_loss.csv")
            outputs["phase2_loss"] = run / "phase2_loss.csv"
            if not final.info.get("constraint_ok", True):
                log.warning("final constraint value exceeds eps_Gamma: consistency=%.4g, regularizer count=%d",
                            final.info["final_consistency"], final.info["final_reg_exact"])
    except DivergenceError as err:
        save_model(err.model, run / "last_good.ckpt")
        write_log_csv(err.log, run / "diverged_loss.csv")
        raise CliError(f"{err}; last good model saved to {run / 'last_good.ckpt'}", EXIT_NUMERIC) from err
    save_model(final.model, run / "final.ckpt")
    outputs["final_checkpoint"] = run / "final.ckpt"

    report = None
    if cfg.surface:
        report = _eval_model(final.model, cfg, a.threads)
        (run / "metrics.json").write_text(report.to_json(), encoding="utf-8")
        outputs["metrics"] = run / "metrics.json"
        log.info("%s", report.summary())
    write_manifest(run / "manifest.json", "train", vars_of(a), cfg.seed, {"data": cfg.data_path}, outputs, started,
                   {"config_ini": ini, "info": _jsonable(final.info),
                    "metrics": None if report is None else json.loads(report.to_json())})


def _eval_model(model, cfg, threads):
    surf = surface_by_name(cfg.surface)
    spec = SurfaceSpec.by_name(cfg.surface)
    glue = model.has_inverses
    cloud = sample_model(model, cfg.eval_count, glue, stream(cfg.seed, "eval", "model"))
    ref = spec.sample(cfg.eval_count, stream(cfg.seed, "eval", "reference"))
    return evaluate_cloud(cloud, ref, stream(cfg.seed, "eval", "blocks"), cfg.block_size, surf, threads)


def cmd_sample(a):
    started = _now()
    model = load_model(a.checkpoint)
    seed = pick_seed(a.seed)
    cloud = sample_model(model, a.count, a.glue, stream(seed, "sample"), a.skip_rejection, seed)
    write_cloud(cloud, a.out, a.format)
    write_manifest(_manifest_path(a.out), "sample", vars_of(a), seed, {"checkpoint": a.checkpoint},
                   {"cloud": a.out}, started, {"sampler": _jsonable(cloud.meta)})
    log.info("wrote %d points to %s", len(cloud), a.out)


def cmd_eval(a):
    started = _now()
    X = read_cloud(a.cloud, origin="generated").points
    seed = pick_seed(a.seed)
    surf = surface_by_name(a.surface) if a.surface else None
    inputs = {"cloud": a.cloud}
    if a.against:
        Y = read_cloud(a.against).points
        inputs["against"] = a.against
    elif a.surface:
        Y = SurfaceSpec.by_name(a.surface).sample(a.reference_count, stream(seed, "eval", "reference")).points
    else:
        raise CliError("eval needs --against CLOUD or --surface NAME", EXIT_VALIDATION)
    if X.shape[1] != Y.shape[1]:
        raise CliError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}", EXIT_VALIDATION)
    rep = evaluate_cloud(X, Y, stream(seed, "eval", "blocks"), a.block_size, surf, a.threads)
    Path(a.out).write_text(rep.to_json(), encoding="utf-8")
    write_manifest(_manifest_path(a.out), "eval", vars_of(a), seed, inputs, {"report": a.out}, started,
                   {"metrics": json.loads(rep.to_json())})
    print(rep.summary())


def cmd_check_grad(a):
    from .gradcheck import random_instance, check_gradients

    seed = pick_seed(a.seed)
    worst, bad = 0.0, 0
    for k in range(a.instances):
        rng = stream(seed, "check-grad", k)
        model, disc, batch, glue = random_instance(rng, glue=None if a.glue == "both" else a.glue == "on")
        rep = check_gradients(model, disc, batch, a.tolerance, glue=glue)
        worst = max(worst, rep.worst)
        if not rep.ok:
            bad += 1
            for line in rep.lines():
                log.error("instance %d (%s, glue=%s): %s", k, model.mode, glue, line)
    print(f"{a.instances} instances, worst relative error {worst:.3e}, {bad} flagged (tolerance {a.tolerance:g})")
    if bad:
        raise CliError("gradient check failed", EXIT_NUMERIC)


# -- argument parsing -------------------------------------------------------


def vars_of(a):
    return {k: (os.fspath(v) if isinstance(v, Path) else v) for k, v in vars(a).items() if k != "func"}


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))


def build_parser():
    p = argparse.ArgumentParser(prog="atlasgan", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for independent evaluation blocks (training stays single threaded)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a synthetic surface dataset")
    g.add_argument("--surface", required=True, choices=["sphere", "torus"])
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=["csv", "f64le"])
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run phase 1 and phase 2 training")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--preset", choices=["sphere", "torus"])
    src.add_argument("--from-manifest", help="replay the configuration stored in a train manifest")
    t.add_argument("--data", help="override [data] data_path")
    t.add_argument("--run-dir", required=True)
    t.add_argument("--seed", type=int, help="override the config seed (takes precedence over ATLASGAN_SEED)")
    t.add_argument("--phase1-steps", dest="phase1_steps", type=int)
    t.add_argument("--phase2-steps", dest="phase2_steps", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw points from a trained checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--glue", action="store_true", help="apply the global gluing map (needs inverses)")
    s.add_argument("--skip-rejection", action="store_true", help="raw Gaussian latents, no radial cutoff")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["csv", "f64le"])
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="block-averaged W1 and distance to surface")
    e.add_argument("--cloud", required=True)
    e.add_argument("--against", help="reference cloud")
    e.add_argument("--surface", choices=["sphere", "torus"], help="true surface (reference drawn if no --against)")
    e.add_argument("--reference-count", type=int, default=10000)
    e.add_argument("--block-size", type=int, default=4096)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check-grad", help="finite-difference check on random small instances")
    c.add_argument("--instances", type=int, default=50)
    c.add_argument("--tolerance", type=float, default=1e-5)
    c.add_argument("--glue", choices=["on", "off", "both"], default="both")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_check_grad)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        if a.threads < 1:
            raise CliError("--threads must be >= 1", EXIT_VALIDATION)
        a.func(a)
    except CliError as err:
        log.error("%s", err)
        return err.code
    except (ConfigError, StateError, MetricInputError, DomainError, ResourceError) as err:
        log.error("%s", err)
        return EXIT_VALIDATION
    except (CloudFormatError, FormatError) as err:
        log.error("%s", err)
        return EXIT_IO
    except OSError as err:
        log.error("%s: %s", getattr(err, "filename", "") or "I/O error", err.strerror or err)
        return EXIT_IO
    except ValueError as err:
        log.error("%s", err)
        return EXIT_VALIDATION
    except FloatingPointError as err:
        log.error("%s", err)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
