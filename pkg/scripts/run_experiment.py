"""Train and evaluate the sphere or torus preset over several seeds.

    python3 scripts/run_experiment.py sphere --seeds 0 1 2 --root runs
    python3 scripts/run_experiment.py torus --seeds 0 --root runs --eval-only

Writes runs/<preset>/seed<k>/ per trial and runs/<preset>/summary.json.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from atlasgan.experiment import evaluate_trial, run_trial, summarize, trial_dir

log = logging.getLogger("experiment")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("preset", choices=["sphere", "torus"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--root", default="runs")
    ap.add_argument("--eval-only", action="store_true", help="skip training; re-evaluate existing checkpoints")
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(message)s")

    def progress(phase, step, total, row):
        if step % 100 == 0 or step + 1 == total:
            log.info("%s %d/%d adversarial %.5f", phase, step + 1, total, row["adversarial"])

    results = []
    for seed in a.seeds:
        d = trial_dir(a.root, a.preset, seed)
        if not a.eval_only:
            log.info("training %s seed %d", a.preset, seed)
            run_trial(a.preset, seed, a.root, progress=progress)
        res = evaluate_trial(d, a.threads)
        log.info("seed %d: w1 %.4f q99 %.4f", seed, res["w1"], res["q99"])
        results.append(res)
    summary = summarize(a.preset, results)
    Path(a.root, a.preset, "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
