"""Forecast from a trained workspace and print home-curve errors by day.

    python scripts/rollout_errors.py workspace/desk [--r0 7.7 17.4]

Needs the 'train' and 'simulate --truth' stages. Writes nothing; useful for
comparing generator checkpoints before running the full report.
"""
import argparse

import numpy as np

from ganrom import cli, reduction
from ganrom.config import load


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("workspace")
    p.add_argument("--config")
    p.add_argument("--r0", type=float, nargs=2)
    p.add_argument("--n-steps", type=int)
    args = p.parse_args()
    cfg = load(args.config, [f"workspace={args.workspace}"])
    ws = cli.Workspace(cfg.workspace)
    basis, gan = cli._load_model(ws)
    truth = cli._load_truth(ws)
    model = cli.Surrogate.from_gan(gan)
    m = cfg.prediction.n_known
    mu = np.asarray(args.r0 or truth.params.mu, dtype=float)
    known = cli.KnownWindow(reduction.compress(truth.matrix()[:m], basis), mu,
                            time=float(truth.times[m - 1]), interval=truth.params.snapshot_interval)
    steps = args.n_steps or cfg.prediction.n_steps
    res = cli.predict_series(model, known, steps, cli._weights(cfg, basis), cfg.prediction.optimizer,
                             seed=cli.stage_seed(cfg.seed, "predict"))
    idx = [truth.index_at(t) for t in res.times]
    pred = cli._home_curves(reduction.reconstruct(res.alpha, basis, clip=True), truth.mask)
    true = cli._home_curves(truth.matrix()[idx], truth.mask)
    print("day   " + "  ".join(f"{f:>16}" for f in cli.HOME_FIELDS))
    for day in range(1, int(res.times[-1]) + 1):
        k = int(np.argmin(np.abs(res.times - day)))
        print(f"{day:<5d} " + "  ".join(f"{p:7.1f} / {t:7.1f}" for p, t in zip(pred[k], true[k])))
    err = cli.curve_errors(pred, true)
    print("relative errors: " + ", ".join(f"{f} {e:.3f}" for f, e in zip(cli.HOME_FIELDS, err)))
    print(f"non-converged steps: {int((~res.converged).sum())} of {len(res)}")


if __name__ == "__main__":
    main()
