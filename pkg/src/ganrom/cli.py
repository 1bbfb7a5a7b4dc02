"""Command-line pipeline: simulate -> train -> observe -> predict / assimilate / uq -> report.

Every stage reads and writes inside one workspace directory. Data files carry
the master seed and a configuration hash in their header lines and contain
no timestamps, so reruns with the same inputs are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reduction
from .config import PipelineConfig, load
from .da_uq import (
    Assimilator,
    DaConfig,
    DivergenceError,
    NoAcceptedMembersError,
    ObservationSet,
    UqConfig,
    calibrate_zeta_obs,
    nearest_run,
    noise_weights,
    posterior_stats,
    prior_stats,
    uq_run,
)
from .epi_sim import (
    FIELD_INDEX,
    FIELDS,
    ConfigurationError,
    RegionMask,
    SnapshotSeries,
    StabilityError,
    UndefinedValueError,
    effective_r0,
    sample_r0_pairs,
    simulate,
)
from .gan_train import TrainedGan, make_windows, train
from .predgan import KnownWindow, NonFiniteLossError, PredictionLossWeights, Surrogate, predict_series

log = logging.getLogger("ganrom")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4, 5
STAGE_IDS = {"simulate": 1, "train": 2, "observe": 3, "predict": 4, "assimilate": 5, "uq": 6,
             "calibrate": 7}
HOME_FIELDS = ("S1", "E1", "I1", "R1")


class DataError(RuntimeError):
    pass


def stage_seed(seed: int, stage: str) -> list[int]:
    return [int(seed), STAGE_IDS[stage]]


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def dir(self, name: str) -> Path:
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    runs_manifest = property(lambda self: self.root / "runs" / "manifest.csv")
    truth = property(lambda self: self.root / "truth" / "truth.txt")
    basis = property(lambda self: self.root / "model" / "basis.npz")
    gan = property(lambda self: self.root / "model" / "gan.npz")
    observations = property(lambda self: self.root / "obs" / "observations.csv")
    prediction = property(lambda self: self.root / "predict" / "trajectory.csv")
    da_trajectory = property(lambda self: self.root / "da" / "trajectory.csv")
    uq_manifest = property(lambda self: self.root / "uq" / "manifest.csv")


# ---------------------------------------------------------------------------
# tabular IO


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path: Path, columns, rows, meta: dict | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path: Path) -> tuple[dict, list[dict]]:
    if not path.exists():
        raise DataError(f"missing input {path}")
    meta, body = {}, []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line:
            body.append(line)
    return meta, list(csv.DictReader(body))


def _meta(cfg: PipelineConfig, **extra) -> dict:
    return {"seed": cfg.seed, "config_hash": cfg.hash(), **extra}


# ---------------------------------------------------------------------------
# shared loading


def _mask(cfg: PipelineConfig) -> RegionMask:
    if cfg.simulation.mask_file:
        return RegionMask.from_file(cfg.simulation.mask_file)
    return RegionMask.default()


def _load_runs(ws: Workspace) -> tuple[list[SnapshotSeries], np.ndarray]:
    _, rows = read_table(ws.runs_manifest)
    if not rows:
        raise DataError(f"{ws.runs_manifest} lists no runs")
    series = []
    for row in rows:
        path = ws.runs_manifest.parent / row["file"]
        if not path.exists():
            raise DataError(f"missing series file {path}")
        series.append(SnapshotSeries.load(path))
    mus = np.array([[float(r["r0_home"]), float(r["r0_mobile"])] for r in rows])
    return series, mus


def _load_model(ws: Workspace) -> tuple[reduction.PcaBasis, TrainedGan]:
    for p in (ws.basis, ws.gan):
        if not p.exists():
            raise DataError(f"missing checkpoint {p}; run 'train' first")
    basis = reduction.PcaBasis.load(ws.basis)
    gan = TrainedGan.load(ws.gan)
    if gan.basis_fingerprint and gan.basis_fingerprint != basis.fingerprint():
        raise DataError("generator checkpoint was trained against a different PCA basis")
    return basis, gan


def _load_truth(ws: Workspace) -> SnapshotSeries:
    if not ws.truth.exists():
        raise DataError(f"missing ground truth {ws.truth}; run 'simulate --truth' first")
    return SnapshotSeries.load(ws.truth)


def _weights(cfg: PipelineConfig, basis) -> PredictionLossWeights:
    return PredictionLossWeights.from_basis(basis, zeta_mu=cfg.prediction.zeta_mu)


def _initial_windows(ws: Workspace, basis, m: int):
    series, mus = _load_runs(ws)
    return [reduction.compress(s.matrix()[:m], basis) for s in series], mus


def _da_config(cfg: PipelineConfig) -> DaConfig:
    d = cfg.da
    return DaConfig(d.relaxation, d.max_pairs, d.tol, d.obs_span, d.optimizer)


def _resolve_zeta(cfg, model, basis, obs, windows, run_mus, weights) -> float:
    """Configured zeta_obs, or the balance value from the reference prior."""
    if cfg.da.zeta_obs != "auto":
        return float(cfg.da.zeta_obs)
    mu = np.asarray(cfg.uq.mu_mean, dtype=float)
    src = windows[nearest_run(mu, run_mus)]
    zeta = calibrate_zeta_obs(model, basis, src, mu, obs, cfg.da.n_levels, weights, _da_config(cfg),
                              seed=stage_seed(cfg.seed, "calibrate"))
    log.info("calibrated zeta_obs = %.6g", zeta)
    return zeta


# ---------------------------------------------------------------------------
# stages


def _simulate_run(args):
    idx, params, mask, duration = args
    try:
        return simulate(params, mask, duration)
    except StabilityError as exc:
        raise StabilityError(f"run {idx}: {exc}", exc.time) from exc


def cmd_simulate(cfg: PipelineConfig, truth: bool = False, n_runs: int | None = None) -> list[Path]:
    ws = Workspace(cfg.workspace)
    sim = cfg.simulation
    mask = _mask(cfg)
    if truth:
        params = sim.params.with_r0(*sim.truth_r0)
        series = _simulate_run((0, params, mask, sim.duration))
        ws.dir("truth")
        series.save(ws.truth, _meta(cfg, role="truth"))
        return [ws.truth]
    n = sim.n_runs if n_runs is None else n_runs
    if n < 1:
        raise ConfigurationError("n_runs must be >= 1")
    pairs = sample_r0_pairs(n, sim.r0_mean, sim.r0_std, rng=stage_seed(cfg.seed, "simulate"))
    jobs = [(i, sim.params.with_r0(*p), mask, sim.duration) for i, p in enumerate(pairs)]
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_simulate_run, jobs))
    else:
        results = [_simulate_run(j) for j in jobs]
    out = ws.dir("runs")
    rows, paths = [], []
    for i, (series, p) in enumerate(zip(results, pairs)):
        name = f"run_{i:03d}.txt"
        series.save(out / name, _meta(cfg, run=i))
        rows.append((i, p[0], p[1], name))
        paths.append(out / name)
    write_table(ws.runs_manifest, ("run", "r0_home", "r0_mobile", "file"), rows, _meta(cfg))
    return paths


def cmd_train(cfg: PipelineConfig, epochs: int | None = None) -> TrainedGan:
    ws = Workspace(cfg.workspace)
    series, _ = _load_runs(ws)
    basis = reduction.fit(series, cfg.reduction.n_components)
    ev = basis.explained_variance
    log.info("%d components capture %.6f of the variance", basis.n_components, ev)
    if ev < cfg.reduction.min_explained_variance:
        raise DataError(f"explained variance {ev:.6f} below the configured floor "
                        f"{cfg.reduction.min_explained_variance}")
    gcfg = replace(cfg.gan, seed=int(np.random.SeedSequence(stage_seed(cfg.seed, "train")).generate_state(1)[0]))
    if epochs is not None:
        gcfg = replace(gcfg, epochs=epochs)
    windows = make_windows(series, basis, gcfg.m)

    def progress(rec):
        if rec.epoch % 50 == 0 or rec.epoch == gcfg.epochs - 1:
            log.info("epoch %d  d_loss %.4f  g_loss %.4f", rec.epoch, rec.d_loss, rec.g_loss)

    gan = train(windows, gcfg, callback=progress)
    gan.basis_fingerprint = basis.fingerprint()
    ws.dir("model")
    basis.save(ws.basis, _mask(cfg).shape)
    gan.save(ws.gan)
    write_table(ws.root / "model" / "train_log.csv", ("epoch", "d_loss", "g_loss", "d_real", "d_fake"),
                [(r.epoch, r.d_loss, r.g_loss, r.d_real, r.d_fake) for r in gan.log], _meta(cfg))
    ratio = basis.explained_variance_ratio
    write_table(ws.root / "model" / "variance.csv",
                ("component", "singular_value", "explained_variance_ratio", "cumulative"),
                [(k, s, r, c) for k, (s, r, c) in
                 enumerate(zip(basis.singular_values, ratio, np.cumsum(ratio)))], _meta(cfg))
    return gan


def observation_levels(series: SnapshotSeries, first: float, last: float, every: float) -> list[int]:
    days = np.arange(first, last + 1e-9, every)
    if len(days) == 0 or days[0] < series.times[0] - 1e-9 or days[-1] > series.times[-1] + 1e-9:
        raise DataError(f"observation schedule {first}..{last} outside the series time range "
                        f"{series.times[0]}..{series.times[-1]}")
    return [series.index_at(d) for d in days]


def cmd_observe(cfg: PipelineConfig) -> ObservationSet:
    ws = Workspace(cfg.workspace)
    truth = _load_truth(ws)
    oc = cfg.observation
    levels = observation_levels(truth, oc.first_day, oc.last_day, oc.every_days)
    cells = [truth.mask.bottom_left(label) for label in oc.regions]
    fields = [FIELD_INDEX[f] for f in oc.fields]
    rng = np.random.default_rng(stage_seed(cfg.seed, "observe"))
    recs = []
    for k in levels:
        for r, c in cells:
            for f in fields:
                v = truth.values[k, f, r, c]
                recs.append((k, r, c, f, v * (1.0 + oc.noise_fraction * rng.standard_normal())))
    lv, rr, cc, ff, vals = (np.array(x) for x in zip(*recs))
    obs = ObservationSet(lv, rr, cc, ff, vals, noise_weights(vals, oc.noise_fraction, oc.sigma_floor),
                         noise_fraction=oc.noise_fraction, sigma_floor=oc.sigma_floor,
                         grid_shape=truth.mask.shape)
    ws.dir("obs")
    obs.save(ws.observations, _meta(cfg))
    return obs


def cmd_predict(cfg: PipelineConfig, n_steps: int | None = None, r0=None):
    ws = Workspace(cfg.workspace)
    basis, gan = _load_model(ws)
    truth = _load_truth(ws)
    model = Surrogate.from_gan(gan)
    m = cfg.prediction.n_known
    mu = np.asarray(r0 if r0 is not None else truth.params.mu, dtype=float)
    known = KnownWindow(reduction.compress(truth.matrix()[:m], basis), mu, time=float(truth.times[m - 1]),
                        interval=truth.params.snapshot_interval)
    steps = cfg.prediction.n_steps if n_steps is None else n_steps
    roll = predict_series(model, known, steps, _weights(cfg, basis), cfg.prediction.optimizer,
                          seed=stage_seed(cfg.seed, "predict"))
    k = basis.n_components
    cols = ["time"] + [f"alpha_{i}" for i in range(k)] + ["mu_0", "mu_1", "converged", "loss"]
    rows = [[s.time, *s.alpha, *s.mu, s.converged, s.loss] for s in roll.snapshots]
    write_table(ws.prediction, cols, rows, _meta(cfg, n_known=m))
    n_bad = int((~roll.converged).sum()) if len(roll) else 0
    if n_bad:
        log.warning("%d of %d prediction steps did not converge", n_bad, len(roll))
    return roll


def _trajectory_rows(times, alpha, mu, prior_alpha, prior_mu):
    return [[t, *a, *u, *pa, *pu] for t, a, u, pa, pu in zip(times, alpha, mu, prior_alpha, prior_mu)]


def _trajectory_columns(k: int, n_mu: int):
    a = [f"alpha_{i}" for i in range(k)]
    u = [f"mu_{i}" for i in range(n_mu)]
    return ["time", *a, *u, *(f"prior_{c}" for c in a), *(f"prior_{c}" for c in u)]


def _da_setup(cfg: PipelineConfig, ws: Workspace):
    basis, gan = _load_model(ws)
    model = Surrogate.from_gan(gan)
    if not ws.observations.exists():
        raise DataError(f"missing observations {ws.observations}; run 'observe' first")
    obs = ObservationSet.load(ws.observations)
    if obs.level.size and obs.level.max() >= cfg.da.n_levels:
        raise DataError("observations fall beyond the assimilation horizon")
    windows, run_mus = _initial_windows(ws, basis, cfg.gan.m)
    weights = _weights(cfg, basis)
    obs.zeta_obs = _resolve_zeta(cfg, model, basis, obs, windows, run_mus, weights)
    return basis, model, obs, windows, run_mus, weights


def _level_times(cfg: PipelineConfig, n: int) -> np.ndarray:
    return np.arange(n) * cfg.simulation.params.snapshot_interval


def cmd_assimilate(cfg: PipelineConfig, r0=None):
    ws = Workspace(cfg.workspace)
    basis, model, obs, windows, run_mus, weights = _da_setup(cfg, ws)
    mu = np.asarray(r0 if r0 is not None else cfg.uq.mu_mean, dtype=float)
    src = nearest_run(mu, run_mus)
    res = Assimilator(model, basis, obs, weights, _da_config(cfg)).assimilate(
        windows[src], mu, cfg.da.n_levels, None, stage_seed(cfg.seed, "assimilate"))
    meta = _meta(cfg, zeta_obs=repr(obs.zeta_obs), source_run=src, converged=int(res.converged))
    times = _level_times(cfg, cfg.da.n_levels)
    write_table(ws.da_trajectory, _trajectory_columns(basis.n_components, len(mu)),
                _trajectory_rows(times, res.alpha, res.mu, res.first_alpha, res.first_mu), meta)
    write_table(ws.root / "da" / "mismatch.csv", ("forward_march", "mismatch"),
                list(enumerate(res.mismatch_history)), meta)
    return res


def _quantities(cfg: PipelineConfig) -> list[str]:
    mask = _mask(cfg)
    r, c = mask.bottom_left(2)
    return ["effective_r0", "mu:0", "mu:1"] + [f"{f}:{r}:{c}" for f in FIELDS]


def _write_uq(cfg: PipelineConfig, ws: Workspace, result, basis, meta: dict) -> None:
    times = _level_times(cfg, cfg.da.n_levels)
    rows = []
    mdir = ws.dir("uq") / "members"
    mdir.mkdir(exist_ok=True)
    for mem in result.members:
        name = f"member_{mem.index:04d}.csv" if mem.alpha is not None else ""
        rows.append((mem.index, *mem.mu_prior, mem.source_run, f"{mem.seed[0]}:{mem.seed[1]}",
                     mem.mismatch, mem.accepted, name, mem.error.replace("\n", " ")))
        if name:
            write_table(mdir / name, _trajectory_columns(basis.n_components, len(mem.mu_prior)),
                        _trajectory_rows(times, mem.alpha, mem.mu, mem.prior_alpha, mem.prior_mu),
                        {**meta, "member": mem.index})
    write_table(ws.uq_manifest, ("member", "mu_prior_0", "mu_prior_1", "source_run", "seed", "mismatch",
                                 "accepted", "file", "error"), rows,
                {**meta, "threshold": repr(result.threshold),
                 "expected_mismatch": repr(result.expected_mismatch)})

    if len(result.accepted) < 2:
        log.warning("fewer than 2 accepted members; posterior summary skipped")
        return
    summary = []
    ddir = ws.dir("uq") / "density"
    dt = cfg.simulation.params.snapshot_interval
    for day in cfg.uq.report_days:
        level = int(round(day / dt))
        if level >= cfg.da.n_levels:
            raise ConfigurationError(f"report day {day} beyond the assimilation horizon")
        for q in _quantities(cfg):
            post = posterior_stats(result.members, q, level, basis)
            pri = prior_stats(result.members, q, level, basis)
            summary.append((day, q, post.mean, post.std, pri.mean, pri.std))
            if post.grid is not None:
                write_table(ddir / f"{q.replace(':', '_')}_day{day:g}.csv", ("x", "density"),
                            zip(post.grid, post.density), meta)
    write_table(ws.root / "uq" / "posterior.csv",
                ("day", "quantity", "mean", "std", "prior_mean", "prior_std"), summary, meta)


def cmd_uq(cfg: PipelineConfig, n_samples: int | None = None):
    ws = Workspace(cfg.workspace)
    basis, model, obs, windows, run_mus, weights = _da_setup(cfg, ws)
    uq = UqConfig(np.asarray(cfg.uq.mu_mean, dtype=float), np.asarray(cfg.uq.mu_std, dtype=float),
                  cfg.uq.n_samples if n_samples is None else n_samples, cfg.uq.threshold_factor)
    meta = _meta(cfg, zeta_obs=repr(obs.zeta_obs))
    try:
        result = uq_run(model, basis, obs, windows, run_mus, cfg.da.n_levels, uq, _da_config(cfg),
                        weights, seed=cfg.seed, workers=cfg.workers)
    except NoAcceptedMembersError as exc:
        if exc.result is not None:
            _write_uq(cfg, ws, exc.result, basis, meta)
        raise
    _write_uq(cfg, ws, result, basis, meta)
    log.info("accepted %d of %d members", len(result.accepted), len(result.members))
    return result


def _home_curves(matrix: np.ndarray, mask: RegionMask) -> np.ndarray:
    """Home-group compartment totals over region 2, shape ``(T, 4)``."""
    home = mask.home.ravel()
    per_cell = matrix.reshape(len(matrix), -1, len(FIELDS))[:, home]
    return np.stack([per_cell[:, :, FIELD_INDEX[f]].sum(axis=1) for f in HOME_FIELDS], axis=1)


def curve_errors(pred: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Per-curve relative L1 error: sum|pred - true| / sum|true|."""
    return np.abs(pred - true).sum(axis=0) / np.abs(true).sum(axis=0)


def _read_trajectory(path: Path, k: int):
    _, rows = read_table(path)
    times = np.array([float(r["time"]) for r in rows])
    alpha = np.array([[float(r[f"alpha_{i}"]) for i in range(k)] for r in rows]).reshape(len(rows), k)
    mu = np.array([[float(r["mu_0"]), float(r["mu_1"])] for r in rows]).reshape(len(rows), 2)
    prior = None
    if rows and "prior_alpha_0" in rows[0]:
        prior = (np.array([[float(r[f"prior_alpha_{i}"]) for i in range(k)] for r in rows]),
                 np.array([[float(r["prior_mu_0"]), float(r["prior_mu_1"])] for r in rows]))
    return times, alpha, mu, prior


def cmd_report(cfg: PipelineConfig) -> dict:
    """Plot-ready tables from whatever stage outputs exist."""
    ws = Workspace(cfg.workspace)
    out = ws.dir("report")
    basis = reduction.PcaBasis.load(ws.basis) if ws.basis.exists() else None
    summary: dict = {}
    meta = _meta(cfg)
    truth = SnapshotSeries.load(ws.truth) if ws.truth.exists() else None

    if basis is not None and truth is not None and ws.prediction.exists():
        times, alpha, _, _ = _read_trajectory(ws.prediction, basis.n_components)
        if len(times):
            idx = [truth.index_at(t) for t in times]
            pred = _home_curves(reduction.reconstruct(alpha, basis, clip=True), truth.mask)
            true = _home_curves(truth.matrix()[idx], truth.mask)
            write_table(out / "prediction_home_curves.csv",
                        ["time", *(f"pred_{f}" for f in HOME_FIELDS), *(f"true_{f}" for f in HOME_FIELDS)],
                        [[t, *p, *q] for t, p, q in zip(times, pred, true)], meta)
            err = curve_errors(pred, true)
            write_table(out / "prediction_errors.csv", ("compartment", "relative_error"),
                        zip(HOME_FIELDS, err), meta)
            summary["prediction_error"] = dict(zip(HOME_FIELDS, err.tolist()))

    post_path = ws.root / "uq" / "posterior.csv"
    if post_path.exists():
        _, rows = read_table(post_path)
        table = []
        for r in rows:
            if r["quantity"] != "effective_r0":
                continue
            day = float(r["day"])
            true_r0 = float("nan")
            if truth is not None:
                try:
                    true_r0 = effective_r0(truth[truth.index_at(day)], truth.params)
                except (ValueError, UndefinedValueError):
                    pass
            table.append((day, float(r["prior_mean"]), float(r["prior_std"]), float(r["mean"]),
                          float(r["std"]), true_r0))
        write_table(out / "effective_r0_table.csv",
                    ("day", "prior_mean", "prior_std", "posterior_mean", "posterior_std", "truth"), table, meta)
        summary["effective_r0"] = table

    if basis is not None and ws.uq_manifest.exists():
        _, members = read_table(ws.uq_manifest)
        mask = truth.mask if truth is not None else _mask(cfg)
        r, c = mask.bottom_left(2)
        cell = (r * mask.shape[1] + c) * len(FIELDS)
        rows = []
        for mem in members:
            if not mem["file"]:
                continue
            times, alpha, _, prior = _read_trajectory(ws.root / "uq" / "members" / mem["file"],
                                                      basis.n_components)
            kinds = [("posterior" if mem["accepted"] == "1" else "rejected", alpha), ("prior", prior[0])]
            for kind, a in kinds:
                x = reduction.reconstruct(a, basis, clip=True)[:, cell : cell + len(FIELDS)]
                rows.extend([int(mem["member"]), kind, t, *v] for t, v in zip(times, x))
        write_table(out / "cell_curves.csv", ["member", "kind", "time", *FIELDS], rows,
                    {**meta, "cell": f"{r},{c}"})
        summary["accepted"] = sum(m["accepted"] == "1" for m in members)
        summary["members"] = len(members)
    return summary


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--workspace", help="directory holding all pipeline files")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration entry, e.g. gan.epochs=100")
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="ganrom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate training runs or the ground truth")
    s.add_argument("--truth", action="store_true", help="simulate the held-out ground-truth run")
    s.add_argument("--n-runs", type=int)
    s = sub.add_parser("train", parents=[common], help="fit the PCA basis and train the GAN")
    s.add_argument("--epochs", type=int)
    sub.add_parser("observe", parents=[common], help="synthesise noisy observations from the truth")
    s = sub.add_parser("predict", parents=[common], help="autoregressive forecast from known levels")
    s.add_argument("--n-steps", type=int)
    s.add_argument("--r0", type=float, nargs=2, metavar=("HOME", "MOBILE"))
    s = sub.add_parser("assimilate", parents=[common], help="single assimilation from a prior")
    s.add_argument("--r0", type=float, nargs=2, metavar=("HOME", "MOBILE"), help="prior parameters")
    s = sub.add_parser("uq", parents=[common], help="ensemble uncertainty quantification")
    s.add_argument("--n-samples", type=int)
    sub.add_parser("report", parents=[common], help="plot-ready summary tables")
    return p


def _config_from_args(args) -> PipelineConfig:
    overrides = list(args.set)
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("workspace", "workspace")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load(args.config, overrides)


def run(args) -> object:
    cfg = _config_from_args(args)
    cmd = args.command
    if cmd == "simulate":
        return cmd_simulate(cfg, truth=args.truth, n_runs=args.n_runs)
    if cmd == "train":
        return cmd_train(cfg, epochs=args.epochs)
    if cmd == "observe":
        return cmd_observe(cfg)
    if cmd == "predict":
        return cmd_predict(cfg, n_steps=args.n_steps, r0=args.r0)
    if cmd == "assimilate":
        return cmd_assimilate(cfg, r0=args.r0)
    if cmd == "uq":
        return cmd_uq(cfg, n_samples=args.n_samples)
    summary = cmd_report(cfg)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigurationError as exc:
        log.error("%s: configuration error: %s", args.command, exc)
        return EXIT_CONFIG
    except (DataError, reduction.DimensionError, UndefinedValueError) as exc:
        log.error("%s: data error: %s", args.command, exc)
        return EXIT_DATA
    except (StabilityError, DivergenceError, NoAcceptedMembersError, NonFiniteLossError) as exc:
        log.error("%s: convergence failure: %s", args.command, exc)
        return EXIT_CONVERGENCE
    except OSError as exc:
        log.error("%s: I/O error: %s", args.command, exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
