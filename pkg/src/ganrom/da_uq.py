"""Data assimilation and uncertainty quantification in the generator's latent space.

Assimilation sweeps the time levels forwards and backwards. At each level a
latent vector is optimised so that the generated window agrees with the
current estimates at ``m`` neighbouring levels, with the prior parameters,
and with any observations falling on those levels; the remaining row of the
window then updates the estimate at the current level through relaxation.

The ensemble driver repeats this for parameter vectors drawn from the prior
and observation perturbations drawn from the noise model, then keeps the
members whose final data mismatch is acceptable.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .epi_sim import FIELD_INDEX, FIELDS, N_FIELDS, effective_r0_from_totals
from .predgan import (
    KnownWindow,
    NonFiniteLossError,
    OptimizerConfig,
    PredictionLossWeights,
    Surrogate,
    optimize_with_restarts,
    window_terms,
)
from .reduction import PcaBasis, reconstruct

log = logging.getLogger(__name__)

FORWARD, BACKWARD = "forward", "backward"
OBS_COLUMNS = ("time_level", "cell_row", "cell_col", "field", "value", "weight")


class DivergenceError(RuntimeError):
    pass


class NoAcceptedMembersError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class ObservationSet:
    """Point observations of single fields at grid cells and time levels."""

    level: np.ndarray
    row: np.ndarray
    col: np.ndarray
    field: np.ndarray  # indices into FIELDS
    value: np.ndarray
    weight: np.ndarray
    zeta_obs: float = 1.0
    noise_fraction: float = 0.05
    sigma_floor: float = 1.0
    grid_shape: tuple[int, int] = (10, 10)

    def __post_init__(self):
        self.level = np.asarray(self.level, dtype=np.int64).ravel()
        self.row = np.asarray(self.row, dtype=np.int64).ravel()
        self.col = np.asarray(self.col, dtype=np.int64).ravel()
        self.field = np.asarray(self.field, dtype=np.int64).ravel()
        self.value = np.asarray(self.value, dtype=np.float64).ravel()
        self.weight = np.asarray(self.weight, dtype=np.float64).ravel()
        n = len(self.level)
        if any(len(a) != n for a in (self.row, self.col, self.field, self.value, self.weight)):
            raise ValueError("observation columns differ in length")
        if np.any(self.weight < 0):
            raise ValueError("observation weights must be >= 0")
        if n and (self.field.min() < 0 or self.field.max() >= N_FIELDS):
            raise ValueError("unknown field id")

    @classmethod
    def empty(cls, **kw) -> ObservationSet:
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, **kw)

    def __len__(self):
        return len(self.level)

    @property
    def var_index(self) -> np.ndarray:
        return (self.row * self.grid_shape[1] + self.col) * N_FIELDS + self.field

    @property
    def noise_std(self) -> np.ndarray:
        """Measurement-error standard deviation: a fixed fraction of each value,
        floored so that zero counts keep a finite weight."""
        return np.maximum(self.noise_fraction * np.abs(self.value), self.sigma_floor)

    def observed_levels(self) -> np.ndarray:
        return np.unique(self.level[self.weight > 0])

    def save(self, path: str | Path, header: dict | None = None) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# zeta_obs={self.zeta_obs!r}\n# noise_fraction={self.noise_fraction!r}\n")
            fh.write(f"# sigma_floor={self.sigma_floor!r}\n")
            fh.write(f"# grid={self.grid_shape[0]}x{self.grid_shape[1]}\n")
            for k, v in (header or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OBS_COLUMNS)
            for i in range(len(self)):
                w.writerow([self.level[i], self.row[i], self.col[i], FIELDS[self.field[i]],
                            repr(float(self.value[i])), repr(float(self.weight[i]))])

    @classmethod
    def load(cls, path: str | Path) -> ObservationSet:
        meta, rows = {}, []
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            elif line.strip():
                body.append(line)
        reader = csv.DictReader(body)
        for rec in reader:
            rows.append(rec)
        grid = tuple(int(n) for n in meta.get("grid", "10x10").split("x"))
        cols = {c: [r[c] for r in rows] for c in OBS_COLUMNS}
        return cls(
            np.array(cols["time_level"], dtype=np.int64),
            np.array(cols["cell_row"], dtype=np.int64),
            np.array(cols["cell_col"], dtype=np.int64),
            np.array([FIELD_INDEX[f] for f in cols["field"]], dtype=np.int64),
            np.array(cols["value"], dtype=np.float64),
            np.array(cols["weight"], dtype=np.float64),
            zeta_obs=float(meta.get("zeta_obs", 1.0)),
            noise_fraction=float(meta.get("noise_fraction", 0.05)),
            sigma_floor=float(meta.get("sigma_floor", 1.0)),
            grid_shape=grid,
        )


def noise_weights(values, noise_fraction: float, sigma_floor: float) -> np.ndarray:
    """Inverse variances 1 / max(noise_fraction*|v|, sigma_floor)^2."""
    sigma = np.maximum(noise_fraction * np.abs(np.asarray(values, dtype=np.float64)), sigma_floor)
    return 1.0 / sigma**2


class ObservationOperator:
    """Observed values as an affine function of generated (scaled) alpha rows."""

    def __init__(self, obs: ObservationSet, model: Surrogate, basis: PcaBasis):
        self.obs = obs
        A, c = basis.observation_rows(obs.var_index)
        half = model.scaler.half_range[: model.n_alpha]
        lo = model.scaler.lo[: model.n_alpha]
        self.A_phys, self.c_phys = A, c
        # d = a @ g + b for a scaled row g
        self.a = A * half
        self.b = A @ (lo + half) + c
        self.by_level: dict[int, np.ndarray] = {}
        for i, k in enumerate(obs.level):
            if obs.weight[i] > 0:
                self.by_level.setdefault(int(k), []).append(i)
        self.by_level = {k: np.array(v) for k, v in self.by_level.items()}

    def records_for(self, levels: Sequence[int]):
        """(window position, record index) pairs for records on ``levels``."""
        pos, idx = [], []
        for p, k in enumerate(levels):
            recs = self.by_level.get(int(k))
            if recs is not None:
                pos.extend([p] * len(recs))
                idx.extend(recs)
        return np.array(pos, dtype=np.int64), np.array(idx, dtype=np.int64)

    def predict_physical(self, alpha_traj: np.ndarray) -> np.ndarray:
        """Observed quantities from a physical-alpha trajectory ``(K, n_alpha)``."""
        lv = self.obs.level
        return np.einsum("ij,ij->i", self.A_phys, alpha_traj[lv]) + self.c_phys

    def level_mismatch(self, alpha_traj: np.ndarray) -> dict[int, float]:
        r = self.predict_physical(alpha_traj) - self.obs.value
        wr2 = self.obs.weight * r * r
        return {k: float(wr2[recs].sum()) for k, recs in sorted(self.by_level.items())}

    def mismatch(self, alpha_traj: np.ndarray) -> float:
        """Data mismatch averaged over observed levels (no zeta_obs, no perturbation)."""
        per = self.level_mismatch(alpha_traj)
        return float(np.mean(list(per.values()))) if per else 0.0

    def expected_mismatch(self) -> float:
        """Mismatch the true state would score under the noise model."""
        o = self.obs
        term = o.weight * o.noise_std**2
        per = [term[recs].sum() for recs in self.by_level.values()]
        return float(np.mean(per)) if per else 0.0


def da_loss(model: Surrogate, z, alpha_targets, mu_targets, start: int, obs_op: ObservationOperator | None,
            eps=None, direction: str = FORWARD, weights: PredictionLossWeights | None = None,
            zeta_obs: float | None = None, obs_span: str = "window"):
    """Prediction terms plus the (optionally perturbed) observation mismatch.

    The generated window covers levels ``start..start+m``. ``alpha_targets``
    and ``mu_targets`` hold the ``m`` compared levels in ascending order:
    rows ``0..m-1`` when marching forward, rows ``1..m`` when marching
    backward. Observations count on every generated row (``obs_span="window"``)
    or only on the compared rows (``"compared"``).
    """
    z = np.asarray(z, dtype=np.float64)
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be {FORWARD!r} or {BACKWARD!r}")
    if obs_span not in ("window", "compared"):
        raise ValueError("obs_span must be 'window' or 'compared'")
    alpha_targets = np.atleast_2d(alpha_targets)
    m = len(alpha_targets)
    if weights is None:
        weights = PredictionLossWeights(np.ones(model.n_alpha), np.ones(model.n_cols - model.n_alpha))
    first = 0 if direction == FORWARD else 1
    rows = slice(first, first + m)

    win, vjp = model.window_and_vjp(z)
    targets = model.scale(alpha_targets, np.broadcast_to(mu_targets, (m, model.n_cols - model.n_alpha)))
    loss, dwin = window_terms(win, rows, targets, weights, model.n_alpha)

    if obs_op is not None:
        if obs_span == "window":
            pos, idx = obs_op.records_for(range(start, start + m + 1))
        else:
            pos, idx = obs_op.records_for(range(start + first, start + first + m))
            pos = pos + first
        if len(idx):
            o = obs_op.obs
            zeta = o.zeta_obs if zeta_obs is None else zeta_obs
            g = win[pos, : model.n_alpha]
            d = np.einsum("ij,ij->i", obs_op.a[idx], g) + obs_op.b[idx]
            r = d - o.value[idx]
            if eps is not None:
                r = r + eps[idx]
            wr = o.weight[idx] * r
            loss = loss + zeta * float(np.sum(wr * r))
            contrib = (2.0 * zeta * wr)[:, None] * obs_op.a[idx]
            np.add.at(dwin, (pos, slice(0, model.n_alpha)), contrib)
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(win).all(axis=1))
        raise NonFiniteLossError(f"non-finite assimilation loss; offending rows {bad.tolist()}")
    return loss, vjp(dwin)


@dataclass
class DaConfig:
    relaxation: float = 0.5
    max_pairs: int = 20
    tol: float = 1e-3
    obs_span: str = "window"
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(max_iter=100, patience=10, min_improvement=1e-7,
                                                restarts=0))

    def __post_init__(self):
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation factor must lie in (0, 1]")
        if self.max_pairs < 1:
            raise ValueError("need at least one forward/backward pair")
        if self.obs_span not in ("window", "compared"):
            raise ValueError("obs_span must be 'window' or 'compared'")


def relax(old, new, omega: float):
    return (1.0 - omega) * np.asarray(old) + omega * np.asarray(new)


@dataclass
class AssimilationState:
    """Current estimates at every level plus the last latent per window start."""

    alpha: np.ndarray  # (K, n_alpha), physical units, NaN where unknown
    mu: np.ndarray  # (K, n_mu)
    z: list  # z[s] generates levels s..s+m; None until first optimised
    m: int
    converged: np.ndarray = None
    losses: np.ndarray = None

    def __post_init__(self):
        K = len(self.alpha)
        if self.converged is None:
            self.converged = np.ones(K, dtype=bool)
        if self.losses is None:
            self.losses = np.zeros(K)

    @classmethod
    def from_prior(cls, prior_alpha, prior_mu, n_levels: int) -> AssimilationState:
        prior_alpha = np.atleast_2d(prior_alpha)
        m = len(prior_alpha)
        if n_levels <= m:
            raise ValueError(f"need more than m={m} levels, got {n_levels}")
        alpha = np.full((n_levels, prior_alpha.shape[1]), np.nan)
        alpha[:m] = prior_alpha
        mu = np.tile(np.asarray(prior_mu, dtype=np.float64), (n_levels, 1))
        return cls(alpha, mu, [None] * (n_levels - m), m)

    @property
    def n_levels(self) -> int:
        return len(self.alpha)

    def copy(self) -> AssimilationState:
        return AssimilationState(self.alpha.copy(), self.mu.copy(), list(self.z), self.m,
                                 self.converged.copy(), self.losses.copy())


class Assimilator:
    def __init__(self, model: Surrogate, basis: PcaBasis, obs: ObservationSet,
                 weights: PredictionLossWeights | None = None, config: DaConfig | None = None):
        self.model = model
        self.obs = obs
        self.op = ObservationOperator(obs, model, basis)
        self.weights = weights or PredictionLossWeights(np.ones(model.n_alpha),
                                                        np.ones(model.n_cols - model.n_alpha))
        self.config = config or DaConfig()
        self.zeta_obs: float | None = None  # overrides obs.zeta_obs when set

    def _warm_start(self, state: AssimilationState, s: int, direction: str):
        if state.z[s] is not None:
            return state.z[s]
        step = -1 if direction == FORWARD else 1
        nb = s + step
        if 0 <= nb < len(state.z) and state.z[nb] is not None:
            return state.z[nb]
        return None

    def optimise_level(self, state: AssimilationState, n: int, direction: str, eps, rng):
        m = state.m
        if direction == FORWARD:
            s, levels = n - m, np.arange(n - m, n)
        else:
            s, levels = n, np.arange(n + 1, n + m + 1)
        a_t, mu_t = state.alpha[levels], state.mu[levels]

        def fun(z):
            return da_loss(self.model, z, a_t, mu_t, s, self.op, eps, direction, self.weights,
                           zeta_obs=self.zeta_obs, obs_span=self.config.obs_span)

        res = optimize_with_restarts(fun, self._warm_start(state, s, direction),
                                     self.model.latent_dim, self.config.optimizer, rng)
        state.z[s] = res.z
        row = self.model.window(res.z)[m if direction == FORWARD else 0]
        alpha, mu = self.model.unscale(row)
        return alpha, mu, res

    def march(self, state: AssimilationState, direction: str, eps=None, rng=None,
              first: bool = False) -> AssimilationState:
        """Sweep every level once; ``first`` fills unknown levels without relaxation."""
        rng = np.random.default_rng(rng)
        omega = self.config.relaxation
        state = state.copy()
        m, K = state.m, state.n_levels
        order = range(m, K) if direction == FORWARD else range(K - 1 - m, -1, -1)
        for n in order:
            alpha, mu, res = self.optimise_level(state, n, direction, eps, rng)
            if first and np.isnan(state.alpha[n]).any():
                state.alpha[n] = alpha
            else:
                state.alpha[n] = relax(state.alpha[n], alpha, omega)
            state.mu[n] = relax(state.mu[n], mu, omega)
            state.converged[n] = res.converged
            state.losses[n] = res.loss
        return state

    def mismatch(self, state: AssimilationState) -> float:
        return self.op.mismatch(state.alpha)

    def assimilate(self, prior_alpha, prior_mu, n_levels: int, eps=None, seed=0) -> AssimilationResult:
        if len(self.obs) == 0 or not self.op.by_level:
            raise ValueError("assimilation needs at least one observation")
        rng = np.random.default_rng(seed)
        cfg = self.config
        state = AssimilationState.from_prior(prior_alpha, prior_mu, n_levels)
        state = self.march(state, FORWARD, eps, rng, first=True)
        first_state = state.copy()
        history = [self.mismatch(state)]
        converged = False
        rises = 0
        for _ in range(cfg.max_pairs):
            state = self.march(state, BACKWARD, eps, rng)
            state = self.march(state, FORWARD, eps, rng)
            history.append(self.mismatch(state))
            prev, cur = history[-2], history[-1]
            rises = rises + 1 if cur > prev else 0
            if rises >= 3:
                raise DivergenceError(
                    f"data mismatch increased over 3 consecutive march pairs: {history[-4:]}")
            if abs(cur - prev) <= cfg.tol * max(abs(prev), 1e-300):
                converged = True
                break
        return AssimilationResult(state.alpha, state.mu, history, first_state.alpha,
                                  first_state.mu, converged, state.converged.copy())


@dataclass
class AssimilationResult:
    alpha: np.ndarray
    mu: np.ndarray
    mismatch_history: list[float]
    first_alpha: np.ndarray
    first_mu: np.ndarray
    converged: bool
    level_converged: np.ndarray

    @property
    def mismatch(self) -> float:
        return self.mismatch_history[-1]

    @property
    def first_mismatch(self) -> float:
        return self.mismatch_history[0]


def assimilate(model: Surrogate, basis: PcaBasis, prior_alpha, prior_mu, obs: ObservationSet,
               n_levels: int, eps=None, config: DaConfig | None = None,
               weights: PredictionLossWeights | None = None, seed=0) -> AssimilationResult:
    return Assimilator(model, basis, obs, weights, config).assimilate(prior_alpha, prior_mu, n_levels,
                                                                      eps, seed)


def _term_sums(probe: Assimilator, state: AssimilationState) -> tuple[float, float]:
    """Summed alpha term and unweighted observation term over one march."""
    model, obs, m = probe.model, probe.obs, state.m
    a_sum = o_sum = 0.0
    for n in range(m, len(state.alpha)):
        s = n - m
        levels = np.arange(s, n)
        win = model.window(state.z[s])
        targets = model.scale(state.alpha[levels], state.mu[levels])
        diff = win[:m, : model.n_alpha] - targets[:, : model.n_alpha]
        a_sum += float(np.sum(diff * diff * probe.weights.alpha))
        span = range(s, n + 1) if probe.config.obs_span == "window" else levels
        pos, idx = probe.op.records_for(span)
        if len(idx):
            d = np.einsum("ij,ij->i", probe.op.a[idx], win[pos, : model.n_alpha]) + probe.op.b[idx]
            r = d - obs.value[idx]
            o_sum += float(np.sum(obs.weight[idx] * r * r))
    return a_sum, o_sum


def calibrate_zeta_obs(model: Surrogate, basis: PcaBasis, prior_alpha, prior_mu, obs: ObservationSet,
                       n_levels: int, weights: PredictionLossWeights | None = None,
                       config: DaConfig | None = None, seed=0, max_probes: int = 8,
                       rtol: float = 0.05) -> float:
    """zeta_obs at which the alpha term and the weighted observation term are equal
    over a first forward march run with that same zeta_obs.

    Fixed-point iteration from zeta_obs = 1: each probe march returns the
    balancing value for its own weight, which becomes the next weight.
    """
    probe = Assimilator(model, basis, obs, weights, config)
    zeta = 1.0
    for _ in range(max_probes):
        probe.zeta_obs = zeta
        state = AssimilationState.from_prior(prior_alpha, prior_mu, n_levels)
        state = probe.march(state, FORWARD, None, np.random.default_rng(seed), first=True)
        a_sum, o_sum = _term_sums(probe, state)
        if o_sum == 0 or a_sum == 0:
            return obs.zeta_obs
        new = a_sum / o_sum
        log.debug("zeta_obs probe %.6g -> %.6g", zeta, new)
        done = abs(new - zeta) <= rtol * zeta
        zeta = new
        if done:
            break
    return zeta


# ---------------------------------------------------------------------------
# ensemble


@dataclass
class EnsembleMember:
    index: int
    mu_prior: np.ndarray
    source_run: int
    seed: list
    eps: np.ndarray
    alpha: np.ndarray | None = None
    mu: np.ndarray | None = None
    prior_alpha: np.ndarray | None = None
    prior_mu: np.ndarray | None = None
    mismatch_history: list = field(default_factory=list)
    mismatch: float = float("inf")
    accepted: bool = False
    error: str = ""


@dataclass
class UqConfig:
    mu_mean: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0]))
    mu_std: np.ndarray = field(default_factory=lambda: np.array([4.0, 4.0]))
    n_samples: int = 200
    threshold_factor: float = 2.0


@dataclass
class UqResult:
    members: list[EnsembleMember]
    threshold: float
    expected_mismatch: float

    @property
    def accepted(self) -> list[EnsembleMember]:
        return [mem for mem in self.members if mem.accepted]

    @property
    def acceptance_fraction(self) -> float:
        return len(self.accepted) / len(self.members)


def apply_acceptance(members: Sequence[EnsembleMember], threshold: float) -> list[EnsembleMember]:
    """Accept exactly the members whose final mismatch is within ``threshold``."""
    for mem in members:
        mem.accepted = bool(np.isfinite(mem.mismatch) and mem.mismatch <= threshold)
    return list(members)


def nearest_run(mu: np.ndarray, run_mus: np.ndarray) -> int:
    return int(np.argmin(np.linalg.norm(run_mus - mu, axis=1)))


def member_seed(master_seed: int, index: int) -> list:
    return [int(master_seed), int(index)]


def draw_member(index: int, master_seed: int, obs: ObservationSet, uq: UqConfig, run_mus: np.ndarray):
    seed = member_seed(master_seed, index)
    rng = np.random.default_rng(seed)
    mu = rng.normal(np.asarray(uq.mu_mean, dtype=float), np.asarray(uq.mu_std, dtype=float))
    eps = rng.normal(0.0, 1.0, size=len(obs)) * obs.noise_std
    return EnsembleMember(index, mu, nearest_run(mu, run_mus), seed, eps)


def _run_member(args):
    member, assimilator, initial_windows, n_levels = args
    src = initial_windows[member.source_run]
    try:
        res = assimilator.assimilate(src, member.mu_prior, n_levels, member.eps, member.seed)
    except (DivergenceError, NonFiniteLossError) as exc:
        member.error = str(exc)
        log.warning("member %d failed: %s", member.index, exc)
        return member
    member.alpha, member.mu = res.alpha, res.mu
    member.prior_alpha, member.prior_mu = res.first_alpha, res.first_mu
    member.mismatch_history = list(res.mismatch_history)
    member.mismatch = res.mismatch
    log.info("member %d: mismatch %.4g after %d forward marches", member.index, res.mismatch,
             len(res.mismatch_history))
    return member


def uq_run(model: Surrogate, basis: PcaBasis, obs: ObservationSet, initial_windows: Sequence[np.ndarray],
           run_mus: np.ndarray, n_levels: int, uq: UqConfig | None = None,
           config: DaConfig | None = None, weights: PredictionLossWeights | None = None,
           seed: int = 0, workers: int = 1, members: Sequence[int] | None = None) -> UqResult:
    """Randomised-maximum-likelihood style ensemble of assimilations.

    ``initial_windows[i]`` holds the first ``m`` compressed snapshots of
    training run ``i`` whose parameters are ``run_mus[i]``; each member starts
    from the run nearest to its sampled parameters.
    """
    uq = uq or UqConfig()
    if uq.n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if len(obs) == 0:
        raise ValueError("uncertainty quantification needs observations")
    assimilator = Assimilator(model, basis, obs, weights, config)
    indices = range(uq.n_samples) if members is None else members
    drawn = [draw_member(j, seed, obs, uq, np.asarray(run_mus)) for j in indices]
    jobs = [(mem, assimilator, initial_windows, n_levels) for mem in drawn]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_member, jobs))
    else:
        done = [_run_member(job) for job in jobs]
    expected = assimilator.op.expected_mismatch()
    threshold = uq.threshold_factor * expected
    apply_acceptance(done, threshold)
    result = UqResult(done, threshold, expected)
    if not result.accepted:
        raise NoAcceptedMembersError(
            f"no member reached mismatch <= {threshold:.4g}; review the acceptance threshold "
            f"or enlarge the ensemble", result)
    return result


# ---------------------------------------------------------------------------
# posterior summaries


@dataclass
class PosteriorStats:
    mean: float
    std: float
    grid: np.ndarray | None
    density: np.ndarray | None
    values: np.ndarray


def member_quantity(member_alpha, member_mu, selector: str, level: int, basis: PcaBasis,
                    grid_shape=(10, 10)) -> float:
    """Scalar quantity of one trajectory at one level.

    ``selector`` is ``"mu:<i>"``, ``"effective_r0"`` or ``"<field>:<row>:<col>"``.
    """
    if selector.startswith("mu:"):
        return float(member_mu[level, int(selector[3:])])
    state = reconstruct(member_alpha[level], basis, clip=True).reshape(-1, N_FIELDS)
    if selector == "effective_r0":
        s_home = state[:, FIELD_INDEX["S1"]].sum()
        s_mobile = state[:, FIELD_INDEX["S2"]].sum()
        r0 = member_mu[level]
        return float(effective_r0_from_totals(s_home, s_mobile, r0[0], r0[1]))
    name, r, c = selector.split(":")
    return float(state[int(r) * grid_shape[1] + int(c), FIELD_INDEX[name]])


def posterior_stats(members: Sequence[EnsembleMember], selector: str, level: int, basis: PcaBasis,
                    n_grid: int = 200, accepted_only: bool = True) -> PosteriorStats:
    pool = [mem for mem in members if mem.accepted or not accepted_only]
    if len(pool) < 2:
        raise ValueError(f"posterior statistics need >= 2 accepted members, got {len(pool)}")
    values = np.array([member_quantity(mem.alpha, mem.mu, selector, level, basis) for mem in pool])
    mean, std = float(values.mean()), float(values.std(ddof=1))
    grid = density = None
    if std > 0:
        from scipy.stats import gaussian_kde

        grid = np.linspace(values.min() - 3 * std, values.max() + 3 * std, n_grid)
        density = gaussian_kde(values)(grid)
    return PosteriorStats(mean, std, grid, density, values)


def prior_stats(members: Sequence[EnsembleMember], selector: str, level: int, basis: PcaBasis) -> PosteriorStats:
    """Same statistics over every member's first forward march."""
    pool = [mem for mem in members if mem.prior_alpha is not None]
    values = np.array([member_quantity(mem.prior_alpha, mem.prior_mu, selector, level, basis)
                       for mem in pool])
    return PosteriorStats(float(values.mean()), float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                          None, None, values)
