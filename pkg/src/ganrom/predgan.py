"""Time-series prediction by latent-space optimisation of a trained generator.

Given ``m`` known time levels, find ``z`` such that the first ``m`` rows of
``G(z)`` match them; the last row is the forecast. Appending the forecast to
the known levels and repeating gives an autoregressive rollout. All
comparisons happen in the generator's scaled [-1, 1] units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gan_train import TrainedGan, WindowScaler
from .neural import Network

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class PredictionLossWeights:
    """Diagonals of W_alpha and W_mu, and the scalar zeta_mu."""

    alpha: np.ndarray
    mu: np.ndarray
    zeta_mu: float = 1.0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        if np.any(self.alpha < 0) or np.any(self.mu < 0) or self.zeta_mu < 0:
            raise ValueError("loss weights must be non-negative")
        if not (self.alpha.any() or (self.zeta_mu > 0 and self.mu.any())):
            raise ValueError("loss weights are all zero")

    @classmethod
    def from_basis(cls, basis, n_mu: int = 2, zeta_mu: float = 1.0) -> PredictionLossWeights:
        """Explained-variance weights for alpha (largest component = 1), identity for mu."""
        ev = basis.explained_variance_ratio
        return cls(ev / ev.max(), np.ones(n_mu), zeta_mu)


@dataclass
class OptimizerConfig:
    lr: float = 0.01
    max_iter: int = 500
    patience: int = 20
    min_improvement: float = 1e-8
    loss_tol: float = 1e-3
    n_init_draws: int = 32
    restarts: int = 1
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class KnownWindow:
    """``m`` consecutive known levels in physical units; ``time`` is the newest level."""

    alpha: np.ndarray
    mu: np.ndarray
    time: float = 0.0
    interval: float = 0.1

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        if len(self.mu) == 1 and len(self.alpha) > 1:
            self.mu = np.repeat(self.mu, len(self.alpha), axis=0)
        if len(self.alpha) != len(self.mu):
            raise ValueError("alpha and mu must cover the same levels")

    @property
    def m(self) -> int:
        return len(self.alpha)

    def slide(self, alpha_new, mu_new) -> KnownWindow:
        """Drop the oldest level and append a new one."""
        return KnownWindow(np.vstack([self.alpha[1:], alpha_new]),
                           np.vstack([self.mu[1:], mu_new]),
                           self.time + self.interval, self.interval)


@dataclass
class ReducedSnapshot:
    time: float
    alpha: np.ndarray
    mu: np.ndarray
    converged: bool = True
    loss: float = 0.0


@dataclass
class StepResult:
    alpha: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    loss: float
    converged: bool
    n_iter: int
    initial_loss: float = float("nan")


class Surrogate:
    """Generator plus the scaling needed to talk in physical units."""

    def __init__(self, generator: Network, scaler: WindowScaler, n_alpha: int, latent_dim: int):
        self.generator = generator
        self.scaler = scaler
        self.n_alpha = n_alpha
        self.latent_dim = latent_dim
        self.n_rows = generator.forward(np.zeros((1, latent_dim))).shape[1]

    @classmethod
    def from_gan(cls, gan: TrainedGan) -> Surrogate:
        return cls(gan.generator, gan.scaler, gan.n_alpha, gan.config.latent_dim)

    @property
    def n_cols(self) -> int:
        return len(self.scaler.lo)

    def window(self, z) -> np.ndarray:
        return self.generator.forward(np.asarray(z, dtype=np.float64)[None, :])[0]

    def window_and_vjp(self, z):
        """Window and a function mapping d(loss)/d(window) to d(loss)/dz."""
        win = self.window(z)

        def vjp(dwin):
            return self.generator.input_gradient(dwin[None])[0]

        return win, vjp

    def scale(self, alpha, mu):
        return self.scaler.scale(np.hstack([np.atleast_2d(alpha), np.atleast_2d(mu)]))

    def unscale(self, rows):
        phys = self.scaler.unscale(rows)
        return phys[..., : self.n_alpha], phys[..., self.n_alpha :]


def window_terms(window: np.ndarray, rows, targets: np.ndarray, weights: PredictionLossWeights,
                 n_alpha: int):
    """Weighted squared mismatch of selected generated rows against scaled targets.

    Returns ``(loss, dloss/dwindow)``.
    """
    diff = window[rows] - targets
    da, dm = diff[:, :n_alpha], diff[:, n_alpha:]
    loss = float(np.sum(da * da * weights.alpha)) + weights.zeta_mu * float(np.sum(dm * dm * weights.mu))
    dwin = np.zeros_like(window)
    dwin[rows, :n_alpha] = 2.0 * da * weights.alpha
    dwin[rows, n_alpha:] = 2.0 * weights.zeta_mu * dm * weights.mu
    return loss, dwin


def prediction_loss(model: Surrogate, z, known: KnownWindow, weights: PredictionLossWeights):
    """Loss over the first ``m`` generated rows and its gradient with respect to ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ValueError(f"latent vector shape {z.shape} != ({model.latent_dim},)")
    m = known.m
    if known.alpha.shape[1] != model.n_alpha or m >= model.n_rows:
        raise ValueError("known window dimensions do not match the generator")
    win, vjp = model.window_and_vjp(z)
    targets = model.scale(known.alpha, known.mu)
    loss, dwin = window_terms(win, slice(0, m), targets, weights, model.n_alpha)
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(win).all(axis=1))
        raise NonFiniteLossError(f"non-finite prediction loss; offending rows {bad.tolist()}")
    return loss, vjp(dwin)


@dataclass
class OptimResult:
    z: np.ndarray
    loss: float
    n_iter: int
    converged: bool
    initial_loss: float


def minimize_latent(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], z0: np.ndarray,
                    opt: OptimizerConfig) -> OptimResult:
    """Adam on ``z``; stops once the best loss improves by less than
    ``min_improvement`` over ``patience`` iterations. Returns the best iterate."""
    z = np.array(z0, dtype=np.float64)
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    loss, grad = fun(z)
    initial = loss
    best_z, best = z.copy(), loss
    trace = [best]
    hit_cap = True
    it = 0
    for it in range(1, opt.max_iter + 1):
        m = opt.beta1 * m + (1 - opt.beta1) * grad
        v = opt.beta2 * v + (1 - opt.beta2) * grad * grad
        mhat = m / (1 - opt.beta1**it)
        vhat = v / (1 - opt.beta2**it)
        z = z - opt.lr * mhat / (np.sqrt(vhat) + 1e-12)
        loss, grad = fun(z)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss at iteration {it}")
        if loss < best:
            best, best_z = loss, z.copy()
        trace.append(best)
        if it >= opt.patience and trace[-1 - opt.patience] - best < opt.min_improvement:
            hit_cap = False
            break
    converged = best <= opt.loss_tol or not hit_cap
    return OptimResult(best_z, best, it, converged, initial)


def best_initial_draw(fun, latent_dim: int, n_draws: int, rng) -> np.ndarray:
    """Lowest-loss point among ``n_draws`` standard-normal draws."""
    draws = rng.standard_normal((n_draws, latent_dim))
    losses = [fun(z)[0] for z in draws]
    return draws[int(np.argmin(losses))]


def optimize_with_restarts(fun, z_init, latent_dim: int, opt: OptimizerConfig, rng) -> OptimResult:
    if z_init is None:
        z_init = best_initial_draw(fun, latent_dim, opt.n_init_draws, rng)
    res = minimize_latent(fun, z_init, opt)
    for _ in range(opt.restarts):
        if res.converged:
            break
        retry = minimize_latent(fun, rng.standard_normal(latent_dim), opt)
        if retry.loss < res.loss:
            retry.initial_loss = res.initial_loss
            res = retry
    return res


def predict_step(model: Surrogate, known: KnownWindow, z_init=None,
                 weights: PredictionLossWeights | None = None,
                 opt: OptimizerConfig | None = None, rng=None) -> StepResult:
    """Optimise ``z`` against the known levels and read off the next level."""
    opt = opt or OptimizerConfig()
    rng = np.random.default_rng(rng)
    if weights is None:
        weights = PredictionLossWeights(np.ones(model.n_alpha), np.ones(model.n_cols - model.n_alpha))

    def fun(z):
        return prediction_loss(model, z, known, weights)

    res = optimize_with_restarts(fun, z_init, model.latent_dim, opt, rng)
    row = model.window(res.z)[known.m]
    alpha, mu = model.unscale(row)
    if not res.converged:
        log.info("prediction step at t=%.3f not converged (loss %.3e)", known.time, res.loss)
    return StepResult(alpha, mu, res.z, res.loss, res.converged, res.n_iter, res.initial_loss)


@dataclass
class Rollout:
    snapshots: list[ReducedSnapshot] = field(default_factory=list)
    z: list[np.ndarray] = field(default_factory=list)
    initial_losses: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.snapshots)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([s.alpha for s in self.snapshots])

    @property
    def mu(self) -> np.ndarray:
        return np.array([s.mu for s in self.snapshots])

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    @property
    def converged(self) -> np.ndarray:
        return np.array([s.converged for s in self.snapshots], dtype=bool)


def predict_series(model: Surrogate, initial: KnownWindow, n_steps: int,
                   weights: PredictionLossWeights | None = None,
                   opt: OptimizerConfig | None = None, seed=0,
                   z_init=None) -> Rollout:
    """Autoregressive rollout; the parameters stay at the values given in ``initial``."""
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    rng = np.random.default_rng(seed)
    known = initial
    out = Rollout()
    z = z_init
    for _ in range(n_steps):
        res = predict_step(model, known, z, weights, opt, rng)
        t = known.time + known.interval
        out.snapshots.append(ReducedSnapshot(t, res.alpha, known.mu[-1].copy(), res.converged, res.loss))
        out.z.append(res.z)
        out.initial_losses.append(res.initial_loss)
        known = known.slide(res.alpha, known.mu[-1])
        z = res.z
    return out
