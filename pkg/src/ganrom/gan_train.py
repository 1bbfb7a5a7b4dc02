"""Adversarial training of the window generator.

A window is an ``(m+1, N_PCA + N_mu)`` matrix: row ``k`` holds the PCA
coefficients and the model parameters at time level ``n - m + k``. Columns are
min/max scaled to [-1, 1] over the training windows so the generator can end
in ``tanh``.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .epi_sim import SnapshotSeries
from .neural import Adam, LayerSpec, Network
from .npzio import save_npz
from .reduction import PcaBasis, compress

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ganrom-gan-v1"


@dataclass
class GanConfig:
    latent_dim: int = 100
    m: int = 9
    epochs: int = 5000
    batch_size: int = 64
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    beta1: float = 0.5
    seed: int = 0
    architecture: str = "conv"  # "conv" or "dense"
    channels: int = 8
    hidden: int = 256

    def __post_init__(self):
        if self.latent_dim < 1 or self.m < 1:
            raise ValueError("latent_dim and m must be >= 1")
        if self.architecture not in ("conv", "dense"):
            raise ValueError(f"unknown architecture {self.architecture!r}")


@dataclass(frozen=True, eq=False)
class WindowScaler:
    """Per-column affine map between physical window values and [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, windows: np.ndarray) -> WindowScaler:
        flat = windows.reshape(-1, windows.shape[-1])
        lo, hi = flat.min(axis=0), flat.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(lo, hi)

    @property
    def half_range(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def scale(self, x):
        return (np.asarray(x) - self.lo) / self.half_range - 1.0

    def unscale(self, y):
        return (np.asarray(y) + 1.0) * self.half_range + self.lo


@dataclass(eq=False)
class WindowSet:
    scaled: np.ndarray  # (N, m+1, n_cols)
    scaler: WindowScaler
    n_alpha: int
    source: np.ndarray  # (N,) series index of each window
    start: np.ndarray  # (N,) first snapshot index of each window

    def __len__(self):
        return len(self.scaled)

    @property
    def raw(self) -> np.ndarray:
        return self.scaler.unscale(self.scaled)


def compressed_series(series: SnapshotSeries, basis: PcaBasis) -> np.ndarray:
    """``(T, N_PCA + N_mu)`` rows ``[alpha^k, mu^k]`` for one run."""
    alpha = compress(series.matrix(), basis)
    mu = np.broadcast_to(series.params.mu, (len(series), 2))
    return np.hstack([alpha, mu])


def make_windows(series_list: Sequence[SnapshotSeries], basis: PcaBasis, m: int,
                 scaler: WindowScaler | None = None) -> WindowSet:
    """Every contiguous window of ``m+1`` snapshots from every run."""
    chunks, source, start = [], [], []
    for i, series in enumerate(series_list):
        if len(series) < m + 1:
            warnings.warn(f"series {i} has {len(series)} snapshots < m+1={m + 1}; skipped")
            continue
        rows = compressed_series(series, basis)
        n_win = len(series) - m
        idx = np.arange(n_win)[:, None] + np.arange(m + 1)[None, :]
        chunks.append(rows[idx])
        source.append(np.full(n_win, i))
        start.append(np.arange(n_win))
    if not chunks:
        raise ValueError(f"no series long enough for windows of {m + 1} snapshots")
    raw = np.concatenate(chunks)
    scaler = scaler or WindowScaler.fit(raw)
    return WindowSet(scaler.scale(raw), scaler, basis.n_components,
                     np.concatenate(source), np.concatenate(start))


def generator_specs(cfg: GanConfig, rows: int, cols: int) -> list[LayerSpec]:
    leaky = LayerSpec("activation", {"name": "leaky_relu", "slope": 0.2})
    if cfg.architecture == "dense":
        h = cfg.hidden
        return [
            LayerSpec("dense", {"fan_in": cfg.latent_dim, "fan_out": h}), leaky,
            LayerSpec("dense", {"fan_in": h, "fan_out": h}), leaky,
            LayerSpec("dense", {"fan_in": h, "fan_out": rows * cols}),
            LayerSpec("activation", {"name": "tanh"}),
            LayerSpec("reshape", {"shape": [rows, cols]}),
        ]
    c = cfg.channels
    return [
        LayerSpec("dense", {"fan_in": cfg.latent_dim, "fan_out": c * rows * cols}),
        LayerSpec("reshape", {"shape": [c, rows, cols]}), leaky,
        LayerSpec("conv2d", {"in_channels": c, "out_channels": c, "kernel": 3, "stride": 1}), leaky,
        LayerSpec("conv2d", {"in_channels": c, "out_channels": 1, "kernel": 3, "stride": 1}),
        LayerSpec("reshape", {"shape": [rows, cols]}),
        LayerSpec("activation", {"name": "tanh"}),
    ]


def discriminator_specs(cfg: GanConfig, rows: int, cols: int) -> list[LayerSpec]:
    leaky = LayerSpec("activation", {"name": "leaky_relu", "slope": 0.2})
    if cfg.architecture == "dense":
        h = cfg.hidden
        return [
            LayerSpec("reshape", {"shape": [rows * cols]}),
            LayerSpec("dense", {"fan_in": rows * cols, "fan_out": h}), leaky,
            LayerSpec("dense", {"fan_in": h, "fan_out": h}), leaky,
            LayerSpec("dense", {"fan_in": h, "fan_out": 1}),
        ]
    c = cfg.channels
    return [
        LayerSpec("reshape", {"shape": [1, rows, cols]}),
        LayerSpec("conv2d", {"in_channels": 1, "out_channels": c, "kernel": 3, "stride": 1}), leaky,
        LayerSpec("conv2d", {"in_channels": c, "out_channels": c, "kernel": 3, "stride": 1}), leaky,
        LayerSpec("reshape", {"shape": [c * rows * cols]}),
        LayerSpec("dense", {"fan_in": c * rows * cols, "fan_out": 1}),
    ]


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def discriminator_loss(logits_real, logits_fake):
    """Binary cross-entropy (real=1, fake=0) and its gradient w.r.t. the concatenated logits."""
    loss = float(_softplus(-logits_real).mean() + _softplus(logits_fake).mean())
    grad = np.concatenate([(_sigmoid(logits_real) - 1.0) / len(logits_real),
                           _sigmoid(logits_fake) / len(logits_fake)])
    return loss, grad


def generator_loss(logits_fake):
    """Non-saturating generator loss -mean(log D(G(z))) and its logit gradient."""
    return float(_softplus(-logits_fake).mean()), (_sigmoid(logits_fake) - 1.0) / len(logits_fake)


@dataclass
class EpochRecord:
    epoch: int
    d_loss: float
    g_loss: float
    d_real: float
    d_fake: float


@dataclass(eq=False)
class TrainedGan:
    generator: Network
    discriminator: Network
    scaler: WindowScaler
    config: GanConfig
    n_alpha: int
    log: list[EpochRecord] = field(default_factory=list)
    basis_fingerprint: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def window_shape(self) -> tuple[int, int]:
        return self.config.m + 1, len(self.scaler.lo)

    def sample(self, z) -> np.ndarray:
        return sample(self.generator, z, self.config.latent_dim)

    def save(self, path: str | Path) -> None:
        arrays = {}
        arrays.update(self.generator.state("generator/"))
        arrays.update(self.discriminator.state("discriminator/"))
        meta = {
            "format": CHECKPOINT_FORMAT,
            "config": dataclasses.asdict(self.config),
            "seed": self.config.seed,
            "n_alpha": self.n_alpha,
            "basis_fingerprint": self.basis_fingerprint,
            "window_shape": list(self.window_shape),
            "warnings": self.warnings,
        }
        save_npz(path, meta=np.array(json.dumps(meta, sort_keys=True)),
                 scaler_lo=self.scaler.lo, scaler_hi=self.scaler.hi, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> TrainedGan:
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
            gen = Network.from_state(data, "generator/")
            disc = Network.from_state(data, "discriminator/")
            scaler = WindowScaler(data["scaler_lo"], data["scaler_hi"])
        return cls(gen, disc, scaler, GanConfig(**meta["config"]), meta["n_alpha"],
                   basis_fingerprint=meta["basis_fingerprint"], warnings=meta["warnings"])


def train(windows: WindowSet, config: GanConfig,
          callback: Callable[[EpochRecord], None] | None = None,
          initial: TrainedGan | None = None) -> TrainedGan:
    """Non-saturating GAN training with a BCE discriminator, Adam for both nets."""
    data = windows.scaled
    n, rows, cols = data.shape
    if n < config.batch_size:
        raise ValueError(f"need at least one batch ({config.batch_size}) of windows, got {n}")
    rng = np.random.default_rng(config.seed)
    if initial is None:
        gen = Network.from_specs(generator_specs(config, rows, cols), rng)
        disc = Network.from_specs(discriminator_specs(config, rows, cols), rng)
    else:
        gen, disc = initial.generator, initial.discriminator
    opt_g = Adam(gen.parameters(), config.lr_generator, config.beta1)
    opt_d = Adam(disc.parameters(), config.lr_discriminator, config.beta1)
    bs = config.batch_size
    history = list(initial.log) if initial else []
    notes: list[str] = []
    low_streak = 0
    first_epoch = len(history)

    for epoch in range(first_epoch, first_epoch + config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        n_batches = n // bs
        for b in range(n_batches):
            real = data[order[b * bs : (b + 1) * bs]]
            fake = gen.forward(rng.standard_normal((bs, config.latent_dim)))

            logits = disc.forward(np.concatenate([real, fake]))[:, 0]
            lr_, lf = logits[:bs], logits[bs:]
            d_loss, d_grad = discriminator_loss(lr_, lf)
            grads, _ = disc.backward(d_grad[:, None])
            opt_d.step(grads)

            fake = gen.forward(rng.standard_normal((bs, config.latent_dim)))
            g_loss, g_grad = generator_loss(disc.forward(fake)[:, 0])
            _, g_in = disc.backward(g_grad[:, None])
            grads, _ = gen.backward(g_in)
            opt_g.step(grads)

            sums += (d_loss, g_loss, _sigmoid(lr_).mean(), _sigmoid(lf).mean())
        rec = EpochRecord(epoch, *(float(v) for v in sums / n_batches))
        history.append(rec)
        if callback:
            callback(rec)
        low_streak = low_streak + 1 if rec.d_loss < 1e-6 else 0
        if low_streak == 100:
            msg = f"mode-collapse warning: discriminator loss < 1e-6 for 100 epochs (epoch {epoch})"
            log.warning(msg)
            notes.append(msg)

    return TrainedGan(gen, disc, windows.scaler, config, windows.n_alpha, history,
                      warnings=(initial.warnings if initial else []) + notes)


def sample(generator: Network, z, latent_dim: int | None = None) -> np.ndarray:
    """Generated window(s) in scaled units; ``z`` of shape ``(d_z,)`` or ``(B, d_z)``."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if latent_dim is not None and zb.shape[1] != latent_dim:
        raise ValueError(f"latent vector length {zb.shape[1]} != {latent_dim}")
    out = generator.forward(zb)
    return out[0] if single else out


def discriminator_gap(gan: TrainedGan, windows: WindowSet, n: int = 512, seed: int = 0) -> float:
    """Mean D score on real minus mean D score on generated windows."""
    rng = np.random.default_rng(seed)
    real = windows.scaled[rng.choice(len(windows), size=min(n, len(windows)), replace=False)]
    fake = gan.sample(rng.standard_normal((n, gan.config.latent_dim)))
    return float(_sigmoid(gan.discriminator.forward(real)).mean()
                 - _sigmoid(gan.discriminator.forward(fake)).mean())
