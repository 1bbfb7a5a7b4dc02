"""PCA compression of flattened grid states.

Each state is flattened cell-major to a vector of ``rows*cols*8`` people
counts. Before the decomposition every variable is divided by the maximum
absolute value of its field type over the training set (one scale per field,
8 in total), so the mobile group is not drowned out by the larger home counts.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .epi_sim import FIELDS, N_FIELDS, GridState, SnapshotSeries, state_to_vector, vector_to_state
from .npzio import save_npz

BASIS_FORMAT = "ganrom-pca-v1"


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Affine rank-k map between scaled states and PCA coefficients.

    Attributes
    ----------
    mean : (n_vars,) mean of the scaled training states.
    components : (n_vars, k) orthonormal principal directions.
    singular_values : (k,) non-increasing singular values of the centred,
        scaled snapshot matrix.
    total_variance : sum of all squared singular values (retained or not).
    field_scales : (8,) per-field scale factors.
    """

    mean: np.ndarray
    components: np.ndarray
    singular_values: np.ndarray
    total_variance: float
    field_scales: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    @property
    def n_vars(self) -> int:
        return self.components.shape[0]

    @property
    def scales(self) -> np.ndarray:
        """Per-variable scale vector (fields repeat within each cell)."""
        return np.tile(self.field_scales, self.n_vars // N_FIELDS)

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros(self.n_components)
        return self.singular_values**2 / self.total_variance

    @property
    def explained_variance(self) -> float:
        """Fraction of the training variance captured by the retained components."""
        if self.total_variance == 0:
            return 1.0
        return float(np.sum(self.singular_values**2) / self.total_variance)

    def mean_state(self) -> np.ndarray:
        return self.mean * self.scales

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.mean, self.components, self.singular_values, self.field_scales):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def truncate(self, k: int) -> PcaBasis:
        if not 1 <= k <= self.n_components:
            raise DimensionError(f"cannot truncate {self.n_components} components to {k}")
        return PcaBasis(self.mean, self.components[:, :k], self.singular_values[:k],
                        self.total_variance, self.field_scales)

    def observation_rows(self, var_index: np.ndarray):
        """Affine map restricted to a subset of variables.

        Returns ``(A, c)`` with ``state[var_index] = A @ alpha + c``; no
        full-state reconstruction is needed to evaluate observed entries.
        """
        var_index = np.asarray(var_index, dtype=np.int64)
        s = self.scales[var_index]
        return self.components[var_index] * s[:, None], self.mean[var_index] * s

    def save(self, path: str | Path, grid_shape=(10, 10)) -> None:
        save_npz(
            path,
            format=np.array(BASIS_FORMAT),
            shape=np.array(self.components.shape),
            grid_shape=np.array(grid_shape),
            fields=np.array(FIELDS),
            order=np.array("cell-major(row,col)"),
            mean=self.mean,
            components=self.components,
            singular_values=self.singular_values,
            total_variance=np.array(self.total_variance),
            field_scales=self.field_scales,
        )

    @classmethod
    def load(cls, path: str | Path) -> PcaBasis:
        with np.load(path) as data:
            if str(data["format"]) != BASIS_FORMAT:
                raise DimensionError(f"{path}: not a {BASIS_FORMAT} artifact")
            basis = cls(
                data["mean"], data["components"], data["singular_values"],
                float(data["total_variance"]), data["field_scales"],
            )
            if tuple(data["shape"]) != basis.components.shape:
                raise DimensionError(f"{path}: shape header disagrees with payload")
        return basis


def snapshot_matrix(data) -> np.ndarray:
    """Stack snapshots from arrays, GridStates or SnapshotSeries into ``(N, n_vars)``."""
    if isinstance(data, np.ndarray):
        return np.atleast_2d(data).astype(np.float64)
    if isinstance(data, SnapshotSeries):
        return data.matrix()
    if isinstance(data, GridState):
        return data.flat()[None, :]
    rows = [snapshot_matrix(item) for item in data]
    return np.vstack(rows)


def _field_scales(X: np.ndarray) -> np.ndarray:
    per_field = np.abs(X).reshape(X.shape[0], -1, N_FIELDS).max(axis=(0, 1))
    return np.where(per_field > 0, per_field, 1.0)


def fit(snapshots: Iterable | np.ndarray, n_components: int) -> PcaBasis:
    """Thin-SVD PCA of the scaled, centred snapshot matrix."""
    X = snapshot_matrix(snapshots)
    n_snap, n_vars = X.shape
    if n_vars % N_FIELDS:
        raise DimensionError(f"state length {n_vars} is not a multiple of {N_FIELDS}")
    if not 1 <= n_components <= n_vars:
        raise DimensionError(f"n_components={n_components} outside 1..{n_vars}")
    if n_components >= n_snap:
        raise DimensionError(
            f"n_components={n_components} needs more than {n_components} snapshots, got {n_snap}"
        )
    scales = _field_scales(X)
    Xs = X / np.tile(scales, n_vars // N_FIELDS)
    mean = Xs.mean(axis=0)
    _, s, vt = np.linalg.svd(Xs - mean, full_matrices=False)
    comps = vt[:n_components].T.copy()
    # sign convention: largest-magnitude entry of each component is positive
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(n_components)])
    comps *= np.where(signs == 0, 1.0, signs)
    if len(s) < n_components:
        s = np.concatenate([s, np.zeros(n_components - len(s))])
    return PcaBasis(mean, comps, s[:n_components].copy(), float(np.sum(s**2)), scales)


def _as_vectors(state, basis: PcaBasis) -> np.ndarray:
    if isinstance(state, GridState):
        x = state.flat()
    elif isinstance(state, SnapshotSeries):
        x = state.matrix()
    else:
        x = np.asarray(state, dtype=np.float64)
        if x.ndim >= 3:
            x = state_to_vector(x)
    if x.shape[-1] != basis.n_vars:
        raise DimensionError(f"state length {x.shape[-1]} != basis length {basis.n_vars}")
    return x


def compress(state, basis: PcaBasis) -> np.ndarray:
    """PCA coefficients of one state (``(n_vars,)``) or a batch (``(N, n_vars)``)."""
    x = _as_vectors(state, basis)
    return (x / basis.scales - basis.mean) @ basis.components


def reconstruct(alpha, basis: PcaBasis, clip: bool = False) -> np.ndarray:
    """Flattened state(s) from coefficients.

    ``clip`` zeroes negative counts; use it only when reporting, never inside
    an optimisation loop.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[-1] != basis.n_components:
        raise DimensionError(
            f"coefficient length {alpha.shape[-1]} != n_components {basis.n_components}"
        )
    x = (basis.mean + alpha @ basis.components.T) * basis.scales
    if clip:
        x = np.maximum(x, 0.0)
    return x


def reconstruct_state(alpha, basis: PcaBasis, time: float = 0.0, mask=None) -> GridState:
    """Reporting-boundary reconstruction: negatives clamped to zero."""
    from .epi_sim import RegionMask

    mask = mask or RegionMask.default()
    x = reconstruct(alpha, basis, clip=True)
    return GridState(time, vector_to_state(x, mask.shape), mask)
