"""Extended SEIRS simulator on the idealized-town grid.

Two people groups share each cell: the home group (h=1), which lives only in
region-2 cells, and the mobile group (h=2), which may occupy any cell labelled
2..10. Each group carries the four compartments S, E, I, R, giving 8 fields
per cell.

Per cell c, with N_c the total number of people in the cell::

    lambda_c = (R0_1 * gamma * I1_c + R0_2 * gamma * I2_c) / N_c
    dS/dt = -lambda_c S + sigma_R R
    dE/dt =  lambda_c S - sigma_E E
    dI/dt =  sigma_E E - gamma I
    dR/dt =  gamma I - sigma_R R

for both groups. On top of the kinetics:

* interchange (region-2 cells only, each compartment X):
  home -> mobile at ``k_max * max(0, sin 2 pi t) * X1`` and
  mobile -> home at ``k_max * max(0, -sin 2 pi t) * X2``;
* mobile diffusion ``D * max(0, sin 2 pi t) * lap(X2)`` on a 5-point stencil
  with zero flux into region-1 cells and through the domain boundary;
* mobile homing drift at night: first-order upwind transport with speed
  ``v * max(0, -sin 2 pi t)`` down the graph distance to the nearest
  region-2 cell.

Time is in days. Integration is classical RK4 at a fixed step.
"""
from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

FIELDS = ("S1", "E1", "I1", "R1", "S2", "E2", "I2", "R2")
N_FIELDS = len(FIELDS)
FIELD_INDEX = {name: i for i, name in enumerate(FIELDS)}

# 5x5 region layout of the idealized town, top row first.
DEFAULT_LAYOUT = (
    (1, 1, 6, 1, 1),
    (1, 1, 10, 1, 1),
    (3, 8, 4, 9, 5),
    (1, 1, 7, 1, 1),
    (1, 1, 2, 1, 1),
)
SERIES_FORMAT = "ganrom-series-v1"


class ConfigurationError(ValueError):
    """Invalid mask, parameters or initial condition."""


class StabilityError(RuntimeError):
    """A field went negative during integration."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class UndefinedValueError(ValueError):
    """A derived quantity is undefined for the given state."""


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Per-cell region labels (1..10) on a rectangular grid."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ConfigurationError("region mask must be a non-empty 2-D grid")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ConfigurationError("region labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 1 or labels.max() > 10:
            raise ConfigurationError("region labels must lie in 1..10")
        if not np.any(labels == 2):
            raise ConfigurationError("region mask has no region-2 (home) cell")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def default(cls) -> RegionMask:
        """10x10 grid where each of the 25 town regions covers 2x2 cells."""
        return cls(np.kron(np.array(DEFAULT_LAYOUT), np.ones((2, 2), dtype=np.int64)))

    @classmethod
    def from_file(cls, path: str | Path) -> RegionMask:
        rows = [
            [int(tok) for tok in line.split()]
            for line in Path(path).read_text().splitlines()
            if line.strip() and not line.lstrip().startswith("#")
        ]
        if len({len(r) for r in rows}) != 1:
            raise ConfigurationError(f"ragged region mask in {path}")
        return cls(np.array(rows, dtype=np.int64))

    def to_file(self, path: str | Path) -> None:
        text = "\n".join(" ".join(str(v) for v in row) for row in self.labels)
        Path(path).write_text(text + "\n")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def n_cells(self) -> int:
        return self.labels.size

    @property
    def home(self) -> np.ndarray:
        return self.labels == 2

    @property
    def mobile(self) -> np.ndarray:
        return self.labels >= 2

    def region_cells(self, label: int) -> list[tuple[int, int]]:
        return [tuple(rc) for rc in np.argwhere(self.labels == label)]

    def bottom_left(self, label: int) -> tuple[int, int]:
        """Bottom-left cell of a region (rows counted from the top)."""
        cells = self.region_cells(label)
        if not cells:
            raise ConfigurationError(f"region {label} not present in mask")
        bottom = max(r for r, _ in cells)
        return int(bottom), int(min(c for r, c in cells if r == bottom))

    def __eq__(self, other):
        return isinstance(other, RegionMask) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.labels.shape, self.labels.tobytes()))


@dataclass(frozen=True)
class EpiParams:
    """Epidemiological and numerical constants. Rates are per day."""

    r0_home: float = 10.0
    r0_mobile: float = 10.0
    incubation_rate: float = 0.2
    recovery_rate: float = 0.2
    immunity_loss_rate: float = 1.0 / 90.0
    diffusion: float = 20.0  # cells^2 / day, daytime peak
    interchange_rate: float = 15.0  # k_max
    homing_speed: float = 40.0  # cells / day, night-time peak
    dt: float = 0.005
    snapshot_interval: float = 0.1

    def __post_init__(self):
        rates = {
            "r0_home": self.r0_home,
            "r0_mobile": self.r0_mobile,
            "incubation_rate": self.incubation_rate,
            "recovery_rate": self.recovery_rate,
            "immunity_loss_rate": self.immunity_loss_rate,
            "diffusion": self.diffusion,
            "interchange_rate": self.interchange_rate,
            "homing_speed": self.homing_speed,
        }
        for name, value in rates.items():
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if self.dt > self.snapshot_interval:
            raise ConfigurationError("dt must not exceed snapshot_interval")
        ratio = self.snapshot_interval / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigurationError("snapshot_interval must be an integer multiple of dt")

    @property
    def steps_per_snapshot(self) -> int:
        return int(round(self.snapshot_interval / self.dt))

    @property
    def mu(self) -> np.ndarray:
        """Model parameters carried by the reduced model: (R0_1, R0_2)."""
        return np.array([self.r0_home, self.r0_mobile])

    def with_r0(self, r0_home: float, r0_mobile: float) -> EpiParams:
        return dataclasses.replace(self, r0_home=float(r0_home), r0_mobile=float(r0_mobile))

    def to_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class GridState:
    """People counts for the 8 fields, shape ``(8, rows, cols)``, at ``time``."""

    time: float
    values: np.ndarray
    mask: RegionMask = field(default_factory=RegionMask.default)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (N_FIELDS, *self.mask.shape):
            raise ConfigurationError(
                f"state shape {values.shape} does not match {(N_FIELDS, *self.mask.shape)}"
            )
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[FIELD_INDEX[name]]

    def total(self) -> float:
        return float(self.values.sum())

    def group_total(self, group: int) -> float:
        lo = 0 if group == 1 else 4
        return float(self.values[lo : lo + 4].sum())

    def flat(self) -> np.ndarray:
        """Flatten cell-major (row, column), fields S1..R2 within a cell."""
        return state_to_vector(self.values)

    def check_invariants(self, atol: float = 0.0) -> None:
        v = self.values
        if v.min() < -atol:
            raise StabilityError("negative field value", self.time)
        if np.any(v[:4][:, ~self.mask.home] != 0):
            raise ConfigurationError("home-group people outside region 2")
        if np.any(v[4:][:, ~self.mask.mobile] != 0):
            raise ConfigurationError("mobile-group people inside region 1")


def state_to_vector(values: np.ndarray) -> np.ndarray:
    """``(..., 8, rows, cols)`` -> ``(..., rows*cols*8)`` in cell-major order."""
    values = np.asarray(values)
    lead = values.shape[:-3]
    moved = np.moveaxis(values, -3, -1)
    return moved.reshape(*lead, -1)


def vector_to_state(vec: np.ndarray, grid_shape: tuple[int, int]) -> np.ndarray:
    vec = np.asarray(vec)
    lead = vec.shape[:-1]
    cells = vec.reshape(*lead, *grid_shape, N_FIELDS)
    return np.moveaxis(cells, -1, -3)


def variable_index(row: int, col: int, field_name: str, grid_shape=(10, 10)) -> int:
    """Position of one (cell, field) in the flattened 800-vector."""
    return (row * grid_shape[1] + col) * N_FIELDS + FIELD_INDEX[field_name]


@dataclass(frozen=True, eq=False)
class SnapshotSeries:
    """Snapshots at a uniform interval produced by one simulation run."""

    times: np.ndarray
    values: np.ndarray  # (T, 8, rows, cols)
    params: EpiParams
    mask: RegionMask = field(default_factory=RegionMask.default)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape[0] != times.shape[0]:
            raise ConfigurationError("times/values length mismatch")
        if len(times) > 1:
            dts = np.diff(times)
            if np.any(dts <= 0):
                raise ConfigurationError("snapshot times must increase strictly")
            if np.ptp(dts) > 1e-9:
                raise ConfigurationError("snapshot times are not uniformly spaced")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k: int) -> GridState:
        return GridState(float(self.times[k]), self.values[k], self.mask)

    @property
    def states(self) -> list[GridState]:
        return [self[k] for k in range(len(self))]

    def matrix(self) -> np.ndarray:
        """Snapshot matrix, one flattened state per row."""
        return state_to_vector(self.values)

    def index_at(self, time: float) -> int:
        k = int(np.argmin(np.abs(self.times - time)))
        if abs(self.times[k] - time) > 1e-6:
            raise ValueError(f"no snapshot at t={time}")
        return k

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        header = [f"format={SERIES_FORMAT}"]
        header += [f"{k}={v!r}" for k, v in self.params.to_dict().items()]
        header.append("grid=" + "x".join(str(n) for n in self.mask.shape))
        header.append("mask=" + ",".join(str(v) for v in self.mask.labels.ravel()))
        header.append("order=cell-major(row,col);fields=" + ",".join(FIELDS))
        for k, v in (extra or {}).items():
            header.append(f"{k}={v}")
        body = np.column_stack([self.times, self.matrix()])
        with open(path, "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            np.savetxt(fh, body, fmt="%.17g")

    @classmethod
    def load(cls, path: str | Path) -> SnapshotSeries:
        meta = read_header(path)
        if meta.get("format") != SERIES_FORMAT:
            raise ConfigurationError(f"{path}: not a {SERIES_FORMAT} file")
        shape = tuple(int(n) for n in meta["grid"].split("x"))
        labels = np.array([int(v) for v in meta["mask"].split(",")]).reshape(shape)
        names = {f.name for f in dataclasses.fields(EpiParams)}
        params = EpiParams(**{k: float(v) for k, v in meta.items() if k in names})
        body = np.loadtxt(path, ndmin=2)
        values = vector_to_state(body[:, 1:], shape)
        return cls(body[:, 0], values, params, RegionMask(labels))


def read_header(path: str | Path) -> dict[str, str]:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
    return meta


def init_state(
    mask: RegionMask | None = None,
    people_per_cell: float = 2000.0,
    exposed_fraction: float = 0.001,
) -> GridState:
    """Everyone at home in region 2, a fraction of them already exposed."""
    mask = mask or RegionMask.default()
    if not people_per_cell > 0:
        raise ConfigurationError("people_per_cell must be > 0")
    if not 0 <= exposed_fraction < 1:
        raise ConfigurationError("exposed_fraction must lie in [0, 1)")
    values = np.zeros((N_FIELDS, *mask.shape))
    exposed = exposed_fraction * people_per_cell
    values[FIELD_INDEX["S1"]][mask.home] = people_per_cell - exposed
    values[FIELD_INDEX["E1"]][mask.home] = exposed
    return GridState(0.0, values, mask)


@lru_cache(maxsize=8)
def _transport_operators(mask: RegionMask) -> tuple[np.ndarray, np.ndarray]:
    """Masked graph Laplacian and night-time homing operator, both (n, n)."""
    rows, cols = mask.shape
    n = rows * cols
    allowed = mask.mobile.ravel()
    home = mask.home.ravel()

    def neighbours(i):
        r, c = divmod(i, cols)
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                yield rr * cols + cc

    lap = np.zeros((n, n))
    for i in np.flatnonzero(allowed):
        for j in neighbours(i):
            if allowed[j]:
                lap[i, j] += 1.0
                lap[i, i] -= 1.0

    dist = np.full(n, -1)
    queue = deque(np.flatnonzero(home))
    dist[home] = 0
    while queue:
        i = queue.popleft()
        for j in neighbours(i):
            if allowed[j] and dist[j] < 0:
                dist[j] = dist[i] + 1
                queue.append(j)

    homing = np.zeros((n, n))
    for i in np.flatnonzero(dist > 0):
        down = [j for j in neighbours(i) if dist[j] == dist[i] - 1]
        homing[i, i] -= 1.0
        for j in down:
            homing[j, i] += 1.0 / len(down)
    lap.setflags(write=False)
    homing.setflags(write=False)
    return lap, homing


class _Rhs:
    """Right-hand side of the semi-discrete system on flattened cells."""

    def __init__(self, params: EpiParams, mask: RegionMask):
        self.p = params
        self.home = mask.home.ravel().astype(np.float64)
        self.lap, self.homing = _transport_operators(mask)
        self.active_transport = params.diffusion > 0 or params.homing_speed > 0

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        p = self.p
        s = math.sin(2.0 * math.pi * t)
        day, night = max(0.0, s), max(0.0, -s)
        total = x.sum(axis=0)
        infectious = p.r0_home * p.recovery_rate * x[2] + p.r0_mobile * p.recovery_rate * x[6]
        lam = np.divide(infectious, total, out=np.zeros_like(total), where=total > 0)

        out = np.empty_like(x)
        for lo in (0, 4):
            S, E, I, R = x[lo], x[lo + 1], x[lo + 2], x[lo + 3]
            infection = lam * S
            out[lo] = -infection + p.immunity_loss_rate * R
            out[lo + 1] = infection - p.incubation_rate * E
            out[lo + 2] = p.incubation_rate * E - p.recovery_rate * I
            out[lo + 3] = p.recovery_rate * I - p.immunity_loss_rate * R

        if p.interchange_rate > 0:
            flow = p.interchange_rate * self.home * (day * x[:4] - night * x[4:])
            out[:4] -= flow
            out[4:] += flow
        if self.active_transport:
            op = p.diffusion * day * self.lap + p.homing_speed * night * self.homing
            out[4:] += x[4:] @ op.T
        return out


def _rk4(rhs: _Rhs, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = rhs(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(state: GridState, params: EpiParams) -> GridState:
    """Advance ``state`` by one integration step ``params.dt``."""
    rhs = _Rhs(params, state.mask)
    x = state.values.reshape(N_FIELDS, -1)
    new = _rk4(rhs, state.time, x, params.dt)
    t_new = state.time + params.dt
    if new.min() < 0:
        raise StabilityError(
            f"negative field value {new.min():.3e} at t={t_new:.4f}; reduce dt", t_new
        )
    return GridState(t_new, new.reshape(state.values.shape), state.mask)


def simulate(
    params: EpiParams,
    mask: RegionMask | None = None,
    duration: float = 20.0,
    initial: GridState | None = None,
) -> SnapshotSeries:
    """Integrate from ``initial`` (default :func:`init_state`) for ``duration`` days."""
    mask = mask or RegionMask.default()
    if not duration > 0:
        raise ConfigurationError("duration must be > 0")
    initial = initial or init_state(mask)
    n_snap = int(math.floor(duration / params.snapshot_interval + 1e-9)) + 1
    per = params.steps_per_snapshot
    rhs = _Rhs(params, mask)
    t0 = initial.time

    x = initial.values.reshape(N_FIELDS, -1).copy()
    out = np.empty((n_snap, *x.shape))
    out[0] = x
    k = 0
    for j in range(1, n_snap):
        for _ in range(per):
            x = _rk4(rhs, t0 + k * params.dt, x, params.dt)
            k += 1
            if x.min() < 0:
                t_fail = t0 + k * params.dt
                raise StabilityError(
                    f"negative field value {x.min():.3e} at t={t_fail:.4f}; reduce dt", t_fail
                )
        out[j] = x
    times = t0 + np.arange(n_snap) * params.snapshot_interval
    return SnapshotSeries(times, out.reshape(n_snap, *initial.values.shape), params, mask)


def effective_r0(state: GridState, params: EpiParams) -> float:
    """Susceptible-weighted mean of the two group reproduction numbers."""
    s_home = float(state["S1"].sum())
    s_mobile = float(state["S2"].sum())
    return effective_r0_from_totals(s_home, s_mobile, params.r0_home, params.r0_mobile)


def effective_r0_from_totals(s_home, s_mobile, r0_home, r0_mobile):
    total = s_home + s_mobile
    if np.any(np.asarray(total) <= 0):
        raise UndefinedValueError("effective R0 undefined without susceptibles")
    return (s_home * r0_home + s_mobile * r0_mobile) / total


def sample_r0_pairs(
    n: int, mean: float = 10.0, std: float = 4.0, rng=None, minimum: float = 0.5
) -> np.ndarray:
    """Draw ``n`` (R0_1, R0_2) pairs from N(mean, std^2), redrawing values below ``minimum``."""
    rng = np.random.default_rng(rng)
    out = np.empty((n, 2))
    for i in range(n):
        for j in range(2):
            v = rng.normal(mean, std)
            while v < minimum:
                v = rng.normal(mean, std)
            out[i, j] = v
    return out


def mobile_totals(series: SnapshotSeries) -> np.ndarray:
    return series.values[:, 4:].sum(axis=(1, 2, 3))


def run_many(params_list: Iterable[EpiParams], mask: RegionMask, duration: float, workers: int = 1):
    """Simulate several parameter sets; order of results follows the input."""
    params_list = list(params_list)
    if workers <= 1:
        return [simulate(p, mask, duration) for p in params_list]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(simulate, params_list, [mask] * len(params_list), [duration] * len(params_list)))
