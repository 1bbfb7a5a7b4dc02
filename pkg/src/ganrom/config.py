"""Pipeline configuration: nested dataclasses loaded from one YAML file.

Unknown keys are rejected at every level, every value has a default, and
``override`` applies dotted ``section.key=value`` assignments on top.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .epi_sim import ConfigurationError, EpiParams
from .gan_train import GanConfig
from .predgan import OptimizerConfig


@dataclass
class SimulationSection:
    n_runs: int = 40
    duration: float = 20.0
    r0_mean: float = 10.0
    r0_std: float = 4.0
    truth_r0: list = field(default_factory=lambda: [7.7, 17.4])
    mask_file: str | None = None
    params: EpiParams = field(default_factory=EpiParams)


@dataclass
class ReductionSection:
    n_components: int = 15
    min_explained_variance: float = 0.999


@dataclass
class PredictionSection:
    n_known: int = 9
    n_steps: int = 191
    zeta_mu: float = 1.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class ObservationSection:
    regions: list = field(default_factory=lambda: [2, 3, 4, 5, 6])
    fields: list = field(default_factory=lambda: ["I1", "R1", "I2", "R2"])
    every_days: float = 2.0
    first_day: float = 2.0
    last_day: float = 12.0
    noise_fraction: float = 0.05
    sigma_floor: float = 1.0


@dataclass
class DaSection:
    relaxation: float = 0.5
    max_pairs: int = 20
    tol: float = 1e-3
    # a number, or "auto" to balance the observation and alpha terms once
    zeta_obs: typing.Any = "auto"
    n_levels: int = 201
    # observations count on every generated row ("window") or only the compared rows
    obs_span: str = "window"
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(max_iter=100, patience=10, min_improvement=1e-7,
                                                restarts=0))


@dataclass
class UqSection:
    mu_mean: list = field(default_factory=lambda: [10.0, 10.0])
    mu_std: list = field(default_factory=lambda: [4.0, 4.0])
    n_samples: int = 200
    threshold_factor: float = 2.0
    report_days: list = field(default_factory=lambda: [12.0, 16.0, 20.0])


def _desk_gan() -> GanConfig:
    return GanConfig(epochs=500, architecture="dense", hidden=256, batch_size=64)


@dataclass
class PipelineConfig:
    workspace: str = "workspace"
    seed: int = 0
    workers: int = 1
    simulation: SimulationSection = field(default_factory=SimulationSection)
    reduction: ReductionSection = field(default_factory=ReductionSection)
    gan: GanConfig = field(default_factory=_desk_gan)
    prediction: PredictionSection = field(default_factory=PredictionSection)
    observation: ObservationSection = field(default_factory=ObservationSection)
    da: DaSection = field(default_factory=DaSection)
    uq: UqSection = field(default_factory=UqSection)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def hash(self) -> str:
        """Digest of the canonical JSON form; recorded in every output.

        Where the files go and how many processes write them do not change
        their content, so workspace and workers are left out.
        """
        plain = {k: v for k, v in self.to_dict().items() if k not in ("workspace", "workers")}
        blob = json.dumps(plain, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @property
    def workspace_path(self) -> Path:
        return Path(self.workspace)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigurationError(f"{where or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, path)
        else:
            kwargs[name] = _coerce(tp, value, path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where or 'config'}: {exc}") from exc


def _coerce(tp, value, where):
    if tp is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if tp is int and isinstance(value, bool):
        raise ConfigurationError(f"{where}: expected an integer")
    if tp in (int, str, bool) and not isinstance(value, tp):
        raise ConfigurationError(f"{where}: expected {tp.__name__}, got {value!r}")
    if tp is list and isinstance(value, tuple):
        return list(value)
    if tp is list and not isinstance(value, list):
        raise ConfigurationError(f"{where}: expected a list, got {value!r}")
    return value


def from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "")


def load(path: str | Path | None = None, overrides: typing.Sequence[str] = ()) -> PipelineConfig:
    """Read a YAML file (or start from defaults) and apply ``key.sub=value`` overrides."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} does not exist")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{p}: {exc}") from exc
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {item!r}: {part} is not a section")
        node[parts[-1]] = yaml.safe_load(raw)
    cfg = from_dict(data)
    if cfg.simulation.mask_file is not None and not Path(cfg.simulation.mask_file).exists():
        raise ConfigurationError(f"mask file {cfg.simulation.mask_file} does not exist")
    return cfg
