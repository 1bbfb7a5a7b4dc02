import hashlib

import numpy as np
import pytest
import yaml

from ganrom import cli
from ganrom.config import PipelineConfig, from_dict, load
from ganrom.da_uq import ObservationSet
from ganrom.epi_sim import ConfigurationError

TINY = {
    "seed": 3,
    "simulation": {"n_runs": 3, "duration": 2.0},
    "reduction": {"n_components": 3, "min_explained_variance": 0.5},
    "gan": {"latent_dim": 4, "m": 3, "epochs": 2, "batch_size": 8, "hidden": 16},
    "prediction": {"n_known": 3, "n_steps": 4, "optimizer": {"max_iter": 15, "n_init_draws": 4}},
    "observation": {"first_day": 0.5, "last_day": 1.5, "every_days": 0.5},
    "da": {"n_levels": 21, "max_pairs": 2, "optimizer": {"max_iter": 8, "n_init_draws": 4}},
    "uq": {"n_samples": 3, "threshold_factor": 1.0e9, "report_days": [1.0, 2.0]},
}


# -- configuration ----------------------------------------------------------------


def test_defaults_and_hash_stability():
    a, b = PipelineConfig(), from_dict({})
    assert a.hash() == b.hash() and len(a.hash()) == 16
    assert from_dict({"seed": 1}).hash() != a.hash()
    assert from_dict({"workspace": "elsewhere", "workers": 4}).hash() == a.hash()
    assert a.reduction.n_components == 15 and a.gan.latent_dim == 100 and a.gan.m == 9


@pytest.mark.parametrize("data", [
    {"sede": 1},
    {"gan": {"latent": 4}},
    {"simulation": {"params": {"r0": 3}}},
    {"seed": "one"},
    {"simulation": {"n_runs": True}},
    {"gan": {"architecture": "rnn"}},
    {"simulation": {"params": {"dt": 0.5}}},
    {"uq": {"mu_mean": 3}},
])
def test_bad_configs_are_rejected(data):
    with pytest.raises(ConfigurationError):
        from_dict(data)


def test_yaml_file_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(TINY))
    cfg = load(path, ["gan.epochs=7", "simulation.params.diffusion=3", "da.zeta_obs=0.5"])
    assert cfg.gan.epochs == 7 and cfg.gan.hidden == 16
    assert cfg.simulation.params.diffusion == 3.0 and cfg.da.zeta_obs == 0.5
    cfg.dump(tmp_path / "round.yaml")
    assert load(tmp_path / "round.yaml").hash() == cfg.hash()
    with pytest.raises(ConfigurationError):
        load(path, ["gan.epochs"])
    with pytest.raises(ConfigurationError):
        load(tmp_path / "missing.yaml")
    with pytest.raises(ConfigurationError):
        load(None, ["simulation.mask_file=nope.txt"])


def test_stage_seeds_are_distinct():
    seeds = {tuple(cli.stage_seed(0, s)) for s in cli.STAGE_IDS}
    assert len(seeds) == len(cli.STAGE_IDS)


def test_curve_errors():
    true = np.array([[1.0, 2.0], [3.0, 2.0]])
    assert np.allclose(cli.curve_errors(true * 1.1, true), [0.1, 0.1])


# -- end to end -------------------------------------------------------------------


def _run(ws, *argv):
    return cli.main([*argv, "--config", str(ws / "tiny.yaml"), "--workspace", str(ws), "-q"])


STAGES = [("simulate",), ("simulate", "--truth"), ("train",), ("observe",), ("predict",),
          ("assimilate", "--r0", "8", "12"), ("uq",), ("report",)]


def _digest(ws):
    return {p.relative_to(ws).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(ws.rglob("*")) if p.is_file() and p.name != "tiny.yaml"}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    ws = tmp_path_factory.mktemp("ws")
    (ws / "tiny.yaml").write_text(yaml.safe_dump(TINY))
    codes = [_run(ws, *stage) for stage in STAGES]
    return ws, codes, _digest(ws)


def test_pipeline_runs(pipeline):
    ws, codes, files = pipeline
    assert codes == [0] * len(STAGES)
    for name in ("runs/manifest.csv", "truth/truth.txt", "model/basis.npz", "model/gan.npz",
                 "model/train_log.csv", "obs/observations.csv", "predict/trajectory.csv",
                 "da/trajectory.csv", "da/mismatch.csv", "uq/manifest.csv", "uq/posterior.csv",
                 "report/prediction_errors.csv", "report/effective_r0_table.csv", "report/cell_curves.csv"):
        assert name in files, name
    head = (ws / "uq/manifest.csv").read_text().splitlines()
    assert head[0] == "# seed=3" and head[1].startswith("# config_hash=")


def test_outputs_have_expected_shape(pipeline):
    ws, _, _ = pipeline
    meta, rows = cli.read_table(ws / "predict/trajectory.csv")
    assert len(rows) == 4 and meta["n_known"] == "3"
    _, rows = cli.read_table(ws / "da/trajectory.csv")
    assert len(rows) == 21
    obs = ObservationSet.load(ws / "obs/observations.csv")
    assert len(obs) == 3 * 5 * 4  # levels x cells x fields
    _, rows = cli.read_table(ws / "uq/posterior.csv")
    assert {r["day"] for r in rows} == {"1.0", "2.0"}


def test_rerun_is_byte_identical(pipeline):
    ws, _, files = pipeline
    assert [_run(ws, *stage) for stage in STAGES] == [0] * len(STAGES)
    assert _digest(ws) == files


def test_zero_steps_and_noise_free_observations(pipeline, tmp_path):
    ws, _, _ = pipeline
    assert _run(ws, "predict", "--n-steps", "0") == 0
    _, rows = cli.read_table(ws / "predict/trajectory.csv")
    assert rows == []
    assert _run(ws, "observe", "--set", "observation.noise_fraction=0") == 0
    obs = ObservationSet.load(ws / "obs/observations.csv")
    truth = cli.SnapshotSeries.load(ws / "truth/truth.txt")
    assert np.array_equal(obs.value, truth.values[obs.level, obs.field, obs.row, obs.col])
    # restore the files the other tests compare against
    assert _run(ws, "observe") == 0 and _run(ws, "predict") == 0


def test_exit_codes(pipeline, tmp_path):
    ws, _, _ = pipeline
    assert _run(ws, "train", "--set", "gan.bogus=1") == cli.EXIT_CONFIG
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "tiny.yaml").write_text(yaml.safe_dump(TINY))
    assert _run(empty, "train") == cli.EXIT_DATA
    assert _run(empty, "observe") == cli.EXIT_DATA
    assert _run(ws, "train", "--set", "reduction.min_explained_variance=1.0") == cli.EXIT_DATA
    assert _run(ws, "uq", "--set", "uq.threshold_factor=0") == cli.EXIT_CONVERGENCE
    assert (ws / "uq/manifest.csv").exists()
    with pytest.raises(SystemExit):
        cli.main(["nonsense"])
