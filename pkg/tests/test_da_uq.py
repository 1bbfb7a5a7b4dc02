import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ganrom import da_uq as du
from ganrom import predgan as pg
from ganrom import reduction as rd
from ganrom.epi_sim import FIELD_INDEX

from helpers import GRID, central_diff, make_obs, rel_error, tiny_generator, toy_basis

BASIS = toy_basis()
MODEL = tiny_generator(0)  # window rows 0..3, so m = 3
WEIGHTS = pg.PredictionLossWeights(np.array([1.0, 0.5, 0.2]), np.ones(2), 1.0)


def targets(rng, m=3):
    return rng.normal(size=(m, 3)) * 2, np.array([0.5, -0.5]) + rng.normal(size=2) * 0.1


# -- loss -----------------------------------------------------------------------


@pytest.mark.parametrize("direction", [du.FORWARD, du.BACKWARD])
@pytest.mark.parametrize("span", ["window", "compared"])
@given(seed=st.integers(0, 10_000))
def test_da_loss_gradient(direction, span, seed):
    rng = np.random.default_rng(seed)
    obs = make_obs([5, 6, 7, 8, 8, 9], rng, zeta_obs=0.3)
    op = du.ObservationOperator(obs, MODEL, BASIS)
    a, mu = targets(rng)
    eps = rng.normal(size=len(obs))
    z = rng.normal(size=4)

    def f(zz):
        return du.da_loss(MODEL, zz, a, mu, 5, op, eps, direction, WEIGHTS, obs_span=span)

    _, g = f(z)
    assert rel_error(g, central_diff(lambda zz: f(zz)[0], z)) < 1e-6


def test_zero_perturbation_is_bitwise_unperturbed():
    rng = np.random.default_rng(0)
    obs = make_obs([2, 3, 4], rng)
    op = du.ObservationOperator(obs, MODEL, BASIS)
    a, mu = targets(rng)
    for z in rng.normal(size=(5, 4)):
        l0, g0 = du.da_loss(MODEL, z, a, mu, 1, op, None, weights=WEIGHTS)
        l1, g1 = du.da_loss(MODEL, z, a, mu, 1, op, np.zeros(len(obs)), weights=WEIGHTS)
        assert l0 == l1 and np.array_equal(g0, g1)


def test_no_observations_is_bitwise_prediction_loss():
    rng = np.random.default_rng(1)
    a, mu = targets(rng)
    known = pg.KnownWindow(a, mu)
    empty = du.ObservationOperator(du.ObservationSet.empty(grid_shape=GRID), MODEL, BASIS)
    far = du.ObservationOperator(make_obs([40, 41], rng), MODEL, BASIS)
    for z in rng.normal(size=(5, 4)):
        ref = pg.prediction_loss(MODEL, z, known, WEIGHTS)
        for op in (None, empty, far):
            got = du.da_loss(MODEL, z, a, mu, 0, op, weights=WEIGHTS)
            assert got[0] == ref[0] and np.array_equal(got[1], ref[1])


def test_zero_weight_record_is_ignored():
    rng = np.random.default_rng(2)
    obs = make_obs([1, 2, 3], rng, weight=[1.0, 0.0, 1.0])
    moved = du.ObservationSet(obs.level, obs.row, obs.col, obs.field, obs.value + [0, 1e6, 0],
                              obs.weight, grid_shape=GRID)
    a, mu = targets(rng)
    z = rng.normal(size=4)
    l1 = du.da_loss(MODEL, z, a, mu, 0, du.ObservationOperator(obs, MODEL, BASIS), weights=WEIGHTS)
    l2 = du.da_loss(MODEL, z, a, mu, 0, du.ObservationOperator(moved, MODEL, BASIS), weights=WEIGHTS)
    assert l1[0] == l2[0]


def test_observation_term_by_hand():
    rng = np.random.default_rng(3)
    obs = make_obs([4], rng, zeta_obs=2.5)
    op = du.ObservationOperator(obs, MODEL, BASIS)
    a, mu = targets(rng)
    z = rng.normal(size=4)
    base = du.da_loss(MODEL, z, a, mu, 1, None, weights=WEIGHTS)[0]
    full = du.da_loss(MODEL, z, a, mu, 1, op, weights=WEIGHTS)[0]
    alpha_row, _ = MODEL.unscale(MODEL.window(z)[3])  # level 4 sits on row 3 of the window starting at 1
    d = rd.reconstruct(alpha_row, BASIS)[obs.var_index[0]]
    assert full - base == pytest.approx(2.5 * obs.weight[0] * (d - obs.value[0]) ** 2, rel=1e-9)


def test_compared_span_skips_the_predicted_row():
    rng = np.random.default_rng(4)
    obs = make_obs([3], rng)  # level 3 is the forecast row of the window starting at 0
    op = du.ObservationOperator(obs, MODEL, BASIS)
    a, mu = targets(rng)
    z = rng.normal(size=4)
    base = du.da_loss(MODEL, z, a, mu, 0, None, weights=WEIGHTS)[0]
    assert du.da_loss(MODEL, z, a, mu, 0, op, weights=WEIGHTS, obs_span="compared")[0] == base
    assert du.da_loss(MODEL, z, a, mu, 0, op, weights=WEIGHTS, obs_span="window")[0] > base


def test_operator_scaled_and_physical_forms_agree():
    rng = np.random.default_rng(5)
    obs = make_obs([0, 1, 2], rng)
    op = du.ObservationOperator(obs, MODEL, BASIS)
    traj = rng.normal(size=(3, 3))
    phys = op.predict_physical(traj)
    scaled = MODEL.scale(traj, np.zeros((3, 2)))[:, :3]
    via_scaled = np.einsum("ij,ij->i", op.a, scaled[obs.level]) + op.b
    assert np.allclose(phys, via_scaled)
    full = rd.reconstruct(traj, BASIS)
    assert np.allclose(phys, full[obs.level, obs.var_index])


def test_mismatch_is_averaged_over_levels():
    obs = du.ObservationSet([0, 0, 2], [0, 0, 1], [0, 1, 1], [2, 2, 3], [1.0, 2.0, 3.0], [1.0, 1.0, 4.0],
                            grid_shape=GRID)
    op = du.ObservationOperator(obs, MODEL, BASIS)
    traj = np.zeros((3, 3))
    pred = op.predict_physical(traj)
    r2 = obs.weight * (pred - obs.value) ** 2
    assert op.mismatch(traj) == pytest.approx(0.5 * (r2[0] + r2[1] + r2[2]))
    sig2 = np.maximum(0.05 * obs.value, 1.0) ** 2
    assert op.expected_mismatch() == pytest.approx(0.5 * ((sig2[:2] * obs.weight[:2]).sum() + sig2[2] * 4))


def test_noise_weights_floor():
    w = du.noise_weights([0.0, 10.0, 100.0, 1000.0], 0.05, 1.0)
    assert np.allclose(w, [1.0, 1.0, 1 / 25, 1 / 2500])


def test_bad_arguments():
    z = np.zeros(4)
    a, mu = targets(np.random.default_rng(0))
    with pytest.raises(ValueError):
        du.da_loss(MODEL, z, a, mu, 0, None, direction="sideways")
    with pytest.raises(ValueError):
        du.da_loss(MODEL, z, a, mu, 0, None, obs_span="all")
    with pytest.raises(ValueError):
        du.ObservationSet([0], [0], [0], [9], [1.0], [1.0])
    with pytest.raises(ValueError):
        du.ObservationSet([0], [0], [0], [1], [1.0], [-1.0])
    with pytest.raises(ValueError):
        du.DaConfig(relaxation=0)


# -- relaxation and marches -----------------------------------------------------


def test_relax_examples():
    assert du.relax(4.0, 8.0, 1.0) == 8.0
    assert du.relax(4.0, 8.0, 0.5) == 6.0


@given(a=st.floats(-1e6, 1e6), b=st.floats(-1e6, 1e6), w=st.floats(0.01, 1))
def test_relax_is_convex(a, b, w):
    v = du.relax(a, b, w)
    assert min(a, b) - 1e-6 <= v <= max(a, b) + 1e-6


FAST = du.DaConfig(max_pairs=3, optimizer=pg.OptimizerConfig(max_iter=30, patience=5, restarts=0, n_init_draws=8))


def test_first_march_fills_every_level():
    rng = np.random.default_rng(6)
    prior, mu = targets(rng)
    obs = make_obs([4, 6], rng)
    asm = du.Assimilator(MODEL, BASIS, obs, WEIGHTS, FAST)
    state = du.AssimilationState.from_prior(prior, mu, 9)
    assert np.isnan(state.alpha[3:]).all()
    out = asm.march(state, du.FORWARD, rng=0, first=True)
    assert np.isfinite(out.alpha).all() and np.array_equal(out.alpha[:3], prior)
    assert all(z is not None for z in out.z)
    back = asm.march(out, du.BACKWARD, rng=0)
    assert not np.array_equal(back.alpha[0], out.alpha[0])  # backward sweeps revise the first levels
    with pytest.raises(ValueError):
        du.AssimilationState.from_prior(prior, mu, 3)


def test_full_relaxation_writes_the_generated_row():
    rng = np.random.default_rng(7)
    prior, mu = targets(rng)
    cfg = du.DaConfig(relaxation=1.0, optimizer=FAST.optimizer)
    asm = du.Assimilator(MODEL, BASIS, make_obs([4], rng), WEIGHTS, cfg)
    state = asm.march(du.AssimilationState.from_prior(prior, mu, 6), du.FORWARD, rng=0, first=True)
    row_alpha, row_mu = MODEL.unscale(MODEL.window(state.z[2])[3])
    assert np.allclose(state.alpha[5], row_alpha) and np.allclose(state.mu[5], row_mu)


def test_fixed_point_of_a_generated_trajectory():
    """If every window of the trajectory is exactly G(z*), sweeps leave it unchanged."""
    model = tiny_generator(3, latent=3)
    z = np.array([0.2, -0.1, 0.3])
    alpha, mu = model.unscale(model.window(z))
    asm = du.Assimilator(model, BASIS, du.ObservationSet.empty(grid_shape=GRID), WEIGHTS,
                         du.DaConfig(optimizer=pg.OptimizerConfig(max_iter=0, restarts=0)))
    state = du.AssimilationState(alpha.copy(), mu.copy(), [z.copy()], 3)
    out = asm.march(state, du.FORWARD)
    assert np.allclose(out.alpha, alpha, atol=1e-12) and np.allclose(out.mu, mu, atol=1e-12)
    out = asm.march(state, du.BACKWARD)
    assert np.allclose(out.alpha, alpha, atol=1e-12)


def test_assimilate_is_deterministic_and_records_history():
    rng = np.random.default_rng(8)
    prior, mu = targets(rng)
    obs = make_obs([4, 6, 8], rng)
    r1 = du.assimilate(MODEL, BASIS, prior, mu, obs, 10, config=FAST, weights=WEIGHTS, seed=3)
    r2 = du.assimilate(MODEL, BASIS, prior, mu, obs, 10, config=FAST, weights=WEIGHTS, seed=3)
    assert np.array_equal(r1.alpha, r2.alpha) and r1.mismatch_history == r2.mismatch_history
    assert 2 <= len(r1.mismatch_history) <= 4
    assert r1.first_mismatch == r1.mismatch_history[0]
    with pytest.raises(ValueError):
        du.assimilate(MODEL, BASIS, prior, mu, du.ObservationSet.empty(grid_shape=GRID), 10)


def test_calibrated_zeta_ignores_current_zeta():
    rng = np.random.default_rng(9)
    prior, mu = targets(rng)
    obs = make_obs([4, 6], rng, zeta_obs=1.0)
    z1 = du.calibrate_zeta_obs(MODEL, BASIS, prior, mu, obs, 8, WEIGHTS, FAST)
    obs.zeta_obs = 50.0
    z2 = du.calibrate_zeta_obs(MODEL, BASIS, prior, mu, obs, 8, WEIGHTS, FAST)
    assert z1 == z2 and z1 > 0


# -- ensemble -------------------------------------------------------------------


def member(i, mismatch):
    return du.EnsembleMember(i, np.zeros(2), 0, [0, i], np.zeros(1), mismatch=mismatch)


def test_acceptance_rule_and_idempotence():
    mems = [member(i, v) for i, v in enumerate([1.0, 2.0, 3.0, np.inf, np.nan])]
    du.apply_acceptance(mems, 2.0)
    first = [m.accepted for m in mems]
    assert first == [True, True, False, False, False]
    du.apply_acceptance(mems, 2.0)
    assert [m.accepted for m in mems] == first


def test_draws_depend_only_on_master_seed_and_index():
    obs = make_obs([1, 2], np.random.default_rng(0))
    uq = du.UqConfig(n_samples=5)
    runs = np.array([[5.0, 5.0], [10.0, 10.0], [15.0, 15.0]])
    a = du.draw_member(3, 7, obs, uq, runs)
    b = du.draw_member(3, 7, obs, uq, runs)
    c = du.draw_member(4, 7, obs, uq, runs)
    assert np.array_equal(a.mu_prior, b.mu_prior) and np.array_equal(a.eps, b.eps)
    assert not np.array_equal(a.mu_prior, c.mu_prior)
    assert a.source_run == du.nearest_run(a.mu_prior, runs)


def test_perturbations_follow_the_noise_model():
    obs = du.ObservationSet(np.zeros(4000), np.zeros(4000), np.zeros(4000), np.full(4000, 2),
                            np.full(4000, 200.0), np.ones(4000), grid_shape=GRID)
    eps = du.draw_member(0, 0, obs, du.UqConfig(), np.zeros((1, 2))).eps
    assert abs(eps.mean()) < 0.5 and abs(eps.std() - 10.0) < 0.5


@pytest.fixture(scope="module")
def small_uq():
    rng = np.random.default_rng(10)
    obs = make_obs([4, 6], rng)
    windows = [rng.normal(size=(3, 3)) for _ in range(3)]
    runs = np.array([[0.4, -0.4], [0.5, -0.5], [0.6, -0.6]])
    uq = du.UqConfig(mu_mean=np.array([0.5, -0.5]), mu_std=np.array([0.1, 0.1]), n_samples=3,
                     threshold_factor=1e9)
    return obs, windows, runs, uq


def test_uq_is_worker_invariant(small_uq):
    obs, windows, runs, uq = small_uq
    kw = dict(uq=uq, config=FAST, weights=WEIGHTS, seed=4)
    serial = du.uq_run(MODEL, BASIS, obs, windows, runs, 8, workers=1, **kw)
    parallel = du.uq_run(MODEL, BASIS, obs, windows, runs, 8, workers=2, **kw)
    for a, b in zip(serial.members, parallel.members):
        assert np.array_equal(a.alpha, b.alpha) and a.mismatch == b.mismatch
    one = du.uq_run(MODEL, BASIS, obs, windows, runs, 8, members=[2], **kw)
    assert np.array_equal(one.members[0].alpha, serial.members[2].alpha)


def test_uq_without_accepted_members_raises(small_uq):
    obs, windows, runs, uq = small_uq
    strict = du.UqConfig(uq.mu_mean, uq.mu_std, n_samples=2, threshold_factor=0.0)
    with pytest.raises(du.NoAcceptedMembersError) as info:
        du.uq_run(MODEL, BASIS, obs, windows, runs, 8, strict, FAST, WEIGHTS)
    assert len(info.value.result.members) == 2
    with pytest.raises(ValueError):
        du.uq_run(MODEL, BASIS, du.ObservationSet.empty(grid_shape=GRID), windows, runs, 8, uq)


# -- posterior summaries ----------------------------------------------------------


def test_member_quantities():
    alpha = np.zeros((2, 3))
    mu = np.array([[3.0, 9.0], [4.0, 8.0]])
    mean = BASIS.mean_state()
    assert du.member_quantity(alpha, mu, "mu:1", 1, BASIS) == 8.0
    assert du.member_quantity(alpha, mu, "I1:1:0", 0, BASIS, GRID) == pytest.approx(
        max(mean[(1 * 2 + 0) * 8 + FIELD_INDEX["I1"]], 0))
    state = np.clip(mean, 0, None).reshape(-1, 8)
    s1, s2 = state[:, FIELD_INDEX["S1"]].sum(), state[:, FIELD_INDEX["S2"]].sum()
    assert du.member_quantity(alpha, mu, "effective_r0", 0, BASIS) == pytest.approx((3 * s1 + 9 * s2) / (s1 + s2))


def test_degenerate_posterior_has_zero_std():
    mems = []
    for i in range(3):
        m = member(i, 0.0)
        m.alpha, m.mu, m.accepted = np.zeros((2, 3)), np.full((2, 2), 5.0), True
        mems.append(m)
    stats = du.posterior_stats(mems, "mu:0", 1, BASIS)
    assert stats.mean == 5.0 and stats.std == 0.0 and stats.density is None
    mems[2].mu = np.full((2, 2), 8.0)
    stats = du.posterior_stats(mems, "mu:0", 1, BASIS)
    assert stats.std > 0 and stats.density.shape == (200,) and np.all(stats.density >= 0)
    with pytest.raises(ValueError):
        du.posterior_stats(mems[:1], "mu:0", 1, BASIS)


def test_observation_file_roundtrip(tmp_path):
    obs = make_obs([1, 2, 3], np.random.default_rng(11), zeta_obs=0.25)
    obs.save(tmp_path / "obs.csv", {"seed": 4})
    back = du.ObservationSet.load(tmp_path / "obs.csv")
    for name in ("level", "row", "col", "field", "value", "weight"):
        assert np.array_equal(getattr(back, name), getattr(obs, name))
    assert back.zeta_obs == 0.25 and back.grid_shape == GRID
    assert "field" in (tmp_path / "obs.csv").read_text().splitlines()[5]
