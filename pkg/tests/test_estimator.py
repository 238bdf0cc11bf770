"""Free-energy estimator tests: objective, gradients, descent, fusion, drift."""

import numpy as np
import pytest

from corporea import arm, gp
from corporea import estimator as est
from corporea.errors import NumericalError, ValidationError

from helpers import central_difference_jacobian


def scalar_belief(pi=2.0, mu=0.0, prior_precision=0.0, modality="proprio"):
    return est.BodyBelief(mu=np.array([mu]), prior_mean=np.zeros(1),
                          prior_precision=prior_precision,
                          modality_precisions={modality: pi})


def trained_models(rng, n=120, limits=1.2):
    cfg = arm.ArmConfig(joint_limits=((-limits, limits),) * 3,
                        sigma_proprio=0.0, sigma_visual=0.0, contact_radius=0.07)
    zone = arm.TouchZone(center=(0.55, 0.35), spread=0.05, p_present=0.8)
    ds = arm.acquire_dataset(cfg, n, 17, zone)
    models = gp.ForwardModelSet(
        visual=gp.fit(ds.inputs, ds.visual_self, gp.KernelParams(0.5, 1.0, 1e-6)),
        tactile=gp.fit(ds.inputs, ds.tactile, gp.KernelParams(0.6, 1.0, 1e-4)),
        proprio_noise_variance=1e-4,
    )
    return cfg, models


# --- free energy -------------------------------------------------------------

def test_free_energy_zero_at_perfect_prediction():
    models = est.IdentityModels(("proprio", "visual"))
    belief = est.BodyBelief(mu=np.array([0.4, -0.2]), prior_mean=np.zeros(2),
                            modality_precisions={"proprio": 1.0, "visual": 3.0})
    snap = {"proprio": belief.mu.copy(), "visual": belief.mu.copy()}
    assert est.free_energy(belief, snap, models) == 0.0


def test_free_energy_scalar_hand_value():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief(pi=2.0, mu=0.0)
    assert est.free_energy(belief, {"proprio": np.array([1.0])}, models) == pytest.approx(1.0)


def test_free_energy_matches_term_by_term_oracle():
    rng = np.random.default_rng(0)
    cfg, models = trained_models(rng)
    for _ in range(20):
        mu = rng.uniform(-1, 1, 3)
        belief = est.BodyBelief(mu=mu, prior_mean=rng.uniform(-1, 1, 3),
                                prior_precision=rng.uniform(0, 2),
                                modality_precisions={"proprio": 3.0, "visual": 0.01, "tactile": 1.5})
        snap = arm.SensorSnapshot(proprio=rng.uniform(-1, 1, 3),
                                  visual_self=rng.uniform(0, 640, 2),
                                  visual_other=None,
                                  tactile=(rng.uniform(size=cfg.num_taxels) < 0.2).astype(float))
        expected = 0.0
        for name, pi in belief.modality_precisions.items():
            s = est.modality_reading(snap, name)
            g = models.predict(name, mu)
            expected += 0.5 * pi * float(np.sum((s - g) ** 2))
        d = mu - belief.prior_mean
        expected += 0.5 * belief.prior_precision * float(d @ d)
        assert est.free_energy(belief, snap, models) == pytest.approx(expected, abs=1e-12)


def test_free_energy_absent_visual_drops_term():
    rng = np.random.default_rng(1)
    cfg, models = trained_models(rng)
    mu = np.zeros(3)
    belief = est.BodyBelief(mu=mu, prior_mean=mu,
                            modality_precisions={"proprio": 1.0, "visual": 1.0})
    with_vis = arm.SensorSnapshot(mu, np.array([300.0, 200.0]), None, np.zeros(cfg.num_taxels))
    without = arm.SensorSnapshot(mu, None, None, np.zeros(cfg.num_taxels))
    assert est.free_energy(belief, without, models) < est.free_energy(belief, with_vis, models)


def test_free_energy_requires_some_modality():
    models = est.IdentityModels(("visual",))
    belief = est.BodyBelief(mu=np.zeros(1), prior_mean=np.zeros(1),
                            modality_precisions={"visual": 1.0})
    with pytest.raises(ValidationError, match="no enabled modality"):
        est.free_energy(belief, {"visual": None}, models)


# --- gradient ----------------------------------------------------------------

def test_gradient_zero_at_stationary_point():
    models = est.IdentityModels(("proprio", "visual"))
    mu = np.array([0.3, 0.1])
    belief = est.BodyBelief(mu=mu, prior_mean=mu, prior_precision=2.0,
                            modality_precisions={"proprio": 1.0, "visual": 1.0})
    snap = {"proprio": mu.copy(), "visual": mu.copy()}
    assert np.array_equal(est.free_energy_gradient(belief, snap, models), np.zeros(2))


def test_gradient_scalar_hand_value():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief(pi=2.0, mu=0.0)
    g = est.free_energy_gradient(belief, {"proprio": np.array([1.0])}, models)
    assert g == pytest.approx(-2.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    cfg, models = trained_models(rng)
    worst = 0.0
    for _ in range(100):
        mu = rng.uniform(-1, 1, 3)
        belief = est.BodyBelief(mu=mu, prior_mean=rng.uniform(-1, 1, 3),
                                prior_precision=rng.uniform(0, 3),
                                modality_precisions={"proprio": 2.0, "visual": 0.01, "tactile": 1.0})
        snap = arm.SensorSnapshot(proprio=rng.uniform(-1, 1, 3),
                                  visual_self=rng.uniform(100, 500, 2),
                                  visual_other=None,
                                  tactile=(rng.uniform(size=cfg.num_taxels) < 0.2).astype(float))
        g = est.free_energy_gradient(belief, snap, models)

        def f(q):
            b = est.BodyBelief(mu=q, prior_mean=belief.prior_mean,
                               prior_precision=belief.prior_precision,
                               modality_precisions=belief.modality_precisions)
            return np.array([est.free_energy(b, snap, models)])

        g_fd = central_difference_jacobian(f, mu)[0]
        worst = max(worst, np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12))
    assert worst < 1e-4


# --- step ----------------------------------------------------------------------

def test_step_fixed_point():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief(pi=2.0, mu=1.0)
    out = est.step(belief, {"proprio": np.array([1.0])}, models, eta=0.1)
    assert np.array_equal(out.mu, belief.mu)
    assert out.last_free_energy == 0.0


def test_step_scalar_hand_update():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief(pi=2.0, mu=0.0)
    out = est.step(belief, {"proprio": np.array([1.0])}, models, eta=0.1)
    assert out.mu[0] == pytest.approx(0.2)
    assert belief.mu[0] == 0.0  # input belief untouched


def test_step_strictly_decreases_f_below_stability_eta():
    models = est.IdentityModels(("proprio",))
    pi = 2.0
    belief = scalar_belief(pi=pi, mu=0.0)
    snap = {"proprio": np.array([1.0])}
    eta = 0.4 / pi  # below 1/pi
    prev = est.free_energy(belief, snap, models)
    for _ in range(20):
        belief = est.step(belief, snap, models, eta)
        assert belief.last_free_energy < prev
        prev = belief.last_free_energy


def test_step_descent_with_multiple_modalities_and_prior():
    models = est.IdentityModels(("proprio", "visual"))
    belief = est.BodyBelief(mu=np.zeros(1), prior_mean=np.array([0.2]),
                            prior_precision=1.0,
                            modality_precisions={"proprio": 2.0, "visual": 3.0})
    snap = {"proprio": np.array([1.0]), "visual": np.array([-0.5])}
    eta = 0.9 / (2.0 + 3.0 + 1.0)
    prev = est.free_energy(belief, snap, models)
    for _ in range(30):
        belief = est.step(belief, snap, models, eta)
        assert belief.last_free_energy <= prev + 1e-15
        prev = belief.last_free_energy


def test_step_raises_on_non_finite_gradient():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief()
    with pytest.raises(NumericalError):
        est.step(belief, {"proprio": np.array([np.inf])}, models, eta=0.1)


# --- infer -----------------------------------------------------------------------

def test_infer_converged_at_step_zero():
    rng = np.random.default_rng(3)
    cfg, models = trained_models(rng)
    theta = np.array([0.4, -0.3, 0.5])
    snap = arm.SensorSnapshot(proprio=models.predict("proprio", theta),
                              visual_self=models.predict("visual", theta),
                              visual_other=None,
                              tactile=models.predict("tactile", theta))
    belief = est.BodyBelief(mu=theta.copy(), prior_mean=theta.copy(),
                            modality_precisions={"proprio": 1.0, "visual": 0.01, "tactile": 1.0})
    out = est.infer(belief, snap, models, eta=1e-3, tol=1e-9, max_steps=5)
    assert out.converged
    assert np.array_equal(out.mu, theta)


def test_infer_recovers_truth_from_offset_start():
    rng = np.random.default_rng(4)
    cfg, models = trained_models(rng, n=160)
    theta = np.array([0.3, -0.2, 0.4])
    snap = arm.SensorSnapshot(proprio=theta.copy(),
                              visual_self=models.predict("visual", theta),
                              visual_other=None,
                              tactile=models.predict("tactile", theta))
    belief = est.BodyBelief(mu=theta + rng.uniform(-0.3, 0.3, 3), prior_mean=theta.copy(),
                            modality_precisions={"proprio": 100.0, "visual": 0.04, "tactile": 2.0})
    out = est.infer(belief, snap, models, eta=5e-5, tol=1e-6, max_steps=2000)
    assert np.abs(out.mu - theta).max() < 0.01


def test_infer_symmetric_fusion_midpoint():
    models = est.IdentityModels(("proprio", "visual"))
    belief = est.BodyBelief(mu=np.zeros(1), prior_mean=np.zeros(1),
                            modality_precisions={"proprio": 2.0, "visual": 2.0})
    a, b = 0.2, 0.8
    out = est.infer(belief, {"proprio": np.array([a]), "visual": np.array([b])},
                    models, eta=0.1, tol=1e-12, max_steps=5000)
    assert out.mu[0] == pytest.approx((a + b) / 2, abs=1e-9)
    assert out.converged


def test_infer_walks_snapshot_stream():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief(pi=1.0, mu=0.0)
    stream = [{"proprio": np.array([v])} for v in (1.0, 1.0, 4.0)]
    out = est.infer(belief, stream, models, eta=0.5, tol=1e-10, max_steps=200)
    assert out.converged
    assert out.mu[0] == pytest.approx(4.0, abs=1e-6)  # settles on the final reading


def test_infer_fusion_symmetry_under_modality_swap():
    models_ab = est.IdentityModels(("a", "b"))
    readings = {"a": np.array([0.9]), "b": np.array([0.1])}
    swapped = {"a": np.array([0.1]), "b": np.array([0.9])}
    traj1, traj2 = [], []
    b1 = est.BodyBelief(mu=np.zeros(1), prior_mean=np.zeros(1),
                        modality_precisions={"a": 1.5, "b": 1.5})
    b2 = est.BodyBelief(mu=np.zeros(1), prior_mean=np.zeros(1),
                        modality_precisions={"a": 1.5, "b": 1.5})
    for _ in range(50):
        b1 = est.step(b1, readings, models_ab, eta=0.1)
        b2 = est.step(b2, swapped, models_ab, eta=0.1)
        traj1.append(b1.mu[0])
        traj2.append(b2.mu[0])
    assert np.abs(np.array(traj1) - np.array(traj2)).max() < 1e-12


def test_infer_rejects_bad_args():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief()
    with pytest.raises(ValidationError):
        est.infer(belief, {"proprio": np.zeros(1)}, models, eta=0.1, tol=0.0)
    with pytest.raises(ValidationError):
        est.infer(belief, [], models, eta=0.1)


# --- reconstruction ------------------------------------------------------------------

def test_reconstruct_proprio_is_identity():
    models = est.IdentityModels(("proprio",))
    belief = scalar_belief(mu=0.37)
    assert np.array_equal(est.reconstruct_modality(belief, models, "proprio"), belief.mu)


def test_reconstruct_at_training_input_reproduces_row():
    rng = np.random.default_rng(5)
    cfg, models = trained_models(rng)
    i = 11
    theta = models.visual.X[i]
    belief = est.BodyBelief(mu=theta.copy(), prior_mean=theta.copy(),
                            modality_precisions={"proprio": 1.0})
    vis = est.reconstruct_modality(belief, models, "visual")
    assert np.abs(vis - models.visual.Y[i]).max() < 1e-2
    tac = est.reconstruct_modality(belief, models, "tactile")
    assert np.abs(tac - models.tactile.Y[i]).max() < 1e-3


def test_reconstruct_unknown_modality():
    models = est.IdentityModels(("proprio",))
    with pytest.raises(ValidationError):
        est.reconstruct_modality(scalar_belief(), models, "audio")


def test_reconstruct_visual_from_proprio_tactile():
    rng = np.random.default_rng(6)
    cfg, models = trained_models(rng, n=200)
    lim = 0.9
    errors = []
    for _ in range(25):
        theta = rng.uniform(-lim, lim, 3)
        snap = arm.SensorSnapshot(proprio=theta.copy(), visual_self=None, visual_other=None,
                                  tactile=models.predict("tactile", theta))
        belief = est.BodyBelief(mu=theta + rng.uniform(-0.1, 0.1, 3), prior_mean=theta.copy(),
                                modality_precisions={"proprio": 100.0, "tactile": 2.0})
        out = est.infer(belief, snap, models, eta=1e-4, tol=1e-7, max_steps=1500)
        vis = est.reconstruct_modality(out, models, "visual")
        truth = arm.pixel_coords(arm.end_effector(theta, cfg), cfg.camera)
        errors.append(np.linalg.norm(vis - truth))
    train_pred = gp.predict_mean(models.visual, models.visual.X)
    rmse = float(np.sqrt(np.mean((train_pred - models.visual.Y) ** 2)))
    assert np.mean(errors) <= max(3 * rmse, 3.0)


# --- state-dependent precision --------------------------------------------------------

def test_state_dependent_precision_runs_and_weights_by_variance():
    rng = np.random.default_rng(7)
    cfg, models = trained_models(rng)
    theta = np.array([0.2, 0.1, -0.3])
    snap = arm.SensorSnapshot(proprio=theta.copy(),
                              visual_self=models.predict("visual", theta) + np.array([5.0, 0.0]),
                              visual_other=None,
                              tactile=models.predict("tactile", theta))
    belief = est.BodyBelief(mu=theta.copy(), prior_mean=theta.copy(),
                            modality_precisions={"proprio": 10.0, "visual": 1.0, "tactile": 1.0})
    f_fixed = est.free_energy(belief, snap, models)
    f_state = est.free_energy(belief, snap, models, state_dependent_precision=True)
    assert np.isfinite(f_state) and f_state != f_fixed
    out = est.step(belief, snap, models, eta=1e-6, state_dependent_precision=True)
    assert np.all(np.isfinite(out.mu))


# --- perturbation experiment ----------------------------------------------------------

def test_toy_drift_closed_form():
    for pi_p, pi_v, delta in [(1.0, 1.0, 30.0), (3.0, 1.0, 20.0), (1.0, 4.0, -12.0)]:
        rep = est.run_rhi_toy(delta, pi_p, pi_v)
        expected = abs(delta) * pi_v / (pi_p + pi_v)
        assert rep.drift == pytest.approx(expected, abs=1e-6)
        assert rep.mu_trajectory.shape == (2001, 1)


def test_toy_drift_monotone_in_visual_precision():
    drifts = [est.run_rhi_toy(30.0, 1.0, pv).drift for pv in (0.5, 1.0, 2.0, 4.0)]
    assert all(b > a for a, b in zip(drifts, drifts[1:]))


def test_zero_offset_zero_drift():
    rng = np.random.default_rng(8)
    cfg, models = trained_models(rng)
    sched = est.PerturbationSchedule(visual_offset=(0.0, 0.0), stimulation="none",
                                     n_steps=50, step_size=5e-5)
    rep = est.run_rhi(models, sched, cfg, [0.3, -0.2, 0.4],
                      {"proprio": 100.0, "visual": 0.04, "tactile": 2.0})
    assert abs(rep.drift) < 1e-9


def test_rhi_snapshot_protocol():
    cfg = arm.ArmConfig(joint_limits=((-1.2, 1.2),) * 3, contact_radius=0.07)
    theta = [0.7, -0.4, 0.6]
    sync = est.rhi_snapshots(est.PerturbationSchedule(stimulation="synchronous", n_steps=8,
                                                      stim_period=4, stim_on=2), cfg, theta)
    async_ = est.rhi_snapshots(est.PerturbationSchedule(stimulation="asynchronous", n_steps=8,
                                                        stim_period=4, stim_on=2), cfg, theta)
    off = est.rhi_snapshots(est.PerturbationSchedule(stimulation="none", n_steps=8), cfg, theta)
    true_px = arm.pixel_coords(arm.end_effector(theta, cfg), cfg.camera)
    assert np.allclose(sync[0].visual_self, true_px + [30.0, 0.0])
    felt_sync = [s.tactile.any() for s in sync]
    felt_async = [s.tactile.any() for s in async_]
    cue = [s.visual_other is not None for s in sync]
    assert felt_sync == cue  # synchronous: felt co-occurs with seen
    assert felt_async == [not c for c in cue]  # half-period shift
    assert not any(s.tactile.any() for s in off)
    assert all(s.visual_other is None for s in off)


def test_drift_report_validation():
    with pytest.raises(ValidationError):
        est.DriftReport(np.zeros((2, 3)), np.nan, False, np.zeros(2), np.zeros((2, 2)))


def test_schedule_validation():
    with pytest.raises(ValidationError):
        est.PerturbationSchedule(stimulation="sometimes")
    with pytest.raises(ValidationError):
        est.PerturbationSchedule(precision_gain=0.5)
    with pytest.raises(ValidationError):
        est.PerturbationSchedule(stim_on=0)
