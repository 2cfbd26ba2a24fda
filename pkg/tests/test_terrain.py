import numpy as np
import pytest

from quadloco.dynamics import compute_dynamics, default_stand_q
from quadloco.so3 import rot_y
from quadloco.terrain import (
    ComplianceEstimator,
    ContactSample,
    EstimatorBuffers,
    KelvinVoigtParams,
    contact_status,
    estimate_grf,
    estimate_penetration,
    tce_step,
    to_contact_frame,
)

from conftest import make_state


def _sample(t, leg, alpha, f, p, pd):
    return ContactSample(
        t=t, leg=leg, alpha=alpha,
        grf_world=np.asarray(f, float),
        penetration_world=np.asarray(p, float),
        rate_world=np.asarray(pd, float),
        touchdown_world=np.zeros(3),
    )


def test_grf_zero_when_torques_match_bias(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True] * 4)
    # torques exactly equal to the gravity/bias torques, zero acceleration
    tau = dyn.h_j.copy()
    for leg in range(4):
        f = estimate_grf(dyn, tau, leg, qdd=np.zeros(18))
        assert np.allclose(f, 0.0, atol=1e-9)


def test_grf_alpha_gating(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True] * 4)
    f = estimate_grf(dyn, np.zeros(12), 2, alpha=0)
    assert np.array_equal(f, np.zeros(3))


def test_grf_recovers_true_forces(model, stand_state):
    # torques consistent with a known force field: the estimator inverts the
    # full torque mapping and recovers every leg's force
    from quadloco.wbc import map_torques

    dyn = compute_dynamics(model, stand_state, [True] * 4)
    rng = np.random.default_rng(5)
    for _ in range(5):
        f_true = rng.uniform(-50.0, 250.0, size=(4, 3))
        tau = map_torques(dyn, np.zeros(18), f_true)
        for leg in range(4):
            f = estimate_grf(dyn, tau, leg, qdd=np.zeros(18))
            assert np.allclose(f, f_true[leg], atol=1e-8)


def test_contact_status_threshold(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True] * 4)
    normal = np.array([0.0, 0.0, 1.0])
    for f_n, expect in ((100.0, 1), (5.0, 0)):
        leg = 0
        J = dyn.foot_jacobians[leg][:, 6:9]
        tau = dyn.h_j.copy()
        tau[0:3] -= J.T @ np.array([0.0, 0.0, f_n])
        assert contact_status(dyn, tau, leg, normal, 20.0, qdd=np.zeros(18)) == expect


def test_contact_status_chatters_without_hysteresis(model, stand_state):
    # force oscillating around the threshold flips the flag every sample
    dyn = compute_dynamics(model, stand_state, [True] * 4)
    leg = 1
    J = dyn.foot_jacobians[leg][:, 9:12]
    flags = []
    for k in range(20):
        f_n = 20.0 + (2.0 if k % 2 == 0 else -2.0)
        tau = dyn.h_j.copy()
        tau[3:6] -= J.T @ np.array([0.0, 0.0, f_n])
        flags.append(contact_status(dyn, tau, leg, np.array([0, 0, 1.0]), 20.0,
                                     qdd=np.zeros(18)))
    assert flags == [1, 0] * 10


def test_penetration_zero_at_anchor(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True] * 4)
    for leg in range(4):
        p, pd = estimate_penetration(
            model, stand_state.base_position, stand_state.orientation,
            dyn.base_velocity, stand_state.omega, stand_state.q_j,
            stand_state.qd_j, dyn.foot_positions[leg], leg,
        )
        assert np.allclose(p, 0.0, atol=1e-12)
        assert np.allclose(pd, 0.0, atol=1e-12)


def test_penetration_base_sink(model, stand_state):
    # base sinks 0.01 m with joints frozen: all anchors read p_z = +0.01
    dyn0 = compute_dynamics(model, stand_state, [True] * 4)
    anchors = dyn0.foot_positions.copy()
    sunk = stand_state.copy()
    sunk.base_position = sunk.base_position - np.array([0.0, 0.0, 0.01])
    dyn1 = compute_dynamics(model, sunk, [True] * 4)
    for leg in range(4):
        p, _ = estimate_penetration(
            model, sunk.base_position, sunk.orientation, dyn1.base_velocity,
            sunk.omega, sunk.q_j, sunk.qd_j, anchors[leg], leg,
        )
        assert p[2] == pytest.approx(0.01, abs=1e-12)


def test_penetration_velocity_matches_dynamics(model):
    rng = np.random.default_rng(8)
    for _ in range(5):
        st = make_state(model, rng)
        dyn = compute_dynamics(model, st, [True] * 4)
        for leg in range(4):
            p, pd = estimate_penetration(
                model, st.base_position, st.orientation, dyn.base_velocity,
                st.omega, st.q_j, st.qd_j, np.zeros(3), leg,
            )
            assert np.allclose(pd, -dyn.foot_velocities[leg], atol=1e-9)
    with pytest.raises(ValueError):
        estimate_penetration(model, np.zeros(3), np.eye(3), np.zeros(3),
                             np.zeros(3), np.zeros(12), np.zeros(12), None, 0)


def test_contact_frame_transforms():
    s = _sample(0.0, 0, 1, [1.0, 2.0, 3.0], [0.1, 0.0, 0.2], [0.0, 0.0, -0.1])
    to_contact_frame(s, np.eye(3))
    assert np.allclose(s.grf_contact, s.grf_world)
    # 22 degree incline about y: contact normal is the rotated z axis
    R_surf = rot_y(np.deg2rad(22.0))
    R_wc = R_surf.T  # world -> contact
    to_contact_frame(s, R_wc)
    n_world = R_surf @ np.array([0.0, 0.0, 1.0])
    assert s.grf_contact[2] == pytest.approx(n_world @ s.grf_world, abs=1e-12)


def test_world_remap_of_diagonal_estimate():
    R_wc = rot_y(0.4).T
    kv = KelvinVoigtParams(
        stiffness=np.tile([3500.0, 3500.0, 3500.0], (4, 1)),
        damping=np.tile([400.0, 400.0, 400.0], (4, 1)),
        rotations=np.tile(R_wc, (4, 1, 1)),
    )
    K_w = kv.world_stiffness(0)
    assert np.allclose(K_w, R_wc.T @ np.diag([3500.0] * 3) @ R_wc)
    # isotropic diagonal: world map stays isotropic
    assert np.allclose(K_w, 3500.0 * np.eye(3), atol=1e-9)


def test_tce_recovers_noiseless_params():
    rng = np.random.default_rng(1)
    buf = EstimatorBuffers(window=250)
    k_true, d_true = 3500.0, 400.0
    for i in range(250):
        p = 0.05 + 0.02 * np.sin(0.1 * i)
        pd = 0.002 * np.cos(0.1 * i) + 0.001 * rng.standard_normal() * 0.0
        f = k_true * p + d_true * pd
        buf.push(0, np.full(3, f), np.full(3, p), np.full(3, pd))
    k, d = tce_step(buf, 0, 2, estimate_damping=True)
    assert k == pytest.approx(k_true, rel=1e-9)
    assert d == pytest.approx(d_true, rel=1e-9)
    # stiffness-only mode regresses against p alone
    k2, d2 = tce_step(buf, 0, 2, estimate_damping=False)
    assert d2 == 0.0
    assert k2 == pytest.approx(k_true, rel=0.02)


def test_tce_withholds_on_degenerate_regressor():
    buf = EstimatorBuffers(window=50)
    for i in range(50):
        buf.push(0, np.full(3, 1.0), np.full(3, 1e-9), np.zeros(3))
    assert tce_step(buf, 0, 2) is None
    assert tce_step(buf, 0, 2, estimate_damping=True) is None  # rank deficient


def test_estimator_not_full_returns_nothing():
    buf = EstimatorBuffers(window=100)
    for i in range(99):
        buf.push(1, np.full(3, 10.0), np.full(3, 0.01), np.zeros(3))
    assert tce_step(buf, 1, 2) is None


def test_sliding_window_forgets_old_data():
    # after `window` new samples the estimate is independent of older history
    est_a = ComplianceEstimator(window=100)
    est_b = ComplianceEstimator(window=100)
    rng = np.random.default_rng(2)

    def feed(est, k, n, t0):
        for i in range(n):
            p = 0.04 + 0.01 * np.sin(0.3 * i) + 1e-4 * rng.standard_normal()
            s = _sample(t0 + i, 0, 1, [0.0, 0.0, k * p], [0.0, 0.0, p], np.zeros(3))
            est.step(s)

    feed(est_a, 8000.0, 150, 0.0)   # old junk regime first
    rng = np.random.default_rng(3)
    feed(est_a, 3500.0, 100, 150.0)
    rng = np.random.default_rng(3)
    feed(est_b, 3500.0, 100, 0.0)
    assert est_a.estimate.stiffness[0, 0] == pytest.approx(
        est_b.estimate.stiffness[0, 0], rel=1e-9
    )


def test_per_leg_independence():
    est = ComplianceEstimator(window=50)
    for i in range(60):
        p = 0.05 + 0.01 * np.sin(i)
        est.step(_sample(i, 0, 1, [0, 0, 3500 * p], [0, 0, p], np.zeros(3)))
    k_before = est.estimate.stiffness[0, 0]
    # corrupt leg 1 heavily
    for i in range(60):
        est.step(_sample(i, 1, 1, [0, 0, 1e6], [0, 0, 1e-4], np.zeros(3)))
    assert est.estimate.stiffness[0, 0] == k_before


def test_estimator_alpha_gating_and_boundary_lag():
    est = ComplianceEstimator(window=100)
    # swing samples must not touch the buffers
    est.step(_sample(0.0, 2, 0, [0, 0, 0], [0, 0, 0.01], np.zeros(3)))
    assert est.buffers.count[2] == 0
    # terrain boundary: estimate transitions smoothly within one window
    ks = []
    for i in range(100):
        p = 0.05
        est.step(_sample(i, 2, 1, [0, 0, 8000 * p], [0, 0, p], np.zeros(3)))
    ks.append(est.estimate.stiffness[2, 0])
    for i in range(100):
        p = 0.05
        est.step(_sample(100 + i, 2, 1, [0, 0, 3500 * p], [0, 0, p], np.zeros(3)))
        ks.append(est.estimate.stiffness[2, 0])
    ks = np.asarray(ks)
    assert ks[0] == pytest.approx(8000.0, rel=1e-6)
    assert ks[-1] == pytest.approx(3500.0, rel=1e-6)
    # monotone-ish smooth transition, no overshoot beyond the two regimes
    assert np.all(ks <= 8000.0 + 1.0) and np.all(ks >= 3500.0 - 1.0)


def test_low_confidence_flag_on_rigid_like_data():
    est = ComplianceEstimator(window=50)
    for i in range(60):
        p = 1.1e-4  # rigid-ground scale penetration
        est.step(_sample(i, 3, 1, [0, 0, 2e6 * p], [0, 0, p], np.zeros(3)))
    assert est.estimate.valid[3, 0]
    assert est.estimate.low_confidence[3, 0]
    assert est.estimate.stiffness[3, 0] == pytest.approx(2e6, rel=1e-6)


def test_csv_export(tmp_path):
    est = ComplianceEstimator(window=10)
    for i in range(12):
        est.step(_sample(i * 0.004, 0, 1, [0, 0, 100.0], [0, 0, 0.03], np.zeros(3)))
    out = tmp_path / "tce.csv"
    est.write_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("t,leg,p_n")
    assert len(lines) == 13
