import numpy as np
import pytest

from quadloco.dynamics import GRAVITY, compute_dynamics, default_stand_q
from quadloco.so3 import rot_y
from quadloco.terrain import KelvinVoigtParams
from quadloco.wbc import (
    ImpedanceGains,
    TaskReferences,
    WbcConfig,
    WholeBodyController,
    accel_bounds,
    assemble,
    end_stop_accel,
    friction_rows,
    loading_period,
    map_torques,
    stance_reference_accel,
    swing_accel_ref,
    trunk_wrench,
)

M_R = 90.0


@pytest.fixture
def stand(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True] * 4)
    refs = TaskReferences.hold(dyn.com_position)
    refs.stance_anchors = dyn.foot_positions.copy()
    return stand_state, dyn, refs


def test_trunk_wrench_gravity_only(model, stand):
    st, dyn, refs = stand
    w = trunk_wrench(refs, st, dyn, ImpedanceGains(), model.total_mass)
    assert np.allclose(w[:3], [0.0, 0.0, M_R * GRAVITY], atol=1e-9)
    assert np.allclose(w[3:], 0.0, atol=1e-9)


def test_trunk_wrench_stiffness_term(model, stand):
    st, dyn, refs = stand
    refs.com_position_d = dyn.com_position + np.array([0.01, 0.0, 0.0])
    w = trunk_wrench(refs, st, dyn, ImpedanceGains(), model.total_mass)
    assert w[0] == pytest.approx(20.0, abs=1e-9)
    assert w[2] == pytest.approx(M_R * GRAVITY, abs=1e-9)


def test_trunk_wrench_feedforward_term(model, stand):
    st, dyn, refs = stand
    refs.accel_d = np.array([0.3, 0.0, 0.1, 0.0, 0.2, 0.0])
    w0 = trunk_wrench(TaskReferences.hold(dyn.com_position), st, dyn,
                      ImpedanceGains(), model.total_mass)
    w = trunk_wrench(refs, st, dyn, ImpedanceGains(), model.total_mass)
    assert np.allclose(w - w0, dyn.M[:6, :6] @ refs.accel_d, atol=1e-12)


def test_swing_accel_ref_formula(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True, True, True, False])
    refs = TaskReferences.hold(dyn.com_position)
    refs.swing_pos_d[3] = dyn.foot_positions[3]
    refs.swing_vel_d[3] = dyn.foot_velocities[3]
    out = swing_accel_ref(refs, dyn, ImpedanceGains())
    assert np.allclose(out, 0.0, atol=1e-9)
    refs.swing_pos_d[3] = dyn.foot_positions[3] + [0.0, 0.0, 0.02]
    out = swing_accel_ref(refs, dyn, ImpedanceGains())
    assert np.allclose(out[0], [0.0, 0.0, 40.0], atol=1e-9)
    refs.swing_pos_d[3] = dyn.foot_positions[3]
    refs.swing_acc_d[3] = np.array([1.0, -2.0, 3.0])
    out = swing_accel_ref(refs, dyn, ImpedanceGains())
    assert np.allclose(out[0], [1.0, -2.0, 3.0], atol=1e-9)


def test_stance_reference_accel(model, stand):
    st, dyn, refs = stand
    gains = ImpedanceGains()
    out = stance_reference_accel(dyn.foot_positions, dyn, gains)
    assert np.allclose(out, 0.0, atol=1e-12)
    anchors = dyn.foot_positions.copy()
    anchors[0, 0] += 0.01
    out = stance_reference_accel(anchors, dyn, gains)
    assert out[0, 0] == pytest.approx(10.0, abs=1e-9)


def test_end_stop_accel_printed_value():
    # distance 0.1 rad, zero velocity, horizon 0.04 s: the printed expression
    # evaluates to -125 at the upper limit
    assert end_stop_accel(0.1, 0.0, 0.0, 0.04) == pytest.approx(-125.0)


def test_accel_bounds_orientation_and_monotonicity():
    lo, hi = accel_bounds(np.zeros(1), np.zeros(1), np.array([-0.1]),
                          np.array([0.1]), dt=0.004, horizon_mult=10.0)
    assert lo[0] == pytest.approx(-125.0) and hi[0] == pytest.approx(125.0)
    assert lo[0] < hi[0]
    # larger horizon shrinks |bound|
    prev = np.inf
    for mult in (5.0, 10.0, 20.0, 40.0):
        _, hi = accel_bounds(np.zeros(1), np.zeros(1), np.array([-0.1]),
                             np.array([0.1]), dt=0.004, horizon_mult=mult)
        assert hi[0] < prev
        prev = hi[0]
    # violated limit: bounds push strictly away from it
    lo, hi = accel_bounds(np.array([0.15]), np.zeros(1), np.array([-0.1]),
                          np.array([0.1]), dt=0.004)
    assert hi[0] < 0.0


def test_accel_bound_integration_oracle():
    # applying the bound as the commanded acceleration in closed loop brings
    # the joint to the end-stop at (numerically) zero velocity, no overshoot
    dt_sim = 1e-3
    horizon = 0.04
    rng = np.random.default_rng(4)
    for _ in range(20):
        q = rng.uniform(-0.5, 0.09)
        qd = rng.uniform(-1.0, 1.0)
        q_max = 0.1
        for _ in range(int(12 * horizon / dt_sim)):
            _, hi = accel_bounds(np.array([q]), np.array([qd]),
                                 np.array([-10.0]), np.array([q_max]),
                                 dt=horizon / 10.0, horizon_mult=10.0)
            qd += hi[0] * dt_sim
            q += qd * dt_sim
        assert abs(qd) < 1e-3
        assert q <= q_max + 1e-6


def test_friction_rows_flat():
    rows, lo, hi = friction_rows([0.0, 0.0, 1.0], 0.7)

    def admissible(F):
        v = rows @ np.asarray(F, float)
        lo_c, hi_c = lo.copy(), hi.copy()
        lo_c[4], hi_c[4] = 0.0, np.inf
        return bool(np.all(v >= lo_c - 1e-12) and np.all(v <= hi_c + 1e-12))

    assert admissible([0.5, 0.0, 1.0])
    assert not admissible([0.8, 0.0, 1.0])


def test_friction_rows_rotate_with_surface():
    mu = 0.7
    R = rot_y(np.deg2rad(22.0))
    rows_flat, _, _ = friction_rows([0, 0, 1.0], mu)
    rows_tilt, _, _ = friction_rows(R @ [0, 0, 1.0], mu)
    assert np.allclose(rows_tilt, rows_flat @ R.T, atol=1e-12)
    with pytest.raises(ValueError):
        friction_rows([0.0, 0.0, 0.0], mu)


def test_loading_period_values():
    assert loading_period(3500.0, 90.0, 4) == pytest.approx(0.369, abs=5e-4)
    assert loading_period(2e6, 90.0, 4) == pytest.approx(0.0154, abs=5e-5)
    t1 = loading_period(2000.0, 90.0, 4)
    t2 = loading_period(8000.0, 90.0, 4)
    assert t1 == pytest.approx(2.0 * t2, rel=1e-12)


def test_assemble_decision_dimensions(model, stand, stand_state):
    st, dyn, refs = stand
    qp, layout, _ = assemble(st, dyn, refs, ImpedanceGains(), WbcConfig(), model)
    assert layout.n == 30  # 18 + 12, no swing slacks
    dyn2 = compute_dynamics(model, stand_state, [True, True, True, False])
    refs2 = TaskReferences.hold(dyn2.com_position)
    refs2.stance_anchors = dyn2.foot_positions.copy()
    refs2.swing_pos_d[3] = dyn2.foot_positions[3]
    qp2, layout2, _ = assemble(st, dyn2, refs2, ImpedanceGains(), WbcConfig(), model)
    assert layout2.n == 30  # 18 + 9 + 3
    with pytest.raises(ValueError):
        assemble(st, compute_dynamics(model, stand_state, [False] * 4), refs,
                 ImpedanceGains(), WbcConfig(), model)


def test_rigid_static_stand_solution(model, stand):
    st, dyn, refs = stand
    # the tight weight-sum check needs the solution regularizer out of the
    # way; with the default r_reg=1e-6 the wrench bias is ~2e-4 N (checked
    # below), which is the documented cost trade-off
    ctl = WholeBodyController(model, WbcConfig(mode="rigid", r_reg=1e-9))
    sol = ctl.solve_tick(st, dyn, refs)
    assert sol.status == "optimal"
    assert max(sol.qp.kkt_residuals) <= 1e-8
    # unactuated dynamics equality
    resid = dyn.M_u @ sol.qdd + dyn.h_u - sum(
        dyn.foot_jacobians[leg][:, :6].T @ sol.forces[leg] for leg in range(4)
    )
    assert np.abs(resid).max() < 1e-8
    assert np.sum(sol.forces[:, 2]) == pytest.approx(M_R * GRAVITY, abs=1e-6)
    sol_default = WholeBodyController(model).solve_tick(st, dyn, refs)
    assert np.sum(sol_default.forces[:, 2]) == pytest.approx(
        M_R * GRAVITY, abs=1e-3
    )
    # rigid stance rows hold
    vdot = dyn.stance_jacobian() @ sol.qdd + dyn.stance_bias()
    assert np.abs(vdot).max() < 1e-6
    # forces respect cone and normal bounds
    cfg = ctl.config
    for leg in range(4):
        f = sol.forces[leg]
        assert cfg.f_min - 1e-8 <= f[2] <= cfg.f_max + 1e-8
        assert abs(f[0]) <= cfg.mu * f[2] + 1e-8
        assert abs(f[1]) <= cfg.mu * f[2] + 1e-8


def test_map_torques_zero_solution_is_bias(model, stand):
    st, dyn, refs = stand
    tau = map_torques(dyn, np.zeros(18), np.zeros((4, 3)))
    assert np.allclose(tau, dyn.h_j, atol=1e-12)


def test_static_solution_keeps_robot_still(model, stand):
    # closed-chain check: applying tau* and F* through the full dynamics
    # reproduces qdd* (which is ~0 at stand)
    st, dyn, refs = stand
    ctl = WholeBodyController(model, WbcConfig(mode="rigid"))
    sol = ctl.solve_tick(st, dyn, refs)
    rhs = -dyn.h.copy()
    rhs[6:] += sol.torques
    for leg in range(4):
        rhs += dyn.foot_jacobians[leg].T @ sol.forces[leg]
    qdd = np.linalg.solve(dyn.M, rhs)
    assert np.allclose(qdd, sol.qdd, atol=1e-6)
    assert np.abs(qdd).max() < 1e-3


def test_torques_within_limits(model, stand):
    st, dyn, refs = stand
    ctl = WholeBodyController(model)
    rng = np.random.default_rng(0)
    for _ in range(20):
        refs.com_position_d = dyn.com_position + rng.uniform(-0.03, 0.03, 3)
        sol = ctl.solve_tick(st, dyn, refs)
        assert sol.status == "optimal"
        assert np.all(np.abs(sol.torques) <= model.tau_limit_full + 1e-6)


def test_artificial_torque_limit_clamps_and_redistributes(model, stand):
    st, dyn, refs = stand
    lim = model.tau_limit_full.copy()
    lim_kfe_lf = 30.0
    lo = -lim.copy()
    hi = lim.copy()
    hi[2] = lim_kfe_lf
    lo[2] = -lim_kfe_lf
    cfg = WbcConfig(torque_limits_fn=lambda q: (lo, hi))
    ctl = WholeBodyController(model, cfg)
    sol = ctl.solve_tick(st, dyn, refs)
    assert sol.status == "optimal"
    # nominal stand needs ~48 Nm on the KFE, so the clamp is active
    assert abs(sol.torques[2]) <= lim_kfe_lf + 1e-6
    assert abs(sol.torques[2]) >= lim_kfe_lf - 1e-3
    assert np.sum(sol.forces[:, 2]) == pytest.approx(M_R * GRAVITY, abs=1e-3)


def test_swing_slack_zero_when_unconstrained(model, stand_state):
    dyn = compute_dynamics(model, stand_state, [True, True, True, False])
    refs = TaskReferences.hold(dyn.com_position)
    refs.stance_anchors = dyn.foot_positions.copy()
    refs.swing_pos_d[3] = dyn.foot_positions[3] + [0.01, 0.0, 0.02]
    ctl = WholeBodyController(model)
    sol = ctl.solve_tick(stand_state, dyn, refs)
    assert sol.status == "optimal"
    qp = sol.qp
    # no torque-row or acceleration-bound multipliers active
    tau_mult = np.abs(qp.duals_ineq_upper[-12:]) + np.abs(qp.duals_ineq_lower[-12:])
    acc_mult = np.abs(qp.duals_bound_upper[6:18]) + np.abs(qp.duals_bound_lower[6:18])
    assert tau_mult.max() < 1e-6
    assert acc_mult.max() < 1e-6
    # interior-point zeros: slacks land at the barrier resolution
    assert np.abs(sol.slacks).max() < 1e-5
    # and the swing rows then hold exactly
    vdot = dyn.swing_jacobian() @ sol.qdd + dyn.swing_bias()
    want = swing_accel_ref(refs, dyn, ImpedanceGains()).reshape(-1)
    assert np.allclose(vdot, want, atol=1e-4)


def test_compliant_static_equilibrium(model, stand):
    st, dyn, refs = stand
    k_t = 3500.0
    cfg = WbcConfig(mode="compliant")
    ctl = WholeBodyController(model, cfg)
    ctl.set_terrain(KelvinVoigtParams.uniform(k_t, 400.0))
    ctl.seed_static_equilibrium()
    sol = None
    for _ in range(200):  # frozen state: let the eps recursion settle
        sol = ctl.solve_tick(st, dyn, refs)
        assert sol.status == "optimal"
    m_e = M_R / 4.0
    for leg in range(4):
        # the impedance equality row is exact at the optimum
        f_pred = k_t * sol.eps[leg] + 400.0 * sol.eps_dot[leg]
        assert np.allclose(sol.forces[leg], f_pred, atol=1e-6)
        # knee-backward legs shift the CoM slightly aft, so the per-foot
        # share deviates from the even split by <10%
        assert sol.eps[leg, 2] == pytest.approx(m_e * GRAVITY / k_t, rel=0.1)
        assert sol.eps[leg, 2] >= 0.0
    assert float(np.mean(sol.eps[:, 2])) == pytest.approx(
        m_e * GRAVITY / k_t, rel=1e-3
    )
    assert np.sum(sol.forces[:, 2]) == pytest.approx(M_R * GRAVITY, abs=1e-3)


def test_compliant_needs_history_and_terrain(model, stand):
    st, dyn, refs = stand
    with pytest.raises(ValueError):
        assemble(st, dyn, refs, ImpedanceGains(), WbcConfig(mode="compliant"),
                 model, terrain=KelvinVoigtParams.uniform(3500, 400))
    with pytest.raises(ValueError):
        assemble(st, dyn, refs, ImpedanceGains(), WbcConfig(mode="compliant"),
                 model, eps_history=np.zeros((2, 4, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        WbcConfig(mode="magic")
    with pytest.raises(ValueError):
        WbcConfig(mu=0.0)
    with pytest.raises(ValueError):
        WbcConfig(f_min=10.0, f_max=5.0)
    with pytest.raises(ValueError):
        WbcConfig(slack_penalty=1e-7)


def test_f_max_ramp_scaling(model, stand):
    # scaling one leg's F_max to near zero unloads it
    st, dyn, refs = stand
    ctl = WholeBodyController(model)
    scale = np.ones(4)
    scale[1] = 0.02
    sol = ctl.solve_tick(st, dyn, refs, f_max_scale=scale)
    assert sol.status == "optimal"
    assert sol.forces[1, 2] <= ctl.config.f_max * 0.02 + 1e-7
    assert np.sum(sol.forces[:, 2]) == pytest.approx(M_R * GRAVITY, abs=1e-3)
