import numpy as np
import pytest

from quadloco.vital import (
    POSE_MAX,
    POSE_MIN,
    PoseCommand,
    SafeCurve,
    hip_height_from_pose,
    pose_cost,
    pose_optimize_receding,
    pose_optimize_single,
    tbr_baseline,
)

HIPS = np.array([
    [0.37, 0.20, 0.0],
    [0.37, -0.20, 0.0],
    [-0.37, 0.20, 0.0],
    [-0.37, -0.20, 0.0],
])


def gaussian_curve(center, amp=100.0, sigma=0.08):
    return SafeCurve(np.array([amp]), np.array([center]), np.array([sigma]))


def grid_oracle(curves, hip_offsets, lo, hi, kind, margin,
                res=(0.005, 0.01, 0.01)):
    """Independent 3-D grid search over the pose box (vectorized over the
    grid; the cost math is written out from scratch)."""
    axes = [np.arange(lo[k], hi[k] + 1e-12, res[k]) for k in range(3)]
    Z, B, G = np.meshgrid(*axes, indexing="ij")
    total = None
    prod = None
    for leg, c in enumerate(curves):
        x_h, y_h, z_off = hip_offsets[leg]
        z_hip = Z - x_h * np.sin(G) + y_h * np.cos(G) * np.sin(B) \
            + z_off * np.cos(G) * np.cos(B)
        if kind == "sum":
            term = c(z_hip) ** 2
        elif kind == "prod":
            term = c(z_hip) ** 2
        else:
            term = (margin * (c(z_hip - margin) + c(z_hip + margin))) ** 2
        if kind == "prod":
            prod = term if prod is None else prod * term
        else:
            total = term if total is None else total + term
    vals = prod if kind == "prod" else total
    k = int(np.argmax(vals))
    idx = np.unravel_index(k, vals.shape)
    best_u = np.array([axes[0][idx[0]], axes[1][idx[1]], axes[2][idx[2]]])
    return best_u, float(vals[idx])


def test_hip_height_from_pose_identities():
    assert hip_height_from_pose(PoseCommand(0.5, 0.0, 0.0), [0.3, 0.2, 0.04]) \
        == pytest.approx(0.54)
    # small pitch linearization: front hip drops by x_h * gamma
    base = hip_height_from_pose(PoseCommand(0.5, 0.0, 0.0), [0.37, 0.2, 0.0])
    tilted = hip_height_from_pose(PoseCommand(0.5, 0.0, 0.01), [0.37, 0.2, 0.0])
    assert tilted - base == pytest.approx(-0.37 * 0.01, abs=1e-5)


def test_hip_height_matches_rotation_oracle():
    from quadloco.so3 import rpy_to_matrix

    rng = np.random.default_rng(4)
    for _ in range(20):
        beta, gamma = rng.uniform(-0.35, 0.35, 2)
        yaw = rng.uniform(-1.0, 1.0)
        z_b = rng.uniform(0.2, 0.8)
        off = rng.uniform(-0.4, 0.4, 3)
        want = z_b + (rpy_to_matrix(beta, gamma, yaw) @ off)[2]
        got = hip_height_from_pose(PoseCommand(z_b, beta, gamma), off, yaw)
        assert got == pytest.approx(want, abs=1e-12)


def test_pose_cost_kinds():
    curves = [gaussian_curve(0.55) for _ in range(4)]
    hips_flat = np.zeros((4, 3))
    u = np.array([0.55, 0.0, 0.0])
    c_sum = pose_cost(curves, u, hips_flat, "sum")
    assert c_sum == pytest.approx(4 * 100.0**2)
    # multiplicative cost dies with any dead leg
    curves_dead = curves[:3] + [SafeCurve([0.0], [0.5], [0.1])]
    assert pose_cost(curves_dead, u, hips_flat, "prod") == pytest.approx(0.0)
    assert pose_cost(curves, u, hips_flat, "prod") > 0.0
    with pytest.raises(ValueError):
        pose_cost(curves, u, hips_flat, "int", margin=0.0)
    with pytest.raises(ValueError):
        pose_cost(curves, u, hips_flat, "nope")


def test_pose_cost_integral_vs_quadrature():
    # the two-point margin rule approximates the true integral for smooth
    # curves
    curve = gaussian_curve(0.5, amp=50.0, sigma=0.15)
    m = 0.025
    for z in (0.45, 0.5, 0.6):
        approx = m * (curve(z - m) + curve(z + m))
        zs = np.linspace(z - m, z + m, 2001)
        exact = np.trapezoid(curve(zs), zs)
        assert abs(approx - exact) / exact < 0.10


def test_sum_and_prod_agree_on_symmetric_scenario():
    curves = [gaussian_curve(0.55) for _ in range(4)]
    lo, hi = POSE_MIN, POSE_MAX
    u_sum, _ = grid_oracle(curves, HIPS, lo, hi, "sum", 0.025,
                           res=(0.01, 0.05, 0.05))
    u_prod, _ = grid_oracle(curves, HIPS, lo, hi, "prod", 0.025,
                            res=(0.01, 0.05, 0.05))
    assert np.allclose(u_sum, u_prod, atol=1e-9)


def test_single_horizon_symmetric_gaussians():
    # hips with zero z-offset but real planar offsets: tilting de-levels the
    # hip heights, so the symmetric curves pin the level pose
    curves = [gaussian_curve(0.55) for _ in range(4)]
    prev = PoseCommand(0.4, 0.1, -0.1)
    res = pose_optimize_single(curves, prev, HIPS, kind="sum")
    assert res.converged
    assert res.pose.z_b == pytest.approx(0.55, abs=0.005)
    assert abs(res.pose.roll) < 0.01 and abs(res.pose.pitch) < 0.01
    assert res.pose.within_bounds()


def test_single_horizon_clamps_at_bounds():
    curves = [gaussian_curve(0.95) for _ in range(4)]  # optimum above u_max
    prev = PoseCommand(0.7, 0.0, 0.0)
    res = pose_optimize_single(curves, prev, np.zeros((4, 3)), kind="sum")
    assert res.pose.z_b == pytest.approx(POSE_MAX[0], abs=1e-6)


def test_single_horizon_rate_bound_step():
    curves = [gaussian_curve(0.7) for _ in range(4)]
    prev = PoseCommand(0.4, 0.0, 0.0)
    rate = (np.array([-0.02, -0.05, -0.05]), np.array([0.02, 0.05, 0.05]))
    res = pose_optimize_single(curves, prev, np.zeros((4, 3)),
                               rate_bounds=rate, kind="sum")
    # far-off optimum with a tight rate bound: exactly one max step toward it
    assert res.pose.z_b == pytest.approx(0.42, abs=1e-6)


def test_optimizer_matches_grid_oracle_random_curves():
    rng = np.random.default_rng(17)
    for _ in range(6):  # the acceptance suite runs the full 20
        curves = []
        for _ in range(4):
            n_b = 5
            curves.append(SafeCurve(
                rng.uniform(0.0, 120.0, n_b),
                rng.uniform(0.25, 0.75, n_b),
                rng.uniform(0.04, 0.12, n_b),
            ))
        prev = PoseCommand(0.5, 0.0, 0.0)
        res = pose_optimize_single(curves, prev, HIPS, kind="int",
                                   margin=0.025)
        _, v_oracle = grid_oracle(curves, HIPS, POSE_MIN, POSE_MAX, "int",
                                  0.025)
        assert res.cost >= 0.99 * v_oracle


def test_receding_reduces_to_single():
    curves = [gaussian_curve(0.6) for _ in range(4)]
    prev = PoseCommand(0.5, 0.0, 0.0)
    r1 = pose_optimize_single(curves, prev, HIPS, kind="sum")
    r2 = pose_optimize_receding([curves], prev, HIPS, kind="sum")
    assert np.allclose(r1.pose.as_array(), r2.pose.as_array(), atol=1e-9)
    assert len(r2.sequence) == 1


def test_receding_identical_horizons_agree():
    curves = [gaussian_curve(0.6) for _ in range(4)]
    prev = PoseCommand(0.5, 0.0, 0.0)
    res = pose_optimize_receding([curves, curves], prev, HIPS, kind="sum",
                                 smoothness_weight=10.0)
    u1 = res.sequence[0].as_array()
    u2 = res.sequence[1].as_array()
    assert np.allclose(u1, u2, atol=1e-5)
    assert res.sequence[0].within_bounds()


def test_receding_respects_rate_bound_on_emitted_pose():
    curves_a = [gaussian_curve(0.7) for _ in range(4)]
    curves_b = [gaussian_curve(0.75) for _ in range(4)]
    prev = PoseCommand(0.4, 0.0, 0.0)
    rate = (np.array([-0.02, -0.05, -0.05]), np.array([0.02, 0.05, 0.05]))
    res = pose_optimize_receding([curves_a, curves_b], prev, HIPS,
                                 rate_bounds=rate, kind="sum")
    assert res.pose.z_b <= 0.42 + 1e-9
    assert res.sequence[1].within_bounds()


def test_tbr_level_plane():
    feet = np.array([
        [0.3, 0.2, 0.1], [0.3, -0.2, 0.1], [-0.3, 0.2, 0.1], [-0.3, -0.2, 0.1]
    ])
    pose, ok = tbr_baseline(feet, standoff=0.5)
    assert ok
    assert pose.roll == pytest.approx(0.0, abs=1e-12)
    assert pose.pitch == pytest.approx(0.0, abs=1e-12)
    assert pose.z_b == pytest.approx(0.6)


def test_tbr_incline_pitch():
    feet = []
    for x, y in ((0.3, 0.2), (0.3, -0.2), (-0.3, 0.2), (-0.3, -0.2)):
        feet.append([x, y, 0.1 * x])  # 10% incline along x
    pose, ok = tbr_baseline(np.array(feet), standoff=0.5)
    assert ok
    assert abs(pose.pitch) == pytest.approx(np.arctan(0.1), abs=1e-9)
    assert pose.roll == pytest.approx(0.0, abs=1e-9)


def test_tbr_recovers_constructed_plane():
    from quadloco.so3 import rpy_to_matrix

    rng = np.random.default_rng(23)
    for _ in range(20):
        beta, gamma = rng.uniform(-0.3, 0.3, 2)
        R = rpy_to_matrix(beta, gamma, 0.0)
        base = np.array([[0.3, 0.2, 0.0], [0.3, -0.2, 0.0],
                         [-0.25, 0.25, 0.0], [-0.3, -0.2, 0.0]])
        feet = base @ R.T + rng.uniform(-0.1, 0.1, 3)
        pose, ok = tbr_baseline(feet, standoff=0.5)
        assert ok
        n_want = R @ np.array([0.0, 0.0, 1.0])
        n_got = rpy_to_matrix(pose.roll, pose.pitch, 0.0) @ np.array([0, 0, 1.0])
        assert np.allclose(n_want, n_got, atol=1e-9)


def test_tbr_degenerate_fallback():
    feet = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0],
                     [0.2, 0.0, 0.0], [0.3, 0.0, 0.0]])
    pose, ok = tbr_baseline(feet, standoff=0.5)
    assert not ok
    assert pose.roll == 0.0 and pose.pitch == 0.0
