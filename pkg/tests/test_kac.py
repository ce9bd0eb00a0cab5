"""Admittance controller pieces: forces, priorities, integration oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import solve_ivp

from kvil.control import (BodyState, ControllerGains, DensityModel,
                          admittance_step, aggregate_wrench, attraction_force,
                          density_force, density_force_components, fit_density,
                          priority_project, reconstruct_target)
from kvil.errors import (DegenerateRadius, InsufficientTargets,
                         NumericalBlowup)
from kvil.geometry import rotvec_to_matrix
from kvil.manifolds import LinearManifold


def test_attraction_force_formula():
    rng = np.random.default_rng(0)
    for _ in range(20):
        k, kd_, ks, ksd = rng.normal(size=(4, 3))
        kp, kv = rng.uniform(0.1, 100.0, 2)
        f = attraction_force(k, kd_, ks, ksd, kp, kv)
        assert_allclose(f, kp * (ks - k) + kv * (ksd - kd_), atol=1e-12)


def test_controller_gains_validation_and_presets():
    with pytest.raises(ValueError):
        ControllerGains(kp_bar=-1.0)
    g = ControllerGains(kp_bar=100.0)
    sched = g.one_shot_schedule(3)
    kps = [kp for kp, _ in sched]
    assert_allclose(kps, [100.0, 20.0, 10.0])
    for kp, kd in sched:
        assert kd == pytest.approx(2.0 * np.sqrt(kp))      # critical damping
    assert [kp for kp, _ in g.one_shot_schedule(5)][3:] == [10.0, 10.0]
    soft = g.insertion_preset()
    assert soft.kp_tilde == pytest.approx(0.4)
    assert soft.kd_tilde == pytest.approx(40.0)
    assert soft.kp_bar == g.kp_bar


def test_reconstruct_target_offset_along_stress():
    plane = LinearManifold(anchor=np.zeros(3),
                           basis=np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    k = np.array([0.3, -0.2, 2.0])
    target, foot, u = reconstruct_target(plane, k, offset=0.5)
    assert_allclose(foot, [0.3, -0.2, 0.0], atol=1e-12)
    assert_allclose(target, [0.3, -0.2, 0.5], atol=1e-12)
    assert_allclose(u, [0.3, -0.2], atol=1e-12)
    on_manifold, foot2, _ = reconstruct_target(plane, foot, offset=0.5)
    assert_allclose(on_manifold, foot2, atol=1e-12)


def test_density_model_matches_kde_formula():
    rng = np.random.default_rng(1)
    u = rng.normal(size=(9, 2))
    model = fit_density(u)
    sigma = u.std(axis=0, ddof=1)
    factor = (4.0 / (4.0 * 9)) ** (1.0 / 6.0)
    assert_allclose(model.bandwidth, sigma * factor, atol=1e-12)
    q = rng.normal(size=2)
    h = model.bandwidth
    dens = sum(np.exp(-0.5 * (((q - s) / h) ** 2).sum()) for s in u)
    dens /= 9 * np.prod(h * np.sqrt(2 * np.pi))
    assert model.density(q) == pytest.approx(dens, rel=1e-12)
    eps = 1e-6
    for a in range(2):
        dq = np.zeros(2)
        dq[a] = eps
        fd = (model.density(q + dq) - model.density(q - dq)) / (2 * eps)
        assert model.gradient(q)[a] == pytest.approx(fd, rel=1e-4, abs=1e-9)
    assert model.peak == pytest.approx(max(model.density(s) for s in u))
    with pytest.raises(InsufficientTargets):
        fit_density(u[:1])


def test_scaled_gradient_is_bounded_for_tight_clusters():
    # Even nearly coincident targets must not produce huge forces.
    u = np.array([[0.0], [1e-9], [2e-9], [1e-10]])
    model = fit_density(u)
    probes = np.linspace(-5e-9, 5e-9, 50)[:, None]
    mags = [np.abs(model.scaled_gradient(p)).max() for p in probes]
    assert max(mags) < 2.0


def test_density_force_components_and_winner():
    rng = np.random.default_rng(2)
    line = LinearManifold(anchor=np.zeros(3), basis=np.array([[1.0, 0, 0]]))
    targets = np.array([[0.8], [1.0], [1.2], [1.1], [0.9]])
    model = fit_density(targets)
    k = np.array([0.0, 0.4, 0.0])
    g1, g2 = 5.0, 7.0
    f1, f2 = density_force_components(model, line, k, g1, g2)
    u = line.project_batch(k[None])[0]
    assert_allclose(f1, g1 * (line.basis[0] * model.scaled_gradient(u)[0]),
                    atol=1e-12)
    chord = (model.mean - u) / np.linalg.norm(model.mean - u)
    assert_allclose(f2, g2 * line.basis[0] * chord[0], atol=1e-12)
    winner = density_force(model, line, k, g1, g2)
    expect = f1 if np.linalg.norm(f1) >= np.linalg.norm(f2) else f2
    assert_allclose(winner, expect, atol=0)


def test_density_force_vanishes_at_symmetric_mean():
    # At the chart mean of a symmetric target set both components die:
    # the gradient by symmetry, the chord by zero length.
    sym = np.array([[-1.0], [-0.5], [0.5], [1.0]])
    model = fit_density(sym)
    line = LinearManifold(anchor=np.zeros(3), basis=np.array([[1.0, 0, 0]]))
    k = line.reconstruct(model.mean)
    g2 = 5.0
    f = density_force(model, line, k, 5.0, g2)
    assert np.linalg.norm(f) <= 1e-9 * g2


def test_priority_project_line_removes_radial_component():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k1, k2, f = rng.normal(size=(3, 3))
        if np.linalg.norm(k2 - k1) < 1e-6:
            continue
        for kind in ("p2l", "p2c"):
            out = priority_project(f, k1, k2, kind)
            radial = (k2 - k1) / np.linalg.norm(k2 - k1)
            assert abs(out @ radial) < 1e-12
            # Projection is idempotent and never lengthens the force.
            assert_allclose(priority_project(out, k1, k2, kind), out, atol=1e-12)
            assert np.linalg.norm(out) <= np.linalg.norm(f) + 1e-12


def test_priority_project_plane_keeps_intersection_direction():
    rng = np.random.default_rng(4)
    for _ in range(200):
        k1, k2, f, n = rng.normal(size=(4, 3))
        r = k2 - k1
        if np.linalg.norm(r) < 1e-6 or np.linalg.norm(n) < 1e-6:
            continue
        n /= np.linalg.norm(n)
        for kind in ("p2P", "p2S"):
            out = priority_project(f, k1, k2, kind, plane_normal=n)
            radial = r / np.linalg.norm(r)
            assert abs(out @ radial) < 1e-9
            assert abs(out @ n) < 1e-9
            axis = np.cross(radial, n)
            if np.linalg.norm(axis) > 1e-6:
                axis /= np.linalg.norm(axis)
                assert_allclose(out, (f @ axis) * axis, atol=1e-9)


def test_priority_project_degenerate_cases():
    f = np.array([1.0, 2.0, 3.0])
    with pytest.raises(DegenerateRadius):
        priority_project(f, np.zeros(3), np.zeros(3), "p2l")
    # Constraint plane tangent to the priority sphere: no allowed direction.
    out = priority_project(f, np.zeros(3), np.array([1.0, 0, 0]), "p2P",
                           plane_normal=np.array([1.0, 0, 0]))
    assert_allclose(out, np.zeros(3), atol=0)
    with pytest.raises(ValueError):
        priority_project(f, np.zeros(3), np.ones(3), "p2P")
    with pytest.raises(ValueError):
        priority_project(f, np.zeros(3), np.ones(3), "p2p")


def test_aggregate_wrench_oracle():
    rng = np.random.default_rng(5)
    pos = rng.normal(size=(6, 3))
    forces = rng.normal(size=(6, 3))
    force, torque, centroid = aggregate_wrench(pos, forces)
    assert_allclose(centroid, pos.mean(axis=0), atol=1e-12)
    assert_allclose(force, forces.sum(axis=0), atol=1e-12)
    expect = sum(np.cross(p - centroid, f) for p, f in zip(pos, forces))
    assert_allclose(torque, expect, atol=1e-12)


def test_admittance_step_single_step_oracle():
    rng = np.random.default_rng(6)
    gains = ControllerGains()
    state = BodyState.at_rest(rng.normal(size=3),
                              rotvec_to_matrix(rng.normal(size=3)))
    force, torque = rng.normal(size=(2, 3))
    anchor_p = rng.normal(size=3)
    anchor_R = rotvec_to_matrix(rng.normal(size=3))
    dt = 1e-3
    new = admittance_step(state, force, torque, anchor_p, anchor_R, gains, dt)
    acc = gains.kp_tilde * (anchor_p - state.p_v) - gains.kd_tilde * state.v_v \
        + gains.km_tilde * force
    v_v = state.v_v + acc * dt
    assert_allclose(new.v_v, v_v, atol=1e-12)
    assert_allclose(new.p_v, state.p_v + v_v * dt, atol=1e-12)
    acc_b = gains.kp_track * (new.p_v - state.p) \
        + gains.kd_track * (new.v_v - state.v)
    assert_allclose(new.v, state.v + acc_b * dt, atol=1e-12)
    with pytest.raises(ValueError):
        admittance_step(state, force, torque, anchor_p, anchor_R, gains, 0.0)


def test_admittance_translation_matches_continuous_ode():
    # Zero rotation: the translational chain is linear. Compare the
    # semi-implicit discretization at small dt against an RK45 reference.
    gains = ControllerGains()
    force = np.array([3.0, -1.0, 0.5])
    anchor = np.zeros(3)

    def rhs(_, y):
        p_v, v_v, p, v = y.reshape(4, 3)
        acc_v = gains.kp_tilde * (anchor - p_v) - gains.kd_tilde * v_v \
            + gains.km_tilde * force
        acc = gains.kp_track * (p_v - p) + gains.kd_track * (v_v - v)
        return np.concatenate([v_v, acc_v, v, acc])

    t_end, dt = 0.4, 1e-4
    ref = solve_ivp(rhs, (0.0, t_end), np.zeros(12), rtol=1e-10, atol=1e-12)
    state = BodyState.at_rest(np.zeros(3), np.eye(3))
    for _ in range(int(round(t_end / dt))):
        state = admittance_step(state, force, np.zeros(3), anchor, np.eye(3),
                                gains, dt)
    p_v_ref, _, p_ref, _ = ref.y[:, -1].reshape(4, 3)
    assert_allclose(state.p_v, p_v_ref, atol=5e-4)
    assert_allclose(state.p, p_ref, atol=5e-4)


def test_admittance_constant_force_equilibrium():
    # Steady state: kp_tilde (anchor - p_v) + km_tilde f = 0, body at p_v.
    gains = ControllerGains()
    force = np.array([2.0, 0.0, -1.0])
    anchor = np.array([0.5, 0.5, 0.5])
    state = BodyState.at_rest(anchor, np.eye(3))
    for _ in range(40000):
        state = admittance_step(state, force, np.zeros(3), anchor, np.eye(3),
                                gains, 1e-3)
    expect = anchor + gains.km_tilde / gains.kp_tilde * force
    assert_allclose(state.p_v, expect, atol=1e-6)
    assert_allclose(state.p, expect, atol=1e-6)
    assert np.linalg.norm(state.v) < 1e-8


def test_admittance_rotation_converges_to_anchor():
    gains = ControllerGains()
    anchor_R = rotvec_to_matrix([0.0, 0.0, 0.9])
    state = BodyState.at_rest(np.zeros(3), np.eye(3))
    for _ in range(30000):
        state = admittance_step(state, np.zeros(3), np.zeros(3), np.zeros(3),
                                anchor_R, gains, 1e-3)
    assert_allclose(state.R, anchor_R, atol=1e-6)


def test_admittance_blowup_detection():
    gains = ControllerGains()
    state = BodyState.at_rest(np.zeros(3), np.eye(3))
    with pytest.raises(NumericalBlowup):
        for _ in range(100):
            state = admittance_step(state, np.full(3, 1e12), np.zeros(3),
                                    np.zeros(3), np.eye(3), gains, 1.0)
