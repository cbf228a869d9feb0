import numpy as np
import pytest

from slsmpc.constraints import ConstraintSet
from slsmpc.polytope import (Polytope, PolytopeError, UncertaintyVertexSet, hausdorff_distance, is_subset,
                             max_robust_invariant_set)
from slsmpc.sampling import sample_disturbance, sample_uncertainty
from slsmpc.sls import LtvModel
from slsmpc.tube import (TubeShape, barycentric_weights, build_tube_program, lqr_gain, make_zinv_shape, solve_tube,
                         tube_rollout, tube_variable_count)

from conftest import nominal_mpc

X0 = np.array([-7.0, -2.0])


@pytest.fixture(scope="module")
def unit6(cfg, cons):
    model = cfg.build_model(6)
    return solve_tube(build_tube_program(model, cons, X0, TubeShape.unit(2), cfg.build_weights(6)))


@pytest.fixture(scope="module")
def zinv(cfg):
    return make_zinv_shape(cfg.build_model(1), np.eye(2), np.array([[0.1]]), truncation_tol=0.01)


def test_variable_count_formula(cfg, cons, zinv):
    for T in (6, 10):
        for shape in (TubeShape.unit(2), zinv):
            tp = build_tube_program(cfg.build_model(T), cons, X0, shape, cfg.build_weights(T))
            assert tp.n_variables == tube_variable_count(T, 2, 1, shape.V) == T * 3 + 1 + (T - 1) * shape.V


def test_zinv_shape_counts(zinv):
    assert zinv.V == 20 and zinv.H == 20
    assert zinv.polytope.contains(np.zeros(2))
    loose = make_zinv_shape(LtvModel.lti([[1.0, 1.0], [0.0, 1.0]], [[0.5], [1.0]], 1, sigma_w=0.1),
                            np.eye(2), np.array([[0.1]]), truncation_tol=0.1)
    assert hausdorff_distance(loose.polytope, zinv.polytope) <= 1e-1


def test_shape_needs_interior_origin():
    with pytest.raises(PolytopeError):
        TubeShape(Polytope.box([0.5, 0.5], [1.0, 1.0]))


def test_lqr_gain_matches_riccati_iteration():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    B = np.array([[0.5], [1.0]])
    Q, R = np.eye(2), np.array([[0.1]])
    P = Q
    for _ in range(2000):
        P = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    K_ref = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    assert np.allclose(lqr_gain(A, B, Q, R), K_ref, atol=1e-9)
    with pytest.raises(PolytopeError):
        lqr_gain(np.eye(2) * 2, np.zeros((2, 1)), Q, R)


def test_unit_tube_horizons(cfg, cons, unit6):
    assert unit6.feasible
    assert abs(unit6.u0[0]) <= 2.0 + 1e-9
    tp = build_tube_program(cfg.build_model(8), cons, X0, TubeShape.unit(2), cfg.build_weights(8))
    assert solve_tube(tp).status == "infeasible"


def test_outside_state_space_is_infeasible(cfg, cons):
    tp = build_tube_program(cfg.build_model(4), cons, [10.5, 0.0], TubeShape.unit(2), cfg.build_weights(4))
    assert solve_tube(tp).status == "infeasible"


def test_cross_sections_inside_constraints(cfg, cons, XT, unit6):
    X = cfg.X
    T = unit6.program.T
    for t in range(1, T):
        assert is_subset(unit6.cross_section(t), X, tol=1e-7)
        assert np.all(cfg.U.F @ unit6.vertex_inputs[t - 1].T <= cfg.U.b[:, None] + 1e-7)
    assert is_subset(unit6.cross_section(T), XT, tol=1e-7)


def test_barycentric_weights():
    rng = np.random.default_rng(0)
    V = rng.normal(size=(7, 2))
    lam = rng.dirichlet(np.ones(7))
    w = barycentric_weights(V, lam @ V)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0)
    assert np.allclose(w @ V, lam @ V, atol=1e-6)
    assert np.allclose(barycentric_weights(np.ones((3, 2)), [1.0, 1.0]), 1 / 3)


def test_tube_rollouts_stay_in_tube(cfg, cons, unit6):
    model = cfg.build_model(6)
    A, B = model.A[0], model.B[0]
    rng = np.random.default_rng(1)
    T = 6
    sections = [unit6.cross_section(t) for t in range(1, T + 1)]
    F, b = cons.stacked(T)
    runs = []
    for dA, dB in UncertaintyVertexSet.from_model(model):
        for _ in range(4):
            runs.append(([A + dA] * T, [B + dB] * T, sample_disturbance(2, T, model.sigma_w, rng, vertex=True)))
    for i in range(800):
        s = sample_uncertainty(model, "mixed", rng, structure=("constant", "memoryless")[i % 2])
        runs.append((*s.dynamics(model), s.w))
    assert len(runs) >= 1000
    for As, Bs, w in runs:
        x, u = tube_rollout(unit6, As, Bs, w)
        for t in range(1, T + 1):
            assert sections[t - 1].contains(x[t], tol=1e-7)
        z = np.concatenate([x.ravel(), u.ravel(), np.zeros(model.m)])
        assert np.all(F @ z <= b + 1e-7)


def test_zinv_tube_long_horizon(cfg, cons, zinv):
    tp = build_tube_program(cfg.build_model(10), cons, X0, zinv, cfg.build_weights(10))
    sol = solve_tube(tp)
    assert sol.feasible
    assert tp.n_constraints < tp.n_constraints_raw


def test_nominal_limit_matches_nominal_mpc(cfg):
    T = 5
    model = LtvModel.lti(cfg.model.A, cfg.model.B, T)
    X, U = cfg.X, cfg.U
    XT = max_robust_invariant_set(X, U, model.with_horizon(1)).set
    cons = ConstraintSet(cfg.constraints.F_x, cfg.constraints.b_x, cfg.constraints.F_u, cfg.constraints.b_u,
                         XT.F, XT.b)
    weights = cfg.build_weights(T)
    shape = TubeShape(Polytope.inf_ball(2, 1e-3))
    A, B = model.A[0], model.B[0]
    feasible = 0
    for x0 in ([-7.0, -2.0], [5.0, 3.0], [9.0, 4.0], [-9.0, 9.0], [0.0, 0.0], [3.0, -6.0]):
        ok, _ = nominal_mpc(A, B, weights.Q[0], weights.R[0], weights.QT, X, U, XT, np.array(x0), T)
        sol = solve_tube(build_tube_program(model, cons, x0, shape, weights))
        assert sol.feasible == ok, x0
        feasible += ok
    assert 0 < feasible < 6
