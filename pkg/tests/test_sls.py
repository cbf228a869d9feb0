import numpy as np
import pytest
import scipy.sparse as sp

from slsmpc.operator import BltOperator
from slsmpc.sls import (CostWeights, LtvModel, ResponseLayout, SystemResponse, affine_residual, assemble_cost,
                        build_affine_constraint, nominal_cost, perturbed_response, realize_controller,
                        response_from_inputs, simulate_closed_loop, validate_robust_response, woodbury_response)
from slsmpc.solver import ConicProgram, solve

from conftest import random_blt, random_model, random_response


def _vector(resp: SystemResponse, layout: ResponseLayout) -> np.ndarray:
    phi = np.zeros(layout.size)
    S = resp.stacked()
    for r in range(layout.rows):
        for c in range(layout.cols):
            phi[layout.index(r, c)] = S[r, c]
    return phi


def _rollout_columns(K, model):
    """Drive the nominal loop with each unit disturbance; return the stacked response."""
    T, n = model.T, model.n
    cols = []
    for j in range((T + 1) * n):
        d = np.zeros((T + 1) * n)
        d[j] = 1.0
        x, u = simulate_closed_loop(K, model.A, model.B, d[:n], d[n:].reshape(T, n))
        cols.append(np.concatenate([x.ravel(), u.ravel()]))
    return np.array(cols).T


def test_lti_model_validation():
    with pytest.raises(ValueError):
        LtvModel.lti(np.eye(2), np.ones((2, 1)), 3, eps_A=-0.1)
    with pytest.raises(ValueError):
        LtvModel([np.eye(2), np.eye(3)], [np.ones((2, 1))] * 2)
    M = LtvModel.lti(np.eye(2), np.ones((2, 1)), 3, eps_A=0.1, eps_B=0.2)
    assert (M.T, M.n, M.m) == (3, 2, 1)
    assert M.eps == pytest.approx(0.3)


def test_cost_weights_validation():
    with pytest.raises(ValueError):
        CostWeights.lti(np.eye(2), np.zeros((1, 1)), 3)
    with pytest.raises(ValueError):
        CostWeights.lti(-np.eye(2), np.eye(1), 3)


def test_affine_constraint_diagonal_blocks():
    rng = np.random.default_rng(0)
    model = random_model(rng, 2, 1, 4)
    aff = build_affine_constraint(model, fix_terminal_input=False)
    resp = random_response(rng, model)
    phi = _vector(resp, aff.layout)
    assert aff.residual(phi) <= 1e-10
    # any solution of the equalities has identity diagonal blocks
    sol = sp.linalg.lsqr(aff.E, aff.f, atol=1e-14, btol=1e-14)[0]
    Px, _ = aff.layout.unpack(sol)
    for t in range(model.T + 1):
        assert np.allclose(Px[2 * t:2 * t + 2, 2 * t:2 * t + 2], np.eye(2), atol=1e-9)


def test_affine_scalar_hand_expansion():
    a, b = 1.3, -0.7
    model = LtvModel([np.array([[a]])], [np.array([[b]])])
    aff = build_affine_constraint(model, fix_terminal_input=False)
    L = aff.layout
    for pu00 in (0.0, 0.5, -2.0):
        Px = np.array([[1.0, 0.0], [a + b * pu00, 1.0]])
        Pu = np.array([[pu00, 0.0], [0.3, -0.1]])
        resp = SystemResponse.from_dense(Px, Pu, 1, 1, 1)
        assert aff.residual(_vector(resp, L)) <= 1e-14
        bad = SystemResponse.from_dense(Px + np.array([[0, 0], [0.1, 0]]), Pu, 1, 1, 1)
        assert aff.residual(_vector(bad, L)) == pytest.approx(0.1)


def test_realize_zero_inputs():
    rng = np.random.default_rng(1)
    model = random_model(rng, 2, 1, 3)
    resp = response_from_inputs(model, BltOperator.zeros(3, 1, 2))
    assert realize_controller(resp).is_zero()


def test_realized_controller_reproduces_response():
    rng = np.random.default_rng(2)
    for _ in range(10):
        n, m, T = rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 7)
        model = random_model(rng, n, m, T)
        resp = random_response(rng, model)
        assert affine_residual(model, resp) <= 1e-9
        K = realize_controller(resp)
        assert np.max(np.abs(_rollout_columns(K, model) - resp.stacked())) <= 1e-9
        x0 = rng.normal(size=n)
        _, u = simulate_closed_loop(K, model.A, model.B, x0, np.zeros((T, n)))
        assert np.allclose(u[0], resp.first_action_gain() @ x0, atol=1e-12)


def test_static_plant_zero_gain_holds_state():
    T, n = 5, 2
    model = LtvModel.lti(np.eye(n), np.array([[0.3], [0.9]]), T)
    K = BltOperator.zeros(T, 1, n)
    x, _ = simulate_closed_loop(K, model.A, model.B, [1.5, -2.0], np.zeros((T, n)))
    assert np.all(x == np.array([1.5, -2.0]))


def _random_deltas(rng, T, n, m, eps_A, eps_B):
    def scaled(p, q, eps):
        D = random_blt(rng, T, p, q)
        M = D.to_dense()
        M *= eps / max(np.max(np.abs(M).sum(axis=1)), 1e-12)
        return BltOperator.from_dense(M, T, p, q)
    return scaled(n, n, eps_A), scaled(n, m, eps_B)


def test_perturbed_rollout_three_way():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, m, T = rng.integers(1, 4), rng.integers(1, 3), rng.integers(1, 7)
        model = random_model(rng, n, m, T)
        resp = random_response(rng, model, scale=0.5)
        dA, dB = _random_deltas(rng, T, n, m, 0.3, 0.3)
        w = rng.normal(size=(T + 1) * n)
        K = realize_controller(resp)
        x, u = simulate_closed_loop(K, model.A, model.B, w[:n], w[n:].reshape(T, n), dA, dB)
        sim = np.concatenate([x.ravel(), u.ravel()])
        a = perturbed_response(resp, dA, dB, w)
        b = woodbury_response(resp, dA, dB, w)
        scale = 1.0 + np.max(np.abs(sim))
        assert np.max(np.abs(a - sim)) <= 1e-8 * scale
        assert np.max(np.abs(b - sim)) <= 1e-8 * scale
        assert validate_robust_response(resp, dA, dB, w) <= 1e-9 * scale


def test_zero_uncertainty_matches_nominal():
    rng = np.random.default_rng(4)
    model = random_model(rng, 2, 1, 4)
    resp = random_response(rng, model)
    Z = (BltOperator.zeros(4, 2, 2), BltOperator.zeros(4, 2, 1))
    w = rng.normal(size=10)
    assert validate_robust_response(resp, *Z, w) == 0.0
    assert np.allclose(perturbed_response(resp, *Z, w), resp.stacked() @ w, atol=1e-14)


def test_cost_matches_rollout():
    rng = np.random.default_rng(5)
    model = random_model(rng, 2, 1, 5)
    weights = CostWeights.lti(np.diag([1.0, 2.0]), np.array([[0.3]]), 5, QT=3 * np.eye(2))
    resp = random_response(rng, model)
    layout = ResponseLayout(5, 2, 1)
    x0 = rng.normal(size=2)
    cost = assemble_cost(weights, x0, layout)
    K = realize_controller(resp)
    x, u = simulate_closed_loop(K, model.A, model.B, x0, np.zeros((5, 2)))
    phi = _vector(resp, layout)
    assert cost.value(phi) == pytest.approx(nominal_cost(weights, x, u), rel=1e-9, abs=1e-12)
    assert 0.5 * phi @ (cost.P @ phi) == pytest.approx(cost.value(phi), rel=1e-9)
    assert assemble_cost(weights, np.zeros(2), layout).value(phi) == 0.0


def _riccati_cost(A, B, Q, R, QT, T, x0):
    P = QT
    for _ in range(T):
        G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ A - A.T @ P @ B @ G
    return float(x0 @ P @ x0)


def test_unconstrained_optimum_matches_riccati(cfg):
    T = 6
    model = cfg.build_model(T)
    weights = cfg.build_weights(T)
    aff = build_affine_constraint(model)
    for x0 in ([-7.0, -2.0], [3.0, 1.0], [0.5, -4.0]):
        cost = assemble_cost(weights, x0, aff.layout)
        prog = ConicProgram(aff.layout.size, P=cost.P, C=aff.E, d=aff.f)
        res = solve(prog)
        assert res.optimal
        ref = _riccati_cost(model.A[0], model.B[0], weights.Q[0], weights.R[0], weights.QT, T, np.array(x0))
        assert res.objective == pytest.approx(ref, rel=1e-6)


def test_heavy_input_weight_suppresses_inputs(cfg):
    T = 4
    model = cfg.build_model(T)
    aff = build_affine_constraint(model)
    weights = CostWeights.lti(np.eye(2), np.array([[1e8]]), T)
    x0 = np.array([1.0, -1.0])
    cost = assemble_cost(weights, x0, aff.layout)
    res = solve(ConicProgram(aff.layout.size, P=cost.P, C=aff.E, d=aff.f))
    assert res.optimal
    resp = SystemResponse.from_vector(res.x, aff.layout)
    assert np.max(np.abs(resp.Phi_u.to_dense()[:, :2] @ x0)) < 1e-5
