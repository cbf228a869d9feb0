import numpy as np
import pytest

from slsmpc.constraints import ConstraintSet
from slsmpc.experiments import constraint_set, load_config, terminal_set
from slsmpc.operator import BltOperator
from slsmpc.sls import LtvModel, response_from_inputs


def random_model(rng, n, m, T, eps_A=0.0, eps_B=0.0, sigma_w=0.0):
    A = [rng.normal(size=(n, n)) for _ in range(T)]
    B = [rng.normal(size=(n, m)) for _ in range(T)]
    return LtvModel(A, B, eps_A, eps_B, sigma_w)


def random_blt(rng, T, p, q, strictly_causal=False, scale=1.0):
    first = 1 if strictly_causal else 0
    blocks = {(i, k): scale * rng.normal(size=(p, q)) for i in range(T + 1) for k in range(first, i + 1)}
    return BltOperator(blocks, T, p, q)


def random_response(rng, model, scale=1.0):
    """An achievable response built from a random causal ``Phi_u`` (``u_T`` row left free)."""
    Pu = random_blt(rng, model.T, model.m, model.n, scale=scale)
    return response_from_inputs(model, Pu)


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def XT(cfg):
    return terminal_set(cfg)[0]


@pytest.fixture(scope="session")
def cons(cfg) -> ConstraintSet:
    return constraint_set(cfg)


@pytest.fixture(scope="session")
def model6(cfg):
    return cfg.build_model(6)


@pytest.fixture(scope="session")
def model10(cfg):
    return cfg.build_model(10)


def closed_loop_margins(K, model, cons, x0, rng, extra=700):
    """Constraint margins ``b - F[x; u]`` of the finite-horizon loop under sampled uncertainty.

    Covers every memoryless vertex pair (held constant, with vertex
    disturbances) and then ``extra`` draws spread over the constant,
    memoryless and full-LTV structures. Returns one minimum margin per run.
    """
    from slsmpc.polytope import UncertaintyVertexSet
    from slsmpc.sampling import sample_disturbance, sample_uncertainty
    from slsmpc.sls import simulate_closed_loop

    T, n = model.T, model.n
    F, b = cons.stacked(T)
    A, B = model.A[0], model.B[0]

    def margin(x, u):
        return float(np.min(b - F @ np.concatenate([x.ravel(), u.ravel()])))

    out = []
    for dA, dB in UncertaintyVertexSet.from_model(model):
        for _ in range(4):
            w = sample_disturbance(n, T, model.sigma_w, rng, vertex=True)
            out.append(margin(*simulate_closed_loop(K, [A + dA] * T, [B + dB] * T, x0, w)))
    structures = ("constant", "memoryless", "full_ltv")
    for i in range(extra):
        s = sample_uncertainty(model, "mixed", rng, structure=structures[i % 3])
        As, Bs = s.dynamics(model)
        out.append(margin(*simulate_closed_loop(K, As, Bs, x0, s.w, s.op_A, s.op_B)))
    return np.array(out)


def nominal_mpc(A, B, Q, R, QT, X, U, XT, x0, T):
    """Direct state/input QP for the nominal problem; ``(feasible, optimal cost)``."""
    import cvxpy as cp

    n, m = B.shape
    x = cp.Variable((T + 1, n))
    u = cp.Variable((T, m))
    cons = [x[0] == x0]
    cost = 0
    for t in range(T):
        cons += [x[t + 1] == A @ x[t] + B @ u[t], X.F @ x[t] <= X.b, U.F @ u[t] <= U.b]
        cost += cp.quad_form(x[t], Q) + cp.quad_form(u[t], R)
    cons += [XT.F @ x[T] <= XT.b]
    cost += cp.quad_form(x[T], QT)
    prob = cp.Problem(cp.Minimize(cost), cons)
    prob.solve(solver=cp.CLARABEL)
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return False, float("nan")
    assert prob.status == cp.OPTIMAL, prob.status
    return True, float(prob.value)


ACCEPTANCE = {}


def report(criterion, ok, detail, seconds):
    """Record and print one acceptance line."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail} ({seconds:.1f} s)"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
