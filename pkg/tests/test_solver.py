import numpy as np
import pytest
import scipy.sparse as sp

from dualtune import solver
from dualtune.builder import Affine, ProgramBuilder
from dualtune.cones import Cone, ConeKind, ConicProgram, DimensionError
from dualtune.model import SolverSettings
from dualtune.models import accept
from dualtune.solver import SolverError, SolverStatus


def test_solve_ridge_projection():
    target = np.array([1.0, -2.0, 0.5])
    builder = ProgramBuilder()
    x = builder.variable('x', 3)
    t = builder.variable('t', 1)
    builder.half_square(x - target, t)
    builder.minimize(t)

    result = solver.solve(builder.build())

    assert result.status == SolverStatus.OPTIMAL
    assert np.allclose(result.z[builder.layout['x']], target, atol=1e-6)
    assert result.objective == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("b,expected", [(3.0, 2.0), (-3.0, -2.0), (0.5, 0.0)])
def test_solve_soft_threshold(b: float, expected: float):
    builder = ProgramBuilder()
    x = builder.variable('x', 1)
    e = builder.variable('e', 1)
    t = builder.variable('t', 1)
    builder.nonnegative(Affine.stack([e - x, e + x]))
    builder.half_square(x - b, t)
    builder.minimize(t + e)

    result = solver.solve(builder.build())

    assert result.status == SolverStatus.OPTIMAL
    assert result.z[builder.layout['x']][0] == pytest.approx(expected, abs=1e-6)


def test_solve_linear_objective_over_unit_ball():
    builder = ProgramBuilder()
    x = builder.variable('x', 2)
    builder.second_order(Affine.constant(1.0), x)
    builder.minimize(x.dot([3.0, 4.0]))

    result = solver.solve(builder.build())

    assert result.status == SolverStatus.OPTIMAL
    assert result.objective == pytest.approx(-5.0, abs=1e-6)
    assert np.allclose(result.z, [-0.6, -0.8], atol=1e-6)


def test_solution_satisfies_kkt_residuals():
    builder = ProgramBuilder()
    x = builder.variable('x', 2)
    builder.nonnegative(x - 1.0)
    builder.zero(x.sum() - 3.0)
    builder.minimize(x.dot([1.0, 2.0]))
    program = builder.build()

    result = solver.solve(program)
    residuals = solver.kkt_residuals(program, result)

    assert result.status == SolverStatus.OPTIMAL
    assert np.allclose(result.z, [2.0, 1.0], atol=1e-6)
    assert residuals.within(SolverSettings(), 10.0)


def test_detects_primal_infeasibility():
    builder = ProgramBuilder()
    x = builder.variable('x', 1)
    builder.nonnegative(Affine.stack([x - 1.0, -1.0 - x]))
    builder.minimize(x)

    result = solver.solve(builder.build())

    assert result.status == SolverStatus.PRIMAL_INFEASIBLE


def test_detects_dual_infeasibility():
    builder = ProgramBuilder()
    x = builder.variable('x', 1)
    builder.nonnegative(-x)
    builder.minimize(x)

    result = solver.solve(builder.build())

    assert result.status == SolverStatus.DUAL_INFEASIBLE


def test_iteration_budget_is_reported():
    builder = ProgramBuilder()
    x = builder.variable('x', 2)
    builder.second_order(Affine.constant(1.0), x)
    builder.minimize(x.dot([3.0, 4.0]))

    result = solver.solve(builder.build(), SolverSettings(max_iter=1))

    assert result.status in (SolverStatus.MAX_ITER_REACHED, SolverStatus.NUMERICAL_ERROR)
    assert result.iterations <= 1


def test_invalid_program_raises():
    program = ConicProgram(n=2,
                           c=np.zeros(2),
                           A=sp.csc_matrix((3, 2)),
                           b=np.zeros(3),
                           cones=(Cone(ConeKind.NONNEGATIVE, 2),))

    with pytest.raises(DimensionError):
        solver.solve(program)


def test_solver_error_carries_solution():
    builder = ProgramBuilder()
    x = builder.variable('x', 1)
    builder.nonnegative(Affine.stack([x - 1.0, -1.0 - x]))
    builder.minimize(x)
    result = solver.solve(builder.build())

    error = solver.SolverError('infeasible', result)

    assert error.solution is result
    assert str(error) == 'infeasible'


RANDOM_CONES = (Cone(ConeKind.ZERO, 2), Cone(ConeKind.NONNEGATIVE, 4), Cone(ConeKind.SECOND_ORDER, 3),
                Cone(ConeKind.SECOND_ORDER, 4))


def complementary_pair(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Slack s in K and multiplier y in K* with s'y = 0, strictly complementary on every cone."""

    s_parts, y_parts = [], []
    for cone in RANDOM_CONES:
        match cone.kind:
            case ConeKind.ZERO:
                s_parts.append(np.zeros(cone.dim))
                y_parts.append(rng.standard_normal(cone.dim))
            case ConeKind.NONNEGATIVE:
                active = rng.random(cone.dim) < 0.5
                s_parts.append(np.where(active, 0.0, rng.uniform(0.5, 2.0, cone.dim)))
                y_parts.append(np.where(active, rng.uniform(0.5, 2.0, cone.dim), 0.0))
            case ConeKind.SECOND_ORDER:
                u = rng.standard_normal(cone.dim - 1)
                norm = np.linalg.norm(u)
                s_parts.append(rng.uniform(0.5, 2.0) * np.concatenate(([norm], u)))
                y_parts.append(rng.uniform(0.5, 2.0) * np.concatenate(([norm], -u)))
    return np.concatenate(s_parts), np.concatenate(y_parts)


def random_program(seed: int) -> tuple[ConicProgram, float]:
    """Program with a known optimal pair; returns it together with the optimal value."""

    rng = np.random.default_rng(seed)
    m, n = sum(cone.dim for cone in RANDOM_CONES), 5
    A = rng.standard_normal((m, n))
    x_star = rng.standard_normal(n)
    s_star, y_star = complementary_pair(rng)
    c = -A.T @ y_star
    program = ConicProgram(n=n, c=c, A=sp.csc_matrix(A), b=A @ x_star + s_star, cones=RANDOM_CONES)
    return program, float(c @ x_star)


@pytest.mark.parametrize("seed", range(20))
def test_random_program_reaches_known_optimum(seed: int):
    program, expected = random_program(seed)

    result = solver.solve(program)

    assert result.status == SolverStatus.OPTIMAL
    assert result.objective == pytest.approx(expected, abs=1e-6 * (1.0 + abs(expected)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_objective_is_invariant_under_scaling(seed: int):
    program, expected = random_program(seed)
    rng = np.random.default_rng(100 + seed)
    rows = np.concatenate([np.full(cone.dim, rng.uniform(0.1, 10.0)) if cone.kind == ConeKind.SECOND_ORDER else
                           rng.uniform(0.1, 10.0, cone.dim) for cone in RANDOM_CONES])
    cols = rng.uniform(0.1, 10.0, program.n)
    scaled = ConicProgram(n=program.n,
                          c=cols * program.c,
                          A=sp.csc_matrix(sp.diags(rows) @ program.A @ sp.diags(cols)),
                          b=rows * program.b,
                          cones=program.cones)

    original = solver.solve(program)
    result = solver.solve(scaled)

    assert result.status == SolverStatus.OPTIMAL
    assert result.objective == pytest.approx(original.objective, abs=1e-6 * (1.0 + abs(expected)))
    assert result.objective == pytest.approx(expected, abs=1e-6 * (1.0 + abs(expected)))


def test_equilibrate_balances_rows_and_columns():
    A = sp.csc_matrix(np.array([[1000.0, 0.0], [0.0, 0.001], [1.0, 1.0], [2.0, 0.0]]))
    program = ConicProgram(n=2, c=np.zeros(2), A=A, b=np.zeros(4),
                           cones=(Cone(ConeKind.NONNEGATIVE, 2), Cone(ConeKind.SECOND_ORDER, 2)))

    scaled, rows, cols = solver.equilibrate(program)

    magnitudes = abs(scaled).toarray()
    assert rows[2] == rows[3]
    assert np.allclose(scaled.toarray(), np.diag(rows) @ A.toarray() @ np.diag(cols))
    assert np.all(magnitudes.max(axis=0) >= 0.25) and np.all(magnitudes.max(axis=0) <= 4.0)
    assert np.all(magnitudes[:2].max(axis=1) >= 0.25) and np.all(magnitudes[:2].max(axis=1) <= 4.0)


def unit_ball_program() -> ConicProgram:
    builder = ProgramBuilder()
    x = builder.variable('x', 2)
    builder.second_order(Affine.constant(1.0), x)
    builder.minimize(x.dot([3.0, 4.0]))
    return builder.build()


def test_singular_factorization_is_retried(monkeypatch):
    original = solver.spla.splu
    calls = []

    def flaky_splu(matrix):
        calls.append(matrix.shape)
        if len(calls) == 1:
            raise RuntimeError('Factor is exactly singular')
        return original(matrix)

    monkeypatch.setattr(solver.spla, 'splu', flaky_splu)
    result = solver.solve(unit_ball_program())

    assert result.status == SolverStatus.OPTIMAL
    assert result.objective == pytest.approx(-5.0, abs=1e-6)


def test_breakdown_reports_numerical_error(monkeypatch):
    original = solver._KktSystem.factor
    calls = []

    def breaking_factor(self, wsquared):
        calls.append(1)
        if len(calls) > 1:
            raise RuntimeError('factor - singular')
        original(self, wsquared)

    monkeypatch.setattr(solver._KktSystem, 'factor', breaking_factor)
    result = solver.solve(unit_ball_program())

    assert result.status == SolverStatus.NUMERICAL_ERROR
    with pytest.raises(SolverError):
        accept(result, SolverSettings(), 'test')


def test_numerical_error_is_retried_with_stronger_regularization(monkeypatch):
    original = solver._KktSystem.factor
    calls = []

    def failing_once(self, wsquared):
        calls.append(1)
        if len(calls) == 2:
            raise RuntimeError('factor - singular')
        original(self, wsquared)

    monkeypatch.setattr(solver._KktSystem, 'factor', failing_once)
    result = solver.solve(unit_ball_program())

    assert result.status == SolverStatus.OPTIMAL
    assert result.objective == pytest.approx(-5.0, abs=1e-6)
    assert len(calls) > 3
