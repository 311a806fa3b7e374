import numpy as np
import pytest

from dualtune import atoms, solver
from dualtune.atoms import Atom, AtomKind
from dualtune.builder import Affine, ProgramBuilder
from dualtune.cones import DimensionError


@pytest.mark.parametrize("atom,x,expected", [(Atom.l1(3), [1.0, -2.0, 0.5], 3.5),
                                             (Atom.half_squared(2), [3.0, 4.0], 12.5),
                                             (Atom.group_l2(4, [1, 2]), [9.0, 3.0, 4.0, 9.0], 5.0),
                                             (Atom.least_squares(np.eye(2), [1.0, 1.0]), [2.0, 3.0], 2.5)])
def test_evaluate(atom: Atom, x: list, expected: float):
    result = atoms.evaluate(atom, np.array(x))

    assert result == pytest.approx(expected)


@pytest.mark.parametrize("atom,y,expected", [(Atom.l1(2), [0.5, -1.0], 0.0), (Atom.l1(2), [1.5, 0.0], np.inf),
                                             (Atom.group_l2(3, [0, 1]), [0.6, 0.8, 0.0], 0.0),
                                             (Atom.group_l2(3, [0, 1]), [0.6, 0.8, 0.1], np.inf),
                                             (Atom.half_squared(2), [1.0, 2.0], 2.5)])
def test_conjugate(atom: Atom, y: list, expected: float):
    result = atoms.conjugate(atom, np.array(y))

    assert result.value == pytest.approx(expected)


def test_least_squares_conjugate_matches_closed_form():
    A = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    b = np.array([1.0, -1.0, 0.5])
    y = np.array([0.3, -0.2])
    atom = Atom.least_squares(A, b)

    result = atoms.conjugate(atom, y)

    x = np.linalg.solve(A.T @ A, A.T @ b + y)
    expected = y @ x - 0.5 * np.sum((A @ x - b)**2)
    assert result.value == pytest.approx(expected)
    assert np.allclose(A.T @ result.certificate, y)


def test_least_squares_conjugate_outside_range_is_infinite():
    A = np.array([[1.0, 0.0], [2.0, 0.0]])
    atom = Atom.least_squares(A, [1.0, 1.0])

    result = atoms.conjugate(atom, np.array([0.0, 1.0]))

    assert result.value == np.inf


@pytest.mark.parametrize("atom,rho,lam,expected", [(Atom.l1(2), [0.5, -0.5], 0.5, 0.0),
                                                   (Atom.l1(2), [0.6, 0.0], 0.5, np.inf),
                                                   (Atom.half_squared(2), [1.0, 1.0], 0.5, 2.0),
                                                   (Atom.half_squared(2), [0.0, 0.0], 0.0, 0.0),
                                                   (Atom.half_squared(2), [1.0, 0.0], 0.0, np.inf),
                                                   (Atom.group_l2(2, [0]), [0.2, 0.0], 0.3, 0.0)])
def test_perspective_conjugate_value(atom: Atom, rho: list, lam: float, expected: float):
    result = atoms.perspective_conjugate_value(atom, np.array(rho), lam)

    assert result == pytest.approx(expected)


def test_subgradient():
    x = np.array([2.0, 0.0, -1.0])

    l1 = atoms.subgradient(Atom.l1(3), x)
    group = atoms.subgradient(Atom.group_l2(3, [0, 2]), x)

    assert np.allclose(l1, [1.0, 0.0, -1.0])
    assert np.allclose(group, np.array([2.0, 0.0, -1.0]) / np.sqrt(5.0))


def test_group_atoms_require_partition():
    result = atoms.group_atoms(4, [[0, 1], [2, 3]])

    assert [atom.kind for atom in result] == [AtomKind.GROUP_L2_NORM] * 2
    with pytest.raises(DimensionError):
        atoms.group_atoms(4, [[0, 1], [1, 2, 3]])
    with pytest.raises(DimensionError):
        atoms.group_atoms(4, [[0, 1]])


def test_evaluate_rejects_wrong_length():
    with pytest.raises(DimensionError):
        atoms.evaluate(Atom.l1(3), np.ones(2))


@pytest.mark.parametrize("atom", [Atom.l1(3), Atom.half_squared(3), Atom.group_l2(3, [0, 2])])
def test_epigraph_is_tight(atom: Atom):
    point = np.array([1.0, -2.0, 0.5])
    builder = ProgramBuilder()
    x = builder.variable('x', 3)
    r = builder.variable('r', 1)
    builder.zero(x - point)
    atoms.epigraph(atom, builder, x, r)
    builder.minimize(r)

    result = solver.solve(builder.build())

    assert result.z[builder.layout['r']][0] == pytest.approx(atoms.evaluate(atom, point), abs=1e-6)


def test_perspective_conjugate_of_ridge_is_tight():
    rho_value = np.array([1.0, 2.0])
    builder = ProgramBuilder()
    rho = builder.variable('rho', 2)
    lam = builder.variable('lam', 1)
    s = builder.variable('s', 1)
    builder.zero(Affine.stack([rho - rho_value, lam - 0.5]))
    atoms.perspective_conjugate(Atom.half_squared(2), builder, rho, lam, s)
    builder.minimize(s)

    result = solver.solve(builder.build())

    assert result.z[builder.layout['s']][0] == pytest.approx(5.0, abs=1e-6)


def test_epigraph_rows_reject_overlapping_slots():
    builder = ProgramBuilder()
    builder.variable('z', 4)

    with pytest.raises(DimensionError):
        atoms.epigraph_rows(Atom.l1(3), builder, slice(0, 3), 2)


def test_affine_scatter_places_rows():
    expr = Affine.variable(0, 2) + np.array([1.0, 2.0])

    result = expr.scatter([3, 1], 4)

    assert np.allclose(result.value(np.array([10.0, 20.0])), [0.0, 22.0, 0.0, 11.0])
    with pytest.raises(DimensionError):
        expr.scatter([0], 4)


def test_builder_rejects_slot_collision():
    builder = ProgramBuilder()
    builder.variable('x', 2)

    with pytest.raises(DimensionError):
        builder.variable('x', 1)
    assert builder.unique('x') == 'x1'


def sample_atoms() -> list[Atom]:
    rng = np.random.default_rng(21)
    return [Atom.l1(4), Atom.group_l2(4, [1, 2]), Atom.half_squared(4),
            Atom.least_squares(rng.standard_normal((6, 4)), rng.standard_normal(6))]


def dual_sample(atom: Atom, rng: np.random.Generator) -> np.ndarray:
    match atom.kind:
        case AtomKind.L1_NORM:
            return rng.uniform(-1.2, 1.2, atom.dim)
        case AtomKind.GROUP_L2_NORM:
            y = np.zeros(atom.dim)
            direction = rng.standard_normal(atom.group.size)
            y[atom.group] = rng.uniform(0.0, 1.2) * direction / np.linalg.norm(direction)
            return y
    return 2.0 * rng.standard_normal(atom.dim)


@pytest.mark.parametrize("atom", sample_atoms(), ids=lambda atom: atom.kind.value)
def test_fenchel_young_inequality(atom: Atom):
    rng = np.random.default_rng(13)

    for _ in range(10_000):
        x = 2.0 * rng.standard_normal(atom.dim)
        y = dual_sample(atom, rng)

        assert atoms.evaluate(atom, x) + atoms.conjugate(atom, y).value >= x @ y - 1e-10


@pytest.mark.parametrize("atom", sample_atoms(), ids=lambda atom: atom.kind.value)
def test_fenchel_young_equality_at_subgradients(atom: Atom):
    rng = np.random.default_rng(17)

    for _ in range(1000):
        x = 2.0 * rng.standard_normal(atom.dim)
        y = atoms.subgradient(atom, x)

        result = atoms.evaluate(atom, x) + atoms.conjugate(atom, y).value

        assert result == pytest.approx(x @ y, abs=1e-8 * (1.0 + abs(x @ y)))


@pytest.mark.parametrize("atom", sample_atoms(), ids=lambda atom: atom.kind.value)
def test_epigraph_encoding_is_tight_on_random_points(atom: Atom):
    points = 2.0 * np.random.default_rng(19).standard_normal((1000, atom.dim))
    builder = ProgramBuilder()
    radii = []
    for k, point in enumerate(points):
        x = builder.variable(f'x{k}', atom.dim)
        r = builder.variable(f'r{k}', 1)
        builder.zero(x - point)
        atoms.epigraph(atom, builder, x, r)
        builder.minimize(r)
        radii.append(f'r{k}')

    result = solver.solve(builder.build())

    assert result.status == solver.SolverStatus.OPTIMAL
    for name, point in zip(radii, points):
        value = atoms.evaluate(atom, point)
        gap = result.z[builder.layout[name]][0] - value
        assert -1e-5 * (1.0 + abs(value)) <= gap <= 1e-4 * (1.0 + abs(value))


def perspective_batch(atom: Atom, inside: bool) -> tuple[ProgramBuilder, list[tuple[str, float]]]:
    """1000 fixed (rho, lam) blocks, each with lam * P*(rho / lam) <= s_k."""

    rng = np.random.default_rng(23)
    builder = ProgramBuilder()
    expected = []
    for k in range(1000):
        lam_value = rng.uniform(0.5, 2.0)
        rho_value = dual_sample(atom, rng)
        if atom.kind != AtomKind.HALF_SQUARED_L2:
            size = np.abs(rho_value).max() if atom.kind == AtomKind.L1_NORM else np.linalg.norm(rho_value)
            rho_value = rho_value / size
            rho_value *= lam_value * (rng.uniform(0.1, 0.9) if inside else rng.uniform(1.5, 3.0))
        rho = builder.variable(f'rho{k}', atom.dim)
        lam = builder.variable(f'lam{k}', 1)
        s = builder.variable(f's{k}', 1)
        builder.zero(Affine.stack([rho - rho_value, lam - lam_value]))
        atoms.perspective_conjugate(atom, builder, rho, lam, s)
        builder.minimize(s)
        expected.append((f's{k}', atoms.perspective_conjugate_value(atom, rho_value, lam_value)))
    return builder, expected


@pytest.mark.parametrize("atom", sample_atoms()[:3], ids=lambda atom: atom.kind.value)
def test_perspective_encoding_accepts_its_domain(atom: Atom):
    builder, expected = perspective_batch(atom, inside=True)

    result = solver.solve(builder.build())

    assert result.status == solver.SolverStatus.OPTIMAL
    for name, value in expected:
        assert result.z[builder.layout[name]][0] == pytest.approx(value, rel=1e-5, abs=1e-4)


@pytest.mark.parametrize("atom", sample_atoms()[:2], ids=lambda atom: atom.kind.value)
def test_perspective_encoding_rejects_points_outside_its_domain(atom: Atom):
    builder, expected = perspective_batch(atom, inside=False)

    result = solver.solve(builder.build())

    assert all(value == np.inf for _, value in expected)
    assert result.status == solver.SolverStatus.PRIMAL_INFEASIBLE
