import numpy as np
import pytest
import scipy.sparse as sp

from dualtune.cones import (Cone, ConeKind, ConicProgram, DimensionError, cone_distance, dump, product_distance,
                            project_onto_cone, project_onto_dual_cone, validate)


def program(rows: int, cones: tuple[Cone, ...], n: int = 2) -> ConicProgram:
    return ConicProgram(n=n, c=np.zeros(n), A=sp.csc_matrix(np.ones((rows, n))), b=np.zeros(rows), cones=cones)


@pytest.mark.parametrize("point,expected", [([3.0, 4.0, 0.0], [3.5, 3.5, 0.0]), ([-5.0, 3.0, 4.0], [0.0, 0.0, 0.0]),
                                            ([0.0, 3.0, 4.0], [2.5, 1.5, 2.0]), ([5.0, 3.0, 4.0], [5.0, 3.0, 4.0])])
def test_project_onto_second_order_cone(point: list, expected: list):
    result = project_onto_cone(np.array(point), Cone(ConeKind.SECOND_ORDER, 3))

    assert np.allclose(result, expected)


def test_project_onto_nonnegative_and_zero_cone():
    point = np.array([-1.0, 2.0, -3.0])

    nonnegative = project_onto_cone(point, Cone(ConeKind.NONNEGATIVE, 3))
    zero = project_onto_cone(point, Cone(ConeKind.ZERO, 3))
    dual_zero = project_onto_dual_cone(point, Cone(ConeKind.ZERO, 3))

    assert np.allclose(nonnegative, [0.0, 2.0, 0.0])
    assert np.allclose(zero, 0.0)
    assert np.allclose(dual_zero, point)


CONES = [Cone(ConeKind.ZERO, 4), Cone(ConeKind.NONNEGATIVE, 4), Cone(ConeKind.SECOND_ORDER, 4)]


def polar_projection(s: np.ndarray, cone: Cone) -> np.ndarray:
    return -project_onto_dual_cone(-s, cone)


@pytest.mark.parametrize("cone", CONES)
def test_projection_is_idempotent(cone: Cone):
    rng = np.random.default_rng(3)

    for point in 3.0 * rng.standard_normal((10_000, cone.dim)):
        once = project_onto_cone(point, cone)
        twice = project_onto_cone(once, cone)

        assert np.allclose(once, twice, rtol=0.0, atol=1e-12)
        assert cone_distance(once, cone) < 1e-12


@pytest.mark.parametrize("cone", CONES)
def test_moreau_decomposition(cone: Cone):
    rng = np.random.default_rng(5)

    for point in 3.0 * rng.standard_normal((10_000, cone.dim)):
        primal = project_onto_cone(point, cone)
        polar = polar_projection(point, cone)

        assert np.linalg.norm(point - (primal + polar)) <= 1e-10
        assert abs(primal @ polar) <= 1e-10


@pytest.mark.parametrize("cone", CONES)
def test_projection_is_closest_point(cone: Cone):
    rng = np.random.default_rng(11)
    points = 3.0 * rng.standard_normal((10_000, cone.dim))
    members = 3.0 * rng.standard_normal((10_000, cone.dim))

    for point, other in zip(points, members):
        projected = project_onto_cone(point, cone)
        member = project_onto_cone(other, cone)

        assert (point - projected) @ (member - projected) <= 1e-10

def test_project_rejects_wrong_length():
    with pytest.raises(DimensionError):
        project_onto_cone(np.ones(2), Cone(ConeKind.NONNEGATIVE, 3))


def test_product_distance_takes_worst_cone():
    cones = (Cone(ConeKind.NONNEGATIVE, 2), Cone(ConeKind.SECOND_ORDER, 3))
    point = np.array([-0.5, 1.0, 0.0, 3.0, 4.0])

    primal = product_distance(point, cones)
    dual = product_distance(np.array([0.0, 0.0, 1.0, 0.0, 0.0]), (Cone(ConeKind.ZERO, 2),) + cones[1:], dual=True)

    assert primal == pytest.approx(np.linalg.norm(np.array([0.0, 3.0, 4.0]) - [2.5, 1.5, 2.0]))
    assert dual == 0.0


def test_validate_accepts_consistent_program():
    result = validate(program(4, (Cone(ConeKind.ZERO, 1), Cone(ConeKind.SECOND_ORDER, 3))))

    assert result == []


@pytest.mark.parametrize("rows,cones", [(3, (Cone(ConeKind.NONNEGATIVE, 2),)), (1, (Cone(ConeKind.SECOND_ORDER, 1),)),
                                        (2, (Cone(ConeKind.NONNEGATIVE, 2), Cone(ConeKind.ZERO, 0)))])
def test_validate_reports_violations(rows: int, cones: tuple):
    result = validate(program(rows, cones))

    assert result


def test_degree_counts_second_order_cones_once():
    assert Cone(ConeKind.SECOND_ORDER, 7).degree() == 1
    assert Cone(ConeKind.NONNEGATIVE, 7).degree() == 7
    assert Cone(ConeKind.ZERO, 7).degree() == 0


def test_dump_is_stable():
    A = sp.csc_matrix(np.array([[1.0, 0.0], [0.0, -2.0]]))
    prog = ConicProgram(n=2, c=np.array([1.0, 0.0]), A=A, b=np.array([0.5, 0.0]),
                        cones=(Cone(ConeKind.NONNEGATIVE, 2),))

    result = dump(prog)

    assert result == dump(prog)
    assert result.splitlines()[0] == 'program n=2 m=2'
    assert 'A 0 0 1' in result
    assert 'A 1 1 -2' in result
    assert 'cone nonnegative 2' in result
