"""Standard-form conic programs and cone geometry.

Every program handled by the package has the shape

    minimize    c'z + obj_offset
    subject to  A z + s = b,   s in K = K_1 x ... x K_q

where each K_i is a zero cone, a nonnegative orthant or a second-order cone stored as
(t, x) with t first.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised when vector, cone or slot dimensions do not fit together."""


class ConeKind(Enum):
    """Enumeration of the supported cone families"""

    ZERO = 'zero'
    NONNEGATIVE = 'nonnegative'
    SECOND_ORDER = 'second_order'


@dataclass(frozen=True)
class Cone:
    """A single cone of the product K."""

    kind: ConeKind
    dim: int

    @staticmethod
    def zero(dim: int) -> Cone:
        return Cone(ConeKind.ZERO, dim)

    @staticmethod
    def nonnegative(dim: int) -> Cone:
        return Cone(ConeKind.NONNEGATIVE, dim)

    @staticmethod
    def second_order(dim: int) -> Cone:
        return Cone(ConeKind.SECOND_ORDER, dim)

    def __str__(self) -> str:
        return f'{self.kind.value}({self.dim})'

    def degree(self) -> int:
        """Barrier degree of the cone (zero cones carry no barrier)."""

        match self.kind:
            case ConeKind.ZERO:
                return 0
            case ConeKind.NONNEGATIVE:
                return self.dim
            case ConeKind.SECOND_ORDER:
                return 1


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """Immutable standard-form conic program."""

    n: int
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple[Cone, ...]
    obj_offset: float = 0.0

    @property
    def m(self) -> int:
        return len(self.b)

    def slices(self) -> Iterator[tuple[Cone, slice]]:
        """Iterates over the cones together with the row range each one occupies."""

        return cone_slices(self.cones)


def cone_slices(cones: tuple[Cone, ...] | list[Cone]) -> Iterator[tuple[Cone, slice]]:
    offset = 0
    for cone in cones:
        yield cone, slice(offset, offset + cone.dim)
        offset += cone.dim


def validate(program: ConicProgram) -> list[str]:
    """Checks the dimensional invariants of a program.

    Args:
        program (ConicProgram): program to check

    Returns:
        list[str]: one message per violated invariant, empty if the program is consistent
    """

    errors = []
    rows, cols = program.A.shape

    for cone in program.cones:
        if cone.kind == ConeKind.SECOND_ORDER and cone.dim < 2:
            errors.append(f'SOC dim < 2: {cone}')
        elif cone.dim < 1:
            errors.append(f'cone dim < 1: {cone}')

    total = sum(cone.dim for cone in program.cones)
    if total != len(program.b) or total != rows:
        errors.append(f'cone/row mismatch: cones sum to {total}, rows(A) = {rows}, |b| = {len(program.b)}')
    if rows != len(program.b):
        errors.append(f'rhs/row mismatch: rows(A) = {rows}, |b| = {len(program.b)}')
    if len(program.c) != program.n or cols != program.n:
        errors.append(f'cost/column mismatch: n = {program.n}, |c| = {len(program.c)}, cols(A) = {cols}')

    return errors


def project_onto_cone(s: np.ndarray, cone: Cone) -> np.ndarray:
    """Euclidean projection of s onto the given cone.

    Args:
        s (np.ndarray): point to project, length cone.dim
        cone (Cone): target cone

    Raises:
        DimensionError: length of s differs from the cone dimension

    Returns:
        np.ndarray: closest point of the cone
    """

    s = np.asarray(s, dtype=float)
    if s.shape != (cone.dim,):
        raise DimensionError(f'project: vector of length {s.size} for cone {cone}')

    match cone.kind:
        case ConeKind.ZERO:
            return np.zeros(cone.dim)
        case ConeKind.NONNEGATIVE:
            return np.maximum(s, 0.0)
        case ConeKind.SECOND_ORDER:
            t, x = s[0], s[1:]
            norm = np.linalg.norm(x)
            if norm <= t:
                return s.copy()
            if norm <= -t:
                return np.zeros(cone.dim)
            scale = 0.5 * (t + norm)
            return np.concatenate(([scale], (scale / norm) * x))

    raise ValueError(f'unknown cone kind: {cone.kind}')


def project_onto_dual_cone(y: np.ndarray, cone: Cone) -> np.ndarray:
    """Projection onto the dual cone; the zero cone is dual to the whole space."""

    if cone.kind == ConeKind.ZERO:
        y = np.asarray(y, dtype=float)
        if y.shape != (cone.dim,):
            raise DimensionError(f'project: vector of length {y.size} for cone {cone}')
        return y.copy()

    return project_onto_cone(y, cone)


def cone_distance(s: np.ndarray, cone: Cone) -> float:
    """Distance of s to the cone, zero iff s is a member.

    Args:
        s (np.ndarray): point, length cone.dim
        cone (Cone): cone

    Returns:
        float: ||s - project_onto_cone(s, cone)||
    """

    return float(np.linalg.norm(np.asarray(s, dtype=float) - project_onto_cone(s, cone)))


def product_distance(s: np.ndarray, cones: tuple[Cone, ...] | list[Cone], dual: bool = False) -> float:
    """Largest cone-wise distance of a stacked vector to the product cone (or its dual)."""

    worst = 0.0
    for cone, rows in cone_slices(cones):
        part = s[rows]
        projected = project_onto_dual_cone(part, cone) if dual else project_onto_cone(part, cone)
        worst = max(worst, float(np.linalg.norm(part - projected)))
    return worst


def dump(program: ConicProgram) -> str:
    """Plain-text dump of a program, stable enough for golden-file comparisons.

    One line per nonzero of A ('A row col value'), one line per cone, then c, b and the
    objective offset.
    """

    coo = program.A.tocoo()
    order = np.lexsort((coo.row, coo.col))
    lines = [f'program n={program.n} m={program.m}']
    lines += [f'A {coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}' for k in order]
    lines += [f'cone {cone.kind.value} {cone.dim}' for cone in program.cones]
    lines.append('c ' + ' '.join(f'{v:.17g}' for v in program.c))
    lines.append('b ' + ' '.join(f'{v:.17g}' for v in program.b))
    lines.append(f'offset {program.obj_offset:.17g}')
    return '\n'.join(lines) + '\n'
