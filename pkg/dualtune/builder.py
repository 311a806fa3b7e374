"""Small modeling layer lowering affine expressions and cone memberships to a ConicProgram."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from dualtune.cones import Cone, ConeKind, ConicProgram, DimensionError


class Affine:
    """Vector-valued affine function of the decision vector, M z + k, stored as triplets."""

    __array_ufunc__ = None

    def __init__(self, dim: int, rows=None, cols=None, vals=None, const=None):
        self.dim = dim
        self.rows = np.asarray(rows if rows is not None else [], dtype=np.int64)
        self.cols = np.asarray(cols if cols is not None else [], dtype=np.int64)
        self.vals = np.asarray(vals if vals is not None else [], dtype=float)
        self.const = np.zeros(dim) if const is None else np.asarray(const, dtype=float).reshape(dim)

    @staticmethod
    def variable(start: int, size: int) -> Affine:
        index = np.arange(size)
        return Affine(size, index, start + index, np.ones(size))

    @staticmethod
    def constant(value) -> Affine:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return Affine(value.size, const=value)

    @staticmethod
    def stack(parts: Sequence[Affine | float | np.ndarray]) -> Affine:
        """Vertical concatenation; plain numbers and arrays enter as constants."""

        parts = [p if isinstance(p, Affine) else Affine.constant(p) for p in parts]
        if not parts:
            return Affine(0)
        offsets = np.cumsum([0] + [p.dim for p in parts])
        return Affine(int(offsets[-1]),
                      np.concatenate([p.rows + off for p, off in zip(parts, offsets)]),
                      np.concatenate([p.cols for p in parts]),
                      np.concatenate([p.vals for p in parts]),
                      np.concatenate([p.const for p in parts]))

    def __len__(self) -> int:
        return self.dim

    def __neg__(self) -> Affine:
        return Affine(self.dim, self.rows, self.cols, -self.vals, -self.const)

    def __add__(self, other) -> Affine:
        if not isinstance(other, Affine):
            other = np.broadcast_to(np.asarray(other, dtype=float), (self.dim,))
            return Affine(self.dim, self.rows, self.cols, self.vals, self.const + other)

        if other.dim != self.dim:
            if self.dim == 1 or other.dim == 1:
                wide, narrow = (self, other) if self.dim > other.dim else (other, self)
                return wide + narrow.broadcast(wide.dim)
            raise DimensionError(f'affine add: dimensions {self.dim} and {other.dim} differ')

        return Affine(self.dim, np.concatenate((self.rows, other.rows)), np.concatenate((self.cols, other.cols)),
                      np.concatenate((self.vals, other.vals)), self.const + other.const)

    __radd__ = __add__

    def __sub__(self, other) -> Affine:
        return self + (-other)

    def __rsub__(self, other) -> Affine:
        return (-self) + other

    def __mul__(self, scale: float) -> Affine:
        scale = float(scale)
        return Affine(self.dim, self.rows, self.cols, scale * self.vals, scale * self.const)

    __rmul__ = __mul__

    def broadcast(self, dim: int) -> Affine:
        """Repeats a scalar expression dim times."""

        if self.dim != 1:
            raise DimensionError(f'affine broadcast: expression has dimension {self.dim}')
        return Affine.stack([self] * dim)

    def scale_rows(self, weights) -> Affine:
        weights = np.broadcast_to(np.asarray(weights, dtype=float), (self.dim,))
        return Affine(self.dim, self.rows, self.cols, self.vals * weights[self.rows], self.const * weights)

    def __getitem__(self, index) -> Affine:
        picked = np.arange(self.dim)[index]
        picked = np.atleast_1d(picked)
        position = np.full(self.dim, -1)
        position[picked] = np.arange(picked.size)
        if len(np.unique(picked)) != picked.size:
            raise DimensionError('affine index: repeated rows')
        keep = position[self.rows] >= 0
        return Affine(picked.size, position[self.rows[keep]], self.cols[keep], self.vals[keep], self.const[picked])

    def scatter(self, index, dim: int) -> Affine:
        """Places the rows of self at positions index of a zero expression of length dim."""

        index = np.asarray(index, dtype=np.int64)
        if index.size != self.dim:
            raise DimensionError(f'affine scatter: {index.size} positions for {self.dim} rows')
        const = np.zeros(dim)
        const[index] = self.const
        return Affine(dim, index[self.rows], self.cols, self.vals, const)

    def sum(self) -> Affine:
        return Affine(1, np.zeros_like(self.rows), self.cols, self.vals, [self.const.sum()])

    def dot(self, weights) -> Affine:
        return self.scale_rows(weights).sum()

    def matmul(self, matrix) -> Affine:
        """Left multiplication matrix @ self by a dense or sparse matrix."""

        matrix = sp.csr_matrix(matrix)
        if matrix.shape[1] != self.dim:
            raise DimensionError(f'affine matmul: matrix has {matrix.shape[1]} columns, expression {self.dim} rows')

        width = int(self.cols.max()) + 1 if self.cols.size else 0
        linear = (matrix @ sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.dim, width))).tocoo()
        return Affine(matrix.shape[0], linear.row, linear.col, linear.data, matrix @ self.const)

    def value(self, z: np.ndarray) -> np.ndarray:
        """Evaluates the expression at a decision vector."""

        out = self.const.copy()
        np.add.at(out, self.rows, self.vals * z[self.cols])
        return out


@dataclass
class Layout:
    """Maps block names to the slots they occupy in the decision vector."""

    slots: dict[str, slice] = field(default_factory=dict)

    def extract(self, z: np.ndarray) -> dict[str, np.ndarray]:
        return {name: np.array(z[slot]) for name, slot in self.slots.items()}

    def __getitem__(self, name: str) -> slice:
        return self.slots[name]

    def __contains__(self, name: str) -> bool:
        return name in self.slots


class ProgramBuilder:
    """Collects variables, a linear objective and cone memberships.

    A membership 'expr in K' lowers to the standard-form rows A = -M, b = k, so that the
    slack s = b - A z equals the expression value.
    """

    def __init__(self):
        self.__n = 0
        self.__m = 0
        self.__layout = Layout()
        self.__cost: list[Affine] = []
        self.__blocks: list[tuple[Cone, Affine]] = []

    @property
    def layout(self) -> Layout:
        return self.__layout

    def variable(self, name: str, size: int) -> Affine:
        """Allocates a named block of decision variables.

        Args:
            name (str): unique block name
            size (int): number of coordinates

        Raises:
            DimensionError: the name is already taken

        Returns:
            Affine: identity expression over the new block
        """

        if name in self.__layout:
            raise DimensionError(f'variable ({name}) - slot collision')

        self.__layout.slots[name] = slice(self.__n, self.__n + size)
        expr = Affine.variable(self.__n, size)
        self.__n += size
        return expr

    def unique(self, prefix: str) -> str:
        """First free block name of the form prefix, prefix1, prefix2, ..."""

        name, index = prefix, 0
        while name in self.__layout:
            index += 1
            name = f'{prefix}{index}'
        return name

    @property
    def n(self) -> int:
        return self.__n

    def minimize(self, expr: Affine):
        """Adds a scalar affine term to the objective."""

        if expr.dim != 1:
            raise DimensionError(f'minimize: objective term has dimension {expr.dim}')
        self.__cost.append(expr)

    def add(self, kind: ConeKind, expr: Affine) -> slice:
        """Appends the membership expr in K and returns the rows it occupies."""

        rows = slice(self.__m, self.__m + expr.dim)
        if expr.dim == 0:
            return rows
        self.__blocks.append((Cone(kind, expr.dim), expr))
        self.__m += expr.dim
        return rows

    def zero(self, expr: Affine) -> slice:
        return self.add(ConeKind.ZERO, expr)

    def nonnegative(self, expr: Affine) -> slice:
        return self.add(ConeKind.NONNEGATIVE, expr)

    def second_order(self, t: Affine, x: Affine) -> slice:
        """||x|| <= t"""

        if x.dim == 0:
            return self.nonnegative(t)
        return self.add(ConeKind.SECOND_ORDER, Affine.stack([t, x]))

    def half_square(self, x: Affine, u: Affine) -> slice:
        """1/2 ||x||^2 <= u, as ||(x, u - 1/2)|| <= u + 1/2."""

        return self.second_order(u + 0.5, Affine.stack([x, u - 0.5]))

    def rotated(self, x: Affine, u: Affine, v: Affine) -> slice:
        """||x||^2 <= 2 u v with u, v >= 0, as ||(sqrt(2) x, u - v)|| <= u + v."""

        return self.second_order(u + v, Affine.stack([float(np.sqrt(2.0)) * x, u - v]))

    def build(self) -> ConicProgram:
        n = self.__n

        c = np.zeros(n)
        offset = 0.0
        for term in self.__cost:
            np.add.at(c, term.cols, term.vals)
            offset += float(term.const[0])

        row_offset = 0
        rows, cols, vals, rhs = [], [], [], []
        for cone, expr in self.__blocks:
            rows.append(expr.rows + row_offset)
            cols.append(expr.cols)
            vals.append(-expr.vals)
            rhs.append(expr.const)
            row_offset += cone.dim

        A = sp.csc_matrix((np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [],
                                                                np.concatenate(cols) if cols else [])),
                          shape=(row_offset, n))
        A.sum_duplicates()
        b = np.concatenate(rhs) if rhs else np.zeros(0)

        logging.debug('build (n=%d, m=%d) - %d cone blocks, %d nonzeros', n, row_offset, len(self.__blocks), A.nnz)
        return ConicProgram(n=n, c=c, A=A, b=b, cones=tuple(cone for cone, _ in self.__blocks), obj_offset=offset)
