"""Atom functions: losses and regularizers with their conjugates and conic encodings."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from dualtune.builder import Affine, ProgramBuilder
from dualtune.cones import DimensionError

DOMAIN_TOL = 1e-6


class AtomKind(Enum):
    """Enumeration of the registered atom kinds"""

    L1_NORM = 'l1'
    GROUP_L2_NORM = 'group_l2'
    HALF_SQUARED_L2 = 'half_squared_l2'
    LEAST_SQUARES = 'least_squares'


@dataclass(frozen=True, eq=False)
class Atom:
    """A convex building block acting on vectors of length dim.

    GROUP_L2_NORM atoms carry the coordinates of their group, LEAST_SQUARES atoms the data
    (A, b) of 1/2 ||A x - b||^2.
    """

    kind: AtomKind
    dim: int
    group: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == AtomKind.GROUP_L2_NORM:
            group = np.asarray(self.group, dtype=np.int64)
            if group.size == 0 or group.min() < 0 or group.max() >= self.dim or np.unique(group).size != group.size:
                raise DimensionError(f'group atom: invalid group {group} for dim {self.dim}')
            object.__setattr__(self, 'group', group)

        if self.kind == AtomKind.LEAST_SQUARES:
            A, b = np.asarray(self.A, dtype=float), np.asarray(self.b, dtype=float)
            if A.ndim != 2 or A.shape[1] != self.dim or b.shape != (A.shape[0],):
                raise DimensionError(f'least squares atom: A {A.shape}, b {b.shape}, dim {self.dim}')
            object.__setattr__(self, 'A', A)
            object.__setattr__(self, 'b', b)

    @staticmethod
    def l1(dim: int) -> Atom:
        return Atom(AtomKind.L1_NORM, dim)

    @staticmethod
    def group_l2(dim: int, group) -> Atom:
        return Atom(AtomKind.GROUP_L2_NORM, dim, group=group)

    @staticmethod
    def half_squared(dim: int) -> Atom:
        return Atom(AtomKind.HALF_SQUARED_L2, dim)

    @staticmethod
    def least_squares(A, b) -> Atom:
        A = np.asarray(A, dtype=float)
        return Atom(AtomKind.LEAST_SQUARES, A.shape[1], A=A, b=b)

    def __str__(self) -> str:
        return f'{self.kind.value}({self.dim})'


def group_atoms(dim: int, groups: list) -> list[Atom]:
    """One GROUP_L2_NORM atom per group; the groups must partition range(dim).

    Raises:
        DimensionError: groups overlap or leave coordinates uncovered
    """

    coords = np.sort(np.concatenate([np.asarray(g, dtype=np.int64) for g in groups])) if groups else np.zeros(0)
    if coords.size != dim or np.any(coords != np.arange(dim)):
        raise DimensionError(f'groups do not partition {dim} coordinates')
    return [Atom.group_l2(dim, group) for group in groups]


class Conjugate(NamedTuple):
    """Conjugate value; for least squares the certificate w with A'w = y."""

    value: float
    certificate: Optional[np.ndarray] = None


def _check(atom: Atom, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (atom.dim,):
        raise DimensionError(f'{atom}: vector of length {x.size}')
    return x


def evaluate(atom: Atom, x: np.ndarray) -> float:
    """Value of the atom at x.

    Args:
        atom (Atom): atom
        x (np.ndarray): point of length atom.dim

    Raises:
        DimensionError: length mismatch

    Returns:
        float: ||x||_1, ||x_g||_2, 1/2 ||x||^2 or 1/2 ||A x - b||^2
    """

    x = _check(atom, x)

    match atom.kind:
        case AtomKind.L1_NORM:
            return float(np.abs(x).sum())
        case AtomKind.GROUP_L2_NORM:
            return float(np.linalg.norm(x[atom.group]))
        case AtomKind.HALF_SQUARED_L2:
            return float(0.5 * x @ x)
        case AtomKind.LEAST_SQUARES:
            residual = atom.A @ x - atom.b
            return float(0.5 * residual @ residual)

    raise ValueError(f'unknown atom kind: {atom.kind}')


def conjugate(atom: Atom, y: np.ndarray) -> Conjugate:
    """Fenchel conjugate sup_x y'x - P(x).

    Args:
        atom (Atom): atom
        y (np.ndarray): dual point of length atom.dim

    Raises:
        DimensionError: length mismatch

    Returns:
        Conjugate: value (+inf outside the domain) and, for least squares, w = A x* - b
    """

    y = _check(atom, y)

    match atom.kind:
        case AtomKind.L1_NORM:
            return Conjugate(0.0 if np.abs(y).max(initial=0.0) <= 1.0 else np.inf)
        case AtomKind.GROUP_L2_NORM:
            outside = np.delete(y, atom.group)
            inside = np.linalg.norm(y[atom.group]) <= 1.0 + 1e-12 and np.all(outside == 0.0)
            return Conjugate(0.0 if inside else np.inf)
        case AtomKind.HALF_SQUARED_L2:
            return Conjugate(float(0.5 * y @ y), y.copy())
        case AtomKind.LEAST_SQUARES:
            return _least_squares_conjugate(atom, y)

    raise ValueError(f'unknown atom kind: {atom.kind}')


def _least_squares_conjugate(atom: Atom, y: np.ndarray, tol: float = DOMAIN_TOL) -> Conjugate:
    A, b = atom.A, atom.b
    x, *_ = np.linalg.lstsq(A.T @ A, A.T @ b + y, rcond=None)
    w = A @ x - b
    if np.linalg.norm(A.T @ w - y) > tol * (1.0 + np.linalg.norm(y)):
        return Conjugate(np.inf, None)
    return Conjugate(float(0.5 * (w + b) @ (w + b) - 0.5 * b @ b), w)


def subgradient(atom: Atom, x: np.ndarray) -> np.ndarray:
    """An element of the subdifferential of the atom at x."""

    x = _check(atom, x)

    match atom.kind:
        case AtomKind.L1_NORM:
            return np.sign(x)
        case AtomKind.GROUP_L2_NORM:
            out = np.zeros(atom.dim)
            norm = np.linalg.norm(x[atom.group])
            if norm > 0:
                out[atom.group] = x[atom.group] / norm
            return out
        case AtomKind.HALF_SQUARED_L2:
            return x.copy()
        case AtomKind.LEAST_SQUARES:
            return atom.A.T @ (atom.A @ x - atom.b)

    raise ValueError(f'unknown atom kind: {atom.kind}')


def perspective_conjugate_value(atom: Atom, rho: np.ndarray, lam: float, tol: float = DOMAIN_TOL) -> float:
    """lam * P*(rho / lam) with 0 * P*(rho / 0) = 0 iff rho = 0, domain checked up to tol."""

    rho = _check(atom, rho)
    slack = tol * (1.0 + lam)

    match atom.kind:
        case AtomKind.L1_NORM:
            return 0.0 if np.abs(rho).max(initial=0.0) <= lam + slack else np.inf
        case AtomKind.GROUP_L2_NORM:
            outside = np.delete(rho, atom.group)
            inside = np.linalg.norm(rho[atom.group]) <= lam + slack and np.abs(outside).max(initial=0.0) <= slack
            return 0.0 if inside else np.inf
        case AtomKind.HALF_SQUARED_L2:
            squared = float(rho @ rho)
            if lam > 0:
                return squared / (2.0 * lam)
            return 0.0 if np.sqrt(squared) <= slack else np.inf

    raise ValueError(f'no perspective conjugate for {atom}')


def _slots(*slots) -> list[Affine]:
    taken = set()
    exprs = []
    for slot in slots:
        index = range(slot.start, slot.stop) if isinstance(slot, slice) else range(slot, slot + 1)
        if taken.intersection(index):
            raise DimensionError(f'slot collision at {slot}')
        taken.update(index)
        exprs.append(Affine.variable(index.start, len(index)))
    return exprs


def epigraph_rows(atom: Atom, builder: ProgramBuilder, x_slot: slice, r_slot: int):
    """Emits rows encoding P(x) <= r for decision-vector slots.

    Raises:
        DimensionError: x_slot has the wrong length or overlaps r_slot
    """

    x, r = _slots(x_slot, r_slot)
    if x.dim != atom.dim:
        raise DimensionError(f'{atom}: x slot of length {x.dim}')
    epigraph(atom, builder, x, r)


def epigraph(atom: Atom, builder: ProgramBuilder, x: Affine, r: Affine):
    """Emits rows encoding P(x) <= r for affine expressions x and r."""

    match atom.kind:
        case AtomKind.L1_NORM:
            pos = builder.variable(builder.unique('l1_pos'), atom.dim)
            neg = builder.variable(builder.unique('l1_neg'), atom.dim)
            builder.zero(x - pos + neg)
            builder.nonnegative(Affine.stack([pos, neg]))
            builder.nonnegative(r - pos.sum() - neg.sum())
        case AtomKind.GROUP_L2_NORM:
            builder.second_order(r, x[atom.group])
        case AtomKind.HALF_SQUARED_L2:
            builder.half_square(x, r)
        case AtomKind.LEAST_SQUARES:
            builder.half_square(x.matmul(atom.A) - atom.b, r)


def perspective_conjugate_rows(atom: Atom, builder: ProgramBuilder, rho_slot: slice, lam_slot: int, s_slot: int):
    """Emits rows encoding lam * P*(rho / lam) <= s for decision-vector slots.

    Raises:
        DimensionError: rho_slot has the wrong length or the slots overlap
    """

    rho, lam, s = _slots(rho_slot, lam_slot, s_slot)
    if rho.dim != atom.dim:
        raise DimensionError(f'{atom}: rho slot of length {rho.dim}')
    perspective_conjugate(atom, builder, rho, lam, s)


def perspective_conjugate(atom: Atom, builder: ProgramBuilder, rho: Affine, lam: Affine, s: Optional[Affine]):
    """Emits rows encoding lam * P*(rho / lam) <= s; norms pin s to zero when it is given."""

    match atom.kind:
        case AtomKind.L1_NORM:
            builder.nonnegative(Affine.stack([lam.broadcast(atom.dim) - rho, lam.broadcast(atom.dim) + rho]))
        case AtomKind.GROUP_L2_NORM:
            builder.second_order(lam, rho[atom.group])
            outside = np.setdiff1d(np.arange(atom.dim), atom.group)
            if outside.size:
                builder.zero(rho[outside])
        case AtomKind.HALF_SQUARED_L2:
            builder.rotated(rho, lam, s)
            return
        case _:
            raise ValueError(f'no perspective conjugate encoding for {atom}')

    if s is not None:
        builder.zero(s)


class QuadraticBound(NamedTuple):
    """l*(y) <= 1/2 ||q||^2 + constant once the emitted rows hold (minimized over auxiliaries)."""

    q: Affine
    constant: float
    auxiliary: tuple[str, ...]


def conjugate_epigraph(atom: Atom, builder: ProgramBuilder, y: Affine, rank_slack: bool = True) -> QuadraticBound:
    """Emits rows whose feasible auxiliaries bound the conjugate of a loss atom.

    For least squares, l*(y) = min { 1/2 ||w + b||^2 - 1/2 ||b||^2 : A'w = y }; the optional
    slack v with A'v = 0 enters as w + v.
    """

    match atom.kind:
        case AtomKind.LEAST_SQUARES:
            rows = atom.A.shape[0]
            names = (builder.unique('w'),)
            w = builder.variable(names[0], rows)
            builder.zero(w.matmul(atom.A.T) - y)
            q = w + atom.b
            if rank_slack:
                names += (builder.unique('v'),)
                v = builder.variable(names[1], rows)
                builder.zero(v.matmul(atom.A.T))
                q = q + v
            return QuadraticBound(q, -0.5 * float(atom.b @ atom.b), names)
        case AtomKind.HALF_SQUARED_L2:
            return QuadraticBound(y, 0.0, ())
        case AtomKind.L1_NORM:
            builder.nonnegative(Affine.stack([1.0 - y, 1.0 + y]))
            return QuadraticBound(Affine(0), 0.0, ())
        case AtomKind.GROUP_L2_NORM:
            builder.second_order(Affine.constant(1.0), y[atom.group])
            outside = np.setdiff1d(np.arange(atom.dim), atom.group)
            if outside.size:
                builder.zero(y[outside])
            return QuadraticBound(Affine(0), 0.0, ())

    raise ValueError(f'unknown atom kind: {atom.kind}')
