"""Single-level reformulation through lower-level duality and its majorized subproblems.

For a lower-level problem min_x l(x) + sum_i lam_i P_i(x) the value-function constraint is
replaced by the duality-gap constraint

    F(x, lam, rho) + sum_i lam_i r_i <= eps,    P_i(x) <= r_i,

with F(x, lam, rho) = l(x) + l*(-sum_i rho_i) + sum_i lam_i P_i*(rho_i / lam_i). Each bilinear
term lam_i r_i is replaced by a smooth majorant anchored at the current iterate, which turns
the constraint into a convex (second-order cone representable) one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Protocol, Sequence, runtime_checkable

import numpy as np

from dualtune import atoms
from dualtune.atoms import Atom, AtomKind
from dualtune.builder import Affine, Layout, ProgramBuilder
from dualtune.cones import ConicProgram, DimensionError

ANCHOR_FLOOR = 1e-6


class AnchorError(ValueError):
    """Raised when the Cauchy majorant is anchored at a non-positive pair."""


class UnsupportedVariantError(NotImplementedError):
    """Raised for model variants outside the supported cone families."""


class MajorizationKind(str, Enum):
    """Enumeration of the majorants of a bilinear term xi * zeta"""

    CAUCHY_QUADRATIC = 'cauchy'
    SQUARE_LINEARIZED = 'square_linearized'


def _check_anchor(kind: MajorizationKind, xi_bar: float, zeta_bar: float):
    if kind == MajorizationKind.CAUCHY_QUADRATIC and not (xi_bar > 0 and zeta_bar > 0):
        raise AnchorError(f'majorize (cauchy) - anchor ({xi_bar}, {zeta_bar}) must be strictly positive')


def majorize(kind: MajorizationKind, xi: float, zeta: float, xi_bar: float, zeta_bar: float) -> float:
    """Majorant of xi * zeta anchored at (xi_bar, zeta_bar).

    Args:
        kind (MajorizationKind): majorant family
        xi (float): first factor
        zeta (float): second factor
        xi_bar (float): anchor of the first factor
        zeta_bar (float): anchor of the second factor

    Raises:
        AnchorError: Cauchy majorant with a non-positive anchor

    Returns:
        float: majorant value, equal to xi_bar * zeta_bar at the anchor
    """

    _check_anchor(kind, xi_bar, zeta_bar)

    if kind == MajorizationKind.CAUCHY_QUADRATIC:
        return 0.5 * ((xi_bar / zeta_bar) * zeta**2 + (zeta_bar / xi_bar) * xi**2)

    diff = xi_bar - zeta_bar
    return 0.25 * (xi + zeta)**2 + 0.25 * diff**2 - 0.5 * diff * (xi - zeta)


def majorize_gradient(kind: MajorizationKind, xi: float, zeta: float, xi_bar: float,
                      zeta_bar: float) -> tuple[float, float]:
    """Partial derivatives of the majorant with respect to xi and zeta.

    Raises:
        AnchorError: Cauchy majorant with a non-positive anchor
    """

    _check_anchor(kind, xi_bar, zeta_bar)

    if kind == MajorizationKind.CAUCHY_QUADRATIC:
        return (zeta_bar / xi_bar) * xi, (xi_bar / zeta_bar) * zeta

    diff = xi_bar - zeta_bar
    half = 0.5 * (xi + zeta)
    return half - 0.5 * diff, half + 0.5 * diff


def pair_kind(kind: MajorizationKind, lam_bar: float, r_bar: float, fallback: bool = True) -> MajorizationKind:
    """Majorant actually used for one (lam, r) pair.

    The Cauchy form divides by both anchors; pairs with an anchor at (or numerically near)
    zero use the square-linearized form when fallback is enabled.

    Raises:
        AnchorError: Cauchy requested without fallback at a non-positive anchor
    """

    if kind != MajorizationKind.CAUCHY_QUADRATIC:
        return kind

    floor = ANCHOR_FLOOR * max(1.0, lam_bar, r_bar)
    if lam_bar > floor and r_bar > floor:
        return kind
    if not fallback:
        raise AnchorError(f'majorize (cauchy) - anchor ({lam_bar}, {r_bar}) must be strictly positive')
    return MajorizationKind.SQUARE_LINEARIZED


@dataclass(eq=False)
class IteratePoint:
    """State z = (x, lam, r, rho) of the outer loop plus auxiliaries of the last solve."""

    x: np.ndarray
    lam: np.ndarray
    r: np.ndarray
    rho: list[np.ndarray]
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam, self.r, *self.rho])

    def distance(self, other: IteratePoint) -> float:
        return float(np.linalg.norm(self.stacked() - other.stacked()))

    def norm(self) -> float:
        return float(np.linalg.norm(self.stacked()))

    def with_radii(self, r: np.ndarray) -> IteratePoint:
        return replace(self, r=np.asarray(r, dtype=float))

    def to_dict(self) -> dict:
        return {
            'x': self.x.tolist(),
            'lam': self.lam.tolist(),
            'r': self.r.tolist(),
            'rho': [block.tolist() for block in self.rho]
        }

    @classmethod
    def from_dict(cls, data: dict) -> IteratePoint:
        return cls(np.asarray(data['x'], dtype=float), np.asarray(data['lam'], dtype=float),
                   np.asarray(data['r'], dtype=float), [np.asarray(block, dtype=float) for block in data['rho']])


@runtime_checkable
class AtomModel(Protocol):
    """A bilevel model whose lower level is a loss atom plus weighted regularizer atoms."""

    loss: Atom
    regularizers: Sequence[Atom]
    A_val: np.ndarray
    b_val: np.ndarray


def check_point(model, z: IteratePoint):
    """Raises DimensionError unless z has the block sizes the model expects."""

    sizes = model.point_sizes()
    actual = (z.x.size, z.lam.size, z.r.size, tuple(block.size for block in z.rho))
    if actual != sizes:
        raise DimensionError(f'iterate blocks {actual} do not match model blocks {sizes}')


def conjugate_value(loss: Atom, regularizers: Sequence[Atom], z: IteratePoint) -> float:
    """F(x, lam, rho) for an atom model; +inf when a conjugate domain condition fails."""

    value = atoms.evaluate(loss, z.x)
    value += atoms.conjugate(loss, -np.sum(z.rho, axis=0)).value
    for reg, rho, lam in zip(regularizers, z.rho, z.lam):
        value += atoms.perspective_conjugate_value(reg, rho, float(lam))
    return float(value)


def duality_gap_value(model, z: IteratePoint) -> float:
    """F(x, lam, rho) + sum_i lam_i r_i, nonnegative by weak duality.

    Args:
        model (BilevelModel): model providing conjugate_value and point_sizes
        z (IteratePoint): point to evaluate

    Raises:
        DimensionError: z does not fit the model

    Returns:
        float: gap value, +inf on a conjugate domain violation
    """

    check_point(model, z)
    value = model.conjugate_value(z)
    if not np.isfinite(value):
        return np.inf
    return float(value + z.lam @ z.r)


def single_level_value(model, z: IteratePoint, eps: float) -> float:
    """g(z) = duality_gap_value(z) - eps; nonpositive on the feasible set of the eps-problem."""

    return duality_gap_value(model, z) - eps


def majorized_value(model,
                    z: IteratePoint,
                    anchor: IteratePoint,
                    eps: float,
                    kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                    fallback: bool = True) -> float:
    """Majorized constraint value at z for the subproblem anchored at anchor; never below g(z)."""

    check_point(model, z)
    value = model.conjugate_value(z)
    if not np.isfinite(value):
        return np.inf

    for lam, r, lam_bar, r_bar in zip(z.lam, z.r, anchor.lam, anchor.r):
        value += majorize(pair_kind(kind, lam_bar, r_bar, fallback), lam, r, lam_bar, r_bar)
    return float(value - eps)


class Majorant(NamedTuple):
    """Quadratic, linear and constant parts of sum_i m(lam_i, r_i): 1/2 ||q||^2 + linear + constant."""

    q: list[Affine]
    linear: Affine
    constant: float
    kinds: tuple[MajorizationKind, ...]


def majorant(lam: Affine,
             r: Affine,
             lam_bar: np.ndarray,
             r_bar: np.ndarray,
             kind: MajorizationKind,
             fallback: bool = True) -> Majorant:
    """Splits the anchored majorants of all pairs into conic-ready parts."""

    q, linear, constant, kinds = [], Affine.constant(0.0), 0.0, []

    for i, (lb, rb) in enumerate(zip(lam_bar, r_bar)):
        used = pair_kind(kind, float(lb), float(rb), fallback)
        kinds.append(used)

        if used == MajorizationKind.CAUCHY_QUADRATIC:
            ratio = float(np.sqrt(lb / rb))
            q += [ratio * r[i], (1.0 / ratio) * lam[i]]
        else:
            diff = float(lb - rb)
            q.append(float(np.sqrt(0.5)) * (lam[i] + r[i]))
            linear = linear - 0.5 * diff * (lam[i] - r[i])
            constant += 0.25 * diff**2

    return Majorant(q, linear, constant, tuple(kinds))


def proximal(builder: ProgramBuilder, blocks: list[tuple[Affine, np.ndarray]], beta: float):
    """Adds beta/2 ||z - anchor||^2 to the objective, one rotated-cone epigraph per block."""

    if beta <= 0:
        return

    for expr, anchor in blocks:
        if expr.dim == 0:
            continue
        p = builder.variable(builder.unique('prox'), 1)
        builder.half_square(expr - anchor, p)
        builder.minimize(beta * p)


@dataclass
class Subproblem:
    """Conic program of one outer iteration and the map back to an IteratePoint."""

    program: ConicProgram
    layout: Layout
    rho_names: tuple[str, ...]
    aux_names: tuple[str, ...]
    kinds: tuple[MajorizationKind, ...]
    x_names: tuple[str, ...] = ('x',)
    rho_index: dict[str, np.ndarray] = field(default_factory=dict)
    rho_dim: int = 0

    def rho(self, blocks: dict[str, np.ndarray], name: str) -> np.ndarray:
        """Multiplier block, scattered to length rho_dim when it only covers a coordinate subset."""

        if name not in self.rho_index:
            return blocks[name]
        full = np.zeros(self.rho_dim)
        full[self.rho_index[name]] = blocks[name]
        return full

    def point(self, z: np.ndarray) -> IteratePoint:
        blocks = self.layout.extract(z)
        return IteratePoint(x=np.concatenate([blocks[name] for name in self.x_names]),
                            lam=blocks['lam'],
                            r=blocks['r'],
                            rho=[self.rho(blocks, name) for name in self.rho_names],
                            aux={name: blocks[name] for name in self.aux_names})


def assemble_subproblem(model,
                        anchor: IteratePoint,
                        eps: float,
                        beta: float,
                        kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                        fallback: bool = True) -> Subproblem:
    """Generic assembly of the eps-relaxed proximal subproblem from the model's atoms.

    Args:
        model (AtomModel): model with a least-squares loss and regularizer atoms
        anchor (IteratePoint): current iterate, feasible for the subproblem
        eps (float): relaxation of the duality-gap constraint, > 0
        beta (float): proximal weight, >= 0
        kind (MajorizationKind): preferred majorant
        fallback (bool): use the square-linearized majorant where Cauchy is undefined

    Raises:
        UnsupportedVariantError: model has no atom decomposition
        AnchorError: Cauchy majorant at a zero anchor without fallback
        DimensionError: anchor does not fit the model

    Returns:
        Subproblem: conic program and layout
    """

    if not isinstance(model, AtomModel):
        raise UnsupportedVariantError(f'assemble: {type(model).__name__} has no atom decomposition')
    if model.loss.kind != AtomKind.LEAST_SQUARES:
        raise UnsupportedVariantError(f'assemble: loss {model.loss} is not least squares')
    check_point(model, anchor)
    if eps <= 0 or beta < 0:
        raise ValueError(f'assemble: eps must be positive and beta nonnegative, got {eps}, {beta}')

    loss, regularizers = model.loss, list(model.regularizers)
    n, tau = loss.dim, len(regularizers)

    builder = ProgramBuilder()
    x = builder.variable('x', n)
    lam = builder.variable('lam', tau)
    r = builder.variable('r', tau)
    rho = [builder.variable(f'rho{i}', n) for i in range(tau)]
    slacks, aux = [], []

    builder.nonnegative(lam)
    builder.nonnegative(r)

    for i, reg in enumerate(regularizers):
        atoms.epigraph(reg, builder, x, r[i])
        s = None
        if reg.kind == AtomKind.HALF_SQUARED_L2:
            s = builder.variable(f's{i}', 1)
            slacks.append(s)
            aux.append(f's{i}')
        atoms.perspective_conjugate(reg, builder, rho[i], lam[i], s)

    y = -Affine.stack([Affine(n)]) if not rho else -sum(rho[1:], rho[0])
    bound = atoms.conjugate_epigraph(loss, builder, y)
    aux.extend(bound.auxiliary)

    major = majorant(lam, r, anchor.lam, anchor.r, kind, fallback)
    budget = Affine.constant(eps - bound.constant - major.constant) - major.linear
    for s in slacks:
        budget = budget - s

    residual = x.matmul(loss.A) - loss.b
    builder.half_square(Affine.stack([residual, bound.q, *major.q]), budget)

    t = builder.variable('t', 1)
    builder.half_square(x.matmul(model.A_val) - model.b_val, t)
    builder.minimize(t)

    proximal(builder, [(x, anchor.x), (lam, anchor.lam), (r, anchor.r)] + list(zip(rho, anchor.rho)), beta)

    program = builder.build()
    logging.debug('assemble (n=%d, m=%d) - majorants %s', program.n, program.m, [k.value for k in major.kinds])
    return Subproblem(program, builder.layout, tuple(f'rho{i}' for i in range(tau)), tuple(aux), major.kinds)
