"""Concrete bilevel models: lower-level solves, evaluators and subproblem builders."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import NamedTuple, Optional, Sequence

import numpy as np

from dualtune import atoms, solver
from dualtune.atoms import DOMAIN_TOL, Atom, AtomKind
from dualtune.builder import Affine, ProgramBuilder
from dualtune.cones import DimensionError
from dualtune.data import Dataset
from dualtune.model import ModelKind, SolverSettings
from dualtune.reformulation import (IteratePoint, MajorizationKind, Subproblem, UnsupportedVariantError,
                                    assemble_subproblem, check_point, conjugate_value, majorant, proximal)
from dualtune.solver import Solution, SolverError, SolverStatus

SVM_LOWER_BOUND = 1e-6
SVM_UPPER_BOUND = 10.0
REFINE_THRESHOLDS = (1e-7, 1e-6, 1e-5, 1e-4)
REFINE_NEWTON_STEPS = 30


class LowerLevelSolution(NamedTuple):
    """Lower-level minimizer with its dual certificate packed as an IteratePoint."""

    point: IteratePoint
    objective: float
    iterations: int
    solve_time: float


def accept(solution: Solution, settings: SolverSettings, context: str) -> Solution:
    """Returns usable solutions; MaxIterReached passes only within 10x the tolerances.

    Raises:
        SolverError: any other outcome
    """

    if solution.status == SolverStatus.OPTIMAL:
        return solution
    if solution.status == SolverStatus.MAX_ITER_REACHED and solution.residuals.within(settings, 10.0):
        logging.warning('%s - accepting %s point, residuals %.2e/%.2e/%.2e', context, solution.status.value,
                        *solution.residuals)
        return solution
    raise SolverError(f'{context} - conic solve ended with {solution.status.value}', solution)


class BilevelModel(ABC):
    """A hyperparameter tuning problem: validation loss over the solutions of a training problem."""

    kind: ModelKind

    @property
    @abstractmethod
    def tau(self) -> int:
        """Number of hyperparameter / radius pairs."""

    @abstractmethod
    def point_sizes(self) -> tuple[int, int, int, tuple[int, ...]]:
        """Block sizes (x, lam, r, rho) of an IteratePoint of this model."""

    @abstractmethod
    def default_epsilon(self) -> float:
        ...

    @abstractmethod
    def default_lambda0(self) -> list[float]:
        ...

    @abstractmethod
    def ll_solve(self, lam: np.ndarray, settings: Optional[SolverSettings] = None) -> LowerLevelSolution:
        """Solves the training problem at fixed hyperparameters.

        Raises:
            SolverError: the conic solve failed
            DimensionError: lam has the wrong length
        """

    @abstractmethod
    def ll_objective(self, x: np.ndarray, lam: np.ndarray) -> float:
        ...

    @abstractmethod
    def conjugate_value(self, z: IteratePoint) -> float:
        """F(x, lam, rho); +inf outside the conjugate domains."""

    @abstractmethod
    def radii(self, z: IteratePoint) -> np.ndarray:
        """Smallest radii r compatible with the primal and dual parts of z."""

    @abstractmethod
    def build_subproblem(self,
                         anchor: IteratePoint,
                         eps: float,
                         beta: float,
                         kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                         fallback: bool = True) -> Subproblem:
        ...

    @abstractmethod
    def ul_objective(self, x: np.ndarray) -> float:
        """Upper-level objective minimized by the subproblems."""

    @abstractmethod
    def val_error(self, z: IteratePoint) -> float:
        ...

    @abstractmethod
    def test_error(self, z: IteratePoint, settings: Optional[SolverSettings] = None) -> float:
        ...

    @property
    @abstractmethod
    def search_dims(self) -> int:
        """Number of directions the grid and random search explore."""

    @abstractmethod
    def search_point(self, values: Sequence[float]) -> np.ndarray:
        """Full hyperparameter vector for a point of the search box."""

    def check_lam(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.tau,):
            raise DimensionError(f'{self.kind.value}: {lam.size} hyperparameters for tau = {self.tau}')
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError(f'{self.kind.value}: hyperparameters must be finite and nonnegative')
        return lam

    def polish(self, z: IteratePoint) -> IteratePoint:
        """Raises every radius to at least the value it bounds."""

        return z.with_radii(np.maximum(z.r, self.radii(z)))

    def radius_violation(self, z: IteratePoint) -> float:
        return float(np.max(self.radii(z) - z.r, initial=0.0))


def _least_squares_value(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    residual = A @ x - b
    return float(0.5 * residual @ residual)


class AtomBilevelModel(BilevelModel):
    """Least-squares training loss plus weighted regularizer atoms, least-squares validation loss."""

    def __init__(self, A_tr, b_tr, A_val, b_val, A_te, b_te, regularizers: Sequence[Atom]):
        self.loss = Atom.least_squares(A_tr, b_tr)
        self.regularizers = tuple(regularizers)
        self.A_val, self.b_val = np.asarray(A_val, dtype=float), np.asarray(b_val, dtype=float)
        self.A_te, self.b_te = np.asarray(A_te, dtype=float), np.asarray(b_te, dtype=float)

        n = self.loss.dim
        if self.A_val.shape[1] != n or self.A_te.shape[1] != n:
            raise DimensionError(f'{self.kind.value}: validation/test matrices do not have {n} columns')
        if any(reg.dim != n for reg in self.regularizers):
            raise DimensionError(f'{self.kind.value}: regularizer dimension differs from {n}')

    @property
    def n(self) -> int:
        return self.loss.dim

    @property
    def tau(self) -> int:
        return len(self.regularizers)

    def point_sizes(self) -> tuple[int, int, int, tuple[int, ...]]:
        return self.n, self.tau, self.tau, (self.n,) * self.tau

    def ll_objective(self, x: np.ndarray, lam: np.ndarray) -> float:
        value = atoms.evaluate(self.loss, x)
        return float(value + sum(weight * atoms.evaluate(reg, x) for reg, weight in zip(self.regularizers, lam)))

    def ll_solve(self, lam, settings: Optional[SolverSettings] = None) -> LowerLevelSolution:
        """Solves min l(x) + sum_i lam_i P_i(x) in split form.

        Every active regularizer acts on its own copy z_i of the coordinates it touches, tied to
        x by zero rows z_i - x = 0. The multipliers of those rows are the rho_i of the dual
        certificate; regularizers with lam_i = 0 are left out and get rho_i = 0. The interior-point
        pair is then sharpened by refine when an exact certificate can be found.
        """

        lam = self.check_lam(lam)
        settings = settings or SolverSettings()
        n = self.n

        builder = ProgramBuilder()
        x = builder.variable('x', n)
        t = builder.variable('t', 1)
        builder.half_square(x.matmul(self.loss.A) - self.loss.b, t)
        builder.minimize(t)

        ties = {}
        for i, (reg, weight) in enumerate(zip(self.regularizers, lam)):
            if weight <= 0.0:
                continue
            support = reg.group if reg.kind == AtomKind.GROUP_L2_NORM else np.arange(n)
            copy = builder.variable(f'z{i}', support.size)
            ties[i] = (support, builder.zero(copy - x[support]))
            u = builder.variable(f'u{i}', 1)
            atoms.epigraph(reg, builder, copy.scatter(support, n), u)
            builder.minimize(float(weight) * u)

        solution = accept(solver.solve(builder.build(), settings), settings, f'll_solve ({self.kind.value})')

        x_val = solution.z[builder.layout['x']]
        rho = []
        for i in range(self.tau):
            block = np.zeros(n)
            if i in ties:
                support, rows = ties[i]
                block[support] = solution.y[rows]
            rho.append(block)

        refined = self.refine(x_val, lam)
        if refined is not None:
            x_val, rho = refined

        point = self.certify(x_val, lam, rho)
        objective = self.ll_objective(x_val, lam)
        logging.debug('ll_solve (%s) - objective %.6e after %d iterations', self.kind.value, objective,
                      solution.iterations)
        return LowerLevelSolution(point, objective, solution.iterations, solution.solve_time)

    def certify(self, x: np.ndarray, lam: np.ndarray, rho: list[np.ndarray]) -> IteratePoint:
        """Packs a lower-level primal-dual pair with r = P(x) and the auxiliaries w, v, s_i."""

        aux = {'w': self.loss.A @ x - self.loss.b, 'v': np.zeros(self.loss.b.size)}
        for i, reg in enumerate(self.regularizers):
            if reg.kind == AtomKind.HALF_SQUARED_L2:
                aux[f's{i}'] = np.array([rho[i] @ rho[i] / (2.0 * lam[i]) if lam[i] > 0 else 0.0])

        z = IteratePoint(x, lam.copy(), np.zeros(self.tau), rho, aux)
        return z.with_radii(self.radii(z))

    def refine(self, x: np.ndarray, lam: np.ndarray) -> Optional[tuple[np.ndarray, list[np.ndarray]]]:
        """Active-set Newton polish of an interior-point minimizer.

        The support and the active groups are read off x at increasing thresholds; on each guess
        the smooth reduced problem is solved by Newton's method and the result is kept only if an
        exact subgradient certificate rho_i in lam_i dP_i(x) with sum rho = A'(b - A x) exists.

        Returns:
            Optional[tuple[np.ndarray, list[np.ndarray]]]: refined x and rho, None if no guess certifies
        """

        scale = 1.0 + np.abs(x).max(initial=0.0)
        for threshold in REFINE_THRESHOLDS:
            result = self._refine_at(x, lam, threshold * scale)
            if result is not None:
                return result

        logging.debug('refine (%s) - no active set certified, keeping the interior-point solution', self.kind.value)
        return None

    def _refine_at(self, x: np.ndarray, lam: np.ndarray, threshold: float):
        A, b, n = self.loss.A, self.loss.b, self.n
        l1 = [i for i, reg in enumerate(self.regularizers) if reg.kind == AtomKind.L1_NORM and lam[i] > 0]
        if len(l1) > 1:
            return None
        l1_weight = float(lam[l1[0]]) if l1 else 0.0
        ridge = float(sum(lam[i] for i, reg in enumerate(self.regularizers) if reg.kind == AtomKind.HALF_SQUARED_L2))

        active, inactive = [], []
        off_group = np.zeros(n, dtype=bool)
        for i, reg in enumerate(self.regularizers):
            if reg.kind != AtomKind.GROUP_L2_NORM or lam[i] <= 0:
                continue
            if np.linalg.norm(x[reg.group]) > threshold:
                active.append(i)
            else:
                inactive.append(i)
                off_group[reg.group] = True

        support = ~off_group & ((l1_weight == 0.0) | (np.abs(x) > threshold))
        idx = np.flatnonzero(support)
        sigma = np.sign(x[idx]) if l1_weight > 0 else np.zeros(idx.size)
        local = [(i, np.flatnonzero(np.isin(idx, self.regularizers[i].group))) for i in active]
        if any(positions.size == 0 for _, positions in local):
            return None

        A_s = A[:, idx]
        x_s = x[idx].copy()
        for _ in range(REFINE_NEWTON_STEPS if idx.size else 0):
            grad = A_s.T @ (A_s @ x_s - b) + l1_weight * sigma + ridge * x_s
            hessian = A_s.T @ A_s + ridge * np.eye(idx.size)
            for i, positions in local:
                u = x_s[positions]
                norm = np.linalg.norm(u)
                if norm == 0.0:
                    return None
                grad[positions] += lam[i] * u / norm
                hessian[np.ix_(positions, positions)] += lam[i] * (np.eye(u.size) - np.outer(u, u) / norm**2) / norm
            try:
                delta = np.linalg.solve(hessian, grad)
            except np.linalg.LinAlgError:
                return None
            x_s -= delta
            if not np.all(np.isfinite(x_s)):
                return None
            if np.linalg.norm(delta) <= 1e-15 * (1.0 + np.linalg.norm(x_s)):
                break

        if l1_weight > 0 and np.any(sigma * x_s <= 0.0):
            return None

        refined = np.zeros(n)
        refined[idx] = x_s
        return self._certificate(refined, lam, support, sigma, l1, l1_weight, active, inactive)

    def _certificate(self, x, lam, support, sigma, l1, l1_weight, active, inactive):
        """Splits A'(b - A x) into rho_i in lam_i dP_i(x); None if the split leaves a dual domain."""

        A, b, n = self.loss.A, self.loss.b, self.n
        g = A.T @ (b - A @ x)
        tol = 1e-9 * (1.0 + np.abs(g).max(initial=0.0))
        rho = [np.zeros(n) for _ in self.regularizers]
        remainder = g.copy()

        for i, reg in enumerate(self.regularizers):
            if reg.kind == AtomKind.HALF_SQUARED_L2 and lam[i] > 0:
                rho[i] = lam[i] * x
                remainder -= rho[i]
        for i in active:
            group = self.regularizers[i].group
            rho[i][group] = lam[i] * x[group] / np.linalg.norm(x[group])
            remainder -= rho[i]

        idx = np.flatnonzero(support)
        if l1:
            rho[l1[0]][idx] = l1_weight * sigma
            remainder[idx] -= l1_weight * sigma
        if np.any(np.abs(remainder[idx]) > tol):
            return None

        free = ~support
        for i in inactive:
            group = self.regularizers[i].group
            part = remainder[group]
            if l1:
                clipped = np.clip(part, -l1_weight, l1_weight)
                rho[l1[0]][group] = clipped
                part = part - clipped
            if np.linalg.norm(part) > lam[i] + tol:
                return None
            rho[i][group] = part
            free[group] = False

        rest = np.flatnonzero(free)
        if rest.size:
            if not l1 or np.any(np.abs(remainder[rest]) > l1_weight + tol):
                return None
            rho[l1[0]][rest] = remainder[rest]

        return x, rho

    def conjugate_value(self, z: IteratePoint) -> float:
        return conjugate_value(self.loss, self.regularizers, z)

    def radii(self, z: IteratePoint) -> np.ndarray:
        return np.array([atoms.evaluate(reg, z.x) for reg in self.regularizers])

    def generic_subproblem(self,
                           anchor: IteratePoint,
                           eps: float,
                           beta: float,
                           kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                           fallback: bool = True) -> Subproblem:
        """Subproblem assembled from the atoms' own encodings."""

        return assemble_subproblem(self, anchor, eps, beta, kind, fallback)

    def ul_objective(self, x: np.ndarray) -> float:
        return _least_squares_value(self.A_val, self.b_val, x)

    def val_error(self, z: IteratePoint) -> float:
        return self.ul_objective(z.x) / self.b_val.size

    def test_error(self, z: IteratePoint, settings: Optional[SolverSettings] = None) -> float:
        return _least_squares_value(self.A_te, self.b_te, z.x) / self.b_te.size

    def _gap_rows(self, builder: ProgramBuilder, x: Affine, lam: Affine, r: Affine, rho_sum: Affine, slack: Affine,
                  anchor: IteratePoint, eps: float, kind: MajorizationKind, fallback: bool):
        """Loss conjugate through w with A'w + sum rho = 0 (plus rank slack v) and the majorized gap row."""

        A, b = self.loss.A, self.loss.b
        w = builder.variable('w', b.size)
        v = builder.variable('v', b.size)
        builder.zero(w.matmul(A.T) + rho_sum)
        builder.zero(v.matmul(A.T))

        major = majorant(lam, r, anchor.lam, anchor.r, kind, fallback)
        budget = Affine.constant(eps + 0.5 * float(b @ b) - major.constant) - major.linear - slack
        builder.half_square(Affine.stack([x.matmul(A) - b, w + v + b, *major.q]), budget)
        return major

    def _validation_objective(self, builder: ProgramBuilder, x: Affine):
        t = builder.variable('t', 1)
        builder.half_square(x.matmul(self.A_val) - self.b_val, t)
        builder.minimize(t)


class ElasticNet(AtomBilevelModel):
    """min 1/2 ||A_val x - b_val||^2 over x in argmin 1/2 ||A_tr x - b_tr||^2 + lam_1 ||x||_1 + lam_2/2 ||x||^2"""

    kind = ModelKind.ELASTIC_NET

    def __init__(self, A_tr, b_tr, A_val, b_val, A_te, b_te):
        n = np.asarray(A_tr).shape[1]
        super().__init__(A_tr, b_tr, A_val, b_val, A_te, b_te, [Atom.l1(n), Atom.half_squared(n)])

    def default_epsilon(self) -> float:
        return 0.01

    def default_lambda0(self) -> list[float]:
        return [0.01, 0.01]

    @property
    def search_dims(self) -> int:
        return 2

    def search_point(self, values: Sequence[float]) -> np.ndarray:
        return self.check_lam(values)

    def build_subproblem(self,
                         anchor: IteratePoint,
                         eps: float,
                         beta: float,
                         kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                         fallback: bool = True) -> Subproblem:
        """Hand-written conic form of the elastic-net subproblem.

        ||x||_1 <= r_1 uses absolute-value bounds e >= |x|; ||rho_1||_inf <= lam_1 becomes
        2n linear rows; the ridge conjugate perspective is the rotated cone
        ||rho_2||^2 <= 2 lam_2 s. The rank slack v with A'v = 0 is always present.

        Raises:
            AnchorError: Cauchy majorant at a zero anchor without fallback
            DimensionError: anchor does not fit the model
        """

        check_point(self, anchor)
        if eps <= 0 or beta < 0:
            raise ValueError(f'build_subproblem: eps must be positive and beta nonnegative, got {eps}, {beta}')
        n = self.n

        builder = ProgramBuilder()
        x = builder.variable('x', n)
        lam = builder.variable('lam', 2)
        r = builder.variable('r', 2)
        rho = [builder.variable('rho0', n), builder.variable('rho1', n)]
        e = builder.variable('e', n)
        s = builder.variable('s1', 1)

        builder.nonnegative(lam)
        builder.nonnegative(r)

        builder.nonnegative(Affine.stack([e - x, e + x]))
        builder.nonnegative(r[0] - e.sum())
        builder.half_square(x, r[1])

        bound = lam[0].broadcast(n)
        builder.nonnegative(Affine.stack([bound - rho[0], bound + rho[0]]))
        builder.rotated(rho[1], lam[1], s)

        major = self._gap_rows(builder, x, lam, r, rho[0] + rho[1], s, anchor, eps, kind, fallback)
        self._validation_objective(builder, x)
        proximal(builder, [(x, anchor.x), (lam, anchor.lam), (r, anchor.r)] + list(zip(rho, anchor.rho)), beta)

        return Subproblem(builder.build(), builder.layout, ('rho0', 'rho1'), ('w', 'v', 's1'), major.kinds)


class SparseGroupLasso(AtomBilevelModel):
    """Least squares with one group norm weight per group plus an l1 weight (tau = M + 1)."""

    kind = ModelKind.SPARSE_GROUP_LASSO

    def __init__(self, A_tr, b_tr, A_val, b_val, A_te, b_te, groups: Sequence):
        n = np.asarray(A_tr).shape[1]
        self.groups = [np.asarray(g, dtype=np.int64) for g in groups]
        super().__init__(A_tr, b_tr, A_val, b_val, A_te, b_te, atoms.group_atoms(n, self.groups) + [Atom.l1(n)])

    def default_epsilon(self) -> float:
        return 1.0

    def default_lambda0(self) -> list[float]:
        return [0.1] * self.tau

    @property
    def search_dims(self) -> int:
        return 2

    def search_point(self, values: Sequence[float]) -> np.ndarray:
        """(shared group weight, l1 weight) expanded to all M + 1 hyperparameters."""

        group_weight, l1_weight = values
        return self.check_lam([group_weight] * len(self.groups) + [l1_weight])

    def build_subproblem(self,
                         anchor: IteratePoint,
                         eps: float,
                         beta: float,
                         kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                         fallback: bool = True) -> Subproblem:
        """Hand-written conic form of the sparse-group-lasso subproblem.

        The group multipliers live on their group coordinates only: ||x_g|| <= r_g and
        ||rho_g|| <= lam_g are single cones, and the tie row reads A'w + sum_g E_g rho_g + rho_l1 = 0.

        Raises:
            AnchorError: Cauchy majorant at a zero anchor without fallback
            DimensionError: anchor does not fit the model
        """

        check_point(self, anchor)
        if eps <= 0 or beta < 0:
            raise ValueError(f'build_subproblem: eps must be positive and beta nonnegative, got {eps}, {beta}')
        n, groups = self.n, self.groups
        last = len(groups)

        builder = ProgramBuilder()
        x = builder.variable('x', n)
        lam = builder.variable('lam', self.tau)
        r = builder.variable('r', self.tau)
        rho = [builder.variable(f'rho{i}', g.size) for i, g in enumerate(groups)]
        rho.append(builder.variable(f'rho{last}', n))
        e = builder.variable('e', n)

        builder.nonnegative(lam)
        builder.nonnegative(r)

        for i, group in enumerate(groups):
            builder.second_order(r[i], x[group])
            builder.second_order(lam[i], rho[i])

        builder.nonnegative(Affine.stack([e - x, e + x]))
        builder.nonnegative(r[last] - e.sum())
        bound = lam[last].broadcast(n)
        builder.nonnegative(Affine.stack([bound - rho[last], bound + rho[last]]))

        rho_sum = rho[last]
        for group, block in zip(groups, rho):
            rho_sum = rho_sum + block.scatter(group, n)

        major = self._gap_rows(builder, x, lam, r, rho_sum, Affine.constant(0.0), anchor, eps, kind, fallback)
        self._validation_objective(builder, x)

        anchors = [block[group] for block, group in zip(anchor.rho, groups)] + [anchor.rho[last]]
        proximal(builder, [(x, anchor.x), (lam, anchor.lam), (r, anchor.r)] + list(zip(rho, anchors)), beta)

        return Subproblem(builder.build(),
                          builder.layout,
                          tuple(f'rho{i}' for i in range(self.tau)), ('w', 'v'),
                          major.kinds,
                          rho_index={f'rho{i}': group for i, group in enumerate(groups)},
                          rho_dim=n)


def hinge(A: np.ndarray, labels: np.ndarray, w: np.ndarray, c: float) -> np.ndarray:
    """max(1 - b_j (a_j'w - c), 0) per sample"""

    return np.maximum(1.0 - labels * (A @ w - c), 0.0)


def balance_multipliers(v: np.ndarray, labels: np.ndarray, steps: int = 100) -> np.ndarray:
    """Projects v onto {0 <= v <= 1, labels'v = 0} along labels.

    The shift mu in clip(v - mu labels, 0, 1) is found by bisection; labels'clip(...) does not
    increase with mu and changes sign over [-(2 + max|v|), 2 + max|v|].
    """

    reach = 2.0 + np.abs(v).max(initial=0.0)
    low, high = -reach, reach
    for _ in range(steps):
        mu = 0.5 * (low + high)
        if labels @ np.clip(v - mu * labels, 0.0, 1.0) > 0.0:
            low = mu
        else:
            high = mu
    return np.clip(v - 0.5 * (low + high) * labels, 0.0, 1.0)


class SvmFit(NamedTuple):
    """Primal and dual parts of one box-constrained hinge-loss fit."""

    w: np.ndarray
    c: float
    v: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray
    iterations: int
    solve_time: float


class SvmCv(BilevelModel):
    """K-fold cross-validated linear SVM with hyperparameters (lam, w_bar).

    Fold k trains min sum_j max(1 - b_j (a_j'w - c), 0) + lam/2 ||w||^2 subject to
    -w_bar <= w <= w_bar on the other folds; the upper level averages the mean validation
    hinge over folds. An IteratePoint stacks x = (w_0, c_0, ..., w_K-1, c_K-1),
    lam = (lam, w_bar), r = (R_1, R_2) with R_1 >= sum_k 1/2 ||w_k||^2 and
    R_2 >= sum_k (alpha1_k + alpha2_k), and one rho_k per fold.
    """

    kind = ModelKind.SVM

    def __init__(self,
                 A_cv,
                 b_cv,
                 folds,
                 A_te,
                 b_te,
                 lower: float | np.ndarray = SVM_LOWER_BOUND,
                 upper: float | np.ndarray = SVM_UPPER_BOUND):
        self.A = np.asarray(A_cv, dtype=float)
        self.labels = np.asarray(b_cv, dtype=float)
        self.folds = np.asarray(folds, dtype=np.int64)
        self.A_te, self.b_te = np.asarray(A_te, dtype=float), np.asarray(b_te, dtype=float)

        p = self.A.shape[1]
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (p,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (p,)).copy()

        if not np.all(np.isin(self.labels, (-1.0, 1.0))) or not np.all(np.isin(self.b_te, (-1.0, 1.0))):
            raise ValueError('svm: labels must be -1 or +1')
        if self.folds.shape != self.labels.shape:
            raise DimensionError(f'svm: {self.folds.size} fold ids for {self.labels.size} samples')
        if np.any(self.lower <= 0) or np.any(self.lower > self.upper):
            raise ValueError('svm: bounds need 0 < lower <= upper')

        self.K = int(self.folds.max()) + 1
        if self.K < 2 or np.unique(self.folds).size != self.K:
            raise ValueError(f'svm: fold ids must cover 0..K-1 with K >= 2, got {np.unique(self.folds)}')
        self.splits = [(np.flatnonzero(self.folds != k), np.flatnonzero(self.folds == k)) for k in range(self.K)]

    @property
    def p(self) -> int:
        return self.A.shape[1]

    @property
    def tau(self) -> int:
        return 1 + self.p

    def point_sizes(self) -> tuple[int, int, int, tuple[int, ...]]:
        return self.K * (self.p + 1), self.tau, self.tau, (self.p,) * self.K

    def default_epsilon(self) -> float:
        return 5.0 if self.K >= 6 else 1.0

    def default_lambda0(self) -> list[float]:
        return [0.1] * self.tau

    @property
    def search_dims(self) -> int:
        return 1

    def search_point(self, values: Sequence[float]) -> np.ndarray:
        """lam on the search axis, w_bar fixed at its upper bound."""

        (weight,) = values
        return self.check_lam(np.concatenate(([weight], self.upper)))

    def unstack(self, x: np.ndarray) -> list[tuple[np.ndarray, float]]:
        """(w_k, c_k) per fold"""

        blocks = np.asarray(x, dtype=float).reshape(self.K, self.p + 1)
        return [(block[:-1], float(block[-1])) for block in blocks]

    def fit(self, index: np.ndarray, weight: float, bound: np.ndarray, settings: SolverSettings) -> SvmFit:
        """Box-constrained hinge-loss fit on the samples in index.

        v, alpha1, alpha2 are the multipliers of the rows xi - 1 + B(Aw - c) >= 0,
        w_bar - w >= 0 and w_bar + w >= 0.
        """

        A, labels = self.A[index], self.labels[index]
        builder = ProgramBuilder()
        w = builder.variable('w', self.p)
        c = builder.variable('c', 1)
        xi = builder.variable('xi', index.size)

        builder.nonnegative(xi)
        margin_rows = builder.nonnegative(xi - 1.0 + w.matmul(labels[:, None] * A) -
                                          c.broadcast(index.size).scale_rows(labels))
        upper_rows = builder.nonnegative(bound - w)
        lower_rows = builder.nonnegative(bound + w)
        builder.minimize(xi.sum())
        if weight > 0:
            t = builder.variable('t', 1)
            builder.half_square(w, t)
            builder.minimize(weight * t)

        solution = accept(solver.solve(builder.build(), settings), settings, f'll_solve (svm, {index.size} samples)')
        layout = builder.layout
        return SvmFit(solution.z[layout['w']], float(solution.z[layout['c']][0]), solution.y[margin_rows],
                      solution.y[upper_rows], solution.y[lower_rows], solution.iterations, solution.solve_time)

    def feasible_fit(self, fit: SvmFit, index: np.ndarray, bound: np.ndarray) -> SvmFit:
        """Moves an interior-point fit onto the exact primal box and dual feasible set."""

        return fit._replace(w=np.clip(fit.w, -bound, bound),
                            v=balance_multipliers(fit.v, self.labels[index]),
                            alpha1=np.maximum(fit.alpha1, 0.0),
                            alpha2=np.maximum(fit.alpha2, 0.0))

    def rho_of(self, index: np.ndarray, v: np.ndarray, alpha1: np.ndarray, alpha2: np.ndarray) -> np.ndarray:
        return (self.labels[index][:, None] * self.A[index]).T @ v + alpha2 - alpha1

    def ll_solve(self, lam, settings: Optional[SolverSettings] = None) -> LowerLevelSolution:
        lam = self.check_lam(lam)
        settings = settings or SolverSettings()
        weight, bound = float(lam[0]), lam[1:]

        x, rho, aux = [], [], {}
        iterations, solve_time = 0, 0.0
        for k, (train, val) in enumerate(self.splits):
            fit = self.feasible_fit(self.fit(train, weight, bound, settings), train, bound)
            x.extend([fit.w, [fit.c]])
            rho_k = self.rho_of(train, fit.v, fit.alpha1, fit.alpha2)
            rho.append(rho_k)
            aux.update({
                f'v{k}': fit.v,
                f'a1_{k}': fit.alpha1,
                f'a2_{k}': fit.alpha2,
                f's{k}': np.array([rho_k @ rho_k / (2.0 * weight) if weight > 0 else 0.0]),
                f'xi{k}': hinge(self.A[train], self.labels[train], fit.w, fit.c),
                f'eta{k}': hinge(self.A[val], self.labels[val], fit.w, fit.c)
            })
            iterations += fit.iterations
            solve_time += fit.solve_time

        z = IteratePoint(np.concatenate(x), lam.copy(), np.zeros(self.tau), rho, aux)
        z = z.with_radii(self.radii(z))
        objective = self.ll_objective(z.x, lam)
        logging.debug('ll_solve (svm, K=%d) - objective %.6e after %d iterations', self.K, objective, iterations)
        return LowerLevelSolution(z, objective, iterations, solve_time)

    def ll_objective(self, x: np.ndarray, lam: np.ndarray) -> float:
        value = 0.0
        for (w, c), (train, _) in zip(self.unstack(x), self.splits):
            if np.any(np.abs(w) > lam[1:] + DOMAIN_TOL):
                return np.inf
            value += hinge(self.A[train], self.labels[train], w, c).sum() + 0.5 * lam[0] * w @ w
        return float(value)

    def _alphas(self, z: IteratePoint, k: int) -> tuple[np.ndarray, np.ndarray]:
        return z.aux.get(f'a1_{k}', np.zeros(self.p)), z.aux.get(f'a2_{k}', np.zeros(self.p))

    def radii(self, z: IteratePoint) -> np.ndarray:
        r1 = sum(0.5 * w @ w for w, _ in self.unstack(z.x))
        r2 = np.zeros(self.p)
        for k in range(self.K):
            alpha1, alpha2 = self._alphas(z, k)
            r2 += alpha1 + alpha2
        return np.concatenate(([r1], r2))

    def conjugate_value(self, z: IteratePoint) -> float:
        """Sum over folds of hinge(w_k, c_k) + ||rho_k||^2 / (2 lam) - 1'v_k.

        Returns +inf when the dual multipliers are missing or infeasible, when some w_k leaves
        the box or when R_2 does not dominate the alpha sums.
        """

        weight, bound = float(z.lam[0]), z.lam[1:]
        if any(f'v{k}' not in z.aux for k in range(self.K)):
            return np.inf

        value = 0.0
        for k, ((w, c), (train, _)) in enumerate(zip(self.unstack(z.x), self.splits)):
            v, rho = z.aux[f'v{k}'], z.rho[k]
            alpha1, alpha2 = self._alphas(z, k)
            tol = DOMAIN_TOL * (1.0 + np.abs(v).max(initial=0.0) + np.abs(rho).max(initial=0.0))

            if np.any(v < -tol) or np.any(v > 1.0 + tol) or abs(v @ self.labels[train]) > tol * v.size:
                return np.inf
            if np.any(alpha1 < -tol) or np.any(alpha2 < -tol) or np.any(np.abs(w) > bound + tol):
                return np.inf
            if np.linalg.norm(self.rho_of(train, v, alpha1, alpha2) - rho) > tol * np.sqrt(rho.size):
                return np.inf

            if weight > 0:
                penalty = rho @ rho / (2.0 * weight)
            elif np.abs(rho).max(initial=0.0) <= tol:
                penalty = 0.0
            else:
                return np.inf
            value += hinge(self.A[train], self.labels[train], w, c).sum() + penalty - v.sum()

        if np.any(self.radii(z)[1:] > z.r[1:] + DOMAIN_TOL * (1.0 + np.abs(z.r[1:]))):
            return np.inf
        return float(value)

    def build_subproblem(self,
                         anchor: IteratePoint,
                         eps: float,
                         beta: float,
                         kind: MajorizationKind = MajorizationKind.CAUCHY_QUADRATIC,
                         fallback: bool = True) -> Subproblem:
        """K parallel copies of (w, c) sharing (lam, w_bar) and one summed duality-gap row.

        Raises:
            AnchorError: Cauchy majorant at a zero anchor without fallback
            DimensionError: anchor does not fit the model
        """

        check_point(self, anchor)
        if eps <= 0 or beta < 0:
            raise ValueError(f'build_subproblem: eps must be positive and beta nonnegative, got {eps}, {beta}')
        p = self.p

        builder = ProgramBuilder()
        lam = builder.variable('lam', self.tau)
        r = builder.variable('r', self.tau)
        weight, bound = lam[0], lam[1:]

        builder.nonnegative(weight)
        builder.nonnegative(Affine.stack([bound - self.lower, self.upper - bound]))
        builder.nonnegative(r)

        ws, xs, rhos, aux = [], [], [], []
        gap = Affine.constant(0.0)
        alpha_sum = Affine(p)
        validation = Affine.constant(0.0)

        for k, (train, val) in enumerate(self.splits):
            w = builder.variable(f'w{k}', p)
            c = builder.variable(f'c{k}', 1)
            xi = builder.variable(f'xi{k}', train.size)
            eta = builder.variable(f'eta{k}', val.size)
            v = builder.variable(f'v{k}', train.size)
            alpha1 = builder.variable(f'a1_{k}', p)
            alpha2 = builder.variable(f'a2_{k}', p)
            rho = builder.variable(f'rho{k}', p)
            s = builder.variable(f's{k}', 1)
            ws.append(w)
            xs += [(w, anchor.x[k * (p + 1):k * (p + 1) + p]), (c, anchor.x[k * (p + 1) + p:(k + 1) * (p + 1)])]
            rhos.append((rho, anchor.rho[k]))
            aux += [f'v{k}', f'a1_{k}', f'a2_{k}', f's{k}', f'xi{k}', f'eta{k}']

            for index, slack in ((train, xi), (val, eta)):
                labels = self.labels[index]
                builder.nonnegative(slack)
                builder.nonnegative(slack - 1.0 + w.matmul(labels[:, None] * self.A[index]) -
                                    c.broadcast(index.size).scale_rows(labels))
            builder.nonnegative(Affine.stack([bound - w, bound + w]))

            labels = self.labels[train]
            builder.nonnegative(Affine.stack([v, 1.0 - v, alpha1, alpha2]))
            builder.zero(v.dot(labels))
            builder.zero(v.matmul((labels[:, None] * self.A[train]).T) - rho + alpha2 - alpha1)
            builder.rotated(rho, weight, s)

            gap = gap + xi.sum() + s - v.sum()
            alpha_sum = alpha_sum + alpha1 + alpha2
            validation = validation + (1.0 / (self.K * val.size)) * eta.sum()

        builder.half_square(Affine.stack(ws), r[0])
        builder.nonnegative(r[1:] - alpha_sum)

        major = majorant(lam, r, anchor.lam, anchor.r, kind, fallback)
        budget = Affine.constant(eps - major.constant) - major.linear - gap
        builder.half_square(Affine.stack(major.q), budget)

        builder.minimize(validation)
        proximal(builder, xs + [(lam, anchor.lam), (r, anchor.r)] + rhos, beta)

        x_names = tuple(name for k in range(self.K) for name in (f'w{k}', f'c{k}'))
        return Subproblem(builder.build(), builder.layout, tuple(f'rho{k}' for k in range(self.K)), tuple(aux),
                          major.kinds, x_names)

    def ul_objective(self, x: np.ndarray) -> float:
        """Mean over folds of the mean validation hinge."""

        total = 0.0
        for (w, c), (_, val) in zip(self.unstack(x), self.splits):
            total += hinge(self.A[val], self.labels[val], w, c).mean()
        return float(total / self.K)

    def val_error(self, z: IteratePoint) -> float:
        return self.ul_objective(z.x)

    def refit(self, lam, settings: Optional[SolverSettings] = None) -> tuple[np.ndarray, float]:
        """(w, c) trained on the whole cross-validation set at the tuned (lam, w_bar)."""

        lam = self.check_lam(lam)
        fit = self.fit(np.arange(self.labels.size), float(lam[0]), lam[1:], settings or SolverSettings())
        logging.debug('refit (svm) - box slack %.2e', float(np.min(lam[1:] - np.abs(fit.w))))
        return fit.w, fit.c

    def test_error(self, z: IteratePoint, settings: Optional[SolverSettings] = None) -> float:
        w, c = self.refit(z.lam, settings)
        return float(hinge(self.A_te, self.b_te, w, c).mean())


class MatrixCompletion:
    """Low-rank matrix completion needs a semidefinite cone, which the conic solver does not provide."""

    kind = None

    def __init__(self, *args, **kwargs):
        raise UnsupportedVariantError('matrix completion requires semidefinite cones and is not supported')


def from_dataset(kind: ModelKind,
                 dataset: Dataset,
                 lower: float = SVM_LOWER_BOUND,
                 upper: float = SVM_UPPER_BOUND) -> BilevelModel:
    """Builds the bilevel model of kind over the splits of a dataset.

    Raises:
        DatasetError: a required split is missing
        UnsupportedVariantError: unknown model kind
    """

    match kind:
        case ModelKind.ELASTIC_NET | ModelKind.SPARSE_GROUP_LASSO:
            A_tr, b_tr = dataset.part('train')
            A_val, b_val = dataset.part('val')
            A_te, b_te = dataset.part('test')
            if kind == ModelKind.ELASTIC_NET:
                return ElasticNet(A_tr, b_tr, A_val, b_val, A_te, b_te)
            if dataset.groups is None:
                raise UnsupportedVariantError('sgl: dataset carries no group partition')
            return SparseGroupLasso(A_tr, b_tr, A_val, b_val, A_te, b_te, dataset.groups)
        case ModelKind.SVM:
            A_cv, b_cv = dataset.part('cv')
            A_te, b_te = dataset.part('test')
            return SvmCv(A_cv, b_cv, dataset.folds, A_te, b_te, lower, upper)

    raise UnsupportedVariantError(f'unknown model kind: {kind}')
