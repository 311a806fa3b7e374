"""Primal-dual interior-point solver for standard-form conic programs.

The solver works on the homogeneous self-dual embedding of

    minimize    c'x                    maximize   -b'y
    subject to  A x + s = b, s in K    subject to  A'y + c = 0, y in K*

with Nesterov-Todd scaling and a Mehrotra predictor-corrector. Zero-cone rows are kept as
equality constraints; the remaining rows form the inequality part over nonnegative and
second-order cones.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from dualtune.cones import ConeKind, ConicProgram, DimensionError, validate
from dualtune.model import SolverSettings

STEP_FRACTION = 0.99
MIN_STEP = 1e-10
EQUILIBRATION_PASSES = 10
SCALE_BOUNDS = (1e-4, 1e4)
FACTOR_ATTEMPTS = 4


class SolverStatus(Enum):
    """Enumeration of the solve outcomes"""

    OPTIMAL = 'optimal'
    PRIMAL_INFEASIBLE = 'primal_infeasible'
    DUAL_INFEASIBLE = 'dual_infeasible'
    MAX_ITER_REACHED = 'max_iter_reached'
    NUMERICAL_ERROR = 'numerical_error'


class Residuals(NamedTuple):
    """Normalized primal, dual and gap residuals"""

    primal: float
    dual: float
    gap: float

    def within(self, settings: SolverSettings, factor: float = 1.0) -> bool:
        return (self.primal <= factor * settings.tol_primal and self.dual <= factor * settings.tol_dual and
                self.gap <= factor * settings.tol_gap)


@dataclass
class Solution:
    """Result of a conic solve; y holds one multiplier per row of A."""

    status: SolverStatus
    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    objective: float
    iterations: int
    residuals: Residuals
    solve_time: float = 0.0
    info: dict = field(default_factory=dict)


class SolverError(RuntimeError):
    """Raised when a conic solve ends without a usable point; carries the failing Solution."""

    def __init__(self, message: str, solution: Solution):
        super().__init__(message)
        self.solution = solution


def kkt_residuals(program: ConicProgram, solution: Solution) -> Residuals:
    """Recomputes the normalized KKT residuals of a candidate primal-dual point.

    Args:
        program (ConicProgram): program the point belongs to
        solution (Solution): candidate (z, s, y)

    Raises:
        DimensionError: vector lengths do not match the program

    Returns:
        Residuals: ||Az + s - b||/(1+||b||), ||A'y + c||/(1+||c||), |c'z + b'y|/(1+|c'z|)
    """

    if solution.z.shape != (program.n,) or solution.s.shape != (program.m,) or solution.y.shape != (program.m,):
        raise DimensionError(f'kkt_residuals: got |z|={solution.z.size}, |s|={solution.s.size}, '
                             f'|y|={solution.y.size} for n={program.n}, m={program.m}')

    return _residuals(program.A, program.b, program.c, solution.z, solution.s, solution.y)


def _residuals(A, b, c, z, s, y) -> Residuals:
    cz = float(c @ z)
    return Residuals(
        float(np.linalg.norm(A @ z + s - b) / (1.0 + np.linalg.norm(b))),
        float(np.linalg.norm(A.T @ y + c) / (1.0 + np.linalg.norm(c))),
        float(abs(cz + b @ y) / (1.0 + abs(cz))))


def equilibrate(program: ConicProgram) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Ruiz scaling E A D of the constraint matrix.

    Row scales are constant on every second-order block, so E s stays in K exactly when s does.

    Args:
        program (ConicProgram): program to scale

    Returns:
        tuple[sp.csr_matrix, np.ndarray, np.ndarray]: scaled matrix, row scale E, column scale D
    """

    A = program.A.tocsr().astype(float)
    E, D = np.ones(program.m), np.ones(program.n)
    if A.nnz == 0:
        return A, E, D

    blocks = [rows for cone, rows in program.slices() if cone.kind == ConeKind.SECOND_ORDER and cone.dim > 0]
    for _ in range(EQUILIBRATION_PASSES):
        scaled = abs(sp.diags(E) @ A @ sp.diags(D))
        rows = scaled.max(axis=1).toarray().ravel()
        cols = scaled.max(axis=0).toarray().ravel()
        for rows_of_block in blocks:
            rows[rows_of_block] = rows[rows_of_block].max()
        rows[rows == 0.0] = 1.0
        cols[cols == 0.0] = 1.0
        E = np.clip(E / np.sqrt(rows), *SCALE_BOUNDS)
        D = np.clip(D / np.sqrt(cols), *SCALE_BOUNDS)

    return (sp.diags(E) @ A @ sp.diags(D)).tocsr(), E, D


class _ProductCone:
    """Jordan algebra helpers over the nonnegative and second-order blocks of the inequality part."""

    def __init__(self, cones):
        self.blocks = []
        offset = 0
        for cone in cones:
            if cone.kind == ConeKind.ZERO:
                continue
            self.blocks.append((cone.kind, slice(offset, offset + cone.dim)))
            offset += cone.dim
        self.dim = offset
        self.degree = sum(sl.stop - sl.start if kind == ConeKind.NONNEGATIVE else 1 for kind, sl in self.blocks)

    def unit(self) -> np.ndarray:
        e = np.zeros(self.dim)
        for kind, sl in self.blocks:
            if kind == ConeKind.NONNEGATIVE:
                e[sl] = 1.0
            else:
                e[sl.start] = 1.0
        return e

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.dim)
        for kind, sl in self.blocks:
            if kind == ConeKind.NONNEGATIVE:
                out[sl] = u[sl] * v[sl]
            else:
                a, b = u[sl], v[sl]
                out[sl.start] = a @ b
                out[sl.start + 1:sl.stop] = a[0] * b[1:] + b[0] * a[1:]
        return out

    def divide(self, lmbda: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solves lmbda o x = d for x."""

        out = np.empty(self.dim)
        for kind, sl in self.blocks:
            if kind == ConeKind.NONNEGATIVE:
                out[sl] = d[sl] / lmbda[sl]
            else:
                l, r = lmbda[sl], d[sl]
                det = l[0]**2 - l[1:] @ l[1:]
                x0 = (l[0] * r[0] - l[1:] @ r[1:]) / det
                out[sl.start] = x0
                out[sl.start + 1:sl.stop] = (r[1:] - x0 * l[1:]) / l[0]
        return out

    def min_eig(self, u: np.ndarray) -> float:
        worst = np.inf
        for kind, sl in self.blocks:
            if kind == ConeKind.NONNEGATIVE:
                worst = min(worst, float(u[sl].min()))
            else:
                worst = min(worst, float(u[sl.start] - np.linalg.norm(u[sl.start + 1:sl.stop])))
        return worst

    def max_step(self, u: np.ndarray, d: np.ndarray) -> float:
        """Largest alpha keeping u + alpha d in the cone, for u in its interior."""

        alpha = np.inf
        for kind, sl in self.blocks:
            if kind == ConeKind.NONNEGATIVE:
                du = d[sl]
                neg = du < 0
                if np.any(neg):
                    alpha = min(alpha, float(np.min(-u[sl][neg] / du[neg])))
            else:
                alpha = min(alpha, _soc_step(u[sl], d[sl]))
        return alpha


def _soc_step(u: np.ndarray, d: np.ndarray) -> float:
    qa = d[0]**2 - d[1:] @ d[1:]
    qb = u[0] * d[0] - u[1:] @ d[1:]
    qc = max(u[0]**2 - u[1:] @ u[1:], 0.0)
    disc = qb**2 - qa * qc

    if qa < 0 and qb >= 0:
        return float((qb + np.sqrt(max(disc, 0.0))) / -qa)
    if qb < 0 and disc >= 0:
        return float(qc / (np.sqrt(disc) - qb))
    return np.inf


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^-1 s = lambda."""

    def __init__(self, cone: _ProductCone, s: np.ndarray, z: np.ndarray):
        self.__cone = cone
        self.__blocks = []

        for kind, sl in cone.blocks:
            if kind == ConeKind.NONNEGATIVE:
                self.__blocks.append(np.sqrt(s[sl] / z[sl]))
                continue

            sa = np.sqrt(s[sl][0]**2 - s[sl][1:] @ s[sl][1:])
            za = np.sqrt(z[sl][0]**2 - z[sl][1:] @ z[sl][1:])
            sbar, zbar = s[sl] / sa, z[sl] / za
            gamma = np.sqrt((1.0 + sbar @ zbar) / 2.0)
            wbar = sbar.copy()
            wbar[0] += zbar[0]
            wbar[1:] -= zbar[1:]
            wbar /= 2.0 * gamma
            self.__blocks.append((np.sqrt(sa / za), wbar))

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        out = np.empty_like(v)
        for (kind, sl), block in zip(self.__cone.blocks, self.__blocks):
            if kind == ConeKind.NONNEGATIVE:
                out[sl] = v[sl] / block if inverse else v[sl] * block
                continue

            beta, wbar = block
            w0, w1 = wbar[0], wbar[1:]
            x0, x1 = v[sl][0], v[sl][1:]
            sign = -1.0 if inverse else 1.0
            proj = w1 @ x1
            top = w0 * x0 + sign * proj
            rest = x1 + sign * x0 * w1 + (proj / (1.0 + w0)) * w1
            scale = 1.0 / beta if inverse else beta
            out[sl.start] = scale * top
            out[sl.start + 1:sl.stop] = scale * rest
        return out

    def squared(self) -> sp.spmatrix:
        """W^2 as a sparse block-diagonal matrix."""

        parts = []
        for (kind, _), block in zip(self.__cone.blocks, self.__blocks):
            if kind == ConeKind.NONNEGATIVE:
                parts.append(sp.diags(block**2))
                continue

            beta, wbar = block
            J = np.eye(wbar.size)
            J[1:, 1:] *= -1.0
            parts.append(sp.csc_matrix(beta**2 * (2.0 * np.outer(wbar, wbar) - J)))

        if not parts:
            return sp.csc_matrix((0, 0))
        return sp.block_diag(parts, format='csc')


class _KktSystem:
    """Regularized quasi-definite factorization of [[0, A', G'], [A, 0, 0], [G, 0, -W^2]]."""

    def __init__(self, A: sp.csc_matrix, G: sp.csc_matrix, settings: SolverSettings):
        self.__A = A
        self.__G = G
        self.__delta = settings.regularization
        self.__refine = settings.refinement_steps
        self.__n = A.shape[1]
        self.__p = A.shape[0]
        self.__m = G.shape[0]
        self.__matrix = None
        self.__lu = None

    def factor(self, wsquared: sp.spmatrix):
        """Factors the system, raising the regularization 100x on each singular attempt.

        Raises:
            RuntimeError: every attempt was singular
        """

        n, p, m = self.__n, self.__p, self.__m
        blocks = [[sp.csc_matrix((n, n)), self.__A.T, self.__G.T],
                  [self.__A, sp.csc_matrix((p, p)), None],
                  [self.__G, None, -wsquared]]
        keep = [i for i, size in enumerate((n, p, m)) if size > 0]
        self.__matrix = sp.bmat([[blocks[i][j] for j in keep] for i in keep], format='csc')

        delta = self.__delta
        for attempt in range(FACTOR_ATTEMPTS):
            reg = np.concatenate((np.full(n, delta), np.full(p + m, -delta)))
            try:
                self.__lu = spla.splu((self.__matrix + sp.diags(reg)).tocsc())
                return
            except RuntimeError as err:
                logging.debug('factor (attempt=%d) - regularization %.1e failed: %s', attempt, delta, err)
                delta *= 100.0
        raise RuntimeError(f'factor - singular after {FACTOR_ATTEMPTS} attempts, last regularization {delta / 100:.1e}')

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solves against the unregularized matrix; refinement runs while the residual keeps shrinking."""

        sol = self.__lu.solve(rhs)
        residual = rhs - self.__matrix @ sol
        norm = np.linalg.norm(residual)
        floor = 1e-14 * (1.0 + np.linalg.norm(rhs))

        for _ in range(self.__refine):
            if norm <= floor:
                break
            candidate = sol + self.__lu.solve(residual)
            candidate_residual = rhs - self.__matrix @ candidate
            candidate_norm = np.linalg.norm(candidate_residual)
            if not candidate_norm < norm:
                break
            sol, residual, norm = candidate, candidate_residual, candidate_norm
        return sol


def solve(program: ConicProgram, settings: Optional[SolverSettings] = None) -> Solution:
    """Solves a standard-form conic program.

    A NumericalError outcome is retried once with 100x the regularization and more refinement.

    Args:
        program (ConicProgram): program with validate(program) == []
        settings (Optional[SolverSettings]): budgets and tolerances, defaults if None

    Raises:
        DimensionError: the program fails validation

    Returns:
        Solution: status, primal-dual point, objective and residuals
    """

    settings = settings or SolverSettings()
    errors = validate(program)
    if errors:
        raise DimensionError('solve: invalid program: ' + '; '.join(errors))

    start = time.perf_counter()
    solution = _HsdeSolver(program, settings).run(start)
    if solution.status != SolverStatus.NUMERICAL_ERROR:
        return solution

    retry = settings.model_copy(update={
        'regularization': 100.0 * settings.regularization,
        'refinement_steps': max(settings.refinement_steps, 10)
    })
    logging.warning('solve (n=%d, m=%d) - retrying with regularization %.1e and %d refinement steps', program.n,
                    program.m, retry.regularization, retry.refinement_steps)
    second = _HsdeSolver(program, retry).run(start)
    if second.status != SolverStatus.NUMERICAL_ERROR or max(second.residuals) < max(solution.residuals):
        return second
    return solution


class _HsdeSolver:

    def __init__(self, program: ConicProgram, settings: SolverSettings):
        self.program = program
        self.settings = settings

        eq_rows, cone_rows = [], []
        for cone, rows in program.slices():
            (eq_rows if cone.kind == ConeKind.ZERO else cone_rows).extend(range(rows.start, rows.stop))
        self.eq_rows = np.asarray(eq_rows, dtype=np.int64)
        self.cone_rows = np.asarray(cone_rows, dtype=np.int64)

        A, self.row_scale, self.col_scale = equilibrate(program)
        b = self.row_scale * program.b
        self.A = A[self.eq_rows].tocsc()
        self.G = A[self.cone_rows].tocsc()
        self.b = b[self.eq_rows]
        self.h = b[self.cone_rows]
        self.c = self.col_scale * program.c
        self.cone = _ProductCone(program.cones)
        self.kkt = _KktSystem(self.A, self.G, settings)

    def split(self, sol: np.ndarray):
        n, p = self.A.shape[1], self.A.shape[0]
        return sol[:n], sol[n:n + p], sol[n + p:]

    def assemble(self, x, y, z, s) -> Solution:
        """Maps a scaled (x, y, z, s) point back to the unscaled standard-form row order."""

        program = self.program
        full_s = np.zeros(program.m)
        full_y = np.zeros(program.m)
        full_s[self.cone_rows] = s
        full_y[self.eq_rows] = y
        full_y[self.cone_rows] = z
        x = self.col_scale * x
        full_s /= self.row_scale
        full_y *= self.row_scale
        residuals = _residuals(program.A, program.b, program.c, x, full_s, full_y)
        return Solution(SolverStatus.MAX_ITER_REACHED, x, full_s, full_y,
                        float(program.c @ x) + program.obj_offset, 0, residuals)

    def initial_point(self):
        e = self.cone.unit()
        self.kkt.factor(sp.identity(self.cone.dim, format='csc'))

        x, _, z = self.split(self.kkt.solve(np.concatenate((np.zeros(self.c.size), self.b, self.h))))
        s = -z
        _, y, z = self.split(self.kkt.solve(np.concatenate((-self.c, np.zeros(self.b.size + self.h.size)))))

        for vec in (s, z):
            shift = -self.cone.min_eig(vec) if self.cone.dim else -1.0
            if shift >= -1e-8 * max(np.linalg.norm(vec), 1.0):
                vec += (1.0 + shift) * e

        return x, y, z, s, 1.0, 1.0

    def run(self, start: float) -> Solution:
        settings = self.settings
        c, b, h = self.c, self.b, self.h
        cone = self.cone
        e = cone.unit()

        try:
            x, y, z, s, tau, kappa = self.initial_point()
        except RuntimeError as err:
            logging.error('solve (init) - factorization failed: %s', err)
            return self.finish(self.assemble(np.zeros(c.size), np.zeros(b.size), np.zeros(h.size), np.zeros(h.size)),
                               SolverStatus.NUMERICAL_ERROR, 0, start)

        best = None
        for it in range(settings.max_iter + 1):
            candidate = self.assemble(x / tau, y / tau, z / tau, s / tau)
            if candidate.residuals.within(settings):
                return self.finish(candidate, SolverStatus.OPTIMAL, it, start)
            if best is None or max(candidate.residuals) < max(best.residuals):
                best = candidate

            certificate = self.certificate(x, y, z, s)
            if certificate is not None:
                return self.finish(certificate[1], certificate[0], it, start)

            if it == settings.max_iter:
                break
            if settings.time_limit_seconds is not None and time.perf_counter() - start > settings.time_limit_seconds:
                logging.warning('solve (it=%d) - time limit of %.1fs reached', it, settings.time_limit_seconds)
                break

            rx = self.A.T @ y + self.G.T @ z + c * tau
            ry = b * tau - self.A @ x
            rz = h * tau - self.G @ x - s
            rt = kappa + c @ x + b @ y + h @ z
            mu = (s @ z + tau * kappa) / (cone.degree + 1)

            try:
                scaling = _Scaling(cone, s, z)
                lmbda = scaling.apply(z)
                self.kkt.factor(scaling.squared())
                x2, y2, z2 = self.split(self.kkt.solve(np.concatenate((-c, b, h))))
            except (RuntimeError, FloatingPointError, ValueError) as err:
                logging.warning('solve (it=%d) - linear system breakdown: %s', it, err)
                return self.stalled(best, it, start)

            denom_base = -kappa / tau + c @ x2 + b @ y2 + h @ z2

            def direction(eta: float, ds: np.ndarray, dk: float):
                u = cone.divide(lmbda, ds)
                wu = scaling.apply(u)
                x1, y1, z1 = self.split(self.kkt.solve(np.concatenate((-eta * rx, eta * ry, eta * rz - wu))))
                dtau = (-eta * rt - dk / tau - c @ x1 - b @ y1 - h @ z1) / denom_base
                dx, dy, dz = x1 + dtau * x2, y1 + dtau * y2, z1 + dtau * z2
                wdz = scaling.apply(dz)
                dsl = scaling.apply(u - wdz)
                dkappa = (dk - kappa * dtau) / tau
                return dx, dy, dz, dsl, dtau, dkappa, u - wdz, wdz

            def step_to_boundary(dz, dsl, dtau, dkappa) -> float:
                alpha = min(cone.max_step(s, dsl), cone.max_step(z, dz))
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkappa < 0:
                    alpha = min(alpha, -kappa / dkappa)
                return alpha

            affine = direction(1.0, -cone.product(lmbda, lmbda), -tau * kappa)
            alpha_aff = min(1.0, step_to_boundary(affine[2], affine[3], affine[4], affine[5]))
            sigma = (1.0 - alpha_aff)**3

            ds = -cone.product(lmbda, lmbda) - cone.product(affine[6], affine[7]) + sigma * mu * e
            dk = -tau * kappa - affine[4] * affine[5] + sigma * mu
            dx, dy, dz, dsl, dtau, dkappa, _, _ = direction(1.0 - sigma, ds, dk)
            alpha = min(1.0, STEP_FRACTION * step_to_boundary(dz, dsl, dtau, dkappa))

            if not np.isfinite(alpha) or alpha < MIN_STEP or not np.all(np.isfinite(dx)):
                logging.warning('solve (it=%d) - step length %.2e, no further progress', it, alpha)
                return self.stalled(best, it, start)

            x, y, z, s = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * dsl
            tau, kappa = tau + alpha * dtau, kappa + alpha * dkappa

            logging.debug('solve (it=%d) - pres %.2e dres %.2e gap %.2e mu %.2e sigma %.3f step %.3f', it,
                          *candidate.residuals, mu, sigma, alpha)

        return self.finish(best, SolverStatus.MAX_ITER_REACHED, settings.max_iter, start)

    def certificate(self, x, y, z, s):
        """Detects infeasibility from the unnormalized embedding iterate."""

        settings = self.settings
        by = self.b @ y + self.h @ z
        if by < 0:
            dual_ray = np.linalg.norm(self.A.T @ y + self.G.T @ z)
            if dual_ray <= settings.tol_primal * -by:
                solution = self.assemble(np.zeros_like(x), y / -by, z / -by, np.zeros_like(s))
                solution.objective = np.inf
                return SolverStatus.PRIMAL_INFEASIBLE, solution

        cx = self.c @ x
        if cx < 0:
            primal_ray = max(np.linalg.norm(self.A @ x), np.linalg.norm(self.G @ x + s))
            if primal_ray <= settings.tol_dual * -cx:
                solution = self.assemble(x / -cx, np.zeros_like(y), np.zeros_like(z), s / -cx)
                solution.objective = -np.inf
                return SolverStatus.DUAL_INFEASIBLE, solution

        return None

    def stalled(self, best: Optional[Solution], it: int, start: float) -> Solution:
        """Breakdown before the budget ran out; reports the best point seen under NumericalError."""

        if best is None:
            best = self.assemble(np.zeros(self.c.size), np.zeros(self.b.size), np.zeros(self.h.size),
                                 np.zeros(self.h.size))
        return self.finish(best, SolverStatus.NUMERICAL_ERROR, it, start)

    def finish(self, solution: Solution, status: SolverStatus, it: int, start: float) -> Solution:
        solution.status = status
        solution.iterations = it
        solution.solve_time = time.perf_counter() - start
        solution.info = {'eq_rows': int(self.eq_rows.size), 'cone_rows': int(self.cone_rows.size)}

        level = logging.DEBUG if status == SolverStatus.OPTIMAL else logging.WARNING
        logging.log(level, 'solve (n=%d, m=%d) - %s after %d iterations, residuals %.2e/%.2e/%.2e',
                    self.program.n, self.program.m, status.value, it, *solution.residuals)
        return solution
