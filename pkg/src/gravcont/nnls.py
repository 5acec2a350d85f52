"""Active-set non-negative least squares.

Solves ``min ||A phi - f||^2`` subject to ``phi >= 0`` with the
Lawson-Hanson active-set strategy.  The least-squares subproblem on the
passive (free) set is kept factorized and updated one column at a time,
either as a thin QR factorization of ``A[:, P]`` (default) or as a Cholesky
factor of the Gram block ``A[:, P].T @ A[:, P]``.

Also provides a KKT verifier and an exhaustive oracle for small problems.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, qr, qr_delete, solve_triangular
from scipy.linalg import norm as vector_norm

from .exceptions import CapacityError, DataError, ShapeError

_EPS = np.finfo(float).eps
# A column whose component orthogonal to the current passive columns is
# smaller than this fraction of its norm is treated as linearly dependent.
_DEPENDENCE_RTOL = 100 * _EPS
# Removing more than this many columns at once triggers a full refactorization.
_BULK_REMOVAL = 8

LS_SOLVERS = ("qr", "normal")


@dataclass(frozen=True)
class NnlsOptions:
    """Solver settings.

    Attributes
    ----------
    kkt_tolerance : float, optional
        Absolute tolerance on the dual vector ``w = A.T (f - A phi)``.
        Defaults to ``1e-10 * max|A.T f|``.
    max_outer_iterations : int, optional
        Budget of passive-set insertions.  Defaults to ``3 * n_columns``.
    ls_solver : {"qr", "normal"}
        Orthogonal factorization of the passive columns, or Cholesky of the
        normal equations (faster, squares the condition number).
    warm_start : bool
        Seed the passive set with the positive entries of the unconstrained
        least-squares solution instead of the empty set.  The optimum is the
        same when ``A`` has full column rank; it saves most of the insertions
        when the constraint is nearly inactive.
    """

    kkt_tolerance: float | None = None
    max_outer_iterations: int | None = None
    ls_solver: str = "qr"
    warm_start: bool = False

    def __post_init__(self):
        if self.kkt_tolerance is not None and not self.kkt_tolerance > 0:
            raise ValueError(f"kkt_tolerance must be > 0, got {self.kkt_tolerance!r}")
        if self.max_outer_iterations is not None and self.max_outer_iterations < 1:
            raise ValueError(
                f"max_outer_iterations must be >= 1, got {self.max_outer_iterations!r}"
            )
        if self.ls_solver not in LS_SOLVERS:
            raise ValueError(f"ls_solver must be one of {LS_SOLVERS}, got {self.ls_solver!r}")


@dataclass(frozen=True)
class NnlsResult:
    phi: np.ndarray
    residual_norm: float
    active_set: np.ndarray
    iterations: int
    converged: bool
    tolerance: float


@dataclass(frozen=True)
class KKTReport:
    feasible: bool
    max_positive_gradient: float
    max_complementarity_violation: float

    def __bool__(self):
        return self.feasible


def _check_system(A, f):
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ShapeError(f"A must be a non-empty matrix, got shape {A.shape}")
    if f.shape != (A.shape[0],):
        raise ShapeError(f"f must have shape ({A.shape[0]},), got {f.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(f))):
        raise DataError("A and f must be finite")
    return A, f


class _QRFactor:
    """Thin QR of the passive columns, ``A[:, P] = Q R``, plus ``c = Q.T f``."""

    def __init__(self, A, f):
        m, n = A.shape
        cap = min(m, n)
        self.A, self.f = A, f
        self.Q = np.empty((m, cap), order="F")
        self.R = np.zeros((cap, cap), order="F")
        self.c = np.zeros(cap)
        self.r = f.copy()  # f - Q c, the residual of the passive-set fit
        self.k = 0

    def append(self, j):
        k, m = self.k, self.A.shape[0]
        if k >= min(m, self.Q.shape[1]):
            return False
        a = self.A[:, j]
        anorm = vector_norm(a, check_finite=False)
        Qk = self.Q[:, :k]
        # classical Gram-Schmidt with one reorthogonalization pass
        s = Qk.T @ a
        v = a - Qk @ s
        s2 = Qk.T @ v
        v -= Qk @ s2
        s += s2
        rho = vector_norm(v, check_finite=False)
        if not rho > _DEPENDENCE_RTOL * anorm:
            return False
        q = v / rho
        self.Q[:, k] = q
        self.R[:k, k] = s
        self.R[k, k] = rho
        self.c[k] = q @ self.f
        self.r -= self.c[k] * q
        self.k = k + 1
        return True

    def pop(self):
        self.k -= 1
        self.r += self.c[self.k] * self.Q[:, self.k]
        self.R[: self.k + 1, self.k] = 0.0

    def _reset_residual(self):
        k = self.k
        self.r = self.f - self.Q[:, :k] @ self.c[:k]

    def remove(self, pos):
        k = self.k
        Q1, R1 = qr_delete(
            self.Q[:, :k], self.R[:k, :k], pos, 1, which="col", check_finite=False
        )
        # a square Q comes back in full mode; keep the thin part
        Q1, R1 = Q1[:, : k - 1], R1[: k - 1, : k - 1]
        self.Q[:, : k - 1] = Q1
        self.R[:k, :k] = 0.0
        self.R[: k - 1, : k - 1] = R1
        self.c[: k - 1] = Q1.T @ self.f
        self.k = k - 1
        self._reset_residual()

    def refactor(self, cols):
        k = len(cols)
        self.R[:, :] = 0.0
        self.k = 0
        if k == 0:
            self.r = self.f.copy()
            return []
        if k <= self.Q.shape[1]:
            Q1, R1 = qr(self.A[:, cols], mode="economic", check_finite=False)
            norms = np.array([vector_norm(self.A[:, j], check_finite=False) for j in cols])
            if np.all(np.abs(np.diag(R1)) > _DEPENDENCE_RTOL * norms):
                self.Q[:, :k] = Q1
                self.R[:k, :k] = R1
                self.c[:k] = Q1.T @ self.f
                self.k = k
                self._reset_residual()
                return []
        # rank deficient: rebuild column by column, skipping dependent ones
        self.R[:, :] = 0.0
        self.r = self.f.copy()
        return [p for p, j in enumerate(cols) if not self.append(j)]

    def solve(self):
        k = self.k
        return solve_triangular(self.R[:k, :k], self.c[:k], check_finite=False)

    def gradient(self, z):
        return self.A.T @ self.r, float(vector_norm(self.r, check_finite=False))


class _CholeskyFactor:
    """Upper Cholesky factor of the passive Gram block, ``R.T R = G[P, P]``."""

    def __init__(self, A, f):
        n = A.shape[1]
        self.A, self.f = A, f
        self.G = A.T @ A
        self.b = A.T @ f
        self.ff = float(f @ f)
        self.R = np.zeros((n, n), order="F")
        self.P = []
        self.k = 0

    def append(self, j):
        k = self.k
        g = self.G[j][self.P]
        s = solve_triangular(self.R[:k, :k], g, trans="T", check_finite=False) if k else g[:0]
        gjj = self.G[j, j]
        rho2 = gjj - s @ s
        if not rho2 > (_DEPENDENCE_RTOL**2) * gjj:
            return False
        self.R[:k, k] = s
        self.R[k, k] = np.sqrt(rho2)
        self.P.append(j)
        self.k = k + 1
        return True

    def pop(self):
        self.k -= 1
        self.P.pop()
        self.R[: self.k + 1, self.k] = 0.0

    def remove(self, pos):
        k = self.k
        _, R1 = qr_delete(np.eye(k), self.R[:k, :k], pos, 1, which="col", check_finite=False)
        self.R[:k, :k] = 0.0
        self.R[: k - 1, : k - 1] = R1[: k - 1]
        del self.P[pos]
        self.k = k - 1

    def refactor(self, cols):
        self.R[:, :] = 0.0
        self.P = []
        self.k = 0
        cols = list(cols)
        k = len(cols)
        if k:
            # one LAPACK call; same acceptance test as append() on every pivot
            try:
                R = cholesky(self.G[np.ix_(cols, cols)], check_finite=False)
                ok = np.all(np.diag(R) ** 2 > _DEPENDENCE_RTOL**2 * self.G[cols, cols])
            except LinAlgError:
                ok = False
            if ok:
                self.R[:k, :k] = R
                self.P = cols
                self.k = k
                return []
        return [p for p, j in enumerate(cols) if not self.append(j)]

    def solve(self):
        k = self.k
        y = solve_triangular(self.R[:k, :k], self.b[self.P], trans="T", check_finite=False)
        return solve_triangular(self.R[:k, :k], y, check_finite=False)

    def gradient(self, z):
        x = np.zeros(self.G.shape[0])
        x[self.P] = z
        Gx = self.G @ x
        # ||f - A x||^2 = f.f - 2 x.b + x.G.x, clipped against roundoff
        rr = self.ff - 2 * (x @ self.b) + x @ Gx
        return self.b - Gx, float(np.sqrt(max(rr, 0.0)))


def _pow2_scale(a) -> float:
    """Power of two that brings ``max|a|`` into ``[0.5, 1)``; 1 for zero data."""
    peak = float(np.max(np.abs(a)))
    if peak == 0.0:
        return 1.0
    # clamped so the factor itself stays a finite normal number
    return float(np.ldexp(1.0, int(np.clip(-np.frexp(peak)[1], -1000, 1000))))


def _unconstrained_support(A, f):
    m, n = A.shape
    if m == n:
        try:
            u = np.linalg.solve(A, f)
            if np.all(np.isfinite(u)):
                return np.flatnonzero(u > 0)
        except np.linalg.LinAlgError:
            pass
    u = np.linalg.lstsq(A, f, rcond=None)[0]
    return np.flatnonzero(u > 0)


def nnls_solve(
    A, f, options: NnlsOptions | None = None, trace=None, initial_support=None
) -> NnlsResult:
    """Non-negative least squares by the Lawson-Hanson active-set method.

    Parameters
    ----------
    A : array_like, shape (m, n)
    f : array_like, shape (m,)
    options : NnlsOptions, optional
    trace : callable, optional
        Called as ``trace(iteration, support_size, residual_norm)`` after
        every outer iteration (passive-set insertion plus the feasibility
        loop that follows it).
    initial_support : array_like of int, optional
        Column indices to start in the passive set, e.g. the support of a
        solution to a nearby problem.  Takes precedence over
        ``options.warm_start``.

    Returns
    -------
    NnlsResult
        ``converged`` is False when the iteration budget ran out, when no
        violating column could be added without losing numerical
        independence, or when the final iterate fails :func:`kkt_check`
        on the caller's ``A`` and ``f`` (data too badly conditioned for
        double precision).  ``phi`` is then the last feasible iterate.

    Notes
    -----
    The entering column is the one with the largest dual value
    ``w_j = (A.T (f - A phi))_j``, lowest index on ties.  A column dropped
    from the passive set is passed over for the next outer iteration
    whenever another violating column is available.
    """
    opts = options or NnlsOptions()
    A0, f0 = _check_system(A, f)
    m, n = A0.shape
    # exact power-of-two rescaling keeps squares and products of the data
    # clear of underflow and overflow without changing any pivot choice
    sa, sf = _pow2_scale(A0), _pow2_scale(f0)
    A = A0 * sa if sa != 1.0 else A0
    f = f0 * sf if sf != 1.0 else f0
    unit = sa / sf  # phi = unit * (scaled solution)
    w = A.T @ f
    wmax = float(np.max(np.abs(w)))
    # the tolerance is defined at the caller's scale and carried over exactly
    user_tol = opts.kkt_tolerance if opts.kkt_tolerance is not None else 1e-10 * wmax / (sa * sf)
    user_tol = max(user_tol, np.finfo(float).tiny)
    tol = user_tol * sa * sf
    max_iter = opts.max_outer_iterations or 3 * n

    fac = _QRFactor(A, f) if opts.ls_solver == "qr" else _CholeskyFactor(A, f)
    x = np.zeros(n)
    P = []  # passive indices, in factor column order
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    rnorm = float(vector_norm(f, check_finite=False))

    def feasibility_loop(z):
        # step back toward the current iterate until the LS solution is positive
        removed = []
        while np.any(z <= 0):
            xp = x[P]
            neg = z <= 0
            ratios = np.full(len(P), np.inf)
            # xp > 0 off the boundary, so the denominator only vanishes at xp = z = 0
            den = xp[neg] - z[neg]
            ratios[neg] = np.divide(xp[neg], den, out=np.zeros_like(den), where=den > 0)
            alpha = ratios.min()
            xp = xp + alpha * (z - xp)
            hit = np.flatnonzero(neg & (xp <= 10 * _EPS * max(1.0, np.max(np.abs(xp)))))
            hit = set(hit.tolist()) | {int(np.argmin(ratios))}
            for p in range(len(P)):
                x[P[p]] = 0.0 if p in hit else xp[p]
            for p in sorted(hit, reverse=True):
                removed.append(P[p])
                passive[P[p]] = False
                del P[p]
            if len(hit) > _BULK_REMOVAL:
                _refactor()
            else:
                for p in sorted(hit, reverse=True):
                    fac.remove(p)
            z = fac.solve() if P else np.zeros(0)
        return z, removed

    def _refactor():
        bad = fac.refactor(list(P))
        for p in sorted(bad, reverse=True):
            x[P[p]] = 0.0
            passive[P[p]] = False
            del P[p]

    if initial_support is not None:
        start = np.unique(np.asarray(initial_support, dtype=int))
        if start.size and (start[0] < 0 or start[-1] >= n):
            raise ShapeError(f"initial support indices out of range [0, {n})")
    elif opts.warm_start:
        start = _unconstrained_support(A, f)
    else:
        start = np.zeros(0, dtype=int)
    if start.size:
        P.extend(start.tolist())
        passive[P] = True
        _refactor()
        z = fac.solve() if P else np.zeros(0)
        if not np.all(np.isfinite(z)):
            # the start overflows in floating point; fall back to a cold start
            passive[P] = False
            P.clear()
            _refactor()
        elif P:
            z, _ = feasibility_loop(z)
            x[:] = 0.0
            x[P] = z
            w, rnorm = fac.gradient(z)

    iterations = 0
    converged = False
    rejected = np.zeros(n, dtype=bool)
    while True:
        cand = np.where(passive | rejected, -np.inf, w)
        pref = np.where(blocked, -np.inf, cand)
        if pref.max() > tol:
            j = int(np.argmax(pref))
        elif cand.max() > tol:
            j = int(np.argmax(cand))
        else:
            converged = not rejected.any() or not np.any(
                np.where(passive, -np.inf, w) > tol
            )
            break
        if iterations >= max_iter:
            break
        if not fac.append(j):
            rejected[j] = True
            continue
        P.append(j)
        passive[j] = True
        z = fac.solve()
        if not (z[-1] > 0 and np.all(np.isfinite(z))):
            # the entering column cannot carry a finite positive weight in floating point
            fac.pop()
            P.pop()
            passive[j] = False
            rejected[j] = True
            continue
        iterations += 1
        rejected[:] = False
        blocked[:] = False
        z, removed = feasibility_loop(z)
        blocked[removed] = True
        x[:] = 0.0
        x[P] = z
        w, rnorm = fac.gradient(z)
        if trace is not None:
            trace(iterations, len(P), rnorm / sf)

    with np.errstate(over="ignore"):
        phi = x * unit if unit != 1.0 else x.copy()
    if not np.all(np.isfinite(phi)):
        # the solution is not representable at the caller's scale
        phi = np.zeros(n)
        converged = False
    if converged and not kkt_check(A0, f0, phi, user_tol):
        # only for data beyond double precision (condition ~ 1/eps and up)
        converged = False
    return NnlsResult(
        phi=phi,
        residual_norm=float(vector_norm(A0 @ phi - f0, check_finite=False)),
        active_set=np.flatnonzero(phi == 0),
        iterations=iterations,
        converged=bool(converged),
        tolerance=float(user_tol),
    )


def kkt_check(A, f, phi, tol: float) -> KKTReport:
    """Verify the first-order optimality conditions of an NNLS candidate.

    With ``w = A.T (f - A phi)`` the conditions are ``phi >= 0``,
    ``w_j <= 0`` where ``phi_j == 0`` and ``w_j == 0`` where ``phi_j > 0``,
    each up to ``tol``.

    ``w`` is itself computed in floating point, so every bound is widened by
    the componentwise rounding error of that evaluation,
    ``(m + n + 2) * eps * (|A|.T (|f| + |A| |phi|))_j``.  Without it no
    floating-point ``phi`` could pass on badly scaled or ill-conditioned
    systems where ``tol`` sits below that floor.  The reported maxima are
    the raw values of ``w``.
    """
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if A.ndim != 2 or f.shape != (A.shape[0],) or phi.shape != (A.shape[1],):
        raise ShapeError(
            f"inconsistent shapes A{A.shape}, f{f.shape}, phi{phi.shape}"
        )
    w = A.T @ (f - A @ phi)
    zero = phi <= 0
    max_pos = float(np.max(w[zero], initial=-np.inf))
    max_comp = float(np.max(np.abs(w[~zero]), initial=0.0))
    feasible = bool(np.all(phi >= -tol))
    if feasible and not (max_pos <= tol and max_comp <= tol):
        absA = np.abs(A)
        floor = (sum(A.shape) + 2) * _EPS * (absA.T @ (np.abs(f) + absA @ np.abs(phi)))
        feasible = bool(
            np.all(w[zero] <= tol + floor[zero])
            and np.all(np.abs(w[~zero]) <= tol + floor[~zero])
        )
    return KKTReport(feasible, max_pos, max_comp)


#: Column bound for :func:`brute_force_nnls`.
BRUTE_FORCE_MAX_COLUMNS = 12


def brute_force_nnls(A, f, tol: float | None = None) -> np.ndarray:
    """Exhaustive NNLS over all supports; a reference for small problems.

    Each support is solved by an SVD-based unconstrained least squares.
    Candidates must be non-negative on the support with non-positive dual
    values off it.  Among the survivors the smallest objective wins, ties
    going to the smaller support and then to the lexicographically first.
    """
    A, f = _check_system(A, f)
    n = A.shape[1]
    if n > BRUTE_FORCE_MAX_COLUMNS:
        raise CapacityError(
            f"brute force limited to {BRUTE_FORCE_MAX_COLUMNS} columns, got {n}"
        )
    scale = max(1.0, float(np.max(np.abs(A.T @ f))), float(np.max(np.abs(A))) ** 2)
    tol = 1e-8 * scale if tol is None else tol
    obj_tol = 1e-12 * (1.0 + float(f @ f))
    best, best_obj = np.zeros(n), float(f @ f)
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            cols = list(support)
            sol = np.linalg.lstsq(A[:, cols], f, rcond=None)[0]
            if np.any(sol < 0):
                continue
            x = np.zeros(n)
            x[cols] = sol
            r = f - A @ x
            w = A.T @ r
            off = np.ones(n, dtype=bool)
            off[cols] = False
            if np.any(w[off] > tol):
                continue
            obj = float(r @ r)
            if obj < best_obj - obj_tol:
                best, best_obj = x, obj
    return best
