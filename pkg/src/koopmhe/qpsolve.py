"""Convex QP solver for the estimator: ADMM with box constraints plus a
dense KKT reference solver for the equality-only case.

Problem form:

    min 0.5 x' Hc x + g' x
    s.t. Aeq x = beq,   lb <= x <= ub   (per-variable bounds, +-inf allowed)

The iterative solver is operator splitting in the OSQP style: constraint
rows are [Aeq; selector of bounded variables], equality rows carry a
1000x-larger penalty, over-relaxation 1.6, adaptive penalty with
refactorization, and a final polishing step that re-solves the detected
active set through the KKT solver. All arithmetic is deterministic.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigInvalid, DimensionMismatch, SingularKkt

STATUS_SOLVED = "solved"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible-suspected"


@dataclass
class QpProblem:
    """PSD quadratic cost, linear equalities, optional per-variable boxes."""

    Hc: np.ndarray
    g: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    psd_shift: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.Hc = np.asarray(self.Hc, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.Hc.shape != (n, n):
            raise DimensionMismatch(f"Hc is {self.Hc.shape}, expected ({n},{n})")
        scale = np.abs(self.Hc).max() + 1.0
        if np.abs(self.Hc - self.Hc.T).max() > 1e-10 * scale:
            raise ConfigInvalid("cost matrix is not symmetric")
        self.Hc = 0.5 * (self.Hc + self.Hc.T)
        self.psd_shift = self._psd_check(scale)
        if self.Aeq is not None:
            self.Aeq = np.asarray(self.Aeq, dtype=float)
            self.beq = np.asarray(self.beq, dtype=float).ravel()
            if self.Aeq.shape != (self.beq.size, n):
                raise DimensionMismatch(
                    f"Aeq is {self.Aeq.shape}, expected ({self.beq.size},{n})")
        if (self.lb is None) != (self.ub is None):
            raise ConfigInvalid("provide both bounds or neither")
        if self.lb is not None:
            self.lb = np.asarray(self.lb, dtype=float).ravel()
            self.ub = np.asarray(self.ub, dtype=float).ravel()
            if self.lb.size != n or self.ub.size != n:
                raise DimensionMismatch("bounds must have one entry per variable")
            if np.any(self.lb > self.ub):
                raise ConfigInvalid("lower bound exceeds upper bound")

    def _psd_check(self, scale: float) -> float:
        # attempted Cholesky, reporting the diagonal shift that succeeded
        for shift in (0.0, 1e-12 * scale, 1e-8 * scale):
            try:
                np.linalg.cholesky(self.Hc + shift * np.eye(self.g.size))
                return shift
            except np.linalg.LinAlgError:
                continue
        raise ConfigInvalid("cost matrix is not positive semidefinite")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m_eq(self) -> int:
        return 0 if self.Aeq is None else self.Aeq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Hc @ x + self.g @ x)

    def to_dict(self) -> dict:
        def mat(a):
            return None if a is None else np.asarray(a).reshape(-1).tolist()
        return {"n": self.n, "m_eq": self.m_eq,
                "Hc": mat(self.Hc), "g": mat(self.g),
                "Aeq": mat(self.Aeq), "beq": mat(self.beq),
                "lb": mat(self.lb), "ub": mat(self.ub)}

    def dump_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh)


@dataclass
class QpSolution:
    x: np.ndarray
    lam_eq: np.ndarray          # equality multipliers
    nu_box: np.ndarray          # bound multipliers (full length n)
    r_prim: float
    r_dual: float
    iterations: int
    status: str
    objective: float
    polished: bool = False
    kkt_regularized: bool = False

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "lam_eq": self.lam_eq.tolist(),
                "nu_box": self.nu_box.tolist(), "r_prim": self.r_prim,
                "r_dual": self.r_dual, "iterations": self.iterations,
                "status": self.status, "objective": self.objective,
                "polished": self.polished}


def kkt_solve(Hc, g, Aeq=None, beq=None) -> QpSolution:
    """Equality-constrained QP via one dense factorization of the KKT system.

    Regularizes Hc by +1e-10 I (reported on the solution) when the plain
    system is singular; raises SingularKkt if that still fails.
    """
    Hc = np.asarray(Hc, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    n = g.size
    if Aeq is None or (hasattr(Aeq, "shape") and Aeq.shape[0] == 0):
        Aeq = np.zeros((0, n))
        beq = np.zeros(0)
    Aeq = np.asarray(Aeq, dtype=float)
    beq = np.asarray(beq, dtype=float).ravel()
    m = Aeq.shape[0]
    rhs = np.concatenate([-g, beq])
    scale = max(np.abs(Hc).max(), np.abs(Aeq).max() if m else 0.0, 1.0)

    def attempt(H):
        K = np.zeros((n + m, n + m))
        K[:n, :n] = H
        K[:n, n:] = Aeq.T
        K[n:, :n] = Aeq
        try:
            with warnings.catch_warnings():
                # singularity is an expected probe outcome here; the residual
                # check below decides whether the solve is usable
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu = scipy.linalg.lu_factor(K, check_finite=False)
                sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(sol)):
            return None
        if np.linalg.norm(K @ sol - rhs, np.inf) > 1e-6 * scale * (
                np.linalg.norm(rhs, np.inf) + 1.0):
            return None
        return sol

    sol = attempt(Hc)
    regularized = False
    if sol is None:
        sol = attempt(Hc + 1e-10 * np.eye(n))
        regularized = True
    if sol is None:
        raise SingularKkt("KKT system singular even after regularization")
    x, lam = sol[:n], sol[n:]
    r_prim = float(np.linalg.norm(Aeq @ x - beq, np.inf)) if m else 0.0
    r_dual = float(np.linalg.norm(Hc @ x + g + Aeq.T @ lam, np.inf))
    return QpSolution(x=x, lam_eq=lam, nu_box=np.zeros(n),
                      r_prim=r_prim, r_dual=r_dual, iterations=1,
                      status=STATUS_SOLVED,
                      objective=float(0.5 * x @ Hc @ x + g @ x),
                      kkt_regularized=regularized)


def _residuals(prob: QpProblem, x, lam, nu):
    """True KKT residuals: primal (eq + box violation), dual, complementarity."""
    r_prim = 0.0
    if prob.m_eq:
        r_prim = np.linalg.norm(prob.Aeq @ x - prob.beq, np.inf)
    comp = 0.0
    if prob.lb is not None:
        viol = np.maximum(prob.lb - x, 0.0) + np.maximum(x - prob.ub, 0.0)
        viol = np.where(np.isfinite(viol), viol, 0.0)
        r_prim = max(r_prim, viol.max() if viol.size else 0.0)
        up = np.maximum(nu, 0.0)
        dn = np.maximum(-nu, 0.0)
        gap_u = np.where(np.isfinite(prob.ub), np.abs(prob.ub - x), np.inf)
        gap_l = np.where(np.isfinite(prob.lb), np.abs(x - prob.lb), np.inf)
        comp_u = np.where(up > 0, up * np.minimum(gap_u, 1e20), 0.0)
        comp_d = np.where(dn > 0, dn * np.minimum(gap_l, 1e20), 0.0)
        comp = max(comp_u.max(), comp_d.max()) if x.size else 0.0
    dual_vec = prob.Hc @ x + prob.g + nu
    if prob.m_eq:
        dual_vec = dual_vec + prob.Aeq.T @ lam
    return float(r_prim), float(np.linalg.norm(dual_vec, np.inf)), float(comp)


def _polish(prob: QpProblem, x, y_box, sel, tol_primal):
    """Re-solve on the detected active set; adopt only if feasible and exact."""
    n = prob.n
    act_lo = act_hi = np.zeros(0, dtype=int)
    if sel.size:
        xs, ys = x[sel], y_box
        lo, hi = prob.lb[sel], prob.ub[sel]
        act_lo = sel[(np.isfinite(lo)) & (xs - lo <= 10 * tol_primal) & (ys < 0)]
        act_hi = sel[(np.isfinite(hi)) & (hi - xs <= 10 * tol_primal) & (ys > 0)]
    rows = []
    rhs = []
    if prob.m_eq:
        rows.append(prob.Aeq)
        rhs.append(prob.beq)
    for idxs, bnd in ((act_lo, prob.lb), (act_hi, prob.ub)):
        for i in idxs:
            row = np.zeros(n)
            row[i] = 1.0
            rows.append(row[None, :])
            rhs.append([bnd[i]])
    A = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.concatenate([np.atleast_1d(r) for r in rhs]) if rhs else np.zeros(0)
    try:
        ref = kkt_solve(prob.Hc, prob.g, A, b)
    except SingularKkt:
        return None
    xp = ref.x
    if prob.lb is not None:
        if np.any(xp < prob.lb - 10 * tol_primal) or np.any(xp > prob.ub + 10 * tol_primal):
            return None
    lam = ref.lam_eq[:prob.m_eq]
    nu = np.zeros(n)
    k = prob.m_eq
    for i in act_lo:
        nu[i] = ref.lam_eq[k]
        k += 1
    for i in act_hi:
        nu[i] = ref.lam_eq[k]
        k += 1
    return xp, lam, nu


def solve_qp(prob: QpProblem, tol_primal: float = 1e-8, tol_dual: float = 1e-8,
             max_iter: int = 20000, warm_start: np.ndarray | None = None,
             rho: float = 0.1, sigma: float = 1e-6,
             over_relax: float = 1.6, cache: dict | None = None) -> QpSolution:
    """First-order solve of the boxed QP with over-relaxed ADMM plus polish.

    Returns a solution whose status is `solved` (residuals within the
    tolerances), `max_iter` (best iterate so far), or `infeasible-suspected`
    (primal residual stagnated well above tolerance).

    `cache`, when passed, reuses the constraint matrix, penalty vector, and
    KKT factorization across calls. Valid only for problems sharing Hc, Aeq,
    and bounds (only g/beq may differ); the caller owns that guarantee.
    """
    n = prob.n
    sel = np.array([], dtype=int)
    if prob.lb is not None:
        sel = np.flatnonzero(np.isfinite(prob.lb) | np.isfinite(prob.ub))
    m_eq = prob.m_eq
    m = m_eq + sel.size

    if m == 0:
        # unconstrained: a single regularized solve
        ref = kkt_solve(prob.Hc, prob.g)
        return ref

    if cache is not None and cache.get("key") == (n, m):
        A = cache["A"]                  # row-equilibrated
        row_scale = cache["row_scale"]
        rho_vec = cache["rho_vec"]
        cho = cache["cho"]
    else:
        A = np.zeros((m, n))
        if sel.size:
            A[np.arange(m_eq, m), sel] = 1.0
        if m_eq:
            A[:m_eq] = prob.Aeq
        # row equilibration keeps the reduced KKT matrix well conditioned
        # (Hankel rows can dwarf the sigma * I floor by many decades)
        row_scale = 1.0 / np.maximum(np.linalg.norm(A, axis=1), 1e-12)
        A = A * row_scale[:, None]
        rho_vec = np.full(m, rho)
        rho_vec[:m_eq] *= 1e3
        cho = None
    l = np.empty(m)
    u = np.empty(m)
    if m_eq:
        l[:m_eq] = u[:m_eq] = prob.beq * row_scale[:m_eq]
    if sel.size:
        l[m_eq:] = prob.lb[sel] * row_scale[m_eq:]
        u[m_eq:] = prob.ub[sel] * row_scale[m_eq:]

    def factor(rv):
        K = prob.Hc + sigma * np.eye(n) + (A.T * rv) @ A
        return scipy.linalg.cho_factor(K, lower=True, check_finite=False)

    if cho is None:
        cho = factor(rho_vec)
    if cache is not None:
        cache.update(key=(n, m), A=A, row_scale=row_scale,
                     rho_vec=rho_vec, cho=cho)
    x = np.zeros(n) if warm_start is None else np.asarray(warm_start, float).copy()
    if x.size != n:
        raise DimensionMismatch(f"warm start has {x.size} entries, expected {n}")
    z = np.clip(A @ x, l, u)
    y = np.zeros(m)

    best = None
    best_prim = np.inf
    stall_mark = np.inf
    stall_iter = 0
    status = STATUS_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        rhs = sigma * x - prob.g + A.T @ (rho_vec * z - y)
        x_t = scipy.linalg.cho_solve(cho, rhs, check_finite=False)
        z_t = A @ x_t
        x = over_relax * x_t + (1.0 - over_relax) * x
        z_hat = over_relax * z_t + (1.0 - over_relax) * z
        z = np.clip(z_hat + y / rho_vec, l, u)
        y = y + rho_vec * (z_hat - z)

        if it % 10 == 0 or it == max_iter:
            y_orig = y * row_scale
            lam = y_orig[:m_eq]
            nu = np.zeros(n)
            nu[sel] = y_orig[m_eq:]
            r_prim, r_dual, comp = _residuals(prob, x, lam, nu)
            if r_prim < best_prim:
                best_prim = r_prim
                best = (x.copy(), lam.copy(), nu.copy(), r_prim, r_dual, it)
            if r_prim <= tol_primal and r_dual <= tol_dual and comp <= tol_dual:
                status = STATUS_SOLVED
                best = (x.copy(), lam.copy(), nu.copy(), r_prim, r_dual, it)
                break
            # adaptive penalty on the scaled residual ratio
            if it % 100 == 0:
                scale_p = max(np.linalg.norm(A @ x, np.inf),
                              np.linalg.norm(z, np.inf), 1.0)
                scale_d = max(np.linalg.norm(prob.Hc @ x, np.inf),
                              np.linalg.norm(A.T @ y, np.inf),
                              np.linalg.norm(prob.g, np.inf), 1.0)
                ratio = (r_prim / scale_p) / max(r_dual / scale_d, 1e-16)
                if ratio > 10.0 or ratio < 0.1:
                    rho_vec = np.clip(rho_vec * np.sqrt(ratio), 1e-8, 1e8)
                    cho = factor(rho_vec)
                    if cache is not None:
                        cache.update(rho_vec=rho_vec, cho=cho)
            # stagnation: primal residual stuck far above tolerance
            if it % 500 == 0:
                if (it >= 1000 and best_prim > 1e3 * tol_primal
                        and best_prim > 0.99 * stall_mark
                        and it - stall_iter >= 500):
                    status = STATUS_INFEASIBLE
                    break
                if best_prim < 0.99 * stall_mark:
                    stall_mark = best_prim
                    stall_iter = it

    if best is None:
        y_orig = y * row_scale
        lam = y_orig[:m_eq]
        nu = np.zeros(n)
        nu[sel] = y_orig[m_eq:]
        r_prim, r_dual, _ = _residuals(prob, x, lam, nu)
        best = (x, lam, nu, r_prim, r_dual, it)
    xb, lamb, nub, r_prim, r_dual, it_b = best

    polished = False
    if status == STATUS_SOLVED and sel.size:
        # no bounded variables means no active set to polish
        out = _polish(prob, xb, (y * row_scale)[m_eq:], sel, tol_primal)
        if out is not None:
            xp, lamp, nup = out
            rp, rd, cp = _residuals(prob, xp, lamp, nup)
            if max(rp, rd, cp) <= max(r_prim, r_dual, tol_dual):
                xb, lamb, nub, r_prim, r_dual = xp, lamp, nup, rp, rd
                polished = True

    return QpSolution(x=xb, lam_eq=lamb, nu_box=nub, r_prim=float(r_prim),
                      r_dual=float(r_dual), iterations=it, status=status,
                      objective=prob.objective(xb), polished=polished)
