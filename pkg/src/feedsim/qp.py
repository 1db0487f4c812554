"""Box-constrained damped least squares via a primal active-set method.

Solves   min_x  ||b - A x||^2 + lam ||x||^2   s.t.  lower <= x <= upper

The Tikhonov term (lam > 0) makes the Hessian positive definite, so the
active-set iteration terminates in finitely many steps with the exact
minimizer of each working-set subproblem.  Problems here are tiny (n = 7
joints), so dense factorizations are fine.
"""

from __future__ import annotations

import numpy as np


class InfeasibleBoundsError(ValueError):
    pass


def _check_bounds(lower, upper, n):
    lo = np.asarray(lower, dtype=float).reshape(-1)
    hi = np.asarray(upper, dtype=float).reshape(-1)
    if lo.shape != (n,) or hi.shape != (n,):
        raise ValueError("bounds must match the variable dimension")
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise ValueError("bounds must not be NaN")
    if np.any(lo > hi):
        raise InfeasibleBoundsError(f"lower > upper at indices {np.nonzero(lo > hi)[0]}")
    return lo, hi


def solve_box_ls(A, b, lam, lower, upper, max_iter=200):
    """Minimize ||b - A x||^2 + lam ||x||^2 over the box [lower, upper].

    Returns the minimizer x (shape (n,)), guaranteed inside the box exactly.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.shape[0]:
        raise ValueError("A and b dimensions disagree")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("A and b must be finite")
    if not (lam > 0.0):
        raise ValueError("damping lam must be > 0")
    n = A.shape[1]
    lo, hi = _check_bounds(lower, upper, n)

    Q = A.T @ A + lam * np.eye(n)   # SPD Hessian (times 1/2)
    c = A.T @ b

    x = np.clip(np.linalg.solve(Q, c), lo, hi)
    at_lo = x <= lo
    at_hi = x >= hi
    x[at_lo] = lo[at_lo]
    x[at_hi] = hi[at_hi]

    for _ in range(max_iter * max(1, n)):
        bound = at_lo | at_hi
        free = ~bound

        if np.any(free):
            rhs = c[free] - Q[np.ix_(free, bound)] @ x[bound]
            xf_star = np.linalg.solve(Q[np.ix_(free, free)], rhs)
        else:
            xf_star = np.empty(0)

        if np.any(free) and (np.any(xf_star < lo[free]) or np.any(xf_star > hi[free])):
            # step toward the subproblem optimum, stop at the first bound hit
            idx_free = np.nonzero(free)[0]
            xf = x[free]
            d = xf_star - xf
            alpha = 1.0
            hit = -1
            hit_side = 0
            for k, i in enumerate(idx_free):
                if d[k] > 1e-300:
                    a = (hi[i] - xf[k]) / d[k]
                    if a < alpha:
                        alpha, hit, hit_side = a, i, +1
                elif d[k] < -1e-300:
                    a = (lo[i] - xf[k]) / d[k]
                    if a < alpha:
                        alpha, hit, hit_side = a, i, -1
            x[free] = xf + alpha * d
            if hit >= 0:
                if hit_side > 0:
                    x[hit] = hi[hit]
                    at_hi[hit] = True
                else:
                    x[hit] = lo[hit]
                    at_lo[hit] = True
            continue

        if np.any(free):
            x[free] = xf_star

        # KKT multiplier check on the bound set
        g = Q @ x - c   # gradient / 2
        release = -1
        worst = 1e-12
        for i in np.nonzero(bound)[0]:
            viol = g[i] if at_lo[i] else -g[i]
            # at a lower bound optimality needs g >= 0; at upper, g <= 0
            if viol < -worst:
                worst = -viol
                release = i
        if release < 0:
            return x
        at_lo[release] = False
        at_hi[release] = False

    raise RuntimeError("active-set iteration failed to converge")


def kkt_residual(A, b, lam, lower, upper, x) -> float:
    """Max KKT violation of x for the box-constrained damped LS problem."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.shape[0]
    lo, hi = _check_bounds(lower, upper, n)
    g = (A.T @ A + lam * np.eye(n)) @ x - A.T @ b
    res = 0.0
    for i in range(n):
        res = max(res, lo[i] - x[i], x[i] - hi[i])  # primal feasibility
        if x[i] <= lo[i] + 1e-12:
            res = max(res, -g[i])
        elif x[i] >= hi[i] - 1e-12:
            res = max(res, g[i])
        else:
            res = max(res, abs(g[i]))
    return float(res)
