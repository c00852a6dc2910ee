"""
Sequential pairwise optimization of the SVM dual

    min  1/2 a'Qa + p'a    s.t.  y'a = const,  0 <= a_i <= C_i

with Q already signed (Q_ij = y_i y_j K_ij for classification, K_ij for
one-class). The working pair is the maximal violating pair with the
second-order choice of j; a pair update is solved analytically and clipped
to the box.
"""
import logging
from dataclasses import dataclass

import numpy as np

from cdpbench.exceptions import SolverError

logger = logging.getLogger(__name__)

TAU = 1e-12
MAX_ITER = 1_000_000
REFRESH_EVERY = 1000


@dataclass
class DualSolution:
    alpha: np.ndarray
    gradient: np.ndarray
    rho: float
    iterations: int
    violation: float


def _violating_sets(alpha, y, upper):
    up = ((y > 0) & (alpha < upper)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < upper))
    return up, low


def max_violation(alpha, gradient, y, upper):
    """m(a) - M(a): zero at an exact KKT point, the stopping quantity otherwise."""
    up, low = _violating_sets(alpha, y, upper)
    if not up.any() or not low.any():
        return 0.0
    score = -y * gradient
    return float(score[up].max() - score[low].min())


def compute_rho(alpha, gradient, y, upper):
    """Offset from free variables, or the midpoint of the feasible interval."""
    y_grad = y * gradient
    at_upper = alpha >= upper
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(y_grad[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = y_grad[ub_mask].min() if ub_mask.any() else np.inf
    lb = y_grad[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isinf(ub) or np.isinf(lb):
        return float(ub if np.isfinite(ub) else lb)
    return float((ub + lb) / 2.0)


def _select_pair(alpha, gradient, y, upper, Q, diag):
    up, low = _violating_sets(alpha, y, upper)
    score = -y * gradient
    if not up.any() or not low.any():
        return -1, -1, 0.0
    up_idx = np.flatnonzero(up)
    i = int(up_idx[np.argmax(score[up_idx])])
    g_max = score[i]

    low_idx = np.flatnonzero(low)
    violation = float(g_max - score[low_idx].min())
    b = g_max - score[low_idx]
    candidates = low_idx[b > 0]
    if candidates.size == 0:
        return i, -1, violation
    b = b[b > 0]
    a = diag[i] + diag[candidates] - 2.0 * y[i] * y[candidates] * Q[i, candidates]
    a = np.where(a > 0, a, TAU)
    j = int(candidates[np.argmin(-(b * b) / a)])
    return i, j, violation


def _update_pair(alpha, i, j, y, upper, Q, gradient):
    ci, cj = upper[i], upper[j]
    ai, aj = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
        quad = quad if quad > 0 else TAU
        delta = (-gradient[i] - gradient[j]) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > ci - cj:
            if ai > ci:
                ai, aj = ci, ci - diff
        elif aj > cj:
            aj, ai = cj, cj + diff
    else:
        quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
        quad = quad if quad > 0 else TAU
        delta = (gradient[i] - gradient[j]) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > ci:
            if ai > ci:
                ai, aj = ci, total - ci
        elif aj < 0:
            aj, ai = 0.0, total
        if total > cj:
            if aj > cj:
                aj, ai = cj, total - cj
        elif ai < 0:
            ai, aj = 0.0, total
    return ai, aj


def solve_dual(Q, p, y, upper, alpha0, tol=1e-6, max_iter=MAX_ITER):
    """Solve the box- and equality-constrained dual to a KKT violation below `tol`."""
    Q = np.asarray(Q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), y.shape).copy()
    alpha = np.array(alpha0, dtype=np.float64)
    diag = np.diag(Q).copy()
    gradient = Q @ alpha + p

    iteration = 0
    violation = np.inf
    while iteration < max_iter:
        i, j, violation = _select_pair(alpha, gradient, y, upper, Q, diag)
        if i < 0 or j < 0 or violation < tol:
            # confirm on a freshly computed gradient before stopping
            gradient = Q @ alpha + p
            violation = max_violation(alpha, gradient, y, upper)
            if violation < tol:
                break
            i, j, violation = _select_pair(alpha, gradient, y, upper, Q, diag)
            if i < 0 or j < 0:
                break

        old_i, old_j = alpha[i], alpha[j]
        alpha[i], alpha[j] = _update_pair(alpha, i, j, y, upper, Q, gradient)
        gradient += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)

        iteration += 1
        if iteration % REFRESH_EVERY == 0:
            gradient = Q @ alpha + p
    else:
        raise SolverError(f'SVM dual did not converge within {max_iter} pair updates '
                          f'(KKT violation {violation:.3g})')

    rho = compute_rho(alpha, gradient, y, upper)
    logger.debug('dual solved in %d pair updates, violation %.3g', iteration, violation)
    return DualSolution(alpha=alpha, gradient=gradient, rho=rho, iterations=iteration, violation=violation)
