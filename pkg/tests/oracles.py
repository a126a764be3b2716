"""Independent reference solvers used by the tests.

Nothing here calls into the association or rectification solvers; the
link cost is recomputed from its definition and the QP is handed to a
generic convex solver.
"""
import math
import warnings
from functools import lru_cache

import numpy as np

from conftest import cone_cost_scalar


def link_cost(fi, fj, alpha, beta, max_gap, threshold):
    if fi.direction != fj.direction:
        return None
    gap = fj.t[0] - fi.t[-1]
    if not 0 < gap <= max_gap:
        return None
    c = cone_cost_scalar(list(fi.t), list(fi.x), list(fi.y), list(fj.t), list(fj.x), list(fj.y), alpha, beta)
    return None if c > threshold else c


def best_partition(frags, params):
    """Minimum circulation cost over every way of grouping ``frags`` into chains.

    A fragment is either left out (cost 0) or belongs to exactly one chain
    ordered by time. A chain costs entry + exit + its inclusions + its
    links. Exhaustive over subsets, so keep ``len(frags)`` small.
    """
    n = len(frags)
    c_en = -math.log(params.p_enter)
    c_ex = -math.log(params.p_exit)
    c_in = -math.log((1 - params.fp_prob) / params.fp_prob)
    thr = c_en + c_ex if params.max_transition_cost is None else params.max_transition_cost
    order = sorted(range(n), key=lambda i: frags[i].t[0])
    C = {}
    for i in range(n):
        for j in range(n):
            if i != j:
                C[i, j] = link_cost(frags[i], frags[j], params.alpha, params.beta, params.max_gap, thr)

    def chain(mask):
        idx = [i for i in order if mask >> i & 1]
        total = c_en + c_ex + c_in * len(idx)
        for a, b in zip(idx, idx[1:]):
            c = C[a, b]
            if c is None:
                return None
            total += c
        return total

    chain_cost = {}
    for m in range(1, 1 << n):
        chain_cost[m] = chain(m)

    @lru_cache(maxsize=None)
    def best(mask):
        if mask == 0:
            return 0.0, ()
        low = mask & -mask
        rest = mask ^ low
        cand = best(rest)  # lowest fragment excluded
        out = (cand[0], cand[1])
        sub = rest
        while True:
            blk = sub | low
            c = chain_cost[blk]
            if c is not None:
                r = best(mask ^ blk)
                if c + r[0] < out[0]:
                    out = (c + r[0], r[1] + (blk,))
            if sub == 0:
                break
            sub = (sub - 1) & rest
        return out

    cost, blocks = best((1 << n) - 1)
    chains = [[frags[i].id for i in order if b >> i & 1] for b in blocks]
    return cost, chains


def cvx_rectify(problem):
    """Solve one rectification axis with cvxpy; returns ``(x, e, objective)``."""
    import cvxpy as cp

    p = problem
    n, dt = p.n, p.dt
    x = cp.Variable(n)
    e = cp.Variable(p.z.size)
    D = {k: np.diff(np.eye(n), k, axis=0) / dt ** k for k in (1, 2, 3)}
    H = np.eye(n)[p.observed]
    obj = (cp.sum_squares(p.z - H @ x - e) + p.lam2 * cp.sum_squares(D[2] @ x)
           + p.lam3 * cp.sum_squares(D[3] @ x) + p.lam1 * cp.norm1(e))
    cons = [cp.abs(D[2] @ x) <= p.a_max, cp.abs(D[3] @ x) <= p.j_max]
    if p.direction is not None:
        cons.append(p.direction * (D[1] @ x) >= 0)
    prob = cp.Problem(cp.Minimize(obj), cons)
    with warnings.catch_warnings():
        # the tight tolerances sometimes end as "optimal_inaccurate"
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    assert prob.status in ("optimal", "optimal_inaccurate"), prob.status
    return x.value, e.value, p.objective(x.value, e.value)
