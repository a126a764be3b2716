"""Hot inner loops.

Each kernel has a numba-compiled version and a pure numpy/Python fallback.
Set ``TRAJRECON_NUMBA=0`` before import to force the fallback path (useful
for debugging and for the kernel benchmark).
"""
from __future__ import annotations

import heapq
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("TRAJRECON_NUMBA", "1").lower() not in ("0", "false", "no")

_EMPTY = np.zeros(0, dtype=np.int64)


def _jit(fn):
    if not USE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# Residual-graph conventions shared by the graph kernels
#
# Edge e runs src[e] -> dst[e] with unit capacity and cost[e]. With
# flow[e] == 0 it is traversable forward at +cost; with flow[e] == 1 only
# backward (dst -> src) at -cost. alive[e] == False edges are ignored.
# Incidence lists are forward-star linked lists over slots 2e (at src) and
# 2e+1 (at dst): head[node] -> first slot, nxt[slot] -> next slot or -1.
# --------------------------------------------------------------------------


def _pred_cycle_py(n, pred, src, dst, flow):
    stamp = [0] * n
    pred_l = pred.tolist()
    for v in range(n):
        if pred_l[v] < 0 or stamp[v]:
            continue
        u = v
        closed = False
        while True:
            if stamp[u]:
                closed = stamp[u] == v + 1
                break
            stamp[u] = v + 1
            e = pred_l[u]
            if e < 0:
                break
            u = int(src[e] if flow[e] == 0 else dst[e])
        if closed:
            cyc = []
            w = u
            while True:
                e = pred_l[w]
                cyc.append(e)
                w = int(src[e] if flow[e] == 0 else dst[e])
                if w == u:
                    break
            cyc.reverse()
            return np.array(cyc, dtype=np.int64)
    return _EMPTY


def _bf_negative_cycle_py(n, src, dst, cost, flow, alive, tol):
    live = np.flatnonzero(alive)
    if live.size == 0 or n == 0:
        return _EMPTY
    fwd = flow[live] == 0
    a = np.where(fwd, src[live], dst[live])
    b = np.where(fwd, dst[live], src[live])
    c = np.where(fwd, cost[live], -cost[live])
    dist = np.zeros(n)
    pred = np.full(n, -1, dtype=np.int64)
    for _ in range(n + 1):
        cand = dist[a] + c
        imp = cand < dist[b] - tol
        if not imp.any():
            return _EMPTY
        ib = b[imp]
        ic = cand[imp]
        ie = live[imp]
        order = np.lexsort((ie, ic, ib))
        ib, ic, ie = ib[order], ic[order], ie[order]
        first = np.ones(ib.size, dtype=bool)
        first[1:] = ib[1:] != ib[:-1]
        dist[ib[first]] = ic[first]
        pred[ib[first]] = ie[first]
        cyc = _pred_cycle_py(n, pred, src, dst, flow)
        if cyc.size:
            return cyc
    return _EMPTY


def _bf_negative_cycle_nb(n, src, dst, cost, flow, alive, tol):
    m = src.size
    dist = np.zeros(n)
    pred = np.full(n, -1, dtype=np.int64)
    stamp = np.zeros(n, dtype=np.int64)
    for it in range(n + 1):
        changed = False
        for e in range(m):
            if not alive[e]:
                continue
            if flow[e] == 0:
                a = src[e]
                b = dst[e]
                c = cost[e]
            else:
                a = dst[e]
                b = src[e]
                c = -cost[e]
            nd = dist[a] + c
            if nd < dist[b] - tol:
                dist[b] = nd
                pred[b] = e
                changed = True
        if not changed:
            return np.zeros(0, dtype=np.int64)
        # look for a cycle in the predecessor graph
        base = (it + 1) * (n + 1)
        for v in range(n):
            if pred[v] < 0 or stamp[v] > base:
                continue
            u = v
            tag = base + v + 1
            closed = False
            while True:
                if stamp[u] > base:
                    closed = stamp[u] == tag
                    break
                stamp[u] = tag
                e = pred[u]
                if e < 0:
                    break
                u = src[e] if flow[e] == 0 else dst[e]
            if closed:
                k = 0
                w = u
                while True:
                    e = pred[w]
                    k += 1
                    w = src[e] if flow[e] == 0 else dst[e]
                    if w == u:
                        break
                out = np.empty(k, dtype=np.int64)
                w = u
                for i in range(k):
                    e = pred[w]
                    out[k - 1 - i] = e
                    w = src[e] if flow[e] == 0 else dst[e]
                return out
    return np.zeros(0, dtype=np.int64)


def _dijkstra_impl(head, nxt, src, dst, cost, flow, alive, pi, source, is_target, n_targets):
    n = head.size
    dist = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    dist[source] = 0.0
    heap = [(0.0, source)]
    remaining = n_targets
    last = 0.0
    while len(heap) > 0:
        d, a = heapq.heappop(heap)
        if done[a] or d > dist[a]:
            continue
        done[a] = True
        last = d
        if is_target[a]:
            remaining -= 1
            if remaining <= 0:
                break
        slot = head[a]
        while slot >= 0:
            e = slot >> 1
            if alive[e]:
                b = -1
                c = 0.0
                if (slot & 1) == 0:
                    if flow[e] == 0:
                        b = dst[e]
                        c = cost[e]
                elif flow[e] == 1:
                    b = src[e]
                    c = -cost[e]
                if b >= 0 and not done[b]:
                    rc = c + pi[a] - pi[b]
                    if rc < 0.0:
                        rc = 0.0
                    nd = d + rc
                    if nd < dist[b]:
                        dist[b] = nd
                        pred[b] = e
                        heapq.heappush(heap, (nd, b))
            slot = nxt[slot]
    return dist, pred, done, last


def _iou_matrix_impl(ax0, ax1, ay0, ay1, bx0, bx1, by0, by1):
    na = ax0.size
    nb = bx0.size
    out = np.zeros((na, nb))
    for i in range(na):
        area_a = (ax1[i] - ax0[i]) * (ay1[i] - ay0[i])
        for j in range(nb):
            w = min(ax1[i], bx1[j]) - max(ax0[i], bx0[j])
            if w <= 0:
                continue
            h = min(ay1[i], by1[j]) - max(ay0[i], by0[j])
            if h <= 0:
                continue
            inter = w * h
            out[i, j] = inter / (area_a + (bx1[j] - bx0[j]) * (by1[j] - by0[j]) - inter)
    return out


def _iou_matrix_np(ax0, ax1, ay0, ay1, bx0, bx1, by0, by1):
    w = np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :])
    h = np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :])
    inter = np.clip(w, 0, None) * np.clip(h, 0, None)
    area_a = ((ax1 - ax0) * (ay1 - ay0))[:, None]
    area_b = ((bx1 - bx0) * (by1 - by0))[None, :]
    union = area_a + area_b - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


# --------------------------------------------------------------------------
# Rectification interior point method
#
# Same algorithm as the numpy path in rectify.solve_axis, written as plain
# loops so numba can compile the whole solve. Inequality blocks are given
# as parallel arrays (order k, sign, row scale, offset into the stacked
# rows); every block has n - k rows.
# --------------------------------------------------------------------------

def _stencil(k):
    if k == 1:
        return np.array([-1.0, 1.0])
    if k == 2:
        return np.array([1.0, -2.0, 1.0])
    return np.array([-1.0, 3.0, -3.0, 1.0])


def _g_apply(x, bk, bsign, bsc, boff, m_tot):
    n = x.size
    out = np.empty(m_tot)
    for b in range(bk.size):
        k = bk[b]
        st = _stencil(k)
        f = bsign[b] * bsc[b]
        o = boff[b]
        for r in range(n - k):
            acc = 0.0
            for c in range(k + 1):
                acc += st[c] * x[r + c]
            out[o + r] = f * acc
    return out


def _g_rmatvec(yv, n, bk, bsign, bsc, boff):
    out = np.zeros(n)
    for b in range(bk.size):
        k = bk[b]
        st = _stencil(k)
        f = bsign[b] * bsc[b]
        o = boff[b]
        for r in range(n - k):
            v = f * yv[o + r]
            for c in range(k + 1):
                out[r + c] += st[c] * v
    return out


def _quad_grad(x, w2, w3):
    n = x.size
    out = np.zeros(n)
    for k, wk in ((2, w2), (3, w3)):
        st = _stencil(k)
        for r in range(n - k):
            acc = 0.0
            for c in range(k + 1):
                acc += st[c] * x[r + c]
            acc *= wk
            for c in range(k + 1):
                out[r + c] += st[c] * acc
    return out


def _band_chol(A):
    # A[i, d] holds entry (i, i - d) of a symmetric matrix with 3 sub-diagonals;
    # returns L in the same layout, or a negative pivot flag in L[0, 0]
    n = A.shape[0]
    L = np.zeros((n, 4))
    for i in range(n):
        for d in range(3, 0, -1):
            j = i - d
            if j < 0:
                continue
            acc = A[i, d]
            for kk in range(max(i - 3, 0), j):
                acc -= L[i, i - kk] * L[j, j - kk]
            L[i, d] = acc / L[j, 0]
        acc = A[i, 0]
        for kk in range(max(i - 3, 0), i):
            acc -= L[i, i - kk] * L[i, i - kk]
        if acc <= 0.0:
            L[0, 0] = -1.0
            return L
        L[i, 0] = np.sqrt(acc)
    return L


def _band_solve(L, b):
    n = b.size
    y = np.empty(n)
    for i in range(n):
        acc = b[i]
        for d in range(1, 4):
            if i - d >= 0:
                acc -= L[i, d] * y[i - d]
        y[i] = acc / L[i, 0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for d in range(1, 4):
            if i + d < n:
                acc -= L[i + d, d] * x[i + d]
        x[i] = acc / L[i, 0]
    return x


def _step_len(v, dv):
    a = 1.0
    for i in range(v.size):
        if dv[i] < 0.0:
            r = -v[i] / dv[i]
            if r < a:
                a = r
    return a


def _qp_ipm_impl(zr, obs, n, w2, w3, lam1, h, bk, bsign, bsc, boff, max_iter):
    M = zr.size
    m_tot = h.size
    xi = np.zeros(n)
    u = np.ones(M)
    w = np.ones(M)
    yu = np.ones(M)
    yw = np.ones(M)
    s = np.maximum(h - _g_apply(xi, bk, bsign, bsc, boff, m_tot), 1.0)
    y = np.ones(m_tot)
    hscale = 1.0 + (np.max(np.abs(h)) if m_tot else 0.0)
    ntot = m_tot + 2 * M

    best_merit = np.inf
    best_it = 0
    best_xi = xi.copy()
    best_u = u.copy()
    best_w = w.copy()
    best_stats = np.zeros(3)
    it = 0
    while it < max_iter + 1:
        it += 1
        # residuals
        r = zr - xi[obs] - u + w
        gq = _quad_grad(xi, w2, w3)
        gc = _g_rmatvec(y, n, bk, bsign, bsc, boff)
        g = gq + gc
        for q in range(M):
            g[obs[q]] -= 2.0 * r[q]
        r_u = -2.0 * r + lam1 - yu
        r_w = 2.0 * r + lam1 - yw
        Gxi = _g_apply(xi, bk, bsign, bsc, boff, m_tot)
        r_c = Gxi + s - h
        dnorm = 1.0 + max(np.max(np.abs(gq)), np.max(np.abs(gc)), 2.0 * np.max(np.abs(r)), lam1)
        pres = (np.max(np.abs(r_c)) if m_tot else 0.0) / hscale
        dres = max(np.max(np.abs(g)), np.max(np.abs(r_u)), np.max(np.abs(r_w))) / dnorm
        gap = s @ y + u @ yu + w @ yw
        mu = gap / ntot
        # objective in shifted coordinates; the base line is free for every term
        d2 = xi[2:] - 2.0 * xi[1:-1] + xi[:-2]
        d3 = xi[3:] - 3.0 * xi[2:-1] + 3.0 * xi[1:-2] - xi[:-3]
        obj = r @ r + 0.5 * w2 * (d2 @ d2) + 0.5 * w3 * (d3 @ d3) + lam1 * np.sum(np.abs(u - w))
        rgap = gap / (1.0 + abs(obj))
        merit = max(pres, dres, rgap)
        if merit < best_merit:
            best_merit = merit
            best_it = it - 1  # Newton steps taken to reach this point
            best_xi[:] = xi
            best_u[:] = u
            best_w[:] = w
            best_stats[0] = pres
            best_stats[1] = dres
            best_stats[2] = rgap
        if it > max_iter:
            break
        if merit <= 1e-9 or (mu <= 1e-16 * hscale and merit > 10.0 * best_merit):
            break

        dc = y / s
        du = yu / u
        dw = yw / w
        det = 2.0 * du + 2.0 * dw + du * dw
        omega = 2.0 * du * dw / det

        A = np.zeros((n, 4))
        for k, wk in ((2, w2), (3, w3)):
            st = _stencil(k)
            for rr in range(n - k):
                for a in range(k + 1):
                    for c in range(a + 1):
                        A[rr + a, a - c] += wk * st[a] * st[c]
        for b in range(bk.size):
            k = bk[b]
            st = _stencil(k)
            o = boff[b]
            sc2 = bsc[b] * bsc[b]
            for rr in range(n - k):
                wt = dc[o + rr] * sc2
                for a in range(k + 1):
                    for c in range(a + 1):
                        A[rr + a, a - c] += wt * st[a] * st[c]
        for q in range(M):
            A[obs[q], 0] += omega[q]
        L = _band_chol(A)
        if L[0, 0] < 0.0:
            for i in range(n):
                A[i, 0] += 1e-12 * (1.0 + np.max(np.abs(A[:, 0])))
            L = _band_chol(A)

        dirs = np.zeros((7, max(n, m_tot, M)))
        for phase in range(2):
            if phase == 0:
                r_sc = s * y
                r_su = u * yu
                r_sw = w * yw
            else:
                dU0 = dirs[1, :M].copy()
                dW0 = dirs[2, :M].copy()
                ds0 = dirs[3, :m_tot].copy()
                dy0 = dirs[4, :m_tot].copy()
                dyu0 = dirs[5, :M].copy()
                dyw0 = dirs[6, :M].copy()
                ap = min(_step_len(s, ds0), _step_len(u, dU0), _step_len(w, dW0))
                ad = min(_step_len(y, dy0), _step_len(yu, dyu0), _step_len(yw, dyw0))
                mu_aff = ((s + ap * ds0) @ (y + ad * dy0) + (u + ap * dU0) @ (yu + ad * dyu0)
                          + (w + ap * dW0) @ (yw + ad * dyw0)) / ntot
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
                r_sc = s * y + ds0 * dy0 - sigma * mu
                r_su = u * yu + dU0 * dyu0 - sigma * mu
                r_sw = w * yw + dW0 * dyw0 - sigma * mu
            # solve, then one round of iterative refinement
            rg, ru, rw, rc = g, r_u, r_w, r_c
            rsc, rsu, rsw = r_sc, r_su, r_sw
            tot_xi = np.zeros(n)
            tot_U = np.zeros(M)
            tot_W = np.zeros(M)
            tot_s = np.zeros(m_tot)
            tot_y = np.zeros(m_tot)
            tot_yu = np.zeros(M)
            tot_yw = np.zeros(M)
            for rnd in range(2):
                b_u = -ru - rsu / u
                b_w = -rw - rsw / w
                rhs = -rg - _g_rmatvec(-rsc / s + dc * rc, n, bk, bsign, bsc, boff)
                for q in range(M):
                    rhs[obs[q]] -= 2.0 * (dw[q] * b_u[q] - du[q] * b_w[q]) / det[q]
                dxi = _band_solve(L, rhs)
                av = dxi[obs]
                dU = ((2.0 + dw) * (b_u - 2.0 * av) + 2.0 * (b_w + 2.0 * av)) / det
                dW = (2.0 * (b_u - 2.0 * av) + (2.0 + du) * (b_w + 2.0 * av)) / det
                dyu = -rsu / u - du * dU
                dyw = -rsw / w - dw * dW
                ds = -rc - _g_apply(dxi, bk, bsign, bsc, boff, m_tot)
                dy = -rsc / s - dc * ds
                tot_xi += dxi
                tot_U += dU
                tot_W += dW
                tot_s += ds
                tot_y += dy
                tot_yu += dyu
                tot_yw += dyw
                if rnd == 1:
                    break
                dr = tot_xi[obs] + tot_U - tot_W
                eg = _quad_grad(tot_xi, w2, w3) + _g_rmatvec(tot_y, n, bk, bsign, bsc, boff) + g
                for q in range(M):
                    eg[obs[q]] += 2.0 * dr[q]
                ru = 2.0 * dr - tot_yu + r_u
                rw = -2.0 * dr - tot_yw + r_w
                rc = _g_apply(tot_xi, bk, bsign, bsc, boff, m_tot) + tot_s + r_c
                rsc = y * tot_s + s * tot_y + r_sc
                rsu = yu * tot_U + u * tot_yu + r_su
                rsw = yw * tot_W + w * tot_yw + r_sw
                rg = eg
            dirs[0, :n] = tot_xi
            dirs[1, :M] = tot_U
            dirs[2, :M] = tot_W
            dirs[3, :m_tot] = tot_s
            dirs[4, :m_tot] = tot_y
            dirs[5, :M] = tot_yu
            dirs[6, :M] = tot_yw

        dxi = dirs[0, :n]
        dU = dirs[1, :M]
        dW = dirs[2, :M]
        ds = dirs[3, :m_tot]
        dy = dirs[4, :m_tot]
        dyu = dirs[5, :M]
        dyw = dirs[6, :M]
        alpha = 0.99 * min(_step_len(s, ds), _step_len(u, dU), _step_len(w, dW),
                           _step_len(y, dy), _step_len(yu, dyu), _step_len(yw, dyw))
        if alpha > 1.0:
            alpha = 1.0
        xi = xi + alpha * dxi
        u = u + alpha * dU
        w = w + alpha * dW
        s = s + alpha * ds
        y = y + alpha * dy
        yu = yu + alpha * dyu
        yw = yw + alpha * dyw
    return best_xi, best_u, best_w, best_it, best_stats


if USE_NUMBA:
    bellman_ford_negative_cycle = _jit(_bf_negative_cycle_nb)
    dijkstra_reduced = _jit(_dijkstra_impl)
    iou_matrix = _jit(_iou_matrix_impl)
    for _name in ("_stencil", "_g_apply", "_g_rmatvec", "_quad_grad", "_band_chol", "_band_solve", "_step_len"):
        globals()[_name] = _jit(globals()[_name])
    qp_ipm = _jit(_qp_ipm_impl)
else:
    bellman_ford_negative_cycle = _bf_negative_cycle_py
    dijkstra_reduced = _dijkstra_impl
    iou_matrix = _iou_matrix_np
    qp_ipm = None  # the numpy solver in rectify.py is the fallback

__all__ = ["USE_NUMBA", "bellman_ford_negative_cycle", "dijkstra_reduced", "iou_matrix", "qp_ipm"]
