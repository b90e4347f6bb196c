"""Compiled inner loops for the sampler hot paths.

Pure-array kernels (numba, nopython, no fastmath so results are
reproducible): exhaustive M-nearest selection, one-off conditional moments,
the birth-death sweep over thinned points, per-point latent moments, and
batched kriging means.  All randomness is pre-drawn by the callers and
passed in as arrays, so the kernels are deterministic functions of their
inputs.
"""

import math

import numpy as np
from numba import njit

SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def _spd_solve(A, b, n):
    """In-place lower Cholesky of A[:n,:n] and solve into b[:n]; returns
    False when the matrix is not positive definite."""
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if s <= 0.0:
            return False
        djj = math.sqrt(s)
        A[j, j] = djj
        for i in range(j + 1, n):
            s2 = A[i, j]
            for k in range(j):
                s2 -= A[i, k] * A[j, k]
            A[i, j] = s2 / djj
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= A[i, k] * b[k]
        b[i] = s / A[i, i]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= A[k, i] * b[k]
        b[i] = s / A[i, i]
    return True


@njit(cache=True)
def _select_nearest(pts, cnt, tx, ty, M, skip, idx_out, d2_out):
    """Indices of the min(M, eligible) nearest of pts[:cnt] to (tx, ty),
    ties by lower index; slot order is scan-dependent but deterministic.
    Returns the set size."""
    if M <= 0:
        return 0
    k = 0
    worst = 0
    for i in range(cnt):
        if i == skip:
            continue
        dx = pts[i, 0] - tx
        dy = pts[i, 1] - ty
        d2 = dx * dx + dy * dy
        if k < M:
            idx_out[k] = i
            d2_out[k] = d2
            k += 1
            if k == M:
                worst = 0
                for j in range(1, M):
                    if d2_out[j] > d2_out[worst] or (
                        d2_out[j] == d2_out[worst] and idx_out[j] > idx_out[worst]
                    ):
                        worst = j
        elif d2 < d2_out[worst]:
            d2_out[worst] = d2
            idx_out[worst] = i
            worst = 0
            for j in range(1, M):
                if d2_out[j] > d2_out[worst] or (
                    d2_out[j] == d2_out[worst] and idx_out[j] > idx_out[worst]
                ):
                    worst = j
    return k


@njit(cache=True)
def _kriged_moments(pts, z, mu, k, mu_t, s2s, phis, jitter, idx_buf, d2_buf):
    """Kriging mean and variance from a preselected neighbor set."""
    prior = 0.0
    for c in range(len(s2s)):
        prior += s2s[c]
    if k == 0:
        return mu_t, prior
    C = np.empty((k, k))
    cv = np.empty(k)
    for a in range(k):
        ia = idx_buf[a]
        cva = 0.0
        da = math.sqrt(d2_buf[a])
        for c in range(len(s2s)):
            cva += s2s[c] * math.exp(-phis[c] * da)
        cv[a] = cva
        C[a, a] = prior + jitter
        for b in range(a + 1, k):
            ib = idx_buf[b]
            dx = pts[ia, 0] - pts[ib, 0]
            dy = pts[ia, 1] - pts[ib, 1]
            d = math.sqrt(dx * dx + dy * dy)
            v = 0.0
            for c in range(len(s2s)):
                v += s2s[c] * math.exp(-phis[c] * d)
            C[a, b] = v
            C[b, a] = v
    w = cv.copy()
    if not _spd_solve(C, w, k):
        raise ValueError("kriging system not positive definite")
    mean = mu_t
    var = prior
    for a in range(k):
        mean += w[a] * (z[idx_buf[a]] - mu[idx_buf[a]])
        var -= w[a] * cv[a]
    if var < 0.0:
        var = 0.0
    return mean, var


@njit(cache=True)
def _cond_moments(pts, z, mu, cnt, tx, ty, mu_t, s2s, phis, jitter, M,
                  idx_buf, d2_buf):
    """Kriging mean and variance at (tx, ty) given pts[:cnt], neighbors by
    exhaustive scan (the conditioning set mutates between calls)."""
    k = _select_nearest(pts, cnt, tx, ty, M, -1, idx_buf, d2_buf)
    return _kriged_moments(pts, z, mu, k, mu_t, s2s, phis, jitter,
                           idx_buf, d2_buf)


@njit(cache=True)
def bd_sweep(pts, z, mu, n, m0, lam, s2, phi, jitter, M,
             kinds, cand, cand_mu, normals, accept_u, death_u):
    """Birth-death Metropolis sweep; mutates pts/z/mu rows beyond n and
    returns (m, accepted)."""
    m = m0
    b = 0
    accepted = 0
    s2s = np.empty(1)
    phis = np.empty(1)
    s2s[0] = s2
    phis[0] = phi
    idx_buf = np.empty(M, dtype=np.int64)
    d2_buf = np.empty(M)
    for step in range(len(kinds)):
        if kinds[step]:
            cnt = n + m
            cm, cvar = _cond_moments(pts, z, mu, cnt, cand[b, 0], cand[b, 1],
                                     cand_mu[b], s2s, phis, jitter, M,
                                     idx_buf, d2_buf)
            zu = cm + math.sqrt(cvar) * normals[b]
            p_thin = 0.5 * math.erfc(zu / SQRT2)
            if accept_u[step] * (m + 1) < lam * p_thin:
                pts[cnt, 0] = cand[b, 0]
                pts[cnt, 1] = cand[b, 1]
                z[cnt] = zu
                mu[cnt] = cand_mu[b]
                m += 1
                accepted += 1
            b += 1
        elif m > 0:
            j = n + int(death_u[step] * m)
            p_thin = 0.5 * math.erfc(z[j] / SQRT2)
            if accept_u[step] * lam * p_thin < m:
                last = n + m - 1
                pts[j, 0] = pts[last, 0]
                pts[j, 1] = pts[last, 1]
                z[j] = z[last]
                mu[j] = mu[last]
                m -= 1
                accepted += 1
    return m, accepted


@njit(cache=True)
def _build_grid(pts, per_cell):
    """Counting-sort points into a uniform grid; returns
    (x0, y0, inv_cell, nx, ny, start, order)."""
    n = len(pts)
    x0 = pts[0, 0]
    x1 = pts[0, 0]
    y0 = pts[0, 1]
    y1 = pts[0, 1]
    for i in range(1, n):
        if pts[i, 0] < x0:
            x0 = pts[i, 0]
        elif pts[i, 0] > x1:
            x1 = pts[i, 0]
        if pts[i, 1] < y0:
            y0 = pts[i, 1]
        elif pts[i, 1] > y1:
            y1 = pts[i, 1]
    w_ = max(x1 - x0, 1e-300)
    h_ = max(y1 - y0, 1e-300)
    cell = math.sqrt(w_ * h_ * per_cell / n)
    cell = max(cell, 1e-12)
    nx = int(w_ / cell) + 1
    ny = int(h_ / cell) + 1
    inv = 1.0 / cell
    cid = np.empty(n, dtype=np.int64)
    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    for i in range(n):
        ix = min(int((pts[i, 0] - x0) * inv), nx - 1)
        iy = min(int((pts[i, 1] - y0) * inv), ny - 1)
        c = ix * ny + iy
        cid[i] = c
        counts[c + 1] += 1
    for c in range(1, nx * ny + 1):
        counts[c] += counts[c - 1]
    order = np.empty(n, dtype=np.int64)
    cursor = counts[: nx * ny].copy()
    for i in range(n):
        order[cursor[cid[i]]] = i
        cursor[cid[i]] += 1
    return x0, y0, inv, nx, ny, counts, order


@njit(cache=True)
def _grid_select(pts, x0, y0, inv, nx, ny, start, order, tx, ty, M, skip,
                 idx_out, d2_out):
    """Grid-accelerated variant of _select_nearest (same result up to exact
    distance ties)."""
    if M <= 0:
        return 0
    cell = 1.0 / inv
    cx = min(max(int((tx - x0) * inv), 0), nx - 1)
    cy = min(max(int((ty - y0) * inv), 0), ny - 1)
    k = 0
    worst = 0
    rho = 0
    max_rho = nx if nx > ny else ny
    while True:
        lo_x = cx - rho
        hi_x = cx + rho
        lo_y = cy - rho
        hi_y = cy + rho
        any_cell = False
        for ix in range(max(lo_x, 0), min(hi_x, nx - 1) + 1):
            on_x_edge = ix == lo_x or ix == hi_x
            for iy in range(max(lo_y, 0), min(hi_y, ny - 1) + 1):
                if rho > 0 and not (on_x_edge or iy == lo_y or iy == hi_y):
                    continue
                any_cell = True
                c = ix * ny + iy
                for p in range(start[c], start[c + 1]):
                    i = order[p]
                    if i == skip:
                        continue
                    dx = pts[i, 0] - tx
                    dy = pts[i, 1] - ty
                    d2 = dx * dx + dy * dy
                    if k < M:
                        idx_out[k] = i
                        d2_out[k] = d2
                        k += 1
                        if k == M:
                            worst = 0
                            for j in range(1, M):
                                if d2_out[j] > d2_out[worst]:
                                    worst = j
                    elif d2 < d2_out[worst]:
                        d2_out[worst] = d2
                        idx_out[worst] = i
                        worst = 0
                        for j in range(1, M):
                            if d2_out[j] > d2_out[worst]:
                                worst = j
        # unscanned cells lie at Chebyshev ring >= rho+1, hence at distance
        # >= rho * cell from the target
        guard = rho * cell
        if k == M and d2_out[worst] <= guard * guard:
            return k
        if not any_cell and rho > max_rho:
            return k
        rho += 1


@njit(cache=True)
def latent_moments(pts, w, v0, mu, s2, phi, M):
    """Per-point conditional moments of the latent redraw given v0, each
    point projected on itself plus its M nearest others."""
    n = len(pts)
    mu1 = np.empty(n)
    s1 = np.empty(n)
    m_eff = min(M, n - 1)
    size = m_eff + 1
    idx_buf = np.empty(max(m_eff, 1), dtype=np.int64)
    d2_buf = np.empty(max(m_eff, 1))
    sets = np.empty(size, dtype=np.int64)
    G = np.empty((size, size))
    u = np.empty(size)
    sol = np.empty(size)
    x0, y0, inv, gx, gy, start, order = _build_grid(pts, 2.0)
    for i in range(n):
        # the eligible pool always has n-1 points, so the set size is fixed
        _grid_select(pts, x0, y0, inv, gx, gy, start, order,
                     pts[i, 0], pts[i, 1], m_eff, i, idx_buf, d2_buf)
        sets[0] = i
        for a in range(m_eff):
            sets[a + 1] = idx_buf[a]
        for a in range(size):
            ia = sets[a]
            G[a, a] = 1.0 + s2
            for bq in range(a + 1, size):
                ib = sets[bq]
                dx = pts[ia, 0] - pts[ib, 0]
                dy = pts[ia, 1] - pts[ib, 1]
                cab = s2 * math.exp(-phi * math.sqrt(dx * dx + dy * dy))
                gv = w[ia] * w[ib] * cab
                G[a, bq] = gv
                G[bq, a] = gv
        for a in range(size):
            ia = sets[a]
            dx = pts[ia, 0] - pts[i, 0]
            dy = pts[ia, 1] - pts[i, 1]
            u[a] = w[ia] * s2 * math.exp(-phi * math.sqrt(dx * dx + dy * dy))
        for a in range(size):
            sol[a] = u[a]
        if not _spd_solve(G, sol, size):
            raise ValueError("latent projection not positive definite")
        m1 = mu[i]
        v1 = s2
        for a in range(size):
            m1 += sol[a] * v0[sets[a]]
            v1 -= sol[a] * u[a]
        mu1[i] = m1
        s1[i] = v1
    return mu1, s1


@njit(cache=True)
def krige_means(ref_pts, resid, targets, t_means, s2s, phis, jitter, M):
    """Batched kriging means at targets given mean-centered reference
    residuals."""
    nt = len(targets)
    out = np.empty(nt)
    n_ref = len(ref_pts)
    m_eff = min(M, n_ref)
    idx_buf = np.empty(max(m_eff, 1), dtype=np.int64)
    d2_buf = np.empty(max(m_eff, 1))
    zeros = np.zeros(n_ref)
    x0, y0, inv, gx, gy, start, order = _build_grid(ref_pts, 2.0)
    for j in range(nt):
        k = _grid_select(ref_pts, x0, y0, inv, gx, gy, start, order,
                         targets[j, 0], targets[j, 1], m_eff, -1,
                         idx_buf, d2_buf)
        mean, _ = _kriged_moments(ref_pts, resid, zeros, k, t_means[j],
                                  s2s, phis, jitter, idx_buf, d2_buf)
        out[j] = mean
    return out


@njit(cache=True)
def krige_moments(ref_pts, resid, targets, t_means, s2s, phis, jitter, M):
    """Batched kriging means and variances at targets."""
    nt = len(targets)
    means = np.empty(nt)
    variances = np.empty(nt)
    n_ref = len(ref_pts)
    m_eff = min(M, n_ref)
    idx_buf = np.empty(max(m_eff, 1), dtype=np.int64)
    d2_buf = np.empty(max(m_eff, 1))
    zeros = np.zeros(n_ref)
    x0, y0, inv, gx, gy, start, order = _build_grid(ref_pts, 2.0)
    for j in range(nt):
        k = _grid_select(ref_pts, x0, y0, inv, gx, gy, start, order,
                         targets[j, 0], targets[j, 1], m_eff, -1,
                         idx_buf, d2_buf)
        mean, var = _kriged_moments(ref_pts, resid, zeros, k, t_means[j],
                                    s2s, phis, jitter, idx_buf, d2_buf)
        means[j] = mean
        variances[j] = var
    return means, variances
