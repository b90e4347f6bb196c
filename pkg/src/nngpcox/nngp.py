"""Nearest-neighbor Gaussian process machinery.

A NeighborGraph fixes a sequential ordering of reference points and, for each
point, the set of (at most M) nearest earlier points.  Conditioning each point
on its neighbor set only turns the joint Gaussian into a product of small
conditionals: the covariance factorizes as (I - A)^-1 D (I - A)^-T with A
strictly lower triangular (<= M nonzeros per row) and D diagonal, so densities,
prior draws, and out-of-sample conditionals all cost O(n M^3) instead of
O(n^3).

Neighbor-set determinism contract: candidates are ranked by Euclidean
distance with exact ties broken by lower index, so rebuilt graphs are
reproducible across platforms and row computations commute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import NumericalError, ValidationError
from .gp_core import JITTER_REL, VAR_TOL, clamp_variance, cov_from_dist

__all__ = [
    "NeighborGraph",
    "SparseFactor",
    "build_neighbor_graph",
    "lexicographic_order",
    "nngp_factor",
    "nngp_factor_rows",
    "nngp_log_density",
    "nngp_sample_prior",
    "nngp_conditional_new",
    "nngp_conditional_many",
]


def lexicographic_order(points) -> np.ndarray:
    """Ordering indices: ascending x, then y."""
    pts = np.asarray(points, float).reshape(-1, 2)
    return np.lexsort((pts[:, 1], pts[:, 0]))


def _m_nearest(d: np.ndarray, M: int) -> np.ndarray:
    """Indices of the M smallest entries of d, ties by lower index,
    returned in ascending index order."""
    n = len(d)
    if n <= M:
        return np.arange(n)
    kth = np.partition(d, M - 1)[M - 1]
    cand = np.flatnonzero(d <= kth)
    if len(cand) > M:
        # cand is in ascending index order; a stable sort on distance
        # therefore prefers lower indices among exact ties
        keep = cand[np.argsort(d[cand], kind="stable")[:M]]
        return np.sort(keep)
    return cand


@dataclass
class NeighborGraph:
    """Sequentially ordered points plus per-point earlier-neighbor sets,
    stored padded: neighbor_idx[i, :neighbor_count[i]] are the indices."""

    points: np.ndarray
    m_cap: int
    neighbor_idx: np.ndarray
    neighbor_count: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)

    def neighbors(self, i: int) -> np.ndarray:
        return self.neighbor_idx[i, : self.neighbor_count[i]]


def build_neighbor_graph(points, M: int) -> NeighborGraph:
    """Neighbor sets of the M nearest earlier points, in input order.

    The input sequence is the ordering; callers that want the canonical
    reference ordering sort with lexicographic_order first.
    """
    if M < 1:
        raise ValidationError(f"neighbor budget M must be >= 1, got {M}")
    pts = np.ascontiguousarray(np.asarray(points, float).reshape(-1, 2))
    n = len(pts)
    idx = np.full((n, M), -1, dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        d = np.sqrt(((pts[:i] - pts[i]) ** 2).sum(axis=1))
        sel = _m_nearest(d, M)
        cnt[i] = len(sel)
        idx[i, : len(sel)] = sel
    return NeighborGraph(points=pts, m_cap=M, neighbor_idx=idx, neighbor_count=cnt)


@dataclass
class SparseFactor:
    """Sparse decomposition C ~ (I - A)^-1 D (I - A)^-T over a graph's points:
    weights[i] holds row i of A on neighbor_idx[i], diag holds D."""

    points: np.ndarray
    neighbor_idx: np.ndarray
    neighbor_count: np.ndarray
    weights: np.ndarray
    diag: np.ndarray

    def __post_init__(self):
        if not (self.diag > 0).all():
            raise NumericalError("sparse factor requires strictly positive diag")

    @property
    def n(self) -> int:
        return len(self.diag)

    def a_matrix(self) -> sp.csr_matrix:
        """Row-sparse strictly lower-triangular A."""
        n = self.n
        rows = np.repeat(np.arange(n), self.neighbor_count)
        mask = self.neighbor_idx >= 0
        cols = self.neighbor_idx[mask]
        vals = self.weights[mask]
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def conditional_means(self, resid: np.ndarray) -> np.ndarray:
        """A @ resid via the padded layout (resid already mean-centered)."""
        gathered = resid[np.clip(self.neighbor_idx, 0, None)]
        return np.einsum("ij,ij->i", self.weights, gathered)


def _solve_rows(pts, kern, nbr_idx, nbr_cnt, rows) -> tuple:
    """Kriging weights and conditional variances for the given rows,
    batched by neighbor count."""
    prior_var = float(cov_from_dist(np.zeros(1), kern)[0])
    jitter = JITTER_REL * kern.total_variance
    weights = np.zeros((len(rows), nbr_idx.shape[1]))
    diag = np.full(len(rows), prior_var)
    counts = nbr_cnt[rows]
    for k in np.unique(counts):
        if k == 0:
            continue
        grp = np.flatnonzero(counts == k)
        r = rows[grp]
        nbrs = nbr_idx[r, :k]
        npts = pts[nbrs]                                   # (g, k, 2)
        dmat = np.linalg.norm(npts[:, :, None, :] - npts[:, None, :, :], axis=-1)
        cnn = cov_from_dist(dmat, kern)
        cnn[:, np.arange(k), np.arange(k)] += jitter
        dvec = np.linalg.norm(npts - pts[r][:, None, :], axis=-1)
        cross = cov_from_dist(dvec, kern)                   # (g, k)
        try:
            w = np.linalg.solve(cnn, cross[..., None])[..., 0]
        except np.linalg.LinAlgError:
            w = np.empty_like(cross)
            for j in range(len(grp)):
                try:
                    w[j] = np.linalg.solve(cnn[j], cross[j])
                except np.linalg.LinAlgError:
                    raise NumericalError(
                        f"singular neighbor covariance at row {int(r[j])}"
                    )
        weights[grp, :k] = w
        diag[grp] = prior_var - np.einsum("ij,ij->i", w, cross)
    bad = diag < -VAR_TOL
    if bad.any():
        raise NumericalError(
            f"negative conditional variance at row {int(rows[np.flatnonzero(bad)[0]])}"
        )
    np.maximum(diag, jitter if jitter > 0 else np.finfo(float).tiny, out=diag)
    return weights, diag


def nngp_factor(graph: NeighborGraph, kern) -> SparseFactor:
    """Assemble the sparse (A, D) factor for a kernel over a graph."""
    rows = np.arange(graph.n)
    weights, diag = _solve_rows(
        graph.points, kern, graph.neighbor_idx, graph.neighbor_count, rows
    )
    return SparseFactor(
        points=graph.points,
        neighbor_idx=graph.neighbor_idx.copy(),
        neighbor_count=graph.neighbor_count.copy(),
        weights=weights,
        diag=diag,
    )


def nngp_factor_rows(graph: NeighborGraph, kern, rows) -> tuple:
    """(weights, diag) restricted to the given rows; row computations are
    independent, so any partition of rows reproduces nngp_factor bitwise."""
    rows = np.asarray(rows, dtype=np.int64)
    return _solve_rows(
        graph.points, kern, graph.neighbor_idx, graph.neighbor_count, rows
    )


def nngp_log_density(factor: SparseFactor, values, mean=None) -> float:
    """Log density of the sparse-factor Gaussian at `values`."""
    v = np.asarray(values, float).reshape(factor.n)
    mu = np.zeros(factor.n) if mean is None else np.asarray(mean, float).reshape(factor.n)
    resid = v - mu
    cond = factor.conditional_means(resid)
    dev = resid - cond
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * factor.diag) + dev**2 / factor.diag))


def nngp_sample_prior(factor: SparseFactor, mean=None, rng=None) -> np.ndarray:
    """Sequential draw from the sparse-factor Gaussian."""
    n = factor.n
    mu = np.zeros(n) if mean is None else np.asarray(mean, float).reshape(n)
    noise = rng.standard_normal(n) * np.sqrt(factor.diag)
    v = mu + noise
    idx = factor.neighbor_idx
    w = factor.weights
    cnt = factor.neighbor_count
    for i in range(n):
        k = cnt[i]
        if k:
            ji = idx[i, :k]
            v[i] += w[i, :k] @ (v[ji] - mu[ji])
    return v


def nngp_conditional_new(points, values, target, M: int, kern,
                         mean=None, target_mean: float = 0.0):
    """Conditional moments at one new point given the M nearest references.

    With no reference points this is just the prior (target_mean, sigma^2).
    """
    pts = np.asarray(points, float).reshape(-1, 2)
    prior_var = float(cov_from_dist(np.zeros(1), kern)[0])
    if len(pts) == 0:
        return float(target_mean), prior_var
    v = np.asarray(values, float).reshape(len(pts))
    mu = np.zeros(len(pts)) if mean is None else np.asarray(mean, float).reshape(len(pts))
    tgt = np.asarray(target, float).reshape(2)
    d = np.sqrt(((pts - tgt) ** 2).sum(axis=1))
    sel = _m_nearest(d, M)
    cnn = cov_from_dist(cdist(pts[sel], pts[sel]), kern)
    cnn[np.diag_indices_from(cnn)] += JITTER_REL * kern.total_variance
    cross = cov_from_dist(d[sel], kern)
    try:
        w = np.linalg.solve(cnn, cross)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular neighbor covariance at target: {exc}")
    mu_t = float(target_mean + w @ (v[sel] - mu[sel]))
    var_t = clamp_variance(float(prior_var - w @ cross))
    return mu_t, var_t


def _batched_m_nearest(ref_pts, targets, M, chunk=512, exclude_self_from=None):
    """(nt, M) neighbor indices into ref_pts for every target, exact ties
    by lower index; requires at least M eligible references.

    With exclude_self_from = k, target j is treated as identical to
    reference k + j and excluded from its own candidate set."""
    nt = len(targets)
    out = np.empty((nt, M), dtype=np.int64)
    for a in range(0, nt, chunk):
        b = min(a + chunk, nt)
        d = cdist(targets[a:b], ref_pts)
        if exclude_self_from is not None:
            d[np.arange(b - a), exclude_self_from + np.arange(a, b)] = np.inf
        kth = np.partition(d, M - 1, axis=1)[:, M - 1 : M]
        mask = d <= kth
        cnt = mask.sum(axis=1)
        exact = cnt == M
        if exact.any():
            rows = np.flatnonzero(exact)
            out[a + rows] = np.nonzero(mask[rows])[1].reshape(len(rows), M)
        for j in np.flatnonzero(~exact):
            out[a + j] = _m_nearest(d[j], M)
    return out


def symmetric_m_nearest(pts, M, chunk=512) -> np.ndarray:
    """For each point, the min(M, n-1) nearest other points of the same set,
    exact ties by lower index."""
    pts = np.asarray(pts, float).reshape(-1, 2)
    n = len(pts)
    m_eff = min(M, n - 1)
    if m_eff <= 0:
        return np.empty((n, 0), dtype=np.int64)
    return _batched_m_nearest(pts, pts, m_eff, chunk=chunk, exclude_self_from=0)


def nngp_conditional_many(ref_points, ref_values, targets, M: int, kern,
                          ref_mean=None, target_means=None):
    """Vectorized conditional moments at many new points.

    Each target conditions on its own M nearest reference points; returns
    (means, variances) arrays over targets.
    """
    ref = np.asarray(ref_points, float).reshape(-1, 2)
    tgts = np.asarray(targets, float).reshape(-1, 2)
    nt = len(tgts)
    prior_var = float(cov_from_dist(np.zeros(1), kern)[0])
    tmu = np.zeros(nt) if target_means is None else np.asarray(target_means, float).reshape(nt)
    if len(ref) == 0:
        return tmu.copy(), np.full(nt, prior_var)
    vals = np.asarray(ref_values, float).reshape(len(ref))
    rmu = np.zeros(len(ref)) if ref_mean is None else np.asarray(ref_mean, float).reshape(len(ref))
    m_eff = min(M, len(ref))
    nbrs = _batched_m_nearest(ref, tgts, m_eff)
    npts = ref[nbrs]                                       # (nt, m, 2)
    dmat = np.linalg.norm(npts[:, :, None, :] - npts[:, None, :, :], axis=-1)
    cnn = cov_from_dist(dmat, kern)
    cnn[:, np.arange(m_eff), np.arange(m_eff)] += JITTER_REL * kern.total_variance
    cross = cov_from_dist(np.linalg.norm(npts - tgts[:, None, :], axis=-1), kern)
    w = np.linalg.solve(cnn, cross[..., None])[..., 0]
    mu = tmu + np.einsum("ij,ij->i", w, vals[nbrs] - rmu[nbrs])
    var = prior_var - np.einsum("ij,ij->i", w, cross)
    if (var < -VAR_TOL).any():
        raise NumericalError("negative conditional variance in batched kriging")
    np.maximum(var, 0.0, out=var)
    return mu, var
