"""Forward simulation of Gaussian-CDF Cox processes.

Each time slice scatters a homogeneous Poisson pattern, draws the latent
Gaussian field at the scattered locations, and keeps each point with
probability Phi(z).  The retained points are the observed pattern, the
rejected ones the thinned pattern; both are returned so tests can verify the
thinning bookkeeping exactly.

For the dynamic (multi-slice) field, slice t's values are simulated
conditionally on every earlier slice under the accumulated random-walk
covariance: cov(z_t(s), z_j(x)) = C1(s, x) + (min(t, j) - 1) * C(s, x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .distributions import norm_cdf, poisson_by_inversion
from .errors import ValidationError
from scipy.linalg import cho_solve

from .geometry import Domain, EventSet
from .gp_core import CovParams, JITTER_REL, SpaceTimeCovParams, chol_spd, sym_cov_matrix
from .nngp import _m_nearest, build_neighbor_graph, lexicographic_order, nngp_factor, nngp_sample_prior

# point totals up to this size use exact dense conditioning; beyond it the
# latent draw falls back to sequential nearest-neighbor conditioning
DENSE_CUTOFF = 3000
SIM_NEIGHBORS = 30


@dataclass
class SimOutput:
    """One realization: retained events, thinned complement, and the latent
    field values on every homogeneous point per slice."""

    events: EventSet
    thinned: EventSet
    homogeneous: list
    latent: list
    retained_mask: list
    lambda_star: list = field(default_factory=list)


def simulate_hpp(lambda_star: float, d: Domain, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous Poisson scatter with rate lambda_star per unit area."""
    if lambda_star < 0:
        raise ValidationError(f"rate must be >= 0, got {lambda_star}")
    n = poisson_by_inversion(lambda_star * d.area, rng)
    return d.sample_uniform(n, rng)


def _spacetime_cov(pts_a, t_a, pts_b, t_b, stp: SpaceTimeCovParams) -> np.ndarray:
    """Accumulated-field covariance between slice-tagged point sets."""
    dmat = cdist(pts_a, pts_b)
    tmin = np.minimum.outer(np.asarray(t_a), np.asarray(t_b))
    c1 = stp.theta1.sigma2 * np.exp(-stp.theta1.phi * dmat)
    c = stp.theta.sigma2 * np.exp(-stp.theta.phi * dmat)
    return c1 + (tmin - 1) * c


def _draw_latent_spatial(pts, p: CovParams, rng, dense_cutoff, M) -> np.ndarray:
    n = len(pts)
    if n == 0:
        return np.zeros(0)
    if n <= dense_cutoff:
        factor = chol_spd(sym_cov_matrix(pts, p))
        return _chol_draw(factor, n, rng)
    order = lexicographic_order(pts)
    graph = build_neighbor_graph(pts[order], M)
    z_ord = nngp_sample_prior(nngp_factor(graph, p), rng=rng)
    z = np.empty(n)
    z[order] = z_ord
    return z


def _chol_draw(factor, n, rng):
    # cho_factor stores the lower triangle with garbage above; zero it out
    L = np.tril(factor[0])
    return L @ rng.standard_normal(n)


def simulate_exgcp_spatial(lambda_star: float, p: CovParams, d: Domain,
                           rng: np.random.Generator,
                           dense_cutoff: int = DENSE_CUTOFF,
                           M: int = SIM_NEIGHBORS) -> SimOutput:
    """Single-slice realization: scatter, latent draw, Phi(z) thinning."""
    pts = simulate_hpp(lambda_star, d, rng)
    z = _draw_latent_spatial(pts, p, rng, dense_cutoff, M)
    keep = rng.uniform(size=len(pts)) < norm_cdf(z)
    return SimOutput(
        events=EventSet([pts[keep]]),
        thinned=EventSet([pts[~keep]]),
        homogeneous=[pts],
        latent=[z],
        retained_mask=[keep],
        lambda_star=[lambda_star],
    )


def _conditional_slice_draw(hist_pts, hist_t, hist_z, new_pts, t, stp, rng,
                            dense_cutoff, M) -> np.ndarray:
    """Draw the accumulated field at new_pts (slice t) given all history."""
    n_new = len(new_pts)
    if n_new == 0:
        return np.zeros(0)
    n_hist = len(hist_pts)
    prior_var = stp.theta1.sigma2 + (t - 1) * stp.theta.sigma2
    if n_hist == 0 and t == 1:
        return _draw_latent_spatial(new_pts, stp.theta1, rng, dense_cutoff, M)
    if n_hist + n_new <= dense_cutoff:
        c_hh = _spacetime_cov(hist_pts, hist_t, hist_pts, hist_t, stp)
        c_hh[np.diag_indices_from(c_hh)] += JITTER_REL * prior_var
        c_nh = _spacetime_cov(new_pts, np.full(n_new, t), hist_pts, hist_t, stp)
        c_nn = _spacetime_cov(new_pts, np.full(n_new, t), new_pts, np.full(n_new, t), stp)
        factor = chol_spd(c_hh)
        w = cho_solve(factor, c_nh.T)
        mean = w.T @ hist_z
        cond = c_nn - c_nh @ w
        cond[np.diag_indices_from(cond)] += JITTER_REL * prior_var
        return mean + _chol_draw(chol_spd(cond), n_new, rng)
    # sequential nearest-neighbor conditioning on history plus the points
    # already simulated within this slice
    all_pts = np.vstack([hist_pts, new_pts])
    all_t = np.concatenate([hist_t, np.full(n_new, t)])
    all_z = np.concatenate([hist_z, np.zeros(n_new)])
    noise = rng.standard_normal(n_new)
    for j in range(n_new):
        i = n_hist + j
        d = np.sqrt(((all_pts[:i] - all_pts[i]) ** 2).sum(axis=1))
        sel = _m_nearest(d, M)
        c_nn = _spacetime_cov(all_pts[sel], all_t[sel], all_pts[sel], all_t[sel], stp)
        c_nn[np.diag_indices_from(c_nn)] += JITTER_REL * prior_var
        cross = _spacetime_cov(all_pts[i : i + 1], [t], all_pts[sel], all_t[sel], stp)[0]
        w = np.linalg.solve(c_nn, cross)
        mu = w @ all_z[sel]
        var = max(prior_var - w @ cross, 0.0)
        all_z[i] = mu + np.sqrt(var) * noise[j]
    return all_z[n_hist:]


def simulate_exgcp_spacetime(lambda_star, stp: SpaceTimeCovParams, d: Domain,
                             T: int, rng: np.random.Generator,
                             dense_cutoff: int = DENSE_CUTOFF,
                             M: int = SIM_NEIGHBORS) -> SimOutput:
    """Multi-slice realization of the dynamic model with per-slice rates."""
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    rates = [float(r) for r in np.broadcast_to(lambda_star, (T,))]
    events, thinned, homog, latents, masks = [], [], [], [], []
    hist_pts = np.empty((0, 2))
    hist_t = np.empty(0, dtype=np.int64)
    hist_z = np.empty(0)
    for t in range(1, T + 1):
        pts = simulate_hpp(rates[t - 1], d, rng)
        z = _conditional_slice_draw(hist_pts, hist_t, hist_z, pts, t, stp, rng,
                                    dense_cutoff, M)
        keep = rng.uniform(size=len(pts)) < norm_cdf(z)
        events.append(pts[keep])
        thinned.append(pts[~keep])
        homog.append(pts)
        latents.append(z)
        masks.append(keep)
        hist_pts = np.vstack([hist_pts, pts])
        hist_t = np.concatenate([hist_t, np.full(len(pts), t, dtype=np.int64)])
        hist_z = np.concatenate([hist_z, z])
    return SimOutput(
        events=EventSet(events),
        thinned=EventSet(thinned),
        homogeneous=homog,
        latent=latents,
        retained_mask=masks,
        lambda_star=rates,
    )
