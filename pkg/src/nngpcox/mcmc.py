"""Data-augmentation Gibbs sampler for Gaussian-CDF Cox processes.

Per iteration and per time slice the sampler cycles three blocks:

* thinned block: redraw the total count K_t (Poisson truncated to >= n_t)
  and regenerate the thinned points one by one, each proposed uniformly,
  given a latent value from its nearest-neighbor conditional, and kept with
  probability Phi(-z).

* latent block: joint redraw of z on observed + thinned points.  The
  Phi-likelihood is linked to a Gaussian through one auxiliary truncated
  vector v0 with gamma = W mu, Delta^T = W C, Gamma = I + W C W^T, where W
  is diagonal +-1 (+1 observed, -1 thinned).  v0 given the current field is
  a set of independent lower-truncated normals; the new field given v0 is
  Gaussian with mean mu + Delta Gamma^-1 v0 and covariance
  C - Delta Gamma^-1 Delta^T, drawn exactly for small slices and through
  per-point neighbor-set projections of the same formulas otherwise (cost
  O(K M^3), rows independent).

* rate block: forward-filter / backward-sample recursion for the
  Gamma-Markov chain over the per-slice intensity bounds.

Time dependence enters through the prior mean: slice t's field is centered
on the previous slice's field kriged (zero-mean, accumulated covariance) to
slice t's points, with the innovation kernel as prior covariance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._kernels import bd_sweep, krige_means, latent_moments
from .distributions import norm_cdf, trunc_normal_lower, trunc_poisson_lower
from .errors import (
    DiagnosticError,
    NumericalError,
    RunawayThinningError,
    ValidationError,
)
from .geometry import Domain, EventSet
from .gp_core import JITTER_REL, SpaceTimeCovParams, cov_from_dist, sym_cov_matrix
from .nngp import (
    NeighborGraph,
    _m_nearest,
    build_neighbor_graph,
    lexicographic_order,
    nngp_conditional_many,
    nngp_factor,
    nngp_log_density,
    symmetric_m_nearest,
)

# slices at or below this size take the exact dense path in the latent block
LATENT_DENSE_CUTOFF = 64

_PROPOSAL_BATCH = 64


@dataclass(frozen=True)
class GammaChainPrior:
    """Markov Gamma/Beta evolution prior for the per-slice rate bounds;
    w = 0 makes the slices independent a priori."""

    a0: float
    b0: float
    w: float

    def __post_init__(self):
        if not (self.a0 > 0 and self.b0 > 0):
            raise ValidationError("a0 and b0 must be positive")
        if not 0.0 <= self.w < 1.0:
            raise ValidationError(f"w must lie in [0, 1), got {self.w}")


@dataclass
class ChainConfig:
    n_iter: int
    burn_in: int
    M: int
    stp: SpaceTimeCovParams
    prior: GammaChainPrior
    seed: int
    sample_theta: bool = False
    theta_proposal_sd: tuple = (0.1, 0.1)
    max_proposals_per_thinned_point: int = 1_000_000
    latent_dense_cutoff: int = LATENT_DENSE_CUTOFF
    save_thinned: bool = True
    thinned_mode: str = "birth-death"
    bd_moves: int = None

    def __post_init__(self):
        if not self.n_iter > self.burn_in >= 0:
            raise ValidationError(
                f"need n_iter > burn_in >= 0, got {self.n_iter}, {self.burn_in}"
            )
        if self.M < 1:
            raise ValidationError(f"M must be >= 1, got {self.M}")
        if self.seed is None:
            raise ValidationError("seed is required")


@dataclass
class SliceState:
    """Mutable per-slice sampler state: fixed observed points plus the
    current thinned points, latent values, and dynamic prior means."""

    obs: np.ndarray
    z_obs: np.ndarray
    u: np.ndarray
    z_u: np.ndarray
    prior_mu: np.ndarray
    graph: NeighborGraph = None

    @property
    def n(self) -> int:
        return len(self.obs)

    @property
    def m(self) -> int:
        return len(self.u)

    @property
    def K(self) -> int:
        return self.n + self.m

    @property
    def points(self) -> np.ndarray:
        return np.vstack([self.obs, self.u]) if self.m else self.obs

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.z_obs, self.z_u]) if self.m else self.z_obs

    @property
    def signs(self) -> np.ndarray:
        w = np.ones(self.K)
        w[self.n :] = -1.0
        return w


@dataclass
class AugmentedState:
    slices: list
    lambda_star: np.ndarray

    @property
    def T(self) -> int:
        return len(self.slices)

    @classmethod
    def initial(cls, events: EventSet, area: float) -> "AugmentedState":
        slices = []
        for pts in events.points:
            order = lexicographic_order(pts)
            obs = pts[order]
            slices.append(
                SliceState(
                    obs=obs,
                    z_obs=np.zeros(len(obs)),
                    u=np.empty((0, 2)),
                    z_u=np.empty(0),
                    prior_mu=np.zeros(len(obs)),
                )
            )
        lam0 = np.array([max(2.0 * len(p), 1.0) / area for p in events.points])
        return cls(slices=slices, lambda_star=lam0)


def _dynamic_means(state: AugmentedState, t: int, targets, stp, M) -> np.ndarray:
    """Prior mean for slice t at `targets`: previous slice's field kriged
    under its accumulated (zero-mean) covariance.  Slice 1 is centered."""
    targets = np.ascontiguousarray(np.asarray(targets, float).reshape(-1, 2))
    if t == 1 or len(targets) == 0:
        return np.zeros(len(targets))
    prev = state.slices[t - 2]
    if prev.K == 0:
        return np.zeros(len(targets))
    kern = stp.marginal(t - 1)
    comps = np.array(kern.components)
    try:
        return krige_means(
            np.ascontiguousarray(prev.points), prev.z, targets,
            np.zeros(len(targets)), comps[:, 0].copy(), comps[:, 1].copy(),
            JITTER_REL * kern.total_variance, M,
        )
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular kriging system in slice {t - 1}: {exc}")


def _conditional_at(pts, z, mu_pts, cnt, target, mu_target, kern, M):
    """Latent conditional moments at one proposal given the first `cnt`
    current points (kriging with the dynamic prior means)."""
    prior_var = kern.total_variance
    if cnt == 0:
        return mu_target, prior_var
    d = np.sqrt(((pts[:cnt] - target) ** 2).sum(axis=1))
    sel = _m_nearest(d, M)
    dmat = np.sqrt(
        ((pts[sel][:, None, :] - pts[sel][None, :, :]) ** 2).sum(axis=-1)
    )
    cnn = cov_from_dist(dmat, kern)
    cnn[np.diag_indices_from(cnn)] += JITTER_REL * prior_var
    cross = cov_from_dist(d[sel], kern)
    w = np.linalg.solve(cnn, cross)
    mu = mu_target + w @ (z[sel] - mu_pts[sel])
    var = max(prior_var - w @ cross, 0.0)
    return mu, var


def _thinned_birth_death(sl: SliceState, t, lam, kern, mu_obs, state,
                         stp, d, M, g, moves):
    """Birth-death Metropolis sweep over the thinned configuration.

    Target (given the observed-point field values): density proportional to
    lam^m prod_j Phi(-z(u_j)) times the field law, on point configurations.
    Births propose a uniform location with z from its neighbor conditional
    (the field factors cancel), accepted with probability
    lam |D| Phi(-z) / (m+1); deaths pick a thinned point uniformly and
    accept with probability m / (lam |D| Phi(-z)).  The thinned set
    persists across iterations as chain state.
    """
    n = sl.n
    m = len(sl.u)
    cap = n + m + moves + 8
    pts = np.empty((cap, 2))
    z = np.empty(cap)
    mu = np.empty(cap)
    pts[:n] = sl.obs
    z[:n] = sl.z_obs
    mu[:n] = mu_obs
    pts[n : n + m] = sl.u
    z[n : n + m] = sl.z_u
    mu[n : n + m] = _dynamic_means(state, t, sl.u, stp, M)
    kinds = g.uniform(size=moves) < 0.5
    n_birth = int(kinds.sum())
    cand = d.sample_uniform(n_birth, g) if n_birth else np.empty((0, 2))
    cand_mu = _dynamic_means(state, t, cand, stp, M)
    normals = g.standard_normal(n_birth)
    accept_u = g.uniform(size=moves)
    death_u = g.uniform(size=moves)
    try:
        m, accepted = bd_sweep(
            pts, z, mu, n, m, lam, kern.sigma2, kern.phi,
            JITTER_REL * kern.sigma2, M,
            kinds, cand, cand_mu, normals, accept_u, death_u,
        )
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular thinning conditional in slice {t}: {exc}")
    return (pts[n : n + m].copy(), z[n : n + m].copy(), mu[n : n + m].copy(),
            moves, accepted)


def _thinned_fixed_count(sl: SliceState, t, lam, kern, mu_obs, state,
                         stp, d, M, g, max_proposals):
    """Literal fixed-count scheme: K ~ Poisson(lam |D|) redrawn until
    K >= n, then exactly K - n thinned points accepted by retrying
    proposals; only accepted points join the conditioning set."""
    K = trunc_poisson_lower(lam, sl.n, g)
    m = K - sl.n
    pts = np.empty((K, 2))
    z = np.empty(K)
    mu = np.empty(K)
    pts[: sl.n] = sl.obs
    z[: sl.n] = sl.z_obs
    mu[: sl.n] = mu_obs
    cnt = sl.n
    accepted = 0
    proposals = 0
    since_accept = 0
    while accepted < m:
        batch = min(_PROPOSAL_BATCH, 4 * (m - accepted) + 8)
        cand = d.sample_uniform(batch, g)
        cand_mu = _dynamic_means(state, t, cand, stp, M)
        normals = g.standard_normal(batch)
        uniforms = g.uniform(size=batch)
        for j in range(batch):
            proposals += 1
            since_accept += 1
            cm, cv = _conditional_at(pts, z, mu, cnt, cand[j], cand_mu[j], kern, M)
            zj = cm + np.sqrt(cv) * normals[j]
            if uniforms[j] < norm_cdf(-zj):
                pts[cnt] = cand[j]
                z[cnt] = zj
                mu[cnt] = cand_mu[j]
                cnt += 1
                accepted += 1
                since_accept = 0
                if accepted == m:
                    break
            elif since_accept > max_proposals:
                raise RunawayThinningError(
                    f"slice {t}: {since_accept} proposals without an "
                    f"acceptance (acceptance rate ~"
                    f"{accepted / max(proposals, 1):.2e})",
                    t=t,
                    acceptance_rate=accepted / max(proposals, 1),
                )
    return pts[sl.n : cnt], z[sl.n : cnt], mu[sl.n : cnt], proposals, accepted


def sample_thinned(state: AugmentedState, stp: SpaceTimeCovParams, d: Domain,
                   M: int, rng, max_proposals: int = 1_000_000,
                   stats: dict = None, mode: str = "birth-death",
                   bd_moves: int = None):
    """Update (K_t, U_t, z on U_t) for every slice.

    `rng` is either one Generator or a per-slice list.  `mode` selects the
    thinned-block kernel: "birth-death" (default) runs a Metropolis
    birth-death sweep whose invariant law is the exact thinned-point
    conditional, so the count K_t stays anchored to the data through the
    rate-bound feedback; "fixed-count" reproduces the truncated-Poisson /
    retry-until-accepted construction verbatim (thinned points discarded
    and regenerated, runaway cap enforced).
    """
    rngs = rng if isinstance(rng, (list, tuple)) else [rng] * state.T
    for t in range(1, state.T + 1):
        sl = state.slices[t - 1]
        g = rngs[t - 1]
        lam = state.lambda_star[t - 1] * d.area
        kern = stp.innovation(t)
        mu_obs = _dynamic_means(state, t, sl.obs, stp, M)
        if mode == "birth-death":
            moves = bd_moves if bd_moves else max(64, int(np.ceil(2.0 * lam)))
            u, z_u, mu_u, proposals, accepted = _thinned_birth_death(
                sl, t, lam, kern, mu_obs, state, stp, d, M, g, moves
            )
        elif mode == "fixed-count":
            u, z_u, mu_u, proposals, accepted = _thinned_fixed_count(
                sl, t, lam, kern, mu_obs, state, stp, d, M, g, max_proposals
            )
        else:
            raise ValidationError(f"unknown thinned-block mode {mode!r}")
        sl.u = u
        sl.z_u = z_u
        sl.prior_mu = np.concatenate([mu_obs, mu_u])
        sl.graph = None
        if stats is not None:
            stats["proposals"] = stats.get("proposals", 0) + proposals
            stats["accepted"] = stats.get("accepted", 0) + accepted
    return state


def _sample_v0(z, mu, w, rng) -> np.ndarray:
    """Auxiliary truncated vector given the current field: independent
    N(w (z - mu), 1) truncated to (-w mu, inf)."""
    return np.atleast_1d(
        trunc_normal_lower(w * (z - mu), 1.0, -w * mu, rng)
    )


def latent_slice_dense(pts, kern, w, z, mu, rng):
    """Exact latent redraw for one slice (O(K^3))."""
    K = len(pts)
    if K == 0:
        return z
    v0 = _sample_v0(z, mu, w, rng)
    C = sym_cov_matrix(pts, kern)
    B = w[:, None] * C                       # W C
    Gam = B * w[None, :]
    Gam[np.diag_indices_from(Gam)] += 1.0    # I + W C W
    f = cho_factor(Gam, lower=True)
    X = cho_solve(f, B)                      # Gamma^-1 W C
    mean = mu + X.T @ v0
    Omega = C - B.T @ X
    Omega = 0.5 * (Omega + Omega.T)
    Omega[np.diag_indices_from(Omega)] += JITTER_REL * kern.total_variance
    try:
        L = np.linalg.cholesky(Omega)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"latent conditional covariance not SPD: {exc}")
    return mean + L @ rng.standard_normal(K)


def latent_nngp_moments(pts, nbr_sets, kern, w, v0, mu):
    """Per-point conditional moments of the new field given v0.

    Point i projects the exact Gaussian conditional onto the auxiliary
    coordinates of itself plus its neighbor set (nbr_sets row i);
    self-inclusion is forced by the K = 1 case, where the update must
    reduce to the exact one-point construction.  Rows are independent
    given v0, and with all other points as neighbors they reproduce the
    exact conditional mean and marginal variance.
    """
    n = len(pts)
    k = nbr_sets.shape[1]
    prior_var = kern.total_variance
    sets = np.concatenate([np.arange(n)[:, None], nbr_sets], axis=1)
    npts = pts[sets]
    dmat = np.linalg.norm(npts[:, :, None, :] - npts[:, None, :, :], axis=-1)
    cnn = cov_from_dist(dmat, kern)
    wn = w[sets]
    G = cnn * wn[:, :, None] * wn[:, None, :]
    G[:, np.arange(k + 1), np.arange(k + 1)] += 1.0
    u = cnn[:, :, 0] * wn                                  # w_j C(s_j, s_i)
    sol = np.linalg.solve(G, u[..., None])[..., 0]
    mu1 = mu + np.einsum("ij,ij->i", sol, v0[sets])
    s1 = prior_var - np.einsum("ij,ij->i", sol, u)
    if (s1 <= 0).any():
        raise NumericalError("nonpositive latent conditional variance")
    return mu1, s1


def latent_slice_nngp(pts, kern, w, z, mu, rng, M):
    """Neighbor-projected latent redraw for one slice (O(K M^3))."""
    K = len(pts)
    if K == 0:
        return z
    v0 = _sample_v0(z, mu, w, rng)
    try:
        mu1, s1 = latent_moments(
            np.ascontiguousarray(pts), np.asarray(w, float), v0,
            np.asarray(mu, float), kern.sigma2, kern.phi, M,
        )
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular latent projection: {exc}")
    if (s1 <= 0).any():
        raise NumericalError("nonpositive latent conditional variance")
    return mu1 + np.sqrt(s1) * rng.standard_normal(K)


def sample_latent(state: AugmentedState, stp: SpaceTimeCovParams, M: int, rng,
                  dense_cutoff: int = LATENT_DENSE_CUTOFF):
    """Redraw z on observed + thinned points for every slice, forward in t.

    Slice t is centered on the previous slice's kriged field (recomputed
    after that slice's own update) with the innovation kernel as prior
    covariance.
    """
    rngs = rng if isinstance(rng, (list, tuple)) else [rng] * state.T
    for t in range(1, state.T + 1):
        sl = state.slices[t - 1]
        if sl.K == 0:
            continue
        g = rngs[t - 1]
        kern = stp.innovation(t)
        pts = sl.points
        mu = np.concatenate(
            [
                _dynamic_means(state, t, sl.obs, stp, M),
                _dynamic_means(state, t, sl.u, stp, M),
            ]
        )
        w = sl.signs
        if sl.K <= dense_cutoff:
            z_new = latent_slice_dense(pts, kern, w, sl.z, mu, g)
        else:
            z_new = latent_slice_nngp(pts, kern, w, sl.z, mu, g, M)
        if not np.isfinite(z_new).all():
            raise NumericalError(f"non-finite latent value in slice {t}")
        sl.z_obs = z_new[: sl.n]
        sl.z_u = z_new[sl.n :]
        sl.prior_mu = mu
    return state


def sample_lambda_star(K, d: Domain, prior: GammaChainPrior, rng) -> np.ndarray:
    """Forward-filter / backward-sample draw of the per-slice rate bounds.

    Forward: a_t = w a_{t-1} + K_t, b_t = w b_{t-1} + |D|.  Backward:
    lambda_T ~ G(a_T, b_T), then lambda_t = w lambda_{t+1} + L_t with
    L_t ~ G((1-w) a_t, b_t).
    """
    K = np.asarray(K, dtype=float).reshape(-1)
    T = len(K)
    w = prior.w
    a = np.empty(T)
    b = np.empty(T)
    pa, pb = prior.a0, prior.b0
    for t in range(T):
        a[t] = w * pa + K[t]
        b[t] = w * pb + d.area
        pa, pb = a[t], b[t]
    lam = np.empty(T)
    lam[T - 1] = rng.gamma(max(a[T - 1], 1e-12)) / b[T - 1]
    for t in range(T - 2, -1, -1):
        L = rng.gamma(max((1.0 - w) * a[t], 1e-12)) / b[t]
        lam[t] = w * lam[t + 1] + L
    # guard the measure-degenerate empty-data corner (w = 0, K_t = 0)
    np.maximum(lam, np.finfo(float).tiny, out=lam)
    return lam


def _latent_log_prior(state: AugmentedState, stp: SpaceTimeCovParams, M: int) -> float:
    """Joint log density of the current field under the dynamic prior."""
    total = 0.0
    for t in range(1, state.T + 1):
        sl = state.slices[t - 1]
        if sl.K == 0:
            continue
        mu = np.concatenate(
            [
                _dynamic_means(state, t, sl.obs, stp, M),
                _dynamic_means(state, t, sl.u, stp, M),
            ]
        )
        if sl.graph is None:
            sl.graph = build_neighbor_graph(sl.points, M)
        factor = nngp_factor(sl.graph, stp.innovation(t))
        total += nngp_log_density(factor, sl.z, mu)
    return total


def sample_theta_mh(state: AugmentedState, stp: SpaceTimeCovParams, rng,
                    proposal_sd=(0.1, 0.1), M: int = 30,
                    enabled: bool = True):
    """One random-walk Metropolis step on (log sigma2, log phi) per kernel
    group, flat prior on the log scale.  Returns the (possibly new) params
    and the acceptance flags."""
    if not enabled:
        return stp, (False, False)
    from .gp_core import CovParams

    cur_ll = _latent_log_prior(state, stp, M)
    accepted = []
    for group in (0, 1):
        kern = stp.theta1 if group == 0 else stp.theta
        sd = proposal_sd[group] if len(proposal_sd) > group else proposal_sd[0]
        prop = CovParams(
            float(np.exp(np.log(kern.sigma2) + sd * rng.standard_normal())),
            float(np.exp(np.log(kern.phi) + sd * rng.standard_normal())),
        )
        cand = (
            SpaceTimeCovParams(prop, stp.theta)
            if group == 0
            else SpaceTimeCovParams(stp.theta1, prop)
        )
        new_ll = _latent_log_prior(state, cand, M)
        if np.log(rng.uniform()) < new_ll - cur_ll:
            stp = cand
            cur_ll = new_ll
            accepted.append(True)
        else:
            accepted.append(False)
    return stp, tuple(accepted)


@dataclass
class PosteriorDraws:
    """Retained per-iteration snapshots."""

    lambda_star: np.ndarray
    K: np.ndarray
    obs_points: list
    z_obs: list
    u_xy: list
    u_z: list
    theta: np.ndarray = None
    meta: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return len(self.lambda_star)

    @property
    def T(self) -> int:
        return self.lambda_star.shape[1]

    def save(self, path) -> None:
        import json

        from .io_util import write_npz_deterministic

        arrays = {
            "lambda_star": self.lambda_star,
            "K": self.K.astype(np.int64),
            "meta_json": np.frombuffer(
                json.dumps(self.meta, sort_keys=True).encode(), dtype=np.uint8
            ),
        }
        for t in range(self.T):
            arrays[f"obs_pts_t{t + 1}"] = self.obs_points[t]
            arrays[f"z_obs_t{t + 1}"] = self.z_obs[t]
            per_draw = self.u_xy[t]
            off = np.zeros(len(per_draw) + 1, dtype=np.int64)
            for r, u in enumerate(per_draw):
                off[r + 1] = off[r] + len(u)
            arrays[f"u_off_t{t + 1}"] = off
            arrays[f"u_xy_t{t + 1}"] = (
                np.vstack(per_draw) if per_draw and off[-1] else np.empty((0, 2))
            )
            arrays[f"u_z_t{t + 1}"] = (
                np.concatenate(self.u_z[t]) if per_draw and off[-1] else np.empty(0)
            )
        if self.theta is not None:
            arrays["theta"] = self.theta
        write_npz_deterministic(path, arrays)

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        import json

        data = np.load(path)
        lam = data["lambda_star"]
        K = data["K"]
        T = lam.shape[1]
        obs_points, z_obs, u_xy, u_z = [], [], [], []
        for t in range(1, T + 1):
            obs_points.append(data[f"obs_pts_t{t}"])
            z_obs.append(data[f"z_obs_t{t}"])
            off = data[f"u_off_t{t}"]
            flat_xy = data[f"u_xy_t{t}"]
            flat_z = data[f"u_z_t{t}"]
            u_xy.append([flat_xy[off[r] : off[r + 1]] for r in range(len(off) - 1)])
            u_z.append([flat_z[off[r] : off[r + 1]] for r in range(len(off) - 1)])
        theta = data["theta"] if "theta" in data.files else None
        meta = {}
        if "meta_json" in data.files:
            meta = json.loads(bytes(data["meta_json"]).decode())
        return cls(
            lambda_star=lam, K=K, obs_points=obs_points, z_obs=z_obs,
            u_xy=u_xy, u_z=u_z, theta=theta, meta=meta,
        )

    def reference_sets(self, t: int):
        """Per-draw (points, z) reference sets for slice t (1-based),
        observed plus that draw's thinned points."""
        obs = self.obs_points[t - 1]
        for r in range(self.R):
            u = self.u_xy[t - 1][r] if self.u_xy[t - 1] else np.empty((0, 2))
            zu = self.u_z[t - 1][r] if self.u_z[t - 1] else np.empty(0)
            pts = np.vstack([obs, u]) if len(u) else obs
            z = np.concatenate([self.z_obs[t - 1][r], zu]) if len(u) else self.z_obs[t - 1][r]
            yield pts, z


def _rng_for(seed: int, iteration: int, t: int, block: int) -> np.random.Generator:
    """Documented substream scheme: one PCG64 stream per
    (iteration, slice, block), all derived from the single run seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(iteration, t, block))
    return np.random.default_rng(ss)


def run_chain(events: EventSet, cfg: ChainConfig, d: Domain) -> PosteriorDraws:
    """Run the full Gibbs sampler and return retained draws.

    Block order per iteration: thinned -> latent -> rates -> (optional)
    kernel parameters.  Fully reproducible from cfg.seed.
    """
    events.validate_inside(d)
    T = events.T
    state = AugmentedState.initial(events, d.area)
    stp = cfg.stp
    R = cfg.n_iter - cfg.burn_in
    lam_out = np.empty((R, T))
    K_out = np.empty((R, T), dtype=np.int64)
    z_out = [np.empty((R, len(sl.obs))) for sl in state.slices]
    u_xy = [[] for _ in range(T)]
    u_z = [[] for _ in range(T)]
    theta_out = np.empty((R, 4)) if cfg.sample_theta else None
    stats = {"proposals": 0, "accepted": 0,
             "wall_thinned": 0.0, "wall_latent": 0.0, "wall_lambda": 0.0,
             "wall_theta": 0.0, "theta_accept": 0}
    for it in range(cfg.n_iter):
        t0 = time.perf_counter()
        try:
            sample_thinned(
                state, stp, d, cfg.M,
                [_rng_for(cfg.seed, it, t, 0) for t in range(1, T + 1)],
                max_proposals=cfg.max_proposals_per_thinned_point,
                stats=stats,
                mode=cfg.thinned_mode,
                bd_moves=cfg.bd_moves,
            )
        except RunawayThinningError as exc:
            exc.iteration = it
            raise
        t1 = time.perf_counter()
        sample_latent(
            state, stp, cfg.M,
            [_rng_for(cfg.seed, it, t, 1) for t in range(1, T + 1)],
            dense_cutoff=cfg.latent_dense_cutoff,
        )
        t2 = time.perf_counter()
        state.lambda_star = sample_lambda_star(
            [sl.K for sl in state.slices], d, cfg.prior,
            _rng_for(cfg.seed, it, 0, 2),
        )
        t3 = time.perf_counter()
        if cfg.sample_theta:
            stp, acc = sample_theta_mh(
                state, stp, _rng_for(cfg.seed, it, 0, 3),
                proposal_sd=cfg.theta_proposal_sd, M=cfg.M,
            )
            stats["theta_accept"] += sum(acc)
        t4 = time.perf_counter()
        stats["wall_thinned"] += t1 - t0
        stats["wall_latent"] += t2 - t1
        stats["wall_lambda"] += t3 - t2
        stats["wall_theta"] += t4 - t3
        if it >= cfg.burn_in:
            r = it - cfg.burn_in
            lam_out[r] = state.lambda_star
            for t in range(T):
                sl = state.slices[t]
                K_out[r, t] = sl.K
                z_out[t][r] = sl.z_obs
                if cfg.save_thinned:
                    u_xy[t].append(sl.u.copy())
                    u_z[t].append(sl.z_u.copy())
            if cfg.sample_theta:
                theta_out[r] = (
                    stp.theta1.sigma2, stp.theta1.phi,
                    stp.theta.sigma2, stp.theta.phi,
                )
    return PosteriorDraws(
        lambda_star=lam_out,
        K=K_out,
        obs_points=[sl.obs for sl in state.slices],
        z_obs=z_out,
        u_xy=u_xy,
        u_z=u_z,
        theta=theta_out,
        meta={"seed": cfg.seed, "M": cfg.M, "burn_in": cfg.burn_in,
              "n_iter": cfg.n_iter, "w": cfg.prior.w,
              "a0": cfg.prior.a0, "b0": cfg.prior.b0},
        stats=stats,
    )


def inefficiency_factor(draws) -> float:
    """n / ESS for a scalar chain: 1 + 2 sum of autocorrelations with
    Geyer initial-positive-sequence truncation."""
    x = np.asarray(draws, float).reshape(-1)
    n = len(x)
    if n < 10:
        raise ValidationError(f"need at least 10 draws, got {n}")
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        raise DiagnosticError("inefficiency factor undefined for constant series")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f))[:n].real / n
    rho = acov / acov[0]
    total = 0.0
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        total += pair
        k += 1
    return max(2.0 * total - 1.0, 0.0)
