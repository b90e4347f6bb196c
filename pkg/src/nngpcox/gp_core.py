"""Exponential covariance kernels, dense GP conditionals, and the sequential
block inverse update.

The dense routines are the small-n oracles that the sparse nearest-neighbor
machinery is tested against; they are also used directly whenever a point set
is small enough that exact algebra is cheaper than building a neighbor graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .errors import NumericalError, ValidationError

# relative diagonal jitter applied to same-point-set covariance matrices
# before factorization; bare exponential kernels go numerically singular
# when the simulator drops points arbitrarily close together
JITTER_REL = 1e-10

# conditional variances in [-VAR_TOL, 0) are roundoff and clamp to zero;
# anything more negative is a genuine bug and raises
VAR_TOL = 1e-10


@dataclass(frozen=True)
class CovParams:
    """Exponential kernel parameters: sigma2 * exp(-phi * distance)."""

    sigma2: float
    phi: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.phi > 0):
            raise ValidationError(
                f"CovParams must be strictly positive, got "
                f"sigma2={self.sigma2}, phi={self.phi}"
            )

    @property
    def components(self):
        return ((self.sigma2, self.phi),)

    @property
    def total_variance(self) -> float:
        return self.sigma2


@dataclass(frozen=True)
class SumKernel:
    """Sum of exponential kernels; arises as the marginal covariance of a
    random-walk-in-time field (innovation variances accumulate)."""

    parts: tuple

    @property
    def components(self):
        out = []
        for p in self.parts:
            out.extend(p.components)
        return tuple(out)

    @property
    def total_variance(self) -> float:
        return sum(s2 for s2, _ in self.components)


@dataclass(frozen=True)
class SpaceTimeCovParams:
    """Innovation kernels for the dynamic field: theta1 drives the first
    slice, theta every later slice."""

    theta1: CovParams
    theta: CovParams

    def innovation(self, t: int) -> CovParams:
        return self.theta1 if t == 1 else self.theta

    def marginal(self, t: int):
        """Covariance of the accumulated field at slice t (t >= 1)."""
        if t < 1:
            raise ValidationError(f"slice index must be >= 1, got {t}")
        if t == 1:
            return self.theta1
        scaled = CovParams((t - 1) * self.theta.sigma2, self.theta.phi)
        return SumKernel((self.theta1, scaled))


def exp_cov(s, s2, p: CovParams) -> float:
    """Kernel value between two points."""
    d = float(np.linalg.norm(np.asarray(s, float) - np.asarray(s2, float)))
    return p.sigma2 * np.exp(-p.phi * d)


def cov_matrix(pts_a, pts_b, kern) -> np.ndarray:
    """Cross-covariance matrix between two point lists."""
    a = np.asarray(pts_a, float).reshape(-1, 2)
    b = np.asarray(pts_b, float).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    d = cdist(a, b)
    out = np.zeros_like(d)
    for s2, phi in kern.components:
        out += s2 * np.exp(-phi * d)
    return out


def cov_from_dist(d: np.ndarray, kern) -> np.ndarray:
    """Kernel applied to precomputed distances."""
    out = np.zeros_like(d)
    for s2, phi in kern.components:
        out += s2 * np.exp(-phi * d)
    return out


def sym_cov_matrix(pts, kern) -> np.ndarray:
    """Same-point-set covariance with the jitter policy applied."""
    c = cov_matrix(pts, pts, kern)
    if len(c):
        c[np.diag_indices_from(c)] += JITTER_REL * kern.total_variance
    return c


def chol_spd(mat: np.ndarray, what: str = "covariance"):
    """Cholesky factor, raising NumericalError instead of LinAlgError."""
    try:
        return cho_factor(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} matrix is not positive definite: {exc}")


def clamp_variance(var: float, what: str = "conditional variance") -> float:
    if var < -VAR_TOL:
        raise NumericalError(f"{what} {var} below roundoff tolerance")
    return max(var, 0.0)


@dataclass
class DenseGP:
    """Gaussian process restricted to a fixed point list, with the dense
    covariance factorized once at construction."""

    locations: np.ndarray
    kern: CovParams
    mean: np.ndarray = None
    cov: np.ndarray = field(init=False)

    def __post_init__(self):
        self.locations = np.asarray(self.locations, float).reshape(-1, 2)
        n = len(self.locations)
        if self.mean is None:
            self.mean = np.zeros(n)
        self.mean = np.asarray(self.mean, float).reshape(n)
        self.cov = sym_cov_matrix(self.locations, self.kern)
        self._factor = chol_spd(self.cov) if n else None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._factor, rhs)


def dense_conditional(gp: DenseGP, values, target, target_mean: float = 0.0):
    """Exact conditional mean and variance at one target point.

    `target_mean` is the prior mean at the target.  An empty conditioning
    set returns the prior moments.  The variance is clamped per the
    roundoff policy.
    """
    target = np.asarray(target, float).reshape(2)
    prior_var = float(cov_from_dist(np.zeros(1), gp.kern)[0])
    if len(gp.locations) == 0:
        return float(target_mean), prior_var
    values = np.asarray(values, float).reshape(len(gp.locations))
    c = cov_matrix([target], gp.locations, gp.kern)[0]
    w = gp.solve(c)
    mu = float(target_mean + w @ (values - gp.mean))
    var = clamp_variance(float(prior_var - w @ c))
    return mu, var


def block_inverse_update(Cinv: np.ndarray, c_new: np.ndarray, var_new: float) -> np.ndarray:
    """Grow a covariance inverse by one point.

    Cinv is the k x k inverse of the current covariance, c_new the length-k
    cross-covariance to the new point, var_new the new point's conditional
    variance given the current ones.  Returns the (k+1) x (k+1) inverse.
    """
    if var_new <= 1e-12:
        raise NumericalError(
            f"degenerate block update: conditional variance {var_new} <= 1e-12"
        )
    k = Cinv.shape[0]
    g = Cinv @ np.asarray(c_new, float).reshape(k)
    out = np.empty((k + 1, k + 1))
    out[:k, :k] = Cinv + np.outer(g, g) / var_new
    out[:k, k] = -g / var_new
    out[k, :k] = -g / var_new
    out[k, k] = 1.0 / var_new
    return out
