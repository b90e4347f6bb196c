"""Posterior intensity surfaces on regular grids, one-step-ahead temporal
prediction, and surface comparison.

Grid nodes are cell centers.  A node's value depends only on its own
coordinate (kriging against the draw's reference points), never on the grid
resolution, so refining the grid leaves coincident nodes unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .distributions import norm_cdf
from .errors import ValidationError
from .geometry import Domain
from .gp_core import SpaceTimeCovParams
from .mcmc import PosteriorDraws
from ._kernels import krige_moments
from .gp_core import JITTER_REL


def _grid_krige(pts, z, nodes, M, kern):
    comps = np.array(kern.components)
    return krige_moments(
        np.ascontiguousarray(np.asarray(pts, float)),
        np.ascontiguousarray(np.asarray(z, float)),
        np.ascontiguousarray(nodes), np.zeros(len(nodes)),
        comps[:, 0].copy(), comps[:, 1].copy(),
        JITTER_REL * kern.total_variance, M,
    )


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    domain: Domain

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValidationError("grid needs nx, ny >= 2")

    def nodes(self) -> np.ndarray:
        """(nx * ny, 2) cell-center coordinates, x-major."""
        d = self.domain
        xs = d.x_min + (np.arange(self.nx) + 0.5) * d.width / self.nx
        ys = d.y_min + (np.arange(self.ny) + 0.5) * d.height / self.ny
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass
class IntensityField:
    grid: GridSpec
    values: np.ndarray
    t: int

    def __post_init__(self):
        self.values = np.asarray(self.values, float).reshape(self.grid.nx, self.grid.ny)


def posterior_mean_z_grid(draws: PosteriorDraws, t: int, grid: GridSpec,
                          stp: SpaceTimeCovParams, M: int) -> np.ndarray:
    """Average over draws of the field kriged to the grid nodes."""
    nodes = grid.nodes()
    kern = stp.marginal(t)
    acc = np.zeros(len(nodes))
    for pts, z in draws.reference_sets(t):
        if len(pts) == 0:
            continue
        mu, _ = _grid_krige(pts, z, nodes, M, kern)
        acc += mu
    return (acc / draws.R).reshape(grid.nx, grid.ny)


def posterior_intensity_grid(draws: PosteriorDraws, grid: GridSpec,
                             stp: SpaceTimeCovParams, M: int,
                             times=None, predictive_variance: bool = False):
    """Per-slice posterior mean intensity fields.

    Each retained draw contributes lambda_t * Phi(z) at every node, with z
    the conditional mean given that draw's reference points; setting
    predictive_variance uses Phi(mean / sqrt(1 + var)) instead, which
    integrates the conditional Gaussian through Phi in closed form.
    """
    if draws.R == 0:
        raise ValidationError("no retained draws")
    times = range(1, draws.T + 1) if times is None else times
    nodes = grid.nodes()
    fields = []
    for t in times:
        kern = stp.marginal(t)
        acc = np.zeros(len(nodes))
        empty = 0
        for r, (pts, z) in enumerate(draws.reference_sets(t)):
            lam = draws.lambda_star[r, t - 1]
            if len(pts) == 0:
                empty += 1
                acc += lam * 0.5
                continue
            mu, var = _grid_krige(pts, z, nodes, M, kern)
            if predictive_variance:
                acc += lam * norm_cdf(mu / np.sqrt(1.0 + var))
            else:
                acc += lam * norm_cdf(mu)
        if empty:
            warnings.warn(
                f"slice {t}: {empty} draws had no reference points; "
                "prior-only surface contribution"
            )
        fields.append(IntensityField(grid=grid, values=acc / draws.R, t=t))
    return fields


def predict_next_time(draws: PosteriorDraws, t: int, prior, grid: GridSpec,
                      stp: SpaceTimeCovParams, M: int, rng) -> IntensityField:
    """Predictive intensity for slice t+1 from a fit through slice t.

    The predictive field mean equals the posterior mean field at t; the
    rate bound evolves per draw through the Beta innovation (martingale in
    expectation), falling back to the Gamma prior when w = 0.
    """
    if not 1 <= t <= draws.T:
        raise ValidationError(f"training horizon t={t} outside 1..{draws.T}")
    zgrid = posterior_mean_z_grid(draws, t, grid, stp, M)
    w = prior.w
    lam_pred = np.empty(draws.R)
    if w == 0.0:
        lam_pred[:] = rng.gamma(prior.a0, size=draws.R) / prior.b0
    else:
        a = np.full(draws.R, prior.a0)
        for s in range(t):
            a = w * a + draws.K[:, s]
        zeta = rng.beta(w * a, (1.0 - w) * a)
        lam_pred = draws.lambda_star[:, t - 1] * zeta / w
    phi_grid = norm_cdf(zgrid)
    values = float(np.mean(lam_pred)) * phi_grid
    field = IntensityField(grid=grid, values=values, t=t + 1)
    field.lambda_pred = lam_pred
    field.z_grid = zgrid
    return field


def surface_max_abs_diff(a: IntensityField, b: IntensityField) -> float:
    """Max over nodes of |a - b|; grids must match."""
    if a.grid != b.grid:
        raise ValidationError("intensity fields live on different grids")
    return float(np.max(np.abs(a.values - b.values)))


def write_field_csv(field: IntensityField, path) -> None:
    """Row-major matrix (rows follow x, columns follow y) with grid
    metadata as comment headers."""
    g = field.grid
    d = g.domain
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# intensity field (rows: x index, cols: y index)\n")
        fh.write(
            f"# t={field.t} nx={g.nx} ny={g.ny} "
            f"x_min={d.x_min:.15g} x_max={d.x_max:.15g} "
            f"y_min={d.y_min:.15g} y_max={d.y_max:.15g}\n"
        )
        for row in field.values:
            fh.write(",".join(f"{v:.15g}" for v in row) + "\n")


def read_field_csv(path) -> IntensityField:
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        meta = dict(
            kv.split("=") for kv in fh.readline().lstrip("# ").strip().split()
        )
        values = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = GridSpec(
        nx=int(meta["nx"]),
        ny=int(meta["ny"]),
        domain=Domain(
            float(meta["x_min"]), float(meta["x_max"]),
            float(meta["y_min"]), float(meta["y_max"]),
        ),
    )
    return IntensityField(grid=grid, values=values, t=int(meta["t"]))


def write_field_ppm(field: IntensityField, path, sidecar_path=None) -> None:
    """Binary P6 heatmap on a linear dark-blue-to-yellow ramp, with the
    value range recorded in a sidecar JSON."""
    from .io_util import write_json

    v = field.values
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    x = (v - lo) / span
    # image rows scan y from top; transpose so x runs along image columns
    x_img = x.T[::-1]
    r = np.clip(255 * (1.8 * x_img - 0.2), 0, 255).astype(np.uint8)
    g = np.clip(255 * (1.6 * x_img - 0.1), 0, 255).astype(np.uint8)
    b = np.clip(255 * (0.4 + 0.4 * x_img - 0.8 * x_img**2), 0, 255).astype(np.uint8)
    img = np.dstack([r, g, b])
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
    if sidecar_path is not None:
        write_json(sidecar_path, {"t": field.t, "min": lo, "max": hi})
