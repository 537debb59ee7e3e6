"""Sampling from the learned mixture-of-products latent density."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae
from .density import DensityParams

__all__ = [
    "GridCdf",
    "conditional_density",
    "conditional_grid_cdf",
    "conditional_cdf_analytic",
    "build_tables",
    "invert_cdf",
    "sample_latent",
    "sample_data",
]

DEFAULT_GRID = 1024


@dataclass
class GridCdf:
    f: int
    d: int
    nodes: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    degenerate: bool = False


def conditional_density(dens: DensityParams, d: int, f: int, z) -> np.ndarray:
    """Unclipped marginal density of coordinate ``d`` under component ``f``."""
    z = np.asarray(z, dtype=np.float64)
    k = np.arange(1, dens.K + 1, dtype=np.float64)
    phase = 2.0 * np.pi * z[..., None] * k
    return 1.0 + 2.0 * (np.cos(phase) @ dens.coef_re[d, :, f] + np.sin(phase) @ dens.coef_im[d, :, f])


def _cdf_from_nodes(nodes: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    g = np.clip(g, 0.0, None)
    steps = 0.5 * (g[1:] + g[:-1]) * np.diff(nodes)
    total = steps.sum()
    if not total > 0:
        g = np.ones_like(nodes)
        return g, nodes.copy(), True
    cdf = np.minimum(np.concatenate(([0.0], np.cumsum(steps) / total)), 1.0)
    cdf[-1] = 1.0
    return g / total, cdf, False


def conditional_grid_cdf(dens: DensityParams, d: int, f: int, S: int = DEFAULT_GRID) -> GridCdf:
    """Clip-and-renormalize CDF of one component marginal on ``S`` uniform nodes."""
    if not (0 <= d < dens.D and 0 <= f < dens.F):
        raise IndexError(f"component ({d}, {f}) out of range for D={dens.D}, F={dens.F}")
    if S < 16:
        raise ValueError("grid needs at least 16 nodes")
    nodes = np.linspace(0.0, 1.0, S)
    g, cdf, degenerate = _cdf_from_nodes(nodes, conditional_density(dens, d, f, nodes))
    if degenerate:
        warnings.warn(f"component ({d}, {f}) has no positive mass on the grid; using uniform",
                      RuntimeWarning, stacklevel=2)
    return GridCdf(f, d, nodes, g, cdf, degenerate)


def conditional_cdf_analytic(dens: DensityParams, d: int, f: int, z) -> np.ndarray | float:
    """Exact antiderivative of the unclipped component marginal, from 0 to ``z``."""
    zz = np.asarray(z, dtype=np.float64)
    k = np.arange(1, dens.K + 1, dtype=np.float64)
    phase = 2.0 * np.pi * zz[..., None] * k
    re = dens.coef_re[d, :, f] / k
    im = dens.coef_im[d, :, f] / k
    out = zz + (np.sin(phase) @ re + (1.0 - np.cos(phase)) @ im) / np.pi
    return float(out) if np.ndim(out) == 0 else out


def build_tables(dens: DensityParams, S: int = DEFAULT_GRID) -> list[list[GridCdf]]:
    """All grid CDFs, indexed ``tables[f][d]``."""
    return [[conditional_grid_cdf(dens, d, f, S) for d in range(dens.D)] for f in range(dens.F)]


def invert_cdf(table: GridCdf, u) -> np.ndarray:
    """Linear-interpolation inverse of a grid CDF."""
    return np.interp(u, table.cdf, table.nodes)


def sample_latent(
    dens: DensityParams,
    M: int,
    seed,
    S: int = DEFAULT_GRID,
    return_components: bool = False,
):
    """Draw ``M`` latent points: component from ``lam``, then each coordinate
    independently by inverse-transform sampling."""
    if M < 1:
        raise ValueError("M must be at least 1")
    rng = np.random.default_rng(seed)
    lam = np.clip(dens.lam, 0.0, None)
    comps = rng.choice(dens.F, size=M, p=lam / lam.sum())
    u = rng.random((M, dens.D))
    Z = np.empty((M, dens.D))
    tables = build_tables(dens, S)
    for f in np.unique(comps):
        rows = comps == f
        for d in range(dens.D):
            Z[rows, d] = invert_cdf(tables[f][d], u[rows, d])
    # keep strictly inside the open cube
    tiny = np.finfo(np.float64).eps
    np.clip(Z, tiny, 1.0 - tiny, out=Z)
    return (Z, comps) if return_components else Z


def sample_data(net: ae.NetworkParams, dens: DensityParams, M: int, seed, S: int = DEFAULT_GRID,
                return_latent: bool = False):
    """Decode latent draws into data space."""
    if net.latent_dim != dens.D:
        raise ValueError(f"decoder expects {net.latent_dim} latent dims, density has {dens.D}")
    Z = sample_latent(dens, M, seed, S)
    X = ae.decode(net, Z)
    return (X, Z) if return_latent else X
