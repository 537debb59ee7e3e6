"""Low-rank characteristic-tensor density on the unit hypercube.

The latent density is a truncated multivariate Fourier series whose
coefficient tensor has a rank-F canonical polyadic decomposition.  Each
factor column is the characteristic function of one mixture component
along one dimension, so the model reads as a mixture of F product
distributions::

    f(z) = sum_f lam[f] * prod_d V[d, f](z_d)
    V[d, f](t) = 1 + 2 * sum_k (Re c[d,k,f] cos(2 pi k t) + Im c[d,k,f] sin(2 pi k t))

Only the positive harmonics ``k = 1..K`` are stored.  The origin
coefficient is pinned to one and the negative harmonics are the complex
conjugates, so the density is real and integrates to one by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DensityParams",
    "NllGradient",
    "init_density",
    "factor_response",
    "density_eval",
    "nll_batch",
    "nll_gradients",
    "density_grad_z",
    "frobenius_penalty",
    "frobenius_gradient",
    "project_simplex",
    "decay_diagnostic",
    "clip_magnitudes",
]

DEFAULT_EPS_FLOOR = 1e-10


@dataclass
class DensityParams:
    """Mixture weights and half-spectrum factor matrices.

    ``coef_re`` and ``coef_im`` have shape ``(D, K, F)``; entry
    ``[d, k-1, f]`` holds the real/imaginary part of the k-th Fourier
    coefficient of component ``f`` along dimension ``d``.
    """

    lam: np.ndarray
    coef_re: np.ndarray
    coef_im: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.coef_re = np.asarray(self.coef_re, dtype=np.float64)
        self.coef_im = np.asarray(self.coef_im, dtype=np.float64)
        if self.coef_re.ndim != 3 or self.coef_re.shape != self.coef_im.shape:
            raise ValueError(
                f"coefficient arrays must share a (D, K, F) shape, got "
                f"{self.coef_re.shape} and {self.coef_im.shape}"
            )
        if self.lam.shape != (self.coef_re.shape[2],):
            raise ValueError(
                f"lam has shape {self.lam.shape}, expected ({self.coef_re.shape[2]},)"
            )
        if self.coef_re.shape[0] < 1 or self.coef_re.shape[2] < 1:
            raise ValueError("D and F must be positive")

    @property
    def D(self) -> int:
        return self.coef_re.shape[0]

    @property
    def K(self) -> int:
        return self.coef_re.shape[1]

    @property
    def F(self) -> int:
        return self.coef_re.shape[2]

    @property
    def coef(self) -> np.ndarray:
        """Complex view of the stored half-spectrum, shape (D, K, F)."""
        return self.coef_re + 1j * self.coef_im

    def copy(self) -> "DensityParams":
        return DensityParams(self.lam.copy(), self.coef_re.copy(), self.coef_im.copy())

    def check(self, atol: float = 1e-12) -> None:
        """Raise ``ValueError`` if the simplex or finiteness invariants fail."""
        if np.any(self.lam < 0) or abs(self.lam.sum() - 1.0) > atol:
            raise ValueError("lam is not on the probability simplex")
        if not (np.all(np.isfinite(self.coef_re)) and np.all(np.isfinite(self.coef_im))):
            raise ValueError("non-finite Fourier coefficient")

    @classmethod
    def from_complex(cls, lam, coef) -> "DensityParams":
        coef = np.asarray(coef, dtype=np.complex128)
        return cls(lam, coef.real.copy(), coef.imag.copy())


@dataclass
class NllGradient:
    grad_lambda: np.ndarray
    grad_re: np.ndarray
    grad_im: np.ndarray
    grad_z: np.ndarray


def init_density(D: int, K: int, F: int, rng: np.random.Generator, scale: float = 0.5) -> DensityParams:
    """Uniform weights and random coefficients with ``|c[d,k,f]| <= scale / k``."""
    if D < 1 or F < 1 or K < 0:
        raise ValueError(f"invalid model size D={D}, K={K}, F={F}")
    k = np.arange(1, K + 1, dtype=np.float64)[None, :, None]
    mag = rng.uniform(0.0, 1.0, size=(D, K, F)) * scale / k
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(D, K, F))
    return DensityParams(np.full(F, 1.0 / F), mag * np.cos(phase), mag * np.sin(phase))


def _as_batch(params: DensityParams, z) -> tuple[np.ndarray, bool]:
    Z = np.asarray(z, dtype=np.float64)
    single = Z.ndim == 1
    if single:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != params.D:
        raise ValueError(f"expected points of dimension {params.D}, got shape {np.shape(z)}")
    if not np.all((Z >= 0.0) & (Z <= 1.0)):
        raise ValueError("latent points must lie in the unit hypercube [0, 1]^D")
    return Z, single


def _harmonics(params: DensityParams, Z: np.ndarray):
    # phase[m, d, k] = 2 pi k z[m, d]
    k = np.arange(1, params.K + 1, dtype=np.float64)
    phase = 2.0 * np.pi * Z[:, :, None] * k
    return k, np.cos(phase), np.sin(phase)


def _response(params: DensityParams, Z: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    return 1.0 + 2.0 * (
        np.einsum("mdk,dkf->mdf", cos, params.coef_re)
        + np.einsum("mdk,dkf->mdf", sin, params.coef_im)
    )


def factor_response(params: DensityParams, z) -> np.ndarray:
    """Per-dimension, per-component response ``V[d, f]`` at ``z``.

    Returns a ``(D, F)`` matrix for a single point or ``(M, D, F)`` for a
    batch of points.
    """
    Z, single = _as_batch(params, z)
    _, cos, sin = _harmonics(params, Z)
    V = _response(params, Z, cos, sin)
    return V[0] if single else V


def density_eval(params: DensityParams, z) -> np.ndarray | float:
    """Raw (unclipped) truncated-series density at one point or a batch."""
    Z, single = _as_batch(params, z)
    _, cos, sin = _harmonics(params, Z)
    V = _response(params, Z, cos, sin)
    dens = np.prod(V, axis=1) @ params.lam
    return float(dens[0]) if single else dens


def nll_batch(params: DensityParams, Z, eps_floor: float = DEFAULT_EPS_FLOOR) -> float:
    """Mean negative log-likelihood with the density floored at ``eps_floor``."""
    if eps_floor <= 0:
        raise ValueError("eps_floor must be positive")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("nll_batch needs a non-empty (M, D) batch")
    dens = density_eval(params, Z)
    return float(-np.mean(np.log(np.maximum(dens, eps_floor))))


def _leave_one_out_prod(V: np.ndarray) -> np.ndarray:
    # out[m, d, f] = prod_{d' != d} V[m, d', f], without dividing by V.
    M, D, F = V.shape
    before = np.ones_like(V)
    after = np.ones_like(V)
    for d in range(1, D):
        before[:, d] = before[:, d - 1] * V[:, d - 1]
    for d in range(D - 2, -1, -1):
        after[:, d] = after[:, d + 1] * V[:, d + 1]
    return before * after


def nll_gradients(params: DensityParams, Z, eps_floor: float = DEFAULT_EPS_FLOOR) -> NllGradient:
    """Exact gradients of :func:`nll_batch`.

    Real and imaginary parts of every stored coefficient are treated as
    independent real parameters.  Samples whose density is at or below the
    floor contribute nothing to any gradient.
    """
    if eps_floor <= 0:
        raise ValueError("eps_floor must be positive")
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("nll_gradients needs a non-empty (M, D) batch")
    Z, _ = _as_batch(params, Z)
    M = Z.shape[0]
    k, cos, sin = _harmonics(params, Z)
    V = _response(params, Z, cos, sin)
    prods = np.prod(V, axis=1)  # (M, F)
    dens = prods @ params.lam
    active = dens > eps_floor
    # d(-1/M log f)/df per sample, zero in the clamped branch
    w = np.zeros(M)
    w[active] = -1.0 / (M * dens[active])

    grad_lambda = w @ prods
    # G[m, d, f] = d f / d V[m, d, f]
    G = params.lam * _leave_one_out_prod(V)
    WG = w[:, None, None] * G
    grad_re = 2.0 * np.einsum("mdf,mdk->dkf", WG, cos)
    grad_im = 2.0 * np.einsum("mdf,mdk->dkf", WG, sin)
    twopik = 2.0 * np.pi * k
    dV_dz = 2.0 * (
        np.einsum("mdk,dkf->mdf", -sin * twopik, params.coef_re)
        + np.einsum("mdk,dkf->mdf", cos * twopik, params.coef_im)
    )
    grad_z = np.sum(WG * dV_dz, axis=2)
    return NllGradient(grad_lambda, grad_re, grad_im, grad_z)


def density_grad_z(params: DensityParams, Z) -> tuple[np.ndarray, np.ndarray]:
    """Raw density and its gradient with respect to the latent point, per row."""
    Z, _ = _as_batch(params, Z)
    k, cos, sin = _harmonics(params, Z)
    V = _response(params, Z, cos, sin)
    dens = np.prod(V, axis=1) @ params.lam
    G = params.lam * _leave_one_out_prod(V)
    twopik = 2.0 * np.pi * k
    dV_dz = 2.0 * (
        np.einsum("mdk,dkf->mdf", -sin * twopik, params.coef_re)
        + np.einsum("mdk,dkf->mdf", cos * twopik, params.coef_im)
    )
    return dens, np.sum(G * dV_dz, axis=2)


def frobenius_penalty(params: DensityParams) -> float:
    """Sum of squared Frobenius norms of the full factor matrices.

    Each stored coefficient appears twice (k and -k); the pinned origin row
    contributes the constant ``D * F``, which is left out.
    """
    return float(2.0 * (np.sum(params.coef_re**2) + np.sum(params.coef_im**2)))


def frobenius_gradient(params: DensityParams) -> tuple[np.ndarray, np.ndarray]:
    return 4.0 * params.coef_re, 4.0 * params.coef_im


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w : w >= 0, sum(w) = 1}``.

    Sort-and-threshold: find the largest ``r`` such that the r-th largest
    entry stays positive after subtracting the common shift, then clip.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("project_simplex needs a non-empty finite vector")
    u = np.sort(v, kind="stable")[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    r = np.count_nonzero(u - css / idx > 0)
    theta = css[r - 1] / r
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def decay_diagnostic(params: DensityParams) -> np.ndarray:
    """Mean coefficient magnitude per dimension and harmonic, shape (D, K)."""
    return np.mean(np.abs(params.coef), axis=2)


def clip_magnitudes(params: DensityParams, bound: float = 1.0) -> DensityParams:
    """Rescale coefficients so that ``|c| <= bound`` (optional post-step)."""
    mag = np.hypot(params.coef_re, params.coef_im)
    scale = np.where(mag > bound, bound / np.maximum(mag, 1e-300), 1.0)
    return DensityParams(params.lam.copy(), params.coef_re * scale, params.coef_im * scale)
