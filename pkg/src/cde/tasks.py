"""Downstream uses of a trained model: anomaly ranking, imputation, regression."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae
from . import density as dm

logger = logging.getLogger(__name__)

__all__ = [
    "AnomalyResult",
    "ImputeConfig",
    "latent_log_likelihood",
    "anomaly_detect",
    "prf1",
    "impute_missing",
    "impute_rows",
    "regression_mae",
]


@dataclass
class AnomalyResult:
    scores: np.ndarray
    flags: np.ndarray
    precision: float
    recall: float
    f1: float
    threshold: float


@dataclass
class ImputeConfig:
    mask: np.ndarray | None = None  # True = observed
    steps: int = 500
    step_size: float = 1e-2
    init: str = "train_mean"
    fill_values: np.ndarray | None = None  # column means for init="train_mean"
    eps_floor: float = dm.DEFAULT_EPS_FLOOR
    # (lo, hi) box for missing cells; scalars or per-column arrays
    bounds: tuple | None = (0.0, 1.0)
    max_move: float | None = 0.05  # per-step cap on each cell's change

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_move is not None and not self.max_move > 0:
            raise ValueError("max_move must be positive or None")
        if self.init not in ("train_mean", "observed_copy", "zeros"):
            raise ValueError(f"unknown init policy {self.init!r}")


def latent_log_likelihood(net: ae.NetworkParams, dens: dm.DensityParams, X,
                          eps_floor: float = dm.DEFAULT_EPS_FLOOR) -> np.ndarray:
    """``log max(f(h(x)), eps_floor)`` per row."""
    Z = ae.encode(net, X)
    return np.log(np.maximum(dm.density_eval(dens, Z), eps_floor))


def prf1(flags, labels) -> tuple[float, float, float]:
    """Precision, recall and F1 with zero denominators mapped to 0."""
    flags = np.asarray(flags).astype(bool)
    labels = np.asarray(labels).astype(bool)
    if flags.shape != labels.shape:
        raise ValueError("flags and labels differ in length")
    tp = int(np.sum(flags & labels))
    fp = int(np.sum(flags & ~labels))
    fn = int(np.sum(~flags & labels))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def anomaly_detect(net, dens, X_test, labels, ratio: float,
                   eps_floor: float = dm.DEFAULT_EPS_FLOOR) -> AnomalyResult:
    """Flag the ``round(ratio * M)`` rows with the lowest latent log-likelihood."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    scores = latent_log_likelihood(net, dens, X_test, eps_floor)
    n_flag = int(math.floor(ratio * len(scores) + 0.5))
    if n_flag == 0:
        raise ValueError(f"ratio {ratio} flags no rows out of {len(scores)}")
    order = np.argsort(scores, kind="stable")
    flags = np.zeros(len(scores), dtype=bool)
    flags[order[:n_flag]] = True
    if labels is None:
        p = r = f1 = float("nan")
    else:
        labels = np.asarray(labels)
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be binary (1 = anomaly)")
        p, r, f1 = prf1(flags, labels)
    return AnomalyResult(scores, flags, p, r, f1, float(scores[order[n_flag - 1]]))


def _initial_fill(X: np.ndarray, observed: np.ndarray, cfg: ImputeConfig) -> np.ndarray:
    X0 = np.where(observed, X, 0.0)
    if cfg.init == "train_mean":
        if cfg.fill_values is None:
            raise ValueError("init='train_mean' needs fill_values (training column means)")
        fill = np.broadcast_to(np.asarray(cfg.fill_values, dtype=np.float64), X.shape)
        X0 = np.where(observed, X, fill)
    elif cfg.init == "observed_copy":
        # missing cells start at the mean of the row's observed cells
        n_obs = observed.sum(axis=1, keepdims=True)
        row_mean = np.where(n_obs > 0, X0.sum(axis=1, keepdims=True) / np.maximum(n_obs, 1), 0.0)
        X0 = np.where(observed, X, row_mean)
    return X0


def impute_rows(net: ae.NetworkParams, dens: dm.DensityParams, X, observed, cfg: ImputeConfig) -> np.ndarray:
    """Fixed-step gradient ascent on ``log f(h(x))`` over the missing cells.

    ``observed`` is a boolean matrix shaped like ``X``; every row is
    optimized independently.  Observed cells are returned bit-for-bit.
    """
    X = np.asarray(X, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if X.ndim != 2 or observed.shape != X.shape:
        raise ValueError("X and the observation mask must be matrices of equal shape")
    if observed.all():
        raise ValueError("no missing coordinates to impute")
    missing = ~observed
    Xc = _initial_fill(X, observed, cfg)
    if cfg.bounds is not None:
        Xc = np.where(missing, np.clip(Xc, *cfg.bounds), Xc)
    for step in range(cfg.steps):
        Z, Xr, tape = ae.forward(net, Xc)
        f, df_dz = dm.density_grad_z(dens, Z)
        # log f is undefined where the truncated series is non-positive;
        # climb the raw density there until it turns positive
        pos = f > cfg.eps_floor
        direction = np.where(pos[:, None], df_dz / np.where(pos, f, 1.0)[:, None], df_dz)
        _, dX = ae.backward(net, tape, np.zeros_like(Xr), direction)
        move = cfg.step_size * np.where(missing, dX, 0.0)
        if cfg.max_move is not None:
            move = np.clip(move, -cfg.max_move, cfg.max_move)
        nxt = Xc + move
        if cfg.bounds is not None:
            nxt = np.where(missing, np.clip(nxt, *cfg.bounds), nxt)
        if not np.all(np.isfinite(nxt)):
            logger.warning("imputation produced non-finite values at step %d; returning last finite iterate", step)
            break
        Xc = nxt
    return np.where(observed, X, Xc)


def impute_missing(net, dens, x_observed, cfg: ImputeConfig) -> np.ndarray:
    """Complete one N-vector; ``cfg.mask`` marks observed coordinates."""
    x = np.asarray(x_observed, dtype=np.float64).ravel()
    if cfg.mask is None:
        raise ValueError("ImputeConfig.mask is required")
    mask = np.asarray(cfg.mask, dtype=bool).ravel()
    if mask.shape != x.shape:
        raise ValueError("mask length differs from the data vector")
    return impute_rows(net, dens, x[None, :], mask[None, :], cfg)[0]


def regression_mae(net, dens, X_test, target_column: int, cfg: ImputeConfig) -> float:
    """Mask the target column of every row, impute it, report the mean absolute error."""
    X = np.asarray(X_test, dtype=np.float64)
    if X.ndim != 2 or not -X.shape[1] <= target_column < X.shape[1]:
        raise ValueError(f"target column {target_column} is out of range")
    observed = np.ones(X.shape, dtype=bool)
    observed[:, target_column] = False
    filled = impute_rows(net, dens, X, observed, cfg)
    return float(np.mean(np.abs(filled[:, target_column] - X[:, target_column])))
