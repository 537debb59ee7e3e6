"""Joint training of the autoencoder and the latent density.

The objective on a batch is::

    L = L_rec + mu * L_nll(h(X)) + rho * sum_d ||A_d||_F^2

Network weights and Fourier factors take Adam steps; the mixture weights
take a plain gradient step followed by projection onto the simplex.
"""
from __future__ import annotations

import io
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autoencoder as ae
from . import density as dm
from ._rng import substream, substream_seed

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "LossParts",
    "JointGrads",
    "TrainingDivergedError",
    "joint_loss_and_grads",
    "validate",
    "train",
]


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, component: str):
        super().__init__(f"non-finite {component} at iteration {iteration}")
        self.iteration = iteration
        self.component = component


@dataclass
class TrainConfig:
    mu: float = 0.1
    rho: float = 0.1
    lr_net: float = 1e-4
    lr_tensor: float = 1e-4
    lr_lambda: float = 1e-4
    batch: int = 500
    max_iter: int = 1000
    patience: int = 10
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-3
    eps_floor: float = dm.DEFAULT_EPS_FLOOR
    K: int = 5
    F: int = 10
    D: int = 2
    seed: int = 0
    val_fraction: float = 0.1
    eval_every: int = 0  # 0: once per epoch
    init_scale: float = 0.5
    freeze_net: bool = False
    keep_best: bool = True
    clip_coef: bool = False

    def __post_init__(self):
        for name in ("lr_net", "lr_tensor", "lr_lambda", "pretrain_lr", "eps_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.mu < 0 or self.rho < 0:
            raise ValueError("mu and rho must be non-negative")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch < 1 or self.patience < 1 or self.max_iter < 0 or self.pretrain_epochs < 0:
            raise ValueError("batch and patience must be positive; max_iter and pretrain_epochs non-negative")
        if self.K < 0 or self.F < 1 or self.D < 1 or self.eval_every < 0:
            raise ValueError("invalid K, F, D or eval_every")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    iterations: list[int] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    nll: list[float] = field(default_factory=list)
    frob: list[float] = field(default_factory=list)
    val_iterations: list[int] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    stop_reason: str = "max_iter"
    wall_time: float = 0.0
    n_iter: int = 0
    best_iteration: int = 0
    best_val: float = float("inf")

    def to_csv(self) -> str:
        """Metrics as CSV: one row per iteration, ``val`` blank between evaluations."""
        val_at = dict(zip(self.val_iterations, self.val))
        out = io.StringIO()
        out.write("iteration,rec,nll,frob,val\n")
        if 0 in val_at:
            out.write(f"0,,,,{val_at[0]!r}\n")
        for i, r, n, f in zip(self.iterations, self.rec, self.nll, self.frob):
            v = repr(val_at[i]) if i in val_at else ""
            out.write(f"{i},{r!r},{n!r},{f!r},{v}\n")
        return out.getvalue()


@dataclass
class LossParts:
    rec: float
    nll: float
    frob: float
    total: float


@dataclass
class JointGrads:
    net: list[np.ndarray]
    coef_re: np.ndarray
    coef_im: np.ndarray
    lam: np.ndarray


def joint_loss_and_grads(
    net: ae.NetworkParams, dens: dm.DensityParams, X_batch, cfg: TrainConfig
) -> tuple[LossParts, JointGrads]:
    X = np.asarray(X_batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("joint_loss_and_grads needs a non-empty batch")
    Z, Xr, tape = ae.forward(net, X)
    rec = ae.reconstruction_loss(X, Xr)
    dXr = 2.0 * (Xr - X) / X.shape[0]
    nll = dm.nll_batch(dens, Z, cfg.eps_floor)
    g = dm.nll_gradients(dens, Z, cfg.eps_floor)
    net_grads, _ = ae.backward(net, tape, dXr, cfg.mu * g.grad_z)
    frob = dm.frobenius_penalty(dens)
    fre, fim = dm.frobenius_gradient(dens)
    grads = JointGrads(
        net=net_grads,
        coef_re=cfg.mu * g.grad_re + cfg.rho * fre,
        coef_im=cfg.mu * g.grad_im + cfg.rho * fim,
        lam=cfg.mu * g.grad_lambda,
    )
    parts = LossParts(rec, nll, frob, rec + cfg.mu * nll + cfg.rho * frob)
    return parts, grads


def validate(net: ae.NetworkParams, dens: dm.DensityParams, X_val, cfg: TrainConfig) -> float:
    """Validation score ``L_rec + mu * L_nll`` (no parameter penalty)."""
    X = np.asarray(X_val, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("validation set is empty")
    Z, Xr, _ = ae.forward(net, X)
    score = ae.reconstruction_loss(X, Xr)
    if cfg.mu != 0:
        score += cfg.mu * dm.nll_batch(dens, Z, cfg.eps_floor)
    return float(score)


def _finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def train(
    X_train,
    X_val,
    cfg: TrainConfig,
    net: ae.NetworkParams | None = None,
    specs=None,
) -> tuple[ae.NetworkParams, dm.DensityParams, TrainReport]:
    """Pretrain, then run projected SGD with validation-based early stopping.

    ``net`` supplies an initial network (e.g. a fixed encoder); otherwise
    one is built from ``specs`` (encoder, decoder) or a plain two-layer
    default.  Returns the best-validation snapshot unless
    ``cfg.keep_best`` is false.
    """
    X = np.asarray(X_train, dtype=np.float64)
    Xv = np.asarray(X_val, dtype=np.float64)
    if X.ndim != 2 or Xv.ndim != 2 or X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty matrices")
    if X.shape[1] != Xv.shape[1]:
        raise ValueError(f"train has {X.shape[1]} columns but val has {Xv.shape[1]}")
    t0 = time.perf_counter()
    if net is None:
        if specs is None:
            specs = ae.mirrored_specs(X.shape[1], (max(8, 2 * X.shape[1]),), cfg.D, "tanh")
        net = ae.init_params(*specs, seed=substream_seed(cfg.seed, "init"))
    if net.latent_dim != cfg.D:
        raise ValueError(f"network bottleneck is {net.latent_dim} wide but D={cfg.D}")
    if not cfg.freeze_net and cfg.pretrain_epochs > 0:
        net = ae.pretrain(
            net, X, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.batch,
            seed=substream_seed(cfg.seed, "pretrain"),
        )
    dens = dm.init_density(cfg.D, cfg.K, cfg.F, substream(cfg.seed, "init-density"), cfg.init_scale)

    report = TrainReport()
    eval_every = cfg.eval_every or ae.batches_per_epoch(X.shape[0], cfg.batch)
    best = (net, dens)
    report.best_val = validate(net, dens, Xv, cfg)
    report.val_iterations.append(0)
    report.val.append(report.best_val)
    bad = 0

    batches = ae.minibatches(X.shape[0], cfg.batch, substream(cfg.seed, "batching"))
    net_arrays = net.arrays()
    net_state = ae.adam_init(net_arrays)
    coef_state = ae.adam_init([dens.coef_re, dens.coef_im])
    it = 0
    while it < cfg.max_iter:
        it += 1
        idx = next(batches)
        parts, grads = joint_loss_and_grads(net, dens, X[idx], cfg)
        for name, value in (("reconstruction loss", parts.rec), ("NLL", parts.nll), ("Frobenius penalty", parts.frob)):
            if not np.isfinite(value):
                raise TrainingDivergedError(it, name)
        if not cfg.freeze_net:
            net_arrays, net_state = ae.adam_step(net_arrays, grads.net, net_state, cfg.lr_net)
            if not _finite(net_arrays):
                raise TrainingDivergedError(it, "network parameters")
            net = net.with_arrays(net_arrays)
        (re, im), coef_state = ae.adam_step(
            [dens.coef_re, dens.coef_im], [grads.coef_re, grads.coef_im], coef_state, cfg.lr_tensor
        )
        lam = dens.lam - cfg.lr_lambda * grads.lam
        if not _finite([lam]):
            raise TrainingDivergedError(it, "mixture weights")
        lam = dm.project_simplex(lam)
        dens = dm.DensityParams(lam, re, im)
        if cfg.clip_coef:
            dens = dm.clip_magnitudes(dens)
        if not _finite([dens.coef_re, dens.coef_im, dens.lam]):
            raise TrainingDivergedError(it, "density parameters")

        report.iterations.append(it)
        report.rec.append(parts.rec)
        report.nll.append(parts.nll)
        report.frob.append(parts.frob)

        if it % eval_every == 0 or it == cfg.max_iter:
            score = validate(net, dens, Xv, cfg)
            if not np.isfinite(score):
                raise TrainingDivergedError(it, "validation score")
            report.val_iterations.append(it)
            report.val.append(score)
            if score < report.best_val:
                report.best_val = score
                report.best_iteration = it
                best = (net, dens)
                bad = 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    report.stop_reason = "patience"
                    break
    report.n_iter = it
    report.wall_time = time.perf_counter() - t0
    logger.info("training stopped after %d iterations (%s), best val %.6g at %d",
                it, report.stop_reason, report.best_val, report.best_iteration)
    if cfg.keep_best:
        net, dens = best
    return net, dens, report
