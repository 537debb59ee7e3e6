"""Command-line interface: ``cde <subcommand> [flags]``.

Training options resolve as command-line flag, then ``--config`` file
(flat ``key = value`` lines, ``#`` comments), then built-in defaults.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import data as io
from . import density as dm
from . import sampler, tasks
from ._rng import substream_seed
from .trainer import TrainConfig, TrainingDivergedError, train

logger = logging.getLogger("cde")


class CliError(Exception):
    pass


# -- config file --------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
# extra keys accepted by `train` besides TrainConfig fields
_TRAIN_EXTRA = {"arch": str, "hidden": str, "activation": str, "margin": float, "unit_init": bool}


def _coerce(key: str, raw: str, kind):
    if kind is bool or kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(f"config key {key!r}: expected a boolean, got {raw!r}")
    conv = {"int": int, "float": float, "str": str}.get(kind, kind) if isinstance(kind, str) else kind
    try:
        return conv(raw)
    except ValueError:
        raise CliError(f"config key {key!r}: cannot parse {raw!r}") from None


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file into typed values."""
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in _CONFIG_FIELDS:
            out[key] = _coerce(key, raw, _CONFIG_FIELDS[key].type)
        elif key in _TRAIN_EXTRA:
            out[key] = _coerce(key, raw, _TRAIN_EXTRA[key])
        else:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
    return out


def write_config(path, values: dict) -> None:
    lines = [f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


# -- helpers ------------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {path}")
    return p


def _load_model(path) -> io.ModelFile:
    _require_file(path, "model file")
    try:
        return io.load_model(path)
    except io.ModelFormatError as e:
        raise CliError(str(e)) from None


def _load_data(path, **kw) -> io.Dataset:
    _require_file(path, "data file")
    try:
        return io.load_csv(path, **kw)
    except io.DataFormatError as e:
        raise CliError(f"{path}: {e}") from None


def _normalize(mf: io.ModelFile, ds: io.Dataset) -> io.Dataset:
    if ds.data.shape[1] != mf.net.input_width:
        raise CliError(f"data has {ds.data.shape[1]} columns but the model expects {mf.net.input_width}")
    if mf.column_min is None:
        return ds
    return io.minmax_apply(ds, mf.column_min, mf.column_max)


def _eps(mf: io.ModelFile) -> float:
    return float(mf.config.get("eps_floor", dm.DEFAULT_EPS_FLOOR))


def _fmt(v: float) -> str:
    return repr(float(v))


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args) -> None:
    ds = io.gen_toy(args.kind, args.n, args.noise, seed=substream_seed(args.seed, "data"),
                    cap_angle=args.cap_angle)
    io.write_csv(args.out, ds.data, header=["x", "y", "z"])
    print(f"wrote {ds.data.shape[0]} {args.kind} points to {args.out}")


def _train_options(args) -> dict:
    opts = {}
    if args.config:
        opts.update(read_config(args.config))
    for key in list(_CONFIG_FIELDS) + list(_TRAIN_EXTRA):
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    return opts


def cmd_train(args) -> None:
    opts = _train_options(args)
    arch = {k: opts.pop(k) for k in list(_TRAIN_EXTRA) if k in opts}
    ds = _load_data(args.data, has_labels=args.label_column is not None,
                    label_column=args.label_column if args.label_column is not None else -1)
    normed = io.minmax_fit_apply(ds)
    if args.val_data:
        val_raw = _load_data(args.val_data, has_labels=args.label_column is not None,
                             label_column=args.label_column if args.label_column is not None else -1)
        if val_raw.data.shape[1] != ds.data.shape[1]:
            raise CliError("validation data width differs from training data")
        train_ds, val_ds = normed, io.minmax_apply(val_raw, normed.column_min, normed.column_max)
    else:
        frac = opts.get("val_fraction", TrainConfig.val_fraction)
        train_ds, val_ds = io.split(normed, (1.0 - frac, frac), seed=substream_seed(opts.get("seed", 0), "split"))
    N = normed.data.shape[1]

    if arch.get("arch"):
        hidden, act, D = ae.PRESETS.get(arch["arch"], (None, None, None))
        if hidden is None:
            raise CliError(f"unknown --arch {arch['arch']!r}; choose from {sorted(ae.PRESETS)}")
        opts.setdefault("D", D)
    else:
        hidden = tuple(int(h) for h in arch.get("hidden", "32,16").split(",") if h.strip())
        act = arch.get("activation", "relu")
    act = arch.get("activation", act)
    try:
        cfg = TrainConfig(**opts)
        enc, dec = ae.mirrored_specs(N, hidden, cfg.D, act)
        net = ae.init_params(enc, dec, seed=substream_seed(cfg.seed, "init"),
                             margin=arch.get("margin", 0.01), unit_init=arch.get("unit_init", False))
    except ValueError as e:
        raise CliError(str(e)) from None
    try:
        net, dens, report = train(train_ds.data, val_ds.data, cfg, net=net)
    except TrainingDivergedError as e:
        raise CliError(f"training diverged: {e}") from None
    mf = io.ModelFile(net, dens, normed.column_min, normed.column_max,
                      train_ds.data.mean(axis=0), cfg.to_dict())
    io.save_model(args.out, mf)
    if args.metrics:
        Path(args.metrics).write_text(report.to_csv())
    print(f"trained {report.n_iter} iterations ({report.stop_reason}); "
          f"best validation {report.best_val:.6g} at iteration {report.best_iteration}; model -> {args.out}")


def cmd_sample(args) -> None:
    mf = _load_model(args.model)
    X, Z = sampler.sample_data(mf.net, mf.dens, args.n, seed=substream_seed(args.seed, "sampling"),
                               S=args.grid, return_latent=True)
    if not args.normalized and mf.column_min is not None:
        X = io.minmax_invert(X, mf.column_min, mf.column_max)
    io.write_csv(args.out, X)
    if args.latent_out:
        io.write_csv(args.latent_out, Z, header=[f"z{d}" for d in range(Z.shape[1])])
    print(f"wrote {args.n} samples to {args.out}")


def cmd_score(args) -> None:
    mf = _load_model(args.model)
    ds = _normalize(mf, _load_data(args.data, has_labels=args.label_column is not None,
                                   label_column=args.label_column if args.label_column is not None else -1))
    scores = tasks.latent_log_likelihood(mf.net, mf.dens, ds.data, _eps(mf))
    with open(args.out, "w") as fh:
        fh.write("row,score\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{_fmt(s)}\n")
    print(f"scored {len(scores)} rows; mean log-likelihood {scores.mean():.6g}")


def _impute_bounds(mf: io.ModelFile):
    # constant training columns normalize to exactly 0.5; keep them there
    if mf.column_min is None:
        return (0.0, 1.0)
    const = mf.column_max == mf.column_min
    return np.where(const, 0.5, 0.0), np.where(const, 0.5, 1.0)


def _impute_config(args, mf: io.ModelFile) -> tasks.ImputeConfig:
    return tasks.ImputeConfig(steps=args.steps, step_size=args.step_size, init=args.init,
                              fill_values=mf.train_mean, eps_floor=_eps(mf), bounds=_impute_bounds(mf),
                              max_move=args.max_move or None)


def cmd_impute(args) -> None:
    mf = _load_model(args.model)
    raw = _load_data(args.data, allow_missing=True)
    ds = _normalize(mf, raw)
    observed = ~np.isnan(ds.data)
    rows = np.flatnonzero(~observed.all(axis=1))
    filled = ds.data.copy()
    if rows.size:
        filled[rows] = tasks.impute_rows(mf.net, mf.dens, ds.data[rows], observed[rows],
                                         _impute_config(args, mf))
    if mf.column_min is not None:
        filled = np.where(observed, raw.data, io.minmax_invert(filled, mf.column_min, mf.column_max))
    N = filled.shape[1]
    names = raw.header or [f"x{j}" for j in range(N)]
    with open(args.out, "w") as fh:
        fh.write(",".join(names + [f"filled:{n}" for n in names]) + "\n")
        for i in range(filled.shape[0]):
            vals = [_fmt(v) for v in filled[i]] + [str(int(not o)) for o in observed[i]]
            fh.write(",".join(vals) + "\n")
    print(f"imputed {int((~observed).sum())} cells in {rows.size} rows; output -> {args.out}")


def cmd_eval_anomaly(args) -> None:
    mf = _load_model(args.model)
    ds = _normalize(mf, _load_data(args.data, has_labels=True, label_column=args.label_column))
    try:
        res = tasks.anomaly_detect(mf.net, mf.dens, ds.data, ds.labels, args.ratio, _eps(mf))
    except ValueError as e:
        raise CliError(str(e)) from None
    with open(args.out, "w") as fh:
        fh.write("row,score,flag,label\n")
        for i, (s, f, l) in enumerate(zip(res.scores, res.flags, ds.labels)):
            fh.write(f"{i},{_fmt(s)},{int(f)},{int(l)}\n")
        fh.write(f"# precision={res.precision!r},recall={res.recall!r},f1={res.f1!r},threshold={res.threshold!r}\n")
    print(f"precision {res.precision:.4f}  recall {res.recall:.4f}  f1 {res.f1:.4f}")


def cmd_eval_regression(args) -> None:
    mf = _load_model(args.model)
    ds = _normalize(mf, _load_data(args.data))
    col = args.target_column
    if not -ds.data.shape[1] <= col < ds.data.shape[1]:
        raise CliError(f"target column {col} out of range for {ds.data.shape[1]} columns")
    mae = tasks.regression_mae(mf.net, mf.dens, ds.data, col, _impute_config(args, mf))
    line = f"mae={mae!r}"
    if mf.train_mean is not None:
        base = float(np.mean(np.abs(ds.data[:, col] - mf.train_mean[col])))
        line += f",mean_predictor_mae={base!r}"
    if args.out:
        Path(args.out).write_text(line + "\n")
    print(line)


def cmd_inspect(args) -> None:
    mf = _load_model(args.model)
    dens = mf.dens
    print(f"latent density: D={dens.D} K={dens.K} F={dens.F}; network "
          + " -> ".join(str(l.spec.in_width) for l in mf.net.layers) + f" -> {mf.net.layers[-1].spec.out_width}")
    print("mixture weights (sorted):")
    order = np.argsort(-dens.lam, kind="stable")
    top = dens.lam.max() if dens.lam.max() > 0 else 1.0
    for f in order:
        bar = "#" * int(round(40 * dens.lam[f] / top))
        print(f"  {f:4d} {dens.lam[f]:8.4f} {bar}")
    if dens.K:
        decay = dm.decay_diagnostic(dens)
        print("mean |coefficient| by harmonic (rows: latent dimension):")
        print("       " + " ".join(f"k={k:<6d}" for k in range(1, dens.K + 1)))
        for d in range(dens.D):
            print(f"  d={d:<3d}" + " ".join(f"{v:8.4f}" for v in decay[d]))


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cde", description="Compressed-domain density estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads (default: library choice)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("gen-data", help="generate a toy 3-D manifold dataset", formatter_class=fmt)
    g.add_argument("--kind", choices=io.TOY_KINDS, required=True)
    g.add_argument("--n", type=int, default=3000, help="number of points")
    g.add_argument("--noise", type=float, default=0.0, help="isotropic Gaussian noise scale")
    g.add_argument("--cap-angle", type=float, default=60.0, help="fish bowl: removed polar cap, degrees")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train autoencoder and latent density jointly", formatter_class=fmt,
                       epilog="Unset training options fall back to --config, then to TrainConfig defaults.")
    t.add_argument("--data", required=True, help="training CSV")
    t.add_argument("--val-data", help="validation CSV (default: split off --val-fraction)")
    t.add_argument("--label-column", type=int, help="drop this label column before training")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--metrics", help="metrics CSV to write")
    t.add_argument("--arch", help=f"architecture preset: {', '.join(sorted(ae.PRESETS))}")
    t.add_argument("--hidden", help="comma-separated hidden widths (default 32,16)")
    t.add_argument("--activation", choices=("relu", "tanh", "identity"), help="hidden activation (default relu)")
    t.add_argument("--margin", type=float, help="bottleneck bound margin (default 0.01)")
    t.add_argument("--unit-init", dest="unit_init", action="store_const", const=True,
                   help="initialize weights uniformly on [-1, 1]")
    defaults = TrainConfig()
    for name, f in _CONFIG_FIELDS.items():
        flag = "--" + (name if len(name) == 1 else name.replace("_", "-"))
        if f.type in (bool, "bool"):
            t.add_argument(flag, dest=name, action="store_const", const=True,
                           help=f"(default: {getattr(defaults, name)})")
        else:
            conv = {"int": int, "float": float}.get(f.type, f.type) if isinstance(f.type, str) else f.type
            t.add_argument(flag, dest=name, type=conv, help=f"(default: {getattr(defaults, name)})")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw synthetic data from a model", formatter_class=fmt)
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", type=int, default=sampler.DEFAULT_GRID, help="CDF grid nodes")
    s.add_argument("--normalized", action="store_true", help="write samples in [0,1] units")
    s.add_argument("--latent-out", help="also write the latent samples here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("score", help="per-row latent log-likelihood", formatter_class=fmt)
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--label-column", type=int, help="ignore this label column")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_score)

    def impute_flags(q):
        q.add_argument("--steps", type=int, default=500)
        q.add_argument("--step-size", type=float, default=1e-2)
        q.add_argument("--init", choices=("train_mean", "observed_copy", "zeros"), default="train_mean")
        q.add_argument("--max-move", type=float, default=0.05,
                       help="cap on each cell's change per step (0 disables)")

    i = sub.add_parser("impute", help="fill empty CSV cells by likelihood ascent", formatter_class=fmt)
    i.add_argument("--model", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    impute_flags(i)
    i.set_defaults(func=cmd_impute)

    a = sub.add_parser("eval-anomaly", help="flag lowest-likelihood rows and score them", formatter_class=fmt)
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--label-column", type=int, default=-1, help="binary label column (1 = anomaly)")
    a.add_argument("--ratio", type=float, required=True, help="known anomaly fraction")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_eval_anomaly)

    r = sub.add_parser("eval-regression", help="impute one column and report MAE", formatter_class=fmt)
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--target-column", type=int, default=-1)
    r.add_argument("--out", help="write the metrics line here")
    impute_flags(r)
    r.set_defaults(func=cmd_eval_regression)

    n = sub.add_parser("inspect", help="print mixture weights and coefficient decay", formatter_class=fmt)
    n.add_argument("--model", required=True)
    n.set_defaults(func=cmd_inspect)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(args.threads)
    try:
        with limits:
            args.func(args)
    except (CliError, ValueError, OSError) as e:
        print(f"cde {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
