"""Datasets, normalization, splitting and the ``CDE1`` model container."""
from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .density import DensityParams

__all__ = [
    "Dataset",
    "ModelFile",
    "DataFormatError",
    "ModelFormatError",
    "TOY_KINDS",
    "swiss_roll_map",
    "s_curve_map",
    "gen_toy",
    "load_csv",
    "write_csv",
    "load_idx",
    "minmax_fit_apply",
    "minmax_apply",
    "minmax_invert",
    "split",
    "save_model",
    "load_model",
]

TOY_KINDS = ("swiss_roll", "s_curve", "fishbowl")
MAGIC = b"CDE1"
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class Dataset:
    data: np.ndarray
    labels: np.ndarray | None = None
    column_min: np.ndarray | None = None
    column_max: np.ndarray | None = None
    header: list[str] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("a dataset needs at least one row of a 2-D matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.data.shape[0],):
                raise ValueError("labels must have one entry per row")

    @property
    def normalized(self) -> bool:
        return self.column_min is not None


# -- toy manifolds ---------------------------------------------------------

def swiss_roll_map(t, y):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t * np.cos(t), np.asarray(y, dtype=np.float64) * np.ones_like(t), t * np.sin(t)], axis=-1)


def s_curve_map(t, y):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([np.sin(t), np.asarray(y, dtype=np.float64) * np.ones_like(t),
                     np.sign(t) * (np.cos(t) - 1.0)], axis=-1)


def gen_toy(kind: str, M: int, noise: float = 0.0, seed=0, cap_angle: float = 60.0,
            height: float = 21.0) -> Dataset:
    """Swiss roll, S-curve or fish bowl point clouds in 3-D.

    The fish bowl is the unit sphere without the cap within ``cap_angle``
    degrees of the north pole, sampled uniformly by area.  Isotropic
    Gaussian noise of standard deviation ``noise`` is added to every point.
    """
    if kind not in TOY_KINDS:
        raise ValueError(f"unknown toy dataset {kind!r}; choose from {TOY_KINDS}")
    if M < 1 or noise < 0:
        raise ValueError("M must be positive and noise non-negative")
    rng = np.random.default_rng(seed)
    if kind == "swiss_roll":
        t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, M)
        X = swiss_roll_map(t, rng.uniform(0.0, height, M))
    elif kind == "s_curve":
        t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, M)
        X = s_curve_map(t, rng.uniform(0.0, 2.0, M))
    else:
        zmax = np.cos(np.deg2rad(cap_angle))
        z = rng.uniform(-1.0, zmax, M)
        phi = rng.uniform(0.0, 2.0 * np.pi, M)
        r = np.sqrt(1.0 - z * z)
        X = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return Dataset(X)


# -- CSV / IDX --------------------------------------------------------------

def _parse_float(cell: str, row: int, col: int, allow_missing: bool) -> float:
    s = cell.strip()
    if s == "":
        if allow_missing:
            return np.nan
        raise DataFormatError(f"row {row}, column {col}: empty cell")
    try:
        return float(s)
    except ValueError:
        raise DataFormatError(f"row {row}, column {col}: non-numeric value {cell!r}") from None


def _is_numeric_row(cells: list[str]) -> bool:
    for c in cells:
        if c.strip() == "":
            continue
        try:
            float(c)
        except ValueError:
            return False
    return True


def load_csv(path, has_labels: bool = False, label_column: int = -1, allow_missing: bool = False) -> Dataset:
    """Read a numeric CSV; a non-numeric first row is taken as the header.

    Row numbers in error messages are 1-based file lines.  With
    ``allow_missing`` empty cells become NaN.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    rows_numbered = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows_numbered:
        raise DataFormatError(f"{path}: no data rows")
    header = None
    if not _is_numeric_row(rows_numbered[0][1]):
        header = [c.strip() for c in rows_numbered[0][1]]
        rows_numbered = rows_numbered[1:]
        if not rows_numbered:
            raise DataFormatError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows_numbered[0][1])
    values = []
    for lineno, r in rows_numbered:
        if len(r) != width:
            raise DataFormatError(f"row {lineno}: expected {width} columns, found {len(r)}")
        values.append([_parse_float(c, lineno, j + 1, allow_missing) for j, c in enumerate(r)])
    A = np.array(values, dtype=np.float64)
    labels = None
    if has_labels:
        col = label_column % width
        labels = A[:, col]
        if np.any(np.isnan(labels)) or np.any(labels != np.round(labels)):
            raise DataFormatError(f"label column {col + 1} must hold integers")
        labels = labels.astype(np.int64)
        A = np.delete(A, col, axis=1)
        if header is not None:
            header = header[:col] + header[col + 1:]
    return Dataset(A, labels, header=header)


def write_csv(path, rows: np.ndarray, header: list[str] | None = None) -> None:
    """Write a numeric matrix with round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.asarray(rows):
            w.writerow(["" if (isinstance(v, float) and np.isnan(v)) else repr(float(v)) for v in row])


def load_idx(path) -> np.ndarray:
    """Read an IDX file (e.g. MNIST); images are flattened and scaled by 1/255."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataFormatError(f"{path}: not an IDX file")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if raw[2] not in dtypes:
        raise DataFormatError(f"{path}: unknown IDX element type 0x{raw[2]:02x}")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    arr = np.frombuffer(raw, dtype=dtypes[raw[2]], offset=4 + 4 * ndim)
    if arr.size != int(np.prod(dims)):
        raise DataFormatError(f"{path}: payload size does not match header")
    arr = arr.reshape(dims).astype(np.float64)
    if ndim > 1:
        arr = arr.reshape(dims[0], -1)
        if raw[2] == 0x08:
            arr = arr / 255.0
    return arr


# -- normalization and splitting -------------------------------------------

def minmax_fit_apply(ds: Dataset) -> Dataset:
    """Fit per-column min/max and map columns onto [0, 1]; constant columns go to 0.5."""
    lo = np.nanmin(ds.data, axis=0)
    hi = np.nanmax(ds.data, axis=0)
    return minmax_apply(ds, lo, hi)


def minmax_apply(ds: Dataset, mins, maxs) -> Dataset:
    """Apply a fitted min/max map, clamping out-of-range values into [0, 1]."""
    mins = np.asarray(mins, dtype=np.float64)
    maxs = np.asarray(maxs, dtype=np.float64)
    if np.any(mins > maxs):
        raise ValueError("column_min exceeds column_max")
    span = maxs - mins
    const = span == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        X = (ds.data - mins) / np.where(const, 1.0, span)
    X = np.where(const, 0.5, X)
    X = np.where(np.isnan(ds.data), np.nan, np.clip(X, 0.0, 1.0))
    return Dataset(X, ds.labels, mins.copy(), maxs.copy(), ds.header)


def minmax_invert(X, mins, maxs) -> np.ndarray:
    mins = np.asarray(mins, dtype=np.float64)
    maxs = np.asarray(maxs, dtype=np.float64)
    return mins + np.asarray(X, dtype=np.float64) * (maxs - mins)


def split(ds: Dataset, fractions, seed) -> tuple[Dataset, ...]:
    """Shuffled disjoint partitions, one per fraction.

    When the fractions sum to one, rounding leftovers go to the first part.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-12:
        raise ValueError("fractions must be positive and sum to at most 1")
    M = ds.data.shape[0]
    sizes = [int(np.floor(f * M + 1e-9)) for f in fractions]
    if abs(sum(fractions) - 1.0) < 1e-12:
        sizes[0] += M - sum(sizes)
    if min(sizes) < 1:
        raise ValueError(f"fractions {fractions} leave an empty partition for {M} rows")
    perm = np.random.default_rng(seed).permutation(M)
    out, start = [], 0
    for n in sizes:
        idx = perm[start:start + n]
        start += n
        out.append(Dataset(
            ds.data[idx],
            None if ds.labels is None else ds.labels[idx],
            ds.column_min, ds.column_max, ds.header,
        ))
    return tuple(out)


# -- model container --------------------------------------------------------

@dataclass
class ModelFile:
    net: ae.NetworkParams
    dens: DensityParams
    column_min: np.ndarray | None = None
    column_max: np.ndarray | None = None
    train_mean: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _section(name: str, kind: bytes, shape: tuple[int, ...], payload: bytes) -> bytes:
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + kind + struct.pack("<B", len(shape))
    head += struct.pack(f"<{len(shape)}Q", *shape)
    return head + struct.pack("<Q", len(payload)) + payload


def _array_section(name: str, a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return _section(name, b"f", a.shape, a.tobytes())


def save_model(path, mf: ModelFile) -> None:
    """Write the ``CDE1`` container: magic, version, sections, trailing CRC32."""
    meta = {
        "margin": mf.net.margin,
        "encoder": [[l.spec.in_width, l.spec.out_width, l.spec.activation] for l in mf.net.encoder],
        "decoder": [[l.spec.in_width, l.spec.out_width, l.spec.activation] for l in mf.net.decoder],
        "config": mf.config,
    }
    sections = [_section("meta", b"j", (), json.dumps(meta, sort_keys=True).encode("utf-8"))]
    for i, a in enumerate(mf.net.arrays()):
        sections.append(_array_section(f"net.{i}", a))
    sections.append(_array_section("lam", mf.dens.lam))
    sections.append(_array_section("coef_re", mf.dens.coef_re))
    sections.append(_array_section("coef_im", mf.dens.coef_im))
    for name in ("column_min", "column_max", "train_mean"):
        value = getattr(mf, name)
        if value is not None:
            sections.append(_array_section(name, value))
    body = MAGIC + struct.pack("<II", mf.version, len(sections)) + b"".join(sections)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> ModelFile:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ModelFormatError(f"{path}: missing CDE1 magic bytes")
    if len(raw) < 16:
        raise ModelFormatError(f"{path}: checksum mismatch (file truncated)")
    version, n_sections = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model format version {version} (expected {FORMAT_VERSION})")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError(f"{path}: checksum mismatch (file corrupt or truncated)")
    pos = 12
    items: dict[str, object] = {}
    for _ in range(n_sections):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode("utf-8")
        pos += nlen
        kind = body[pos:pos + 1]
        (ndim,) = struct.unpack_from("<B", body, pos + 1)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        (plen,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        payload = body[pos:pos + plen]
        pos += plen
        if kind == b"j":
            items[name] = json.loads(payload.decode("utf-8"))
        else:
            items[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(body):
        raise ModelFormatError(f"{path}: trailing bytes after last section")
    meta = items["meta"]
    specs = [ae.LayerSpec(*s) for s in meta["encoder"] + meta["decoder"]]
    n_enc = len(meta["encoder"])
    arrays = [items[f"net.{i}"] for i in range(2 * len(specs))]
    layers = [ae.Layer(arrays[2 * i], arrays[2 * i + 1], s) for i, s in enumerate(specs)]
    net = ae.NetworkParams(layers[:n_enc], layers[n_enc:], meta["margin"])
    dens = DensityParams(items["lam"], items["coef_re"], items["coef_im"])
    return ModelFile(net, dens, items.get("column_min"), items.get("column_max"),
                     items.get("train_mean"), meta["config"], version)
