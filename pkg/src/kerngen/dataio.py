"""Dataset loading, latent sampling, and checkpoint persistence.

Datasets are column-oriented: one training vector per column, matching the
network's output convention. Three on-disk formats are supported (CSV, a raw
little-endian float64 container, and IDX ubyte images), each reduced to the
same in-memory Dataset. Checkpoints are a little-endian binary container with
a JSON sidecar holding the training configuration.
"""

from __future__ import annotations

import gzip
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .generator import GeneratorParams, GradPower, NetShape

RAWF64_MAGIC = b"MMDD"
CHECKPOINT_MAGIC = b"MMDG"
CHECKPOINT_VERSION = 1


class DatasetError(Exception):
    """Raised when a dataset file cannot be parsed or fails validation."""


class CheckpointError(Exception):
    """Raised when a checkpoint file is malformed or inconsistent."""


@dataclass(frozen=True)
class Dataset:
    """Immutable column-oriented training set; entries lie in [0, 1]."""

    columns: np.ndarray
    source_path: str
    scale_mode: str

    def __post_init__(self):
        if self.columns.ndim != 2:
            raise DatasetError(f"dataset must be a 2-D array, got shape {self.columns.shape}")
        if self.columns.shape[1] < 1:
            raise DatasetError("dataset must contain at least one column")

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def count(self) -> int:
        return self.columns.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.columns[:, j]


def _open_maybe_gzip(path: str):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _parse_csv(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise DatasetError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(fields)}"
                )
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _parse_rawf64(path: str) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise DatasetError(f"{path}: truncated header ({len(header)} of 12 bytes)")
        magic, dim, count = header[:4], *struct.unpack("<II", header[4:12])
        if magic != RAWF64_MAGIC:
            raise DatasetError(f"{path}: bad magic {magic!r}, expected {RAWF64_MAGIC!r}")
        if dim < 1 or count < 1:
            raise DatasetError(f"{path}: invalid dimensions dim={dim} count={count}")
        payload = fh.read(8 * dim * count)
    if len(payload) < 8 * dim * count:
        raise DatasetError(
            f"{path}: truncated payload at offset {12 + len(payload)}: "
            f"expected {8 * dim * count} bytes, got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    return flat.reshape((dim, count), order="F").astype(np.float64)


def _parse_idx(path: str) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise DatasetError(f"{path}: truncated IDX header")
        zero, dtype, ndim = struct.unpack(">HBB", head)
        if zero != 0 or dtype != 0x08:
            raise DatasetError(
                f"{path}: unsupported IDX header (dtype=0x{dtype:02x}); only ubyte is handled"
            )
        if ndim < 1 or ndim > 3:
            raise DatasetError(f"{path}: unsupported IDX rank {ndim}")
        dim_bytes = fh.read(4 * ndim)
        if len(dim_bytes) < 4 * ndim:
            raise DatasetError(f"{path}: truncated IDX dimension list")
        dims = struct.unpack(f">{ndim}I", dim_bytes)
        total = int(np.prod(dims))
        payload = fh.read(total)
    if len(payload) < total:
        raise DatasetError(f"{path}: truncated IDX payload: expected {total} bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    count = dims[0]
    # Images flatten row-major per item; columns of the result are the items.
    return flat.reshape((count, total // count)).T


_PARSERS = {"csv": _parse_csv, "rawf64": _parse_rawf64, "idx": _parse_idx}


def load_dataset(
    path: str,
    format: str,
    scale: str = "none",
    transpose: bool = False,
) -> Dataset:
    """Read a column-oriented dataset and apply the requested scaling.

    scale "none" validates entries against [0,1] and rejects violations;
    "minmax" maps the global [min, max] of the whole matrix onto [0,1]
    (a single affine map, so relative geometry is preserved); "fixed255"
    divides by 255 (byte-image convention). `transpose` flips the parsed
    matrix first, for row-per-vector CSV files.
    """
    if format not in _PARSERS:
        raise DatasetError(f"unknown dataset format {format!r}")
    if scale not in ("none", "minmax", "fixed255"):
        raise DatasetError(f"unknown scale mode {scale!r}")
    if not os.path.exists(path):
        raise DatasetError(f"{path}: file not found")
    matrix = _PARSERS[format](path)
    if transpose:
        matrix = matrix.T
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise DatasetError(f"{path}: dataset contains non-finite entries")
    if scale == "fixed255":
        matrix = matrix / 255.0
    elif scale == "minmax":
        lo, hi = matrix.min(), matrix.max()
        if hi > lo:
            matrix = (matrix - lo) / (hi - lo)
        else:
            matrix = np.zeros_like(matrix)
    lo, hi = matrix.min(), matrix.max()
    if lo < 0.0 or hi > 1.0:
        raise DatasetError(
            f"{path}: entries outside [0,1] (min={lo:.6g}, max={hi:.6g}); "
            "pass a scale mode to rescale"
        )
    return Dataset(columns=matrix, source_path=path, scale_mode=scale)


def latent_batch(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """Draw an n x count block of i.i.d. standard Normal latents.

    The generator stream is consumed column by column: column j uses draws
    j*n .. (j+1)*n-1. A block of `count` columns therefore consumes exactly
    the same variates as `count` successive single-column draws, which keeps
    online and batched training on the same stream comparable.
    """
    if n < 1 or count < 1:
        raise ValueError(f"n and count must be >= 1, got n={n} count={count}")
    return rng.standard_normal(n * count).reshape((n, count), order="F")


def write_rawf64(columns: np.ndarray, path: str) -> None:
    """Write a (dim, count) matrix in the raw float64 container format."""
    columns = np.asarray(columns, dtype=np.float64)
    if columns.ndim != 2:
        raise DatasetError(f"expected a 2-D array, got shape {columns.shape}")
    dim, count = columns.shape
    with open(path, "wb") as fh:
        fh.write(RAWF64_MAGIC)
        fh.write(struct.pack("<II", dim, count))
        fh.write(np.asfortranarray(columns).tobytes(order="F"))


def write_csv(columns: np.ndarray, path: str, transpose: bool = False) -> None:
    """Write a (dim, count) matrix as CSV, one vector per column by default."""
    columns = np.asarray(columns, dtype=np.float64)
    matrix = columns.T if transpose else columns
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))


def _read_array(fh, shape: tuple, path: str, name: str) -> np.ndarray:
    nbytes = 8 * int(np.prod(shape))
    raw = fh.read(nbytes)
    if len(raw) < nbytes:
        raise CheckpointError(f"{path}: truncated while reading {name}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_checkpoint(params: GeneratorParams, power: GradPower, iteration: int, config, path: str) -> None:
    """Persist parameters, gradient powers, and the iteration counter.

    Layout (little-endian): magic "MMDG", version u32, n m k u32, then
    row-major float64 blocks A, a, B, b, M, N, then the iteration as u64.
    The training configuration is written to a JSON sidecar at path+".json";
    `config` may be a mapping or any object with a to_dict() method.
    """
    shape = params.shape
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, shape.n, shape.m, shape.k))
        for arr in (params.A, params.a, params.B, params.b, power.M, power.N):
            _write_array(fh, arr)
        fh.write(struct.pack("<Q", iteration))
    if config is not None:
        cfg = config if isinstance(config, dict) else config.to_dict()
        with open(path + ".json", "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path: str, expect_shape: NetShape | None = None):
    """Load a checkpoint; returns (params, power, iteration, config_dict).

    config_dict is None when no sidecar exists. All validation happens
    before any value is returned, so a malformed file yields no partial
    state.
    """
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    with fh:
        header = fh.read(20)
        if len(header) < 20:
            raise CheckpointError(f"{path}: truncated header")
        magic = header[:4]
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, n, m, k = struct.unpack("<IIII", header[4:20])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        shape = NetShape(n=n, m=m, k=k)
        if expect_shape is not None and shape != expect_shape:
            raise CheckpointError(
                f"{path}: shape mismatch: file has {(n, m, k)}, "
                f"expected {(expect_shape.n, expect_shape.m, expect_shape.k)}"
            )
        A = _read_array(fh, (m, n), path, "A")
        a = _read_array(fh, (m,), path, "a")
        B = _read_array(fh, (k, m), path, "B")
        b = _read_array(fh, (k,), path, "b")
        M = _read_array(fh, (k, m + 1), path, "M")
        N = _read_array(fh, (m, n + 1), path, "N")
        tail = fh.read(8)
        if len(tail) < 8:
            raise CheckpointError(f"{path}: truncated while reading iteration counter")
        iteration = struct.unpack("<Q", tail)[0]
    config = None
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, "r") as jh:
            config = json.load(jh)
    params = GeneratorParams(A=A, a=a, B=B, b=b)
    return params, GradPower(M=M, N=N), iteration, config
