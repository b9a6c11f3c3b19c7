"""Matrix and CSV file formats.

Matrix files start with one ASCII header line ``rows cols kind`` where
``kind`` is ``dense`` or ``sparse``.  What follows depends on the encoding:

text (any extension other than ``.bin``)
    dense: ``rows*cols`` values in column-major order, one per line.
    sparse: one ``i j v`` triplet per line, 0-indexed.

binary (``.bin`` extension)
    dense: ``rows*cols`` little-endian float64 values, column-major.
    sparse: a little-endian int64 count ``nnz`` followed by ``nnz`` records
    of (int64 i, int64 j, float64 v).

Floats are written with 17 significant digits so that text round trips are
exact.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .linalg import DenseOperator, LinearOperator, SparseOperator

FLOAT_FMT = "%.17g"
_SPARSE_RECORD = np.dtype([("i", "<i8"), ("j", "<i8"), ("v", "<f8")])


def _is_binary(path, binary):
    return Path(path).suffix == ".bin" if binary is None else bool(binary)


def write_matrix(path, matrix, binary=None):
    """Write a dense array, scipy sparse matrix or dense/sparse operator."""
    if isinstance(matrix, SparseOperator):
        matrix = matrix.matrix
    elif isinstance(matrix, LinearOperator):
        matrix = matrix.to_dense()
    path = Path(path)
    binary = _is_binary(path, binary)
    if sp.issparse(matrix):
        coo = sp.coo_matrix(matrix)
        header = f"{coo.shape[0]} {coo.shape[1]} sparse\n"
        if binary:
            rec = np.empty(coo.nnz, dtype=_SPARSE_RECORD)
            rec["i"], rec["j"], rec["v"] = coo.row, coo.col, coo.data
            with open(path, "wb") as fh:
                fh.write(header.encode("ascii"))
                fh.write(np.int64(coo.nnz).astype("<i8").tobytes())
                fh.write(rec.tobytes())
        else:
            with open(path, "w") as fh:
                fh.write(header)
                for i, j, v in zip(coo.row, coo.col, coo.data):
                    fh.write(f"{i} {j} {FLOAT_FMT % v}\n")
        return path

    arr = np.asarray(matrix, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    header = f"{arr.shape[0]} {arr.shape[1]} dense\n"
    flat = arr.ravel(order="F")
    if binary:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(flat.astype("<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header)
            np.savetxt(fh, flat, fmt=FLOAT_FMT)
    return path


def _parse_header(line):
    parts = line.split()
    if len(parts) != 3 or parts[2] not in ("dense", "sparse"):
        raise ValueError(f"bad matrix header {line!r}; expected 'rows cols dense|sparse'")
    return int(parts[0]), int(parts[1]), parts[2]


def read_matrix(path, binary=None):
    """Read a matrix file; dense files give an ndarray, sparse ones a CSC matrix."""
    path = Path(path)
    if _is_binary(path, binary):
        raw = path.read_bytes()
        nl = raw.index(b"\n")
        rows, cols, kind = _parse_header(raw[:nl].decode("ascii"))
        body = raw[nl + 1:]
        if kind == "dense":
            flat = np.frombuffer(body, dtype="<f8")
            if flat.size != rows * cols:
                raise ValueError(f"expected {rows * cols} values, found {flat.size}")
            return flat.astype(float).reshape(rows, cols, order="F")
        nnz = int(np.frombuffer(body[:8], dtype="<i8")[0])
        rec = np.frombuffer(body[8:], dtype=_SPARSE_RECORD, count=nnz)
        return sp.csc_matrix((rec["v"], (rec["i"], rec["j"])), shape=(rows, cols))

    with open(path) as fh:
        rows, cols, kind = _parse_header(fh.readline())
        body = fh.read()
    data = np.loadtxt(io.StringIO(body), ndmin=2 if kind == "sparse" else 1) if body.strip() else np.empty((0, 3))
    if kind == "dense":
        data = np.atleast_1d(data)
        if data.size != rows * cols:
            raise ValueError(f"expected {rows * cols} values, found {data.size}")
        return data.reshape(rows, cols, order="F")
    if data.size == 0:
        return sp.csc_matrix((rows, cols))
    return sp.csc_matrix(
        (data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(rows, cols)
    )


def read_operator(path, binary=None):
    mat = read_matrix(path, binary)
    return SparseOperator(mat) if sp.issparse(mat) else DenseOperator(mat)


def read_vector(path, binary=None):
    mat = read_matrix(path, binary)
    if sp.issparse(mat):
        mat = mat.toarray()
    if mat.shape[1] != 1:
        raise ValueError(f"expected a single column, got shape {mat.shape}")
    return mat[:, 0]


def write_csv(path, header, rows):
    """Comma-separated file with a header row; floats keep 17 significant digits."""

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return FLOAT_FMT % v
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        return str(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return Path(path)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows
