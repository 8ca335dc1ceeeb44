"""Dense matrix kernels and the value+gradient pair everything is built on.

Matrices are 2-d float arrays laid out as (rows, cols) where rows is the
feature dimension and cols is the batch-or-time extent: one column per
batch element. All kernels preserve the dtype of their inputs; new arrays
are created in the module default dtype (float32 for training, float64
available for gradient-check runs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, TokenIdError

_DEFAULT_DTYPE = np.float32

_DTYPE_NAMES = {"float32": np.float32, "float64": np.float64}


def set_default_dtype(name: str) -> None:
    """Switch the precision used for newly created arrays.

    "float32" is the normal training/inference precision. "float64" exists
    for gradient-check tests that need a lower finite-difference noise floor.
    """
    global _DEFAULT_DTYPE
    if name not in _DTYPE_NAMES:
        raise ValueError(f"unknown dtype {name!r}, expected one of {sorted(_DTYPE_NAMES)}")
    _DEFAULT_DTYPE = _DTYPE_NAMES[name]


def default_dtype():
    return _DEFAULT_DTYPE


@dataclass
class Rng:
    """Seeded, reproducible random source (PCG64). Same seed, same stream."""

    seed: int
    algorithm: str = "pcg64"
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape, dtype=None):
        arr = self.gen.uniform(low, high, size=shape)
        return arr.astype(dtype if dtype is not None else _DEFAULT_DTYPE)

    def random(self, shape, dtype=None):
        arr = self.gen.random(size=shape)
        return arr.astype(dtype if dtype is not None else _DEFAULT_DTYPE)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, low, high, shape=None):
        return self.gen.integers(low, high, size=shape)


class Variable:
    """A dense matrix carrying both values and accumulated gradients.

    data and grad always share one shape. Backward passes ADD into grad;
    zero_grad resets it. Variables are the edges connecting layers.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ShapeError(f"Variable requires a 2-d matrix, got shape {data.shape}")
        self.data = data
        self.grad = np.zeros_like(data)

    @classmethod
    def zeros(cls, rows: int, cols: int, dtype=None) -> "Variable":
        if rows < 1 or cols < 1:
            raise ShapeError(f"Variable shape must be positive, got ({rows}, {cols})")
        return cls(np.zeros((rows, cols), dtype=dtype if dtype is not None else _DEFAULT_DTYPE))

    @classmethod
    def from_uniform(cls, rows: int, cols: int, rng: Rng, scale: float = 0.1, dtype=None) -> "Variable":
        return cls(rng.uniform(-scale, scale, (rows, cols), dtype=dtype))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad.fill(0)


def _op_shape(shape, transpose):
    return (shape[1], shape[0]) if transpose else shape


def gemm(a, b, c, transpose_a=False, transpose_b=False, alpha=1.0, beta=0.0):
    """c <- alpha * op(a) @ op(b) + beta * c, writing into c in place.

    op applies the transpose flag. Mirrors BLAS GEMM accumulate semantics:
    beta=0 overwrites, beta=1 adds onto the existing contents of c.
    """
    (am, ak) = _op_shape(a.shape, transpose_a)
    (bk, bn) = _op_shape(b.shape, transpose_b)
    if ak != bk:
        raise ShapeError(
            f"gemm inner dimensions disagree: op(a) is {am}x{ak}, op(b) is {bk}x{bn}"
        )
    if c.shape != (am, bn):
        raise ShapeError(
            f"gemm output must be {am}x{bn}, got {c.shape[0]}x{c.shape[1]}"
        )
    oa = a.T if transpose_a else a
    ob = b.T if transpose_b else b
    prod = oa @ ob
    if beta == 0.0:
        np.multiply(prod, alpha, out=c) if alpha != 1.0 else np.copyto(c, prod)
    else:
        if beta != 1.0:
            c *= beta
        if alpha != 1.0:
            prod = prod * alpha
        c += prod
    return c


def softmax_columns(x: np.ndarray) -> np.ndarray:
    """Column-wise softmax, stabilized by per-column max subtraction."""
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax_columns received non-finite input")
    shifted = x - x.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def log_softmax_columns(x: np.ndarray) -> np.ndarray:
    """Column-wise log softmax (stable)."""
    if not np.all(np.isfinite(x)):
        raise NumericError("log_softmax_columns received non-finite input")
    shifted = x - x.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


# Pointwise kernels. The *_grad_from_output helpers compute the analytic
# derivative from the forward OUTPUT, which every layer caches anyway.

def tanh(x):
    return np.tanh(x)


def tanh_grad_from_output(y):
    return 1.0 - y * y


def sigmoid(x):
    # exp on the negative half-line only, so no overflow either side
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad_from_output(y):
    return y * (1.0 - y)


def elementwise_product(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product shapes differ: {a.shape} vs {b.shape}")
    return a * b


def add(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return a + b


def gather_rows(table: np.ndarray, ids) -> np.ndarray:
    """Output column k is table row ids[k]; the embedding-lookup kernel.

    Empty ids produce a (dim, 0) matrix.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return np.zeros((table.shape[1], 0), dtype=table.dtype)
    bad = (ids < 0) | (ids >= table.shape[0])
    if bad.any():
        offender = int(ids[bad][0])
        raise TokenIdError(
            f"id {offender} out of range for table with {table.shape[0]} rows"
        )
    return table[ids].T


def scatter_rows_add(table_grad: np.ndarray, ids, out_grad: np.ndarray) -> None:
    """Backward of gather_rows: accumulate column k of out_grad into row ids[k].

    Repeated ids sum their contributions.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return
    np.add.at(table_grad, ids, out_grad.T)
