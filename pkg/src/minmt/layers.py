"""Concrete layers: Linear, Embedding, activations, Softmax, Duplicate,
Concatenate, Dropout, and the LSTM cell/sequence pair.

Every backward accumulates (adds) into grads; nothing overwrites. Weight
matrices follow the GEMM convention of the linear layer: w has shape
(dim_in, dim_out) and the forward computes y = w^T x.
"""

from __future__ import annotations

import numpy as np

from . import tensor
from .errors import ConfigError, MaskError, ShapeError
from .graph import TRAIN, Layer, ParamBlock
from .tensor import (
    Rng,
    Variable,
    gather_rows,
    gemm,
    scatter_rows_add,
    sigmoid,
    sigmoid_grad_from_output,
    softmax_columns,
    tanh,
    tanh_grad_from_output,
)

INIT_SCALE = 0.1  # uniform weight init range


class LinearParams:
    """Weight (dim_in, dim_out) and optional bias (dim_out, 1)."""

    def __init__(self, name: str, dim_in: int, dim_out: int, rng: Rng, bias: bool = False, dtype=None):
        self.w = ParamBlock(f"{name}.w", Variable.from_uniform(dim_in, dim_out, rng, INIT_SCALE, dtype=dtype))
        self.b = ParamBlock(f"{name}.b", Variable.zeros(dim_out, 1, dtype=dtype)) if bias else None
        self.dim_in = dim_in
        self.dim_out = dim_out

    def blocks(self) -> list[ParamBlock]:
        return [self.w] + ([self.b] if self.b is not None else [])


class LinearLayer(Layer):
    """y = w^T x (+ b broadcast per column)."""

    def __init__(self, params: LinearParams, x: Variable):
        super().__init__()
        if x.shape[0] != params.dim_in:
            raise ShapeError(
                f"linear expects {params.dim_in} input rows, got {x.shape[0]}"
            )
        self.params = params
        self.x = x
        self.y = Variable.zeros(params.dim_out, x.shape[1], dtype=x.dtype)

    def forward(self):
        gemm(self.params.w.var.data, self.x.data, self.y.data, transpose_a=True)
        if self.params.b is not None:
            self.y.data += self.params.b.var.data
        self._forward_done = True

    def backward(self):
        self._require_forward()
        # x.grad += w @ y.grad
        gemm(self.params.w.var.data, self.y.grad, self.x.grad, beta=1.0)

    def calculate_gradient(self):
        # w.grad += x @ y.grad^T ; b.grad += row sums of y.grad
        gemm(self.x.data, self.y.grad, self.params.w.var.grad, transpose_b=True, beta=1.0)
        if self.params.b is not None:
            self.params.b.var.grad += self.y.grad.sum(axis=1, keepdims=True)

    def param_blocks(self):
        return self.params.blocks()


class EmbeddingParams:
    """Lookup table, one row per vocabulary entry."""

    def __init__(self, name: str, vocab_size: int, dim: int, rng: Rng, dtype=None):
        self.table = ParamBlock(name, Variable.from_uniform(vocab_size, dim, rng, INIT_SCALE, dtype=dtype))
        self.vocab_size = vocab_size
        self.dim = dim

    def blocks(self):
        return [self.table]


class EmbeddingLayer(Layer):
    """Gathers table rows by token id; backward scatter-adds by id."""

    def __init__(self, params: EmbeddingParams, ids, dtype=None):
        super().__init__()
        self.params = params
        self.ids = np.asarray(ids, dtype=np.int64)
        dt = dtype if dtype is not None else params.table.var.dtype
        self.y = Variable(np.zeros((params.dim, max(len(self.ids), 1)), dtype=dt))

    def forward(self):
        self.y.data[:] = gather_rows(self.params.table.var.data, self.ids)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        # ids carry no gradient; all flow lands on the table

    def calculate_gradient(self):
        scatter_rows_add(self.params.table.var.grad, self.ids, self.y.grad)

    def param_blocks(self):
        return self.params.blocks()


class ActivationLayer(Layer):
    """Elementwise tanh or sigmoid; derivative computed from the output."""

    FUNCS = {
        "tanh": (tanh, tanh_grad_from_output),
        "sigmoid": (sigmoid, sigmoid_grad_from_output),
    }

    def __init__(self, x: Variable, fn: str = "tanh"):
        super().__init__()
        if fn not in self.FUNCS:
            raise ConfigError(f"unknown activation {fn!r}")
        self.fn, self.fn_grad = self.FUNCS[fn]
        self.x = x
        self.y = Variable.zeros(*x.shape, dtype=x.dtype)

    def forward(self):
        self.y.data[:] = self.fn(self.x.data)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        self.x.grad += self.fn_grad(self.y.data) * self.y.grad


class MultiplyLayer(Layer):
    """Elementwise product of two same-shape inputs."""

    def __init__(self, a: Variable, b: Variable):
        super().__init__()
        if a.shape != b.shape:
            raise ShapeError(f"multiply shapes differ: {a.shape} vs {b.shape}")
        self.a, self.b = a, b
        self.x = a
        self.y = Variable.zeros(*a.shape, dtype=a.dtype)

    def forward(self):
        np.multiply(self.a.data, self.b.data, out=self.y.data)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        self.a.grad += self.b.data * self.y.grad
        self.b.grad += self.a.data * self.y.grad


class AddLayer(Layer):
    """Elementwise sum of two same-shape inputs."""

    def __init__(self, a: Variable, b: Variable):
        super().__init__()
        if a.shape != b.shape:
            raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
        self.a, self.b = a, b
        self.x = a
        self.y = Variable.zeros(*a.shape, dtype=a.dtype)

    def forward(self):
        np.add(self.a.data, self.b.data, out=self.y.data)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        self.a.grad += self.y.grad
        self.b.grad += self.y.grad


class SoftmaxLayer(Layer):
    """Column softmax with optional additive mask applied before normalizing.

    Masked entries (additive -1e9) come out exactly zero and stay zero
    through backward. Construction rejects fully-masked columns.
    """

    MASK_FILL = -1e9

    def __init__(self, x: Variable, mask: np.ndarray | None = None):
        super().__init__()
        self.x = x
        self.y = Variable.zeros(*x.shape, dtype=x.dtype)
        if mask is not None:
            mask = np.asarray(mask)
            if mask.shape != x.shape:
                raise ShapeError(f"softmax mask shape {mask.shape} != input shape {x.shape}")
            if not (mask > 0).any(axis=0).all():
                raise MaskError("softmax column is fully masked")
            self.additive = ((1.0 - mask) * self.MASK_FILL).astype(x.dtype)
        else:
            self.additive = None

    def forward(self):
        scores = self.x.data if self.additive is None else self.x.data + self.additive
        self.y.data[:] = softmax_columns(scores)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        p = self.y.data
        g = self.y.grad
        self.x.grad += p * (g - (p * g).sum(axis=0, keepdims=True))


class DuplicateLayer(Layer):
    """Two copies of one input; backward sums both output grads."""

    def __init__(self, x: Variable):
        super().__init__()
        self.x = x
        self.y = Variable.zeros(*x.shape, dtype=x.dtype)
        self.y2 = Variable.zeros(*x.shape, dtype=x.dtype)

    def forward(self):
        np.copyto(self.y.data, self.x.data)
        np.copyto(self.y2.data, self.x.data)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        self.x.grad += self.y.grad
        self.x.grad += self.y2.grad

    def output_vars(self):
        return [self.y, self.y2]


class ConcatenateLayer(Layer):
    """Rows of a stacked over rows of b: y = [a; b]."""

    def __init__(self, a: Variable, b: Variable):
        super().__init__()
        if a.shape[1] != b.shape[1]:
            raise ShapeError(
                f"concatenate needs equal column counts: {a.shape} vs {b.shape}"
            )
        self.a, self.b = a, b
        self.x = a
        self.y = Variable.zeros(a.shape[0] + b.shape[0], a.shape[1], dtype=a.dtype)

    def forward(self):
        self.y.data[: self.a.shape[0]] = self.a.data
        self.y.data[self.a.shape[0]:] = self.b.data
        self._forward_done = True

    def backward(self):
        self._require_forward()
        self.a.grad += self.y.grad[: self.a.shape[0]]
        self.b.grad += self.y.grad[self.a.shape[0]:]


class DropoutLayer(Layer):
    """Inverted dropout: zero with probability rate, scale survivors by
    1/(1-rate) so inference is a pure identity."""

    def __init__(self, x: Variable, rate: float, rng: Rng | None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.x = x
        self.y = Variable.zeros(*x.shape, dtype=x.dtype)
        self._mask = None

    def forward(self):
        if self.mode == TRAIN and self.rate > 0.0:
            if self.rng is None:
                raise ConfigError("dropout in train mode needs an rng")
            keep = (self.rng.gen.random(self.x.shape) >= self.rate)
            self._mask = keep.astype(self.x.dtype) / (1.0 - self.rate)
            np.multiply(self.x.data, self._mask, out=self.y.data)
        else:
            self._mask = None
            np.copyto(self.y.data, self.x.data)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        if self._mask is None:
            self.x.grad += self.y.grad
        else:
            self.x.grad += self._mask * self.y.grad


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

GATES = ("i", "f", "g", "o")


class LstmParams:
    """Gate weights over [input; previous hidden], plus per-gate biases.

    Each gate matrix is (dim_in + dim_hidden, dim_hidden). The forget bias
    starts at 1.0 so the cell initially carries state through.
    """

    def __init__(self, name: str, dim_in: int, dim_hidden: int, rng: Rng, dtype=None):
        self.dim_in = dim_in
        self.dim_hidden = dim_hidden
        rows = dim_in + dim_hidden
        self.w = {g: ParamBlock(f"{name}.w_{g}", Variable.from_uniform(rows, dim_hidden, rng, INIT_SCALE, dtype=dtype))
                  for g in GATES}
        self.b = {g: ParamBlock(f"{name}.b_{g}", Variable.zeros(dim_hidden, 1, dtype=dtype))
                  for g in GATES}
        self.b["f"].var.data.fill(1.0)

    def blocks(self):
        return [self.w[g] for g in GATES] + [self.b[g] for g in GATES]


class LstmState:
    """Hidden and cell matrices, one column per batch element."""

    __slots__ = ("h", "c")

    def __init__(self, h: np.ndarray, c: np.ndarray):
        if h.shape != c.shape:
            raise ShapeError(f"LSTM state shapes differ: h {h.shape} vs c {c.shape}")
        self.h = h
        self.c = c

    @classmethod
    def zeros(cls, dim_hidden: int, batch: int, dtype) -> "LstmState":
        return cls(np.zeros((dim_hidden, batch), dtype=dtype),
                   np.zeros((dim_hidden, batch), dtype=dtype))


def lstm_cell_forward(x, h_prev, c_prev, p: LstmParams):
    """One LSTM step. Returns (h, c, cache) with cache kept for backward.

    i, f, o = sigmoid(gates); g = tanh(gate); c = f*c_prev + i*g;
    h = o * tanh(c).
    """
    if x.shape[0] != p.dim_in:
        raise ShapeError(f"lstm expects {p.dim_in} input rows, got {x.shape[0]}")
    if h_prev.shape[0] != p.dim_hidden:
        raise ShapeError(f"lstm expects hidden size {p.dim_hidden}, got {h_prev.shape[0]}")
    z = np.concatenate([x, h_prev], axis=0)
    acts = {}
    for g in GATES:
        u = p.w[g].var.data.T @ z + p.b[g].var.data
        acts[g] = tanh(u) if g == "g" else sigmoid(u)
    c = acts["f"] * c_prev + acts["i"] * acts["g"]
    tc = tanh(c)
    h = acts["o"] * tc
    cache = (z, acts, c_prev, tc)
    return h, c, cache


def lstm_cell_backward(dh, dc, cache, p: LstmParams, accumulate=True):
    """Backward of one step. Returns (dx, dh_prev, dc_prev).

    Accumulates weight and bias grads into the param blocks when
    accumulate is True (the normal training path).
    """
    z, acts, c_prev, tc = cache
    i, f, g, o = acts["i"], acts["f"], acts["g"], acts["o"]
    dtc = dh * o
    dc_total = dtc * (1.0 - tc * tc) + dc
    d_o = dh * tc
    d_i = dc_total * g
    d_f = dc_total * c_prev
    d_g = dc_total * i
    du = {
        "i": d_i * sigmoid_grad_from_output(i),
        "f": d_f * sigmoid_grad_from_output(f),
        "g": d_g * tanh_grad_from_output(g),
        "o": d_o * sigmoid_grad_from_output(o),
    }
    dz = np.zeros_like(z)
    for gate in GATES:
        dz += p.w[gate].var.data @ du[gate]
        if accumulate:
            p.w[gate].var.grad += z @ du[gate].T
            p.b[gate].var.grad += du[gate].sum(axis=1, keepdims=True)
    dx = dz[: p.dim_in]
    dh_prev = dz[p.dim_in:]
    dc_prev = dc_total * f
    return dx, dh_prev, dc_prev


def lstm_step(x: np.ndarray, prev: LstmState, p: LstmParams) -> LstmState:
    """Inference-style single step: new state, no cache kept."""
    h, c, _ = lstm_cell_forward(x, prev.h, prev.c, p)
    return LstmState(h, c)


class LstmSequenceLayer(Layer):
    """LSTM unrolled over a whole padded sequence.

    Input x is (dim_in, steps*batch) viewed as (dim_in, steps, batch);
    the output lines up position-for-position. reverse=True scans
    right-to-left (the output still sits at its original position).
    A (steps, batch) mask gates state updates so padded steps carry the
    previous state through unchanged; final_h / final_c then hold the
    state at each sentence's true end. init_state, when given, is a pair
    of Variables whose grads receive the leftover state gradient.
    """

    def __init__(self, params: LstmParams, x: Variable, steps: int, batch: int,
                 mask: np.ndarray | None = None, reverse: bool = False,
                 init_state: tuple[Variable, Variable] | None = None):
        super().__init__()
        if x.shape != (params.dim_in, steps * batch):
            raise ShapeError(
                f"lstm sequence input must be ({params.dim_in}, {steps * batch}), got {x.shape}"
            )
        self.params = params
        self.x = x
        self.steps = steps
        self.batch = batch
        self.mask = None if mask is None else np.asarray(mask, dtype=x.dtype)
        self.reverse = reverse
        self.init_state = init_state
        self.y = Variable.zeros(params.dim_hidden, steps * batch, dtype=x.dtype)
        self.final_h = Variable.zeros(params.dim_hidden, batch, dtype=x.dtype)
        self.final_c = Variable.zeros(params.dim_hidden, batch, dtype=x.dtype)
        self._caches = []

    def _order(self):
        rng = range(self.steps)
        return reversed(rng) if self.reverse else rng

    def forward(self):
        p = self.params
        d = p.dim_hidden
        B = self.batch
        x3 = self.x.data.reshape(p.dim_in, self.steps, B)
        y3 = self.y.data.reshape(d, self.steps, B)
        if self.init_state is not None:
            h = self.init_state[0].data.copy()
            c = self.init_state[1].data.copy()
        else:
            h = np.zeros((d, B), dtype=self.x.dtype)
            c = np.zeros((d, B), dtype=self.x.dtype)
        self._caches = []
        for t in self._order():
            h_new, c_new, cache = lstm_cell_forward(x3[:, t, :], h, c, p)
            if self.mask is not None:
                m = self.mask[t][np.newaxis, :]
                h_next = m * h_new + (1.0 - m) * h
                c_next = m * c_new + (1.0 - m) * c
            else:
                m = None
                h_next, c_next = h_new, c_new
            self._caches.append((t, cache, m))
            y3[:, t, :] = h_next
            h, c = h_next, c_next
        self.final_h.data[:] = h
        self.final_c.data[:] = c
        self._forward_done = True

    def backward(self):
        self._require_forward()
        p = self.params
        B = self.batch
        y3g = self.y.grad.reshape(p.dim_hidden, self.steps, B)
        x3g = self.x.grad.reshape(p.dim_in, self.steps, B)
        dh = self.final_h.grad.copy()
        dc = self.final_c.grad.copy()
        for t, cache, m in reversed(self._caches):
            dh = dh + y3g[:, t, :]
            if m is not None:
                dh_new = m * dh
                dc_new = m * dc
                dh_carry = (1.0 - m) * dh
                dc_carry = (1.0 - m) * dc
            else:
                dh_new, dc_new = dh, dc
                dh_carry = dc_carry = 0.0
            dx, dh_prev, dc_prev = lstm_cell_backward(dh_new, dc_new, cache, p)
            x3g[:, t, :] += dx
            dh = dh_prev + dh_carry
            dc = dc_prev + dc_carry
        if self.init_state is not None:
            self.init_state[0].grad += dh
            self.init_state[1].grad += dc

    def calculate_gradient(self):
        # weight grads are accumulated inside lstm_cell_backward
        pass

    def param_blocks(self):
        return self.params.blocks()

    def output_vars(self):
        return [self.y, self.final_h, self.final_c]
