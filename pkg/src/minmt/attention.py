"""Multiplicative attention over source states, composed as a layer chain.

The chain mirrors the published composition pattern: duplicate the target
state, linearly map one copy, dot it against every source state, softmax
with the source mask, take the convex combination of source states,
concatenate with the other copy, project, tanh.

Score and context use one pair of einsum formulas shared between the
trainable layers and the inference fast path, so both routes compute
identical math. Layout: source states are (hidden, src_len, batch);
target-side matrices are (hidden, q*batch) where q query columns per
sentence are folded into the column extent (q=1 for a single decode step,
q=target_len for a teacher-forced pass).
"""

from __future__ import annotations

import numpy as np

from .errors import MaskError, ShapeError
from .graph import Layer, LayerChain
from .layers import (
    ActivationLayer,
    ConcatenateLayer,
    DuplicateLayer,
    LinearLayer,
    LinearParams,
    SoftmaxLayer,
)
from .tensor import Rng, Variable, softmax_columns, tanh


class AttentionParams:
    """w_a maps the target state into source space; w_c projects the
    concatenated context. Neither carries a bias."""

    def __init__(self, name: str, dim_hidden: int, rng: Rng, dtype=None):
        self.dim_hidden = dim_hidden
        self.w_a = LinearParams(f"{name}.w_a", dim_hidden, dim_hidden, rng, bias=False, dtype=dtype)
        self.w_c = LinearParams(f"{name}.w_c", 2 * dim_hidden, dim_hidden, rng, bias=False, dtype=dtype)

    def blocks(self):
        return self.w_a.blocks() + self.w_c.blocks()


def score_product(hs3: np.ndarray, u: np.ndarray, queries: int) -> np.ndarray:
    """Alignment scores: column (q,b) of the result holds h_s(i,b) . u(q,b).

    hs3 is (hidden, src_len, batch); u is (hidden, queries*batch).
    Returns (src_len, queries*batch).
    """
    h, s, b = hs3.shape
    u3 = u.reshape(h, queries, b)
    return np.einsum("hsb,hqb->sqb", hs3, u3).reshape(s, queries * b)


def score_product_backward(hs3, u, d_scores, queries):
    """Grads of score_product wrt (hs3, u)."""
    h, s, b = hs3.shape
    u3 = u.reshape(h, queries, b)
    d3 = d_scores.reshape(s, queries, b)
    d_hs = np.einsum("hqb,sqb->hsb", u3, d3)
    d_u = np.einsum("hsb,sqb->hqb", hs3, d3).reshape(h, queries * b)
    return d_hs, d_u


def weighted_sum(hs3: np.ndarray, alignment: np.ndarray, queries: int) -> np.ndarray:
    """Context: convex combination of source states under the alignment.

    alignment is (src_len, queries*batch); returns (hidden, queries*batch).
    """
    h, s, b = hs3.shape
    a3 = alignment.reshape(s, queries, b)
    return np.einsum("hsb,sqb->hqb", hs3, a3).reshape(h, queries * b)


def weighted_sum_backward(hs3, alignment, d_context, queries):
    """Grads of weighted_sum wrt (hs3, alignment)."""
    h, s, b = hs3.shape
    a3 = alignment.reshape(s, queries, b)
    d3 = d_context.reshape(h, queries, b)
    d_hs = np.einsum("hqb,sqb->hsb", d3, a3)
    d_a = np.einsum("hsb,hqb->sqb", hs3, d3).reshape(s, queries * b)
    return d_hs, d_a


class ScoreProductLayer(Layer):
    """Dot products between every source state and the mapped target state."""

    def __init__(self, hs: Variable, u: Variable, src_len: int, queries: int, batch: int):
        super().__init__()
        h = u.shape[0]
        if hs.shape != (h, src_len * batch):
            raise ShapeError(f"source states must be ({h}, {src_len * batch}), got {hs.shape}")
        self.hs, self.u = hs, u
        self.src_len, self.queries, self.batch = src_len, queries, batch
        self.x = u
        self.y = Variable.zeros(src_len, queries * batch, dtype=u.dtype)

    def _hs3(self):
        return self.hs.data.reshape(self.u.shape[0], self.src_len, self.batch)

    def forward(self):
        self.y.data[:] = score_product(self._hs3(), self.u.data, self.queries)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        d_hs, d_u = score_product_backward(self._hs3(), self.u.data, self.y.grad, self.queries)
        self.hs.grad += d_hs.reshape(self.hs.shape)
        self.u.grad += d_u


class WeightedSumLayer(Layer):
    """Context vector: alignment-weighted sum of source states."""

    def __init__(self, hs: Variable, alignment: Variable, src_len: int, queries: int, batch: int):
        super().__init__()
        self.hs, self.alignment = hs, alignment
        self.src_len, self.queries, self.batch = src_len, queries, batch
        self.dim = hs.shape[0]
        self.x = alignment
        self.y = Variable.zeros(self.dim, queries * batch, dtype=hs.dtype)

    def _hs3(self):
        return self.hs.data.reshape(self.dim, self.src_len, self.batch)

    def forward(self):
        self.y.data[:] = weighted_sum(self._hs3(), self.alignment.data, self.queries)
        self._forward_done = True

    def backward(self):
        self._require_forward()
        d_hs, d_a = weighted_sum_backward(self._hs3(), self.alignment.data, self.y.grad, self.queries)
        self.hs.grad += d_hs.reshape(self.hs.shape)
        self.alignment.grad += d_a


class AttentionNetwork:
    """The eight-layer attention chain plus handles to its key variables.

    Appends onto an existing LayerChain when one is given, so a larger
    network can embed the attention block in its own execution order.
    """

    def __init__(self, params: AttentionParams, hs: Variable, ht: Variable,
                 src_len: int, queries: int, batch: int, mask: np.ndarray | None,
                 chain: LayerChain | None = None):
        if mask is not None:
            mask = np.asarray(mask)
            if mask.shape != (src_len, batch):
                raise ShapeError(f"mask must be ({src_len}, {batch}), got {mask.shape}")
            if not (mask > 0).any(axis=0).all():
                raise MaskError("a batch column has every source position masked")
            # repeat the per-sentence mask across query columns
            full_mask = np.broadcast_to(
                mask[:, np.newaxis, :], (src_len, queries, batch)
            ).reshape(src_len, queries * batch)
        else:
            full_mask = None

        if chain is None:
            chain = LayerChain(entry=ht)
        self.dup_ht = DuplicateLayer(ht)
        tx = chain.add(self.dup_ht)
        tx = chain.add(LinearLayer(params.w_a, tx))
        self.scores = chain.add(ScoreProductLayer(hs, tx, src_len, queries, batch))
        self.alignment = chain.add(SoftmaxLayer(self.scores, mask=full_mask))
        self.context = chain.add(WeightedSumLayer(hs, self.alignment, src_len, queries, batch))
        self.combined = chain.add(ConcatenateLayer(self.context, self.dup_ht.y2))
        tx = chain.add(LinearLayer(params.w_c, self.combined))
        self.output = chain.add(ActivationLayer(tx, "tanh"))
        self.chain = chain


class AttentionOutput:
    """Values produced by one attention application (single target step)."""

    __slots__ = ("alignment", "context", "combined", "h_o", "_network")

    def __init__(self, alignment, context, combined, h_o, network=None):
        self.alignment = alignment
        self.context = context
        self.combined = combined
        self.h_o = h_o
        self._network = network


def attend(h_s: np.ndarray, h_t: np.ndarray, params: AttentionParams,
           source_mask: np.ndarray | None = None) -> AttentionOutput:
    """Run attention for one target step over a batch.

    h_s is (hidden, src_len, batch), h_t is (hidden, batch). Returns the
    alignment (src_len, batch), context, concatenated context and output
    state. The chain is retained on the result so attend_backward can
    push gradients through it.
    """
    h_s = np.asarray(h_s)
    h_t = np.asarray(h_t)
    if h_s.ndim != 3:
        raise ShapeError(f"h_s must be (hidden, src_len, batch), got shape {h_s.shape}")
    hidden, src_len, batch = h_s.shape
    if h_t.shape != (hidden, batch):
        raise ShapeError(f"h_t must be ({hidden}, {batch}), got {h_t.shape}")
    hs_var = Variable(h_s.reshape(hidden, src_len * batch).copy())
    ht_var = Variable(h_t.copy())
    net = AttentionNetwork(params, hs_var, ht_var, src_len, queries=1, batch=batch, mask=source_mask)
    net.chain.set_mode("infer")
    net.chain.forward()
    return AttentionOutput(
        alignment=net.alignment.data.copy(),
        context=net.context.data.copy(),
        combined=net.combined.data.copy(),
        h_o=net.output.data.copy(),
        network=(net, hs_var, ht_var),
    )


def attend_backward(out: AttentionOutput, h_o_grad: np.ndarray):
    """Backpropagate a gradient on the output state through the chain.

    Returns (d_h_s, d_h_t) with d_h_s shaped like the original 3-d source
    block; parameter grads accumulate in the AttentionParams blocks.
    """
    if out._network is None:
        raise ShapeError("attend_backward needs an AttentionOutput produced by attend")
    net, hs_var, ht_var = out._network
    net.output.grad += np.asarray(h_o_grad, dtype=net.output.dtype)
    net.chain.backward()
    hidden, batch = ht_var.shape
    src_len = hs_var.shape[1] // batch
    return hs_var.grad.reshape(hidden, src_len, batch).copy(), ht_var.grad.copy()


def attend_values(hs3: np.ndarray, h_t: np.ndarray, params: AttentionParams,
                  source_mask: np.ndarray | None = None):
    """Inference fast path: same math as the chain, no Variables.

    Returns (h_o, alignment) for a single target step.
    """
    hidden, src_len, batch = hs3.shape
    u = params.w_a.w.var.data.T @ h_t
    scores = score_product(hs3, u, queries=1)
    if source_mask is not None:
        scores = scores + (1.0 - np.asarray(source_mask, dtype=scores.dtype)) * SoftmaxLayer.MASK_FILL
    alignment = softmax_columns(scores)
    context = weighted_sum(hs3, alignment, queries=1)
    combined = np.concatenate([context, h_t], axis=0)
    h_o = tanh(params.w_c.w.var.data.T @ combined)
    return h_o, alignment
