"""The encoder-decoder: stacked bidirectional LSTM encoder, stacked LSTM
decoder, multiplicative attention, and an output projection.

Two execution routes share one set of cell/attention kernels:

* TrainingGraph builds a per-batch layer graph (Variables, full manual
  backprop) for teacher-forced training and dev-entropy evaluation.
* encode / decode_step run the same math without gradient bookkeeping,
  for translation and scoring.

Array layout: token-id matrices are (steps, batch); activations are
(dim, steps*batch) with column t*batch + b holding step t of sentence b.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor
from .attention import AttentionNetwork, AttentionParams, attend_values
from .errors import ConfigError, ShapeError, StateError
from .graph import INFER, TRAIN, LayerChain, ParamBlock, collect_params
from .layers import (
    ActivationLayer,
    AddLayer,
    DropoutLayer,
    EmbeddingLayer,
    EmbeddingParams,
    LinearLayer,
    LinearParams,
    LstmParams,
    LstmState,
    LstmSequenceLayer,
    lstm_cell_forward,
)
from .tensor import Rng, Variable, gather_rows, log_softmax_columns, tanh

CHECKPOINT_MAGIC = b"MNMT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    embedding_size: int = 512
    hidden_size: int = 512
    depth: int = 2
    dropout: float = 0.2
    output_tanh: bool = True
    shared_embeddings: bool = False

    def validate(self):
        for field_name in ("vocab_size", "embedding_size", "hidden_size", "depth"):
            if getattr(self, field_name) < 1:
                raise ConfigError(f"{field_name} must be positive, got {getattr(self, field_name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        return self


class ModelParams:
    """Every trainable block, registered once in declaration order."""

    def __init__(self, config: ModelConfig, rng: Rng, dtype=None):
        config.validate()
        dt = dtype if dtype is not None else tensor.default_dtype()
        self.dtype = np.dtype(dt)
        V, E, H = config.vocab_size, config.embedding_size, config.hidden_size
        self.src_embed = EmbeddingParams("src_embed", V, E, rng, dtype=dt)
        if config.shared_embeddings:
            self.tgt_embed = self.src_embed
        else:
            self.tgt_embed = EmbeddingParams("tgt_embed", V, E, rng, dtype=dt)
        self.enc_l1_fwd = LstmParams("enc.l1.fwd", E, H, rng, dtype=dt)
        self.enc_l1_bwd = LstmParams("enc.l1.bwd", E, H, rng, dtype=dt)
        self.enc_deep = [LstmParams(f"enc.l{k}", H, H, rng, dtype=dt)
                         for k in range(2, config.depth + 1)]
        self.dec = [LstmParams(f"dec.l{k}", E if k == 1 else H, H, rng, dtype=dt)
                    for k in range(1, config.depth + 1)]
        self.attention = AttentionParams("att", H, rng, dtype=dt)
        self.output = LinearParams("out", H, V, rng, bias=True, dtype=dt)
        self._registry = collect_params(
            self.src_embed.blocks()
            + ([] if config.shared_embeddings else self.tgt_embed.blocks())
            + self.enc_l1_fwd.blocks()
            + self.enc_l1_bwd.blocks()
            + [b for p in self.enc_deep for b in p.blocks()]
            + [b for p in self.dec for b in p.blocks()]
            + self.attention.blocks()
            + self.output.blocks()
        )

    def blocks(self) -> list[ParamBlock]:
        return list(self._registry)

    def zero_grads(self):
        for b in self._registry:
            b.var.zero_grad()

    def copy_data(self) -> dict[str, np.ndarray]:
        return {b.name: b.var.data.copy() for b in self._registry}

    def load_data(self, snapshot: dict[str, np.ndarray]):
        for b in self._registry:
            if b.name not in snapshot:
                raise ConfigError(f"snapshot is missing parameter {b.name!r}")
            if snapshot[b.name].shape != b.var.shape:
                raise ShapeError(
                    f"snapshot shape {snapshot[b.name].shape} != parameter shape {b.var.shape} for {b.name!r}"
                )
            np.copyto(b.var.data, snapshot[b.name].astype(self.dtype))


class Model:
    """Configuration plus parameters; the unit that trains and translates."""

    def __init__(self, config: ModelConfig, params: ModelParams):
        self.config = config
        self.params = params

    @classmethod
    def new(cls, config: ModelConfig, rng: Rng, dtype=None) -> "Model":
        return cls(config, ModelParams(config, rng, dtype=dtype))

    def astype(self, dtype) -> "Model":
        """Exact-valued copy in another precision (gradient-check twin)."""
        rng = Rng(0)
        twin = Model.new(self.config, rng, dtype=dtype)
        twin.params.load_data(self.params.copy_data())
        return twin


@dataclass
class EncodedSource:
    """Top-layer source states, per-layer final states, and the mask."""

    top: np.ndarray                     # (hidden, src_len, batch)
    finals: list[LstmState]             # one per decoder layer
    mask: np.ndarray                    # (src_len, batch)


def _check_ids(ids: np.ndarray, vocab_size: int):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        bad = ids[(ids < 0) | (ids >= vocab_size)][0]
        raise ConfigError(f"token id {int(bad)} outside vocabulary of size {vocab_size}")
    return ids


def _scan_lstm(p: LstmParams, x3, mask, reverse, h0=None, c0=None):
    """Shared mask-gated scan used by the pure encode path."""
    dim, steps, batch = x3.shape[0], x3.shape[1], x3.shape[2]
    dt = x3.dtype
    h = np.zeros((p.dim_hidden, batch), dtype=dt) if h0 is None else h0.copy()
    c = np.zeros((p.dim_hidden, batch), dtype=dt) if c0 is None else c0.copy()
    out = np.zeros((p.dim_hidden, steps, batch), dtype=dt)
    order = reversed(range(steps)) if reverse else range(steps)
    for t in order:
        h_new, c_new, _ = lstm_cell_forward(x3[:, t, :], h, c, p)
        if mask is not None:
            m = mask[t][np.newaxis, :].astype(dt)
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
        else:
            h, c = h_new, c_new
        out[:, t, :] = h
    return out, h, c


def _dropout_values(x, rate, mode, rng):
    if mode == TRAIN and rate > 0.0:
        keep = (rng.gen.random(x.shape) >= rate).astype(x.dtype)
        return x * keep / (1.0 - rate)
    return x


def encode(src_ids, src_mask, model: Model, mode: str = INFER, rng: Rng | None = None) -> EncodedSource:
    """Run the encoder over a padded batch without gradient tracking.

    src_ids and src_mask are (src_len, batch). Padded steps carry state
    through unchanged, so appending padding never disturbs real positions
    and the final states sit at each sentence's true end.
    """
    cfg, p = model.config, model.params
    src_ids = _check_ids(src_ids, cfg.vocab_size)
    if src_ids.ndim != 2 or src_ids.shape[0] < 1:
        raise ConfigError(f"source batch must be (src_len >= 1, batch), got {src_ids.shape}")
    S, B = src_ids.shape
    emb = gather_rows(p.src_embed.table.var.data, src_ids.reshape(S * B))
    x3 = emb.reshape(cfg.embedding_size, S, B)
    fwd, _, _ = _scan_lstm(p.enc_l1_fwd, x3, src_mask, reverse=False)
    bwd, h1, c1 = _scan_lstm(p.enc_l1_bwd, x3, src_mask, reverse=True)
    top = fwd + bwd
    finals = [LstmState(h1, c1)]
    for lp in p.enc_deep:
        top = _dropout_values(top.reshape(cfg.hidden_size, S * B), cfg.dropout, mode, rng).reshape(
            cfg.hidden_size, S, B)
        top, hk, ck = _scan_lstm(lp, top, src_mask, reverse=False)
        finals.append(LstmState(hk, ck))
    return EncodedSource(top=top, finals=finals, mask=np.asarray(src_mask))


def init_decoder_states(encoded: EncodedSource) -> list[LstmState]:
    return [LstmState(st.h.copy(), st.c.copy()) for st in encoded.finals]


def decode_step(prev_tokens, states: list[LstmState], encoded: EncodedSource,
                model: Model, mode: str = INFER, rng: Rng | None = None):
    """One decoder step for a batch of columns.

    prev_tokens is (batch,); states is one LstmState per decoder layer.
    Returns (log_probs over the vocabulary, new states). Deterministic in
    infer mode.
    """
    cfg, p = model.config, model.params
    if states is None or len(states) != len(p.dec):
        raise StateError("decoder states missing or wrong depth; initialize from encode()")
    prev_tokens = _check_ids(np.atleast_1d(prev_tokens), cfg.vocab_size)
    x = gather_rows(p.tgt_embed.table.var.data, prev_tokens)
    new_states = []
    for layer_idx, lp in enumerate(p.dec):
        if layer_idx > 0:
            x = _dropout_values(x, cfg.dropout, mode, rng)
        h, c, _ = lstm_cell_forward(x, states[layer_idx].h, states[layer_idx].c, lp)
        new_states.append(LstmState(h, c))
        x = h
    h_o, _ = attend_values(encoded.top, x, p.attention, encoded.mask)
    h_o = _dropout_values(h_o, cfg.dropout, mode, rng)
    logits = p.output.w.var.data.T @ h_o + p.output.b.var.data
    if cfg.output_tanh:
        logits = tanh(logits)
    return log_softmax_columns(logits), new_states


def shift_targets(tgt_ids: np.ndarray, bos_id: int) -> np.ndarray:
    """Decoder input: BOS followed by the gold tokens shifted one step."""
    shifted = np.empty_like(tgt_ids)
    shifted[0, :] = bos_id
    shifted[1:, :] = tgt_ids[:-1, :]
    return shifted


def sequence_log_prob(src_ids, src_mask, tgt_ids, tgt_mask, model: Model, bos_id: int = 2):
    """Per-sentence log p(y|x): teacher-forced accumulation of decode_step
    log-probabilities over unpadded target positions (EOS included)."""
    tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
    tgt_mask = np.asarray(tgt_mask)
    if tgt_ids.shape != tgt_mask.shape:
        raise ShapeError(f"target ids {tgt_ids.shape} and mask {tgt_mask.shape} differ")
    encoded = encode(src_ids, src_mask, model, mode=INFER)
    states = init_decoder_states(encoded)
    T, B = tgt_ids.shape
    total = np.zeros(B, dtype=model.params.dtype)
    prev = np.full(B, bos_id, dtype=np.int64)
    cols = np.arange(B)
    for t in range(T):
        log_probs, states = decode_step(prev, states, encoded, model, mode=INFER)
        total += log_probs[tgt_ids[t], cols] * tgt_mask[t].astype(total.dtype)
        prev = tgt_ids[t]
    return total


class TrainingGraph:
    """Per-batch layer graph for one teacher-forced pass.

    forward() fills the logits Variable; set a gradient on it and call
    backward() to accumulate every parameter gradient.
    """

    def __init__(self, model: Model, src_ids, src_mask, tgt_in_ids,
                 mode: str = TRAIN, rng: Rng | None = None):
        cfg, p = model.config, model.params
        src_ids = _check_ids(src_ids, cfg.vocab_size)
        tgt_in_ids = _check_ids(tgt_in_ids, cfg.vocab_size)
        S, B = src_ids.shape
        T = tgt_in_ids.shape[0]
        H = cfg.hidden_size
        src_mask = np.asarray(src_mask, dtype=p.dtype)
        chain = LayerChain()

        src_emb = EmbeddingLayer(p.src_embed, src_ids.reshape(S * B), dtype=p.dtype)
        tx = chain.add(src_emb)
        l1f = LstmSequenceLayer(p.enc_l1_fwd, tx, S, B, mask=src_mask)
        chain.add(l1f)
        l1b = LstmSequenceLayer(p.enc_l1_bwd, tx, S, B, mask=src_mask, reverse=True)
        chain.add(l1b)
        top = chain.add(AddLayer(l1f.y, l1b.y))
        enc_final = [(l1b.final_h, l1b.final_c)]
        for lp in p.enc_deep:
            top = chain.add(DropoutLayer(top, cfg.dropout, rng))
            deep = LstmSequenceLayer(lp, top, S, B, mask=src_mask)
            top = chain.add(deep)
            enc_final.append((deep.final_h, deep.final_c))
        hs = top

        tgt_emb = EmbeddingLayer(p.tgt_embed, tgt_in_ids.reshape(T * B), dtype=p.dtype)
        tx = chain.add(tgt_emb)
        for layer_idx, lp in enumerate(p.dec):
            if layer_idx > 0:
                tx = chain.add(DropoutLayer(tx, cfg.dropout, rng))
            dec = LstmSequenceLayer(lp, tx, T, B, init_state=enc_final[layer_idx])
            tx = chain.add(dec)
        ht = tx

        att = AttentionNetwork(p.attention, hs, ht, S, queries=T, batch=B,
                               mask=src_mask, chain=chain)
        h_o = chain.add(DropoutLayer(att.output, cfg.dropout, rng))
        tx = chain.add(LinearLayer(p.output, h_o))
        if cfg.output_tanh:
            tx = chain.add(ActivationLayer(tx, "tanh"))

        chain.set_mode(mode)
        self.chain = chain
        self.logits = tx
        self.attention_net = att
        self.model = model
        self.shape = (S, T, B)

    def forward(self) -> Variable:
        return self.chain.forward()

    def backward(self):
        self.chain.backward()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Model, vocab_tokens: list[str]):
    """Binary container: magic, version, JSON header, float32 LE payloads.

    The header records the model configuration, the vocabulary and a
    parameter manifest (name, rows, cols); payloads follow in manifest
    order as row-major little-endian float32.
    """
    blocks = model.params.blocks()
    header = {
        "config": asdict(model.config),
        "vocab": list(vocab_tokens),
        "params": [
            {"name": b.name, "rows": int(b.var.shape[0]), "cols": int(b.var.shape[1])}
            for b in blocks
        ],
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for b in blocks:
            f.write(np.ascontiguousarray(b.var.data, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=None):
    """Inverse of save_checkpoint. Returns (Model, vocab token list)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a model checkpoint (bad magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
        rng = Rng(0)
        model = Model.new(config, rng, dtype=dtype)
        snapshot = {}
        for entry in header["params"]:
            rows, cols = entry["rows"], entry["cols"]
            raw = f.read(rows * cols * 4)
            if len(raw) != rows * cols * 4:
                raise ConfigError(f"{path}: truncated payload for {entry['name']!r}")
            snapshot[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(rows, cols)
        model.params.load_data(snapshot)
    return model, header["vocab"]
