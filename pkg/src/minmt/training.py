"""Training: label-smoothed loss, SGD with clipping, the learning-rate
decay / restart-from-best / early-stop schedule, and the epoch loop.

The schedule watches development-set cross entropy. An evaluation counts
as an improvement only if entropy drops below the best by more than
max(0.01 * lr, 0.001). After `patience` consecutive non-improving
evaluations the learning rate is multiplied by the decay factor and the
parameters are restored from the best snapshot; training terminates after
two such decays in a row with no new best in between.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import Batch, ParallelCorpus, Vocabulary, make_batches
from .errors import ConfigError, NumericError
from .graph import INFER, TRAIN, ParamBlock
from .model import Model, TrainingGraph, save_checkpoint, shift_targets
from .tensor import Rng, log_softmax_columns

CONTINUE = "continue"
DECAY_RESTART = "decay-and-restart"
TERMINATE = "terminate"


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    decay_factor: float = 0.7
    label_smoothing: float = 0.1
    patience: int = 12
    eval_interval_sentences: int = 400_000
    max_bad_decays: int = 2
    grad_clip_norm: float | None = 5.0
    batch_size: int = 64
    max_len: int = 100
    max_epochs: int | None = None
    seed: int = 1

    def validate(self):
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigError(f"decay_factor must be in (0, 1), got {self.decay_factor}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.patience < 1 or self.batch_size < 1:
            raise ConfigError("patience and batch_size must be >= 1")
        return self


@dataclass(frozen=True)
class TrainState:
    lr: float
    best_dev_entropy: float = math.inf
    bad_count: int = 0
    barren_decays: int = 0
    step: int = 0
    sentences_seen: int = 0


@dataclass(frozen=True)
class ScheduleDecision:
    action: str
    new_best: bool
    state: TrainState


def improvement_threshold(lr: float) -> float:
    """Entropy must drop by more than this to count as progress."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    return max(0.01 * lr, 0.001)


def schedule_on_eval(state: TrainState, dev_entropy: float, cfg: TrainConfig) -> ScheduleDecision:
    """Pure schedule step: replaying an entropy sequence replays the actions."""
    if not math.isfinite(dev_entropy):
        raise NumericError(f"dev entropy is not finite: {dev_entropy}")
    if dev_entropy < state.best_dev_entropy - improvement_threshold(state.lr):
        new_state = replace(state, best_dev_entropy=dev_entropy, bad_count=0, barren_decays=0)
        return ScheduleDecision(CONTINUE, True, new_state)
    bad = state.bad_count + 1
    if bad < cfg.patience:
        return ScheduleDecision(CONTINUE, False, replace(state, bad_count=bad))
    barren = state.barren_decays + 1
    new_state = replace(state, lr=state.lr * cfg.decay_factor, bad_count=0, barren_decays=barren)
    if barren >= cfg.max_bad_decays:
        return ScheduleDecision(TERMINATE, False, new_state)
    return ScheduleDecision(DECAY_RESTART, False, new_state)


def smoothed_loss(log_probs: np.ndarray, targets, epsilon: float, mask):
    """Label-smoothed cross entropy, mean over unmasked tokens.

    log_probs is (vocab, n) of log softmax outputs; the target
    distribution is (1-epsilon) one-hot plus epsilon/vocab everywhere.
    Returns (loss, gradient wrt the pre-softmax logits).
    """
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {epsilon}")
    log_probs = np.asarray(log_probs)
    targets = np.asarray(targets, dtype=np.int64)
    V, n = log_probs.shape
    mask = np.ones(n, dtype=log_probs.dtype) if mask is None else np.asarray(mask, dtype=log_probs.dtype)
    n_tokens = mask.sum()
    if n_tokens <= 0:
        raise ConfigError("smoothed_loss needs at least one unmasked token")
    cols = np.arange(n)
    gold = log_probs[targets, cols]
    per_token = -((1.0 - epsilon) * gold + (epsilon / V) * log_probs.sum(axis=0))
    loss = float((per_token * mask).sum() / n_tokens)
    d_logits = np.exp(log_probs)
    d_logits[targets, cols] -= 1.0 - epsilon
    d_logits -= epsilon / V
    d_logits *= mask[np.newaxis, :] / n_tokens
    return loss, d_logits


def sgd_step(blocks: list[ParamBlock], lr: float, clip_norm: float | None = None):
    """Clip by global norm, apply w -= lr * grad, then zero every grad.

    A non-finite gradient aborts before any weight moves.
    """
    learnable = [b for b in blocks if b.learnable]
    sq = 0.0
    for b in learnable:
        sq += float(np.dot(b.var.grad.ravel(), b.var.grad.ravel()))
    norm = math.sqrt(sq)
    if not math.isfinite(norm):
        raise NumericError("gradient norm is not finite; step aborted")
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
    for b in learnable:
        b.var.data -= (lr * scale) * b.var.grad
    for b in blocks:
        b.var.zero_grad()
    return norm


def train_step(model: Model, batch: Batch, cfg: TrainConfig, lr: float, rng: Rng) -> float:
    """One SGD update on a batch; returns the (smoothed) loss."""
    tgt_in = shift_targets(batch.tgt_ids, Vocabulary.BOS)
    graph = TrainingGraph(model, batch.src_ids, batch.src_mask, tgt_in, mode=TRAIN, rng=rng)
    logits = graph.forward()
    log_probs = log_softmax_columns(logits.data)
    T, B = batch.tgt_ids.shape
    loss, d_logits = smoothed_loss(
        log_probs, batch.tgt_ids.reshape(T * B), cfg.label_smoothing, batch.tgt_mask.reshape(T * B))
    if not math.isfinite(loss):
        raise NumericError(f"training loss is not finite: {loss}")
    logits.grad += d_logits.astype(logits.dtype)
    graph.backward()
    sgd_step(model.params.blocks(), lr, cfg.grad_clip_norm)
    return loss


def dev_entropy(model: Model, dev_batches: list[Batch]) -> float:
    """Mean per-token cross entropy (natural log) on held-out data.

    No label smoothing, inference mode, deterministic for a fixed model.
    """
    if not dev_batches:
        raise ConfigError("development set is empty")
    total = 0.0
    tokens = 0.0
    for batch in dev_batches:
        tgt_in = shift_targets(batch.tgt_ids, Vocabulary.BOS)
        graph = TrainingGraph(model, batch.src_ids, batch.src_mask, tgt_in, mode=INFER)
        logits = graph.forward()
        log_probs = log_softmax_columns(logits.data)
        T, B = batch.tgt_ids.shape
        cols = np.arange(T * B)
        gold = log_probs[batch.tgt_ids.reshape(T * B), cols]
        m = batch.tgt_mask.reshape(T * B)
        total += float(-(gold * m).sum())
        tokens += float(m.sum())
    return total / tokens


class Trainer:
    """Owns the epoch loop, evaluation cadence, snapshots and the log.

    log lines are tab-separated: step, epoch fraction, lr, mean train
    loss since the last eval, dev entropy, action, source tokens/sec.
    """

    def __init__(self, model: Model, vocab: Vocabulary, train_corpus: ParallelCorpus,
                 dev_corpus: ParallelCorpus, cfg: TrainConfig, model_path=None,
                 log_stream=None):
        cfg.validate()
        self.model = model
        self.vocab = vocab
        self.train_corpus = train_corpus
        self.cfg = cfg
        self.model_path = model_path
        self.log_stream = log_stream
        self.rng = Rng(cfg.seed)
        self.dev_batches = make_batches(
            dev_corpus, vocab, cfg.batch_size, cfg.max_len, Rng(cfg.seed), shuffle=False)
        self.state = TrainState(lr=cfg.learning_rate)
        self.best_snapshot = model.params.copy_data()
        self.has_best = False
        self.decay_count = 0

    def _log(self, *fields):
        if self.log_stream is not None:
            print("\t".join(str(f) for f in fields), file=self.log_stream, flush=True)

    def _save(self, path):
        if path is not None:
            save_checkpoint(path, self.model, self.vocab.tokens())

    def train(self) -> TrainState:
        cfg = self.cfg
        corpus_size = len(self.train_corpus)
        self._log("#step", "epoch", "lr", "train_loss", "dev_entropy", "action", "src_tok_per_sec")
        loss_sum, loss_count = 0.0, 0
        src_tokens = 0
        since_eval = 0
        t_start = time.monotonic()
        epoch = 0
        done = False
        while not done and (cfg.max_epochs is None or epoch < cfg.max_epochs):
            epoch += 1
            for batch in make_batches(self.train_corpus, self.vocab, cfg.batch_size,
                                      cfg.max_len, self.rng, shuffle=True):
                loss = train_step(self.model, batch, cfg, self.state.lr, self.rng)
                loss_sum += loss
                loss_count += 1
                n_sent = batch.src_ids.shape[1]
                self.state = replace(self.state,
                                     step=self.state.step + 1,
                                     sentences_seen=self.state.sentences_seen + n_sent)
                since_eval += n_sent
                src_tokens += int(batch.src_mask.sum())
                if since_eval >= cfg.eval_interval_sentences:
                    elapsed = max(time.monotonic() - t_start, 1e-9)
                    entropy = dev_entropy(self.model, self.dev_batches)
                    decision = schedule_on_eval(self.state, entropy, cfg)
                    self.state = decision.state
                    if decision.new_best:
                        self.best_snapshot = self.model.params.copy_data()
                        self.has_best = True
                        self._save(self.model_path)
                    elif decision.action in (DECAY_RESTART, TERMINATE):
                        self.decay_count += 1
                        if self.model_path is not None:
                            self._save(f"{self.model_path}.decay{self.decay_count}")
                        self.model.params.load_data(self.best_snapshot)
                    epoch_frac = self.state.sentences_seen / max(corpus_size, 1)
                    self._log(self.state.step, f"{epoch_frac:.3f}", f"{self.state.lr:.6g}",
                              f"{loss_sum / max(loss_count, 1):.6f}", f"{entropy:.6f}",
                              decision.action, f"{src_tokens / elapsed:.1f}")
                    loss_sum, loss_count = 0.0, 0
                    src_tokens = 0
                    since_eval = 0
                    t_start = time.monotonic()
                    if decision.action == TERMINATE:
                        done = True
                        break
        # leave the best evaluated parameters in place and on disk; without
        # any completed evaluation the current parameters stand
        if self.has_best:
            self.model.params.load_data(self.best_snapshot)
        self._save(self.model_path)
        return self.state
