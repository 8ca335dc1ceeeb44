"""Greedy and beam-search translation with length-penalized scoring.

A hypothesis accumulates raw log-probability while it grows; final
ranking divides by the length penalty lp(n) = ((5 + n) / 6) ** alpha
where n counts emitted tokens including EOS. Since log-probabilities
never increase and lp never decreases (alpha >= 0), the best reachable
score of any live hypothesis is bounded by log_prob / lp(max_len), which
makes the stopping rule exact.

Ties break deterministically: higher score first, then earlier beam
index, then lower token id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Vocabulary
from .errors import ConfigError, ToolkitError
from .graph import INFER
from .model import Model, decode_step, encode, init_decoder_states

EOS = Vocabulary.EOS
BOS = Vocabulary.BOS


@dataclass
class DecodeConfig:
    beam_size: int = 10
    length_penalty_alpha: float = 0.6
    max_len_factor: float = 2.0
    max_len_offset: int = 10
    max_len: int | None = None    # explicit cap overriding the formula
    n_best: int = 1

    def validate(self):
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.length_penalty_alpha < 0:
            raise ConfigError(f"length penalty alpha must be >= 0, got {self.length_penalty_alpha}")
        return self

    def cap_for(self, src_len: int) -> int:
        if self.max_len is not None:
            return self.max_len
        return int(self.max_len_factor * src_len) + self.max_len_offset


def length_penalty(length: int, alpha: float) -> float:
    """lp(n) = ((5 + n) / 6) ** alpha; a score is log_prob / lp."""
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class Hypothesis:
    """A beam entry: emitted tokens (EOS terminal once finished), the
    decoder state ready to extend past the last token, and the summed
    log-probability of everything emitted."""

    tokens: list[int] = field(default_factory=list)
    log_prob: float = 0.0
    state: list | None = None
    finished: bool = False

    @property
    def last(self) -> int:
        return self.tokens[-1] if self.tokens else BOS


@dataclass
class Translation:
    tokens: list[int]        # without the final EOS
    score: float             # penalized: log_prob / lp(len incl. EOS)
    log_prob: float
    truncated: bool = False
    n_best: list = field(default_factory=list)   # [(tokens, score, log_prob)]


def _encode_single(src_tokens, model: Model):
    src = np.asarray(src_tokens, dtype=np.int64).reshape(-1, 1)
    if src.size == 0:
        raise ConfigError("cannot translate an empty source sentence")
    mask = np.ones_like(src, dtype=model.params.dtype)
    return encode(src, mask, model, mode=INFER)


def beam_search(src_tokens, model: Model, cfg: DecodeConfig) -> Translation:
    """Length-penalized beam search over one source sentence.

    Expands every live hypothesis with the whole vocabulary, keeps the
    top beam_size continuations, retires those ending in EOS to a
    finished pool, and stops once the pool holds beam_size entries and
    no live hypothesis can beat the pooled best. If nothing finishes
    within the length cap, the best live hypothesis is returned with a
    truncation flag.
    """
    cfg.validate()
    alpha = cfg.length_penalty_alpha
    encoded = _encode_single(src_tokens, model)
    max_len = max(cfg.cap_for(len(src_tokens)), 1)
    lp_cap = length_penalty(max_len, alpha)
    live = [Hypothesis(state=init_decoder_states(encoded))]
    finished: list[tuple[float, int, Hypothesis]] = []   # (score, arrival, hyp)
    arrivals = 0

    for _ in range(max_len):
        if not live:
            break
        scores = np.empty((len(live), model.config.vocab_size))
        next_states = []
        for k, hyp in enumerate(live):
            log_probs, new_state = decode_step(
                np.array([hyp.last]), hyp.state, encoded, model, mode=INFER)
            scores[k] = hyp.log_prob + log_probs[:, 0]
            next_states.append(new_state)
        flat = scores.reshape(-1)
        V = model.config.vocab_size
        beam_idx = np.repeat(np.arange(len(live)), V)
        token_idx = np.tile(np.arange(V), len(live))
        order = np.lexsort((token_idx, beam_idx, -flat))[: cfg.beam_size]
        new_live = []
        for flat_i in order:
            k, tok = int(beam_idx[flat_i]), int(token_idx[flat_i])
            child = Hypothesis(tokens=live[k].tokens + [tok],
                               log_prob=float(flat[flat_i]),
                               state=next_states[k])
            if tok == EOS:
                child.finished = True
                score = child.log_prob / length_penalty(len(child.tokens), alpha)
                finished.append((score, arrivals, child))
                arrivals += 1
            else:
                new_live.append(child)
        live = new_live
        if len(finished) >= cfg.beam_size and live:
            best_finished = max(s for s, _, _ in finished)
            best_live_bound = max(h.log_prob for h in live) / lp_cap
            if best_live_bound <= best_finished:
                break

    if finished:
        # score descending; earlier arrival wins ties
        finished.sort(key=lambda e: (-e[0], e[1]))
        ranked = [(h.tokens[:-1], s, h.log_prob) for s, _, h in finished[: max(cfg.n_best, 1)]]
        tokens, score, log_prob = ranked[0]
        return Translation(tokens, score, log_prob, truncated=False, n_best=ranked)
    # length cap hit with nothing finished: fall back to the best live entry
    best = max(live, key=lambda h: (h.log_prob, -len(h.tokens)))
    score = best.log_prob / length_penalty(max(len(best.tokens), 1), alpha)
    return Translation(best.tokens, score, best.log_prob, truncated=True,
                       n_best=[(best.tokens, score, best.log_prob)])


def greedy_decode(src_tokens, model: Model, max_len: int) -> Translation:
    """Argmax decoding until EOS or the length cap (lowest id wins ties)."""
    encoded = _encode_single(src_tokens, model)
    states = init_decoder_states(encoded)
    tokens: list[int] = []
    log_prob = 0.0
    prev = BOS
    for _ in range(max_len):
        log_probs, states = decode_step(np.array([prev]), states, encoded, model, mode=INFER)
        tok = int(np.argmax(log_probs[:, 0]))
        log_prob += float(log_probs[tok, 0])
        if tok == EOS:
            return Translation(tokens, log_prob, log_prob, truncated=False)
        tokens.append(tok)
        prev = tok
    return Translation(tokens, log_prob, log_prob, truncated=True)


def translate_batch(lines, model: Model, vocab: Vocabulary, cfg: DecodeConfig):
    """Translate text lines, preserving input order.

    Sentences are processed shortest-first (cheap padding-free batching
    hook) and written back through their original indices. Unknown input
    tokens map to UNK; empty lines pass through empty. Returns a list of
    detokenized output lines and, when cfg.n_best > 1, a parallel list of
    `index ||| tokens ||| score` records.
    """
    cfg.validate()
    order = sorted(range(len(lines)), key=lambda i: len(lines[i].split()))
    outputs: list[str] = [""] * len(lines)
    n_best_records: list[str] = []
    results: dict[int, Translation] = {}
    for i in order:
        tokens = lines[i].split()
        if not tokens:
            continue
        try:
            results[i] = beam_search(vocab.encode(tokens), model, cfg)
        except ToolkitError as exc:
            raise type(exc)(f"line {i + 1}: {exc}") from exc
    for i in range(len(lines)):
        if i not in results:
            outputs[i] = ""
            continue
        res = results[i]
        outputs[i] = " ".join(vocab.decode(res.tokens))
        if cfg.n_best > 1:
            for tokens, score, _ in res.n_best[: cfg.n_best]:
                n_best_records.append(f"{i} ||| {' '.join(vocab.decode(tokens))} ||| {score:.6f}")
    return outputs, n_best_records
