"""Vocabulary, parallel corpus ingestion, padded batching, and BLEU.

Text is tokenized externally: one sentence per line, space-separated
tokens, UTF-8. The first four vocabulary ids are reserved for PAD, UNK,
BOS and EOS.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Rng

RESERVED = ["<pad>", "<unk>", "<bos>", "<eos>"]


class Vocabulary:
    """Bijection between tokens and ids with four reserved entries."""

    PAD, UNK, BOS, EOS = 0, 1, 2, 3

    def __init__(self, corpus_tokens: list[str]):
        self._id_to_token = list(RESERVED) + list(corpus_tokens)
        self._token_to_id = {tok: i for i, tok in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ConfigError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self._id_to_token)

    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    @classmethod
    def from_tokens(cls, all_tokens: list[str]) -> "Vocabulary":
        """Rebuild from a full token list whose first four entries are reserved."""
        if all_tokens[:4] != RESERVED:
            raise ConfigError(f"vocabulary must start with the reserved tokens {RESERVED}")
        return cls(all_tokens[4:])

    def encode(self, tokens) -> list[int]:
        return [self._token_to_id.get(t, self.UNK) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for tok in self._id_to_token:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            toks = [line.rstrip("\n") for line in f]
        return cls.from_tokens(toks)


def build_vocab(paths, cap: int) -> Vocabulary:
    """Most frequent tokens over all files, joint across source and target.

    cap bounds the total vocabulary size including the four reserved
    entries. Ties order by frequency descending, then token ascending,
    so rebuilding from the same files is bit-identical.
    """
    if cap <= len(RESERVED):
        raise ConfigError(f"vocabulary cap must exceed {len(RESERVED)}, got {cap}")
    counts = Counter()
    for path in paths:
        with open(path, encoding="utf-8") as f:
            for line in f:
                counts.update(line.split())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: cap - len(RESERVED)]]
    return Vocabulary(keep)


class ParallelCorpus:
    """Line-aligned token sequences; pairs with an empty side are dropped."""

    def __init__(self, src_sentences, tgt_sentences):
        if len(src_sentences) != len(tgt_sentences):
            raise ConfigError(
                f"corpus sides differ: {len(src_sentences)} source vs {len(tgt_sentences)} target lines")
        self.src = []
        self.tgt = []
        for s, t in zip(src_sentences, tgt_sentences):
            if s and t:
                self.src.append(list(s))
                self.tgt.append(list(t))

    def __len__(self):
        return len(self.src)

    @classmethod
    def load(cls, src_path, tgt_path) -> "ParallelCorpus":
        def read(path):
            with open(path, encoding="utf-8") as f:
                return [line.split() for line in f]
        return cls(read(src_path), read(tgt_path))


@dataclass
class Batch:
    """Padded id matrices (steps, batch) plus masks and bookkeeping.

    tgt_ids already ends each sentence with EOS before the padding;
    indices maps batch columns back to corpus positions.
    """

    src_ids: np.ndarray
    tgt_ids: np.ndarray
    src_mask: np.ndarray
    tgt_mask: np.ndarray
    src_lengths: list[int]
    tgt_lengths: list[int]
    indices: list[int]


def _pad_block(id_lists, pad_id):
    width = max(len(ids) for ids in id_lists)
    block = np.full((width, len(id_lists)), pad_id, dtype=np.int64)
    mask = np.zeros((width, len(id_lists)), dtype=np.float32)
    for col, ids in enumerate(id_lists):
        block[: len(ids), col] = ids
        mask[: len(ids), col] = 1.0
    return block, mask, [len(ids) for ids in id_lists]


def make_batches(corpus: ParallelCorpus, vocab: Vocabulary, batch_size: int,
                 max_len: int, rng: Rng, shuffle: bool = True) -> list[Batch]:
    """One epoch of padded batches.

    Sentences with either side longer than max_len are filtered out.
    The order is shuffled from rng, bucketed by length inside megabatches
    to limit padding, and the resulting batch order reshuffled; a fixed
    seed reproduces the identical batch sequence.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    kept = [i for i in range(len(corpus))
            if len(corpus.src[i]) <= max_len and len(corpus.tgt[i]) <= max_len]
    if not kept:
        raise ConfigError("no sentences remain after length filtering")
    order = [kept[j] for j in rng.permutation(len(kept))] if shuffle else list(kept)
    bucket_span = batch_size * 20
    batches = []
    for start in range(0, len(order), bucket_span):
        chunk = order[start: start + bucket_span]
        chunk.sort(key=lambda i: (len(corpus.src[i]), len(corpus.tgt[i])))
        for b in range(0, len(chunk), batch_size):
            group = chunk[b: b + batch_size]
            src = [vocab.encode(corpus.src[i]) for i in group]
            tgt = [vocab.encode(corpus.tgt[i]) + [Vocabulary.EOS] for i in group]
            src_ids, src_mask, src_lens = _pad_block(src, Vocabulary.PAD)
            tgt_ids, tgt_mask, tgt_lens = _pad_block(tgt, Vocabulary.PAD)
            batches.append(Batch(src_ids, tgt_ids, src_mask, tgt_mask,
                                 src_lens, tgt_lens, list(group)))
    if shuffle:
        batches = [batches[j] for j in rng.permutation(len(batches))]
    return batches


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_order: int = 4) -> float:
    """Corpus-level BLEU on tokenized cased text, in [0, 100].

    Clipped n-gram counts are summed over the whole corpus before the
    geometric mean, so a zero score only occurs when a corpus-total
    precision is zero. Orders with no hypothesis n-grams at all (corpus
    shorter than the order) are skipped. Brevity penalty is
    exp(1 - ref_len/hyp_len) when the hypothesis side is shorter.
    """
    if len(hypotheses) != len(references):
        raise ConfigError(
            f"hypothesis/reference counts differ: {len(hypotheses)} vs {len(references)}")
    if not hypotheses:
        raise ConfigError("cannot score an empty corpus")
    clipped = [0] * max_order
    totals = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            clipped[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(max_order):
        if totals[n] == 0:
            continue
        if clipped[n] == 0:
            return 0.0
        log_sum += math.log(clipped[n] / totals[n])
        orders += 1
    if orders == 0:
        return 0.0
    precision = math.exp(log_sum / orders)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * precision
