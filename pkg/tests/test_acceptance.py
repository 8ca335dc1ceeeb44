"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers (run with -s to see them live).

Gradient tolerances: every finite-difference oracle runs in float64 on an
exact-valued twin; double-precision analytic gradients must match within
1e-6, single-precision within 1e-4 (norm-relative, adaptive step size).
"""

import itertools
import math
import time

import numpy as np
import pytest

from helpers import block_rel_err, directional_rel_err, weighted_sum_loss
from minmt import tensor
from minmt.attention import AttentionParams, attend
from minmt.data import ParallelCorpus, Vocabulary, bleu
from minmt.decoding import DecodeConfig, beam_search, greedy_decode, length_penalty
from minmt.layers import (
    ActivationLayer,
    ConcatenateLayer,
    DuplicateLayer,
    EmbeddingLayer,
    EmbeddingParams,
    LinearLayer,
    LinearParams,
    LstmParams,
    LstmSequenceLayer,
    SoftmaxLayer,
)
from minmt.model import Model, ModelConfig, TrainingGraph, sequence_log_prob, shift_targets
from minmt.tensor import Rng, Variable, log_softmax_columns
from minmt.training import (
    CONTINUE,
    DECAY_RESTART,
    TERMINATE,
    TrainConfig,
    Trainer,
    TrainState,
    improvement_threshold,
    schedule_on_eval,
    smoothed_loss,
)

SEEDS = range(20)
TOL_F64 = 1e-6
TOL_F32 = 1e-4


def u32(seed, lo, hi, shape):
    """float32 uniform values, exactly representable in either precision."""
    return Rng(seed).uniform(lo, hi, shape, dtype=np.float32)


# ---------------------------------------------------------------------------
# layer zoo for the gradient-integrity criterion
# ---------------------------------------------------------------------------

def build_layer_case(kind, seed, dtype):
    """Returns (loss_fn, pairs) where pairs maps each checked array to the
    Variable holding its analytic gradient after one backward pass."""
    np_dt = np.float64 if dtype == "float64" else np.float32
    tensor.set_default_dtype(dtype)

    def var(seed_, lo, hi, shape):
        return Variable(u32(seed_, lo, hi, shape).astype(np_dt))

    if kind == "linear":
        x = var(seed, -2, 2, (3, 4))
        p = LinearParams("p", 3, 2, Rng(seed + 1), bias=True)
        p.w.var.data[:] = u32(seed + 2, -0.8, 0.8, p.w.var.shape).astype(np_dt)
        layer = LinearLayer(p, x)
        checked = [x, p.w.var, p.b.var]
    elif kind in ("tanh", "sigmoid"):
        x = var(seed, -2, 2, (4, 3))
        layer = ActivationLayer(x, kind)
        checked = [x]
    elif kind == "softmax":
        x = var(seed, -2, 2, (5, 3))
        layer = SoftmaxLayer(x)
        checked = [x]
    elif kind == "duplicate_concat":
        x = var(seed, -2, 2, (3, 2))
        dup = DuplicateLayer(x)
        layer = _Chain([dup, ConcatenateLayer(dup.y, dup.y2)])
        checked = [x]
    elif kind == "lstm3":
        T, B, D, H = 3, 2, 3, 3
        x = var(seed, -2, 2, (D, T * B))
        p = LstmParams("l", D, H, Rng(seed + 1))
        for i, blk in enumerate(p.blocks()):
            blk.var.data[:] = u32(seed + 2 + i, -0.8, 0.8, blk.var.shape).astype(np_dt)
        layer = LstmSequenceLayer(p, x, T, B)
        checked = [x] + [b.var for b in p.blocks()]
    elif kind == "lstm_masked_reverse":
        T, B, D, H = 4, 2, 3, 3
        mask = np.array([[1, 1], [1, 1], [1, 0], [0, 0]], dtype=np_dt)
        x = var(seed, -2, 2, (D, T * B))
        p = LstmParams("l", D, H, Rng(seed + 1))
        for i, blk in enumerate(p.blocks()):
            blk.var.data[:] = u32(seed + 2 + i, -0.8, 0.8, blk.var.shape).astype(np_dt)
        layer = LstmSequenceLayer(p, x, T, B, mask=mask, reverse=True)
        checked = [x] + [b.var for b in p.blocks()]
    elif kind == "embedding":
        p = EmbeddingParams("emb", 6, 3, Rng(seed + 1))
        p.table.var.data[:] = u32(seed + 2, -0.8, 0.8, p.table.var.shape).astype(np_dt)
        layer = EmbeddingLayer(p, [1, 4, 4, 0])
        checked = [p.table.var]
    else:
        raise ValueError(kind)

    w = u32(seed + 900, -1, 1, layer.y.shape).astype(np_dt)

    def loss_fn():
        layer.forward()
        return weighted_sum_loss(layer.y.data, w)

    def run_backward():
        loss_fn()
        for v in checked:
            v.zero_grad()
        layer.y.grad[:] = 0
        layer.y.grad += w
        layer.backward()
        layer.calculate_gradient()

    return loss_fn, run_backward, checked


class _Chain:
    """Minimal two-layer pipeline for the duplicate+concat case."""

    def __init__(self, layers):
        self.layers = layers
        self.y = layers[-1].y

    def forward(self):
        for l in self.layers:
            l.forward()

    def backward(self):
        for l in reversed(self.layers):
            l.backward()

    def calculate_gradient(self):
        for l in reversed(self.layers):
            l.calculate_gradient()


LAYER_KINDS = ["linear", "tanh", "sigmoid", "softmax", "duplicate_concat",
               "lstm3", "lstm_masked_reverse", "embedding"]


def build_toy_model(seed, dtype):
    tensor.set_default_dtype(dtype)
    cfg = ModelConfig(vocab_size=11, embedding_size=4, hidden_size=4, depth=2, dropout=0.0)
    model = Model.new(cfg, Rng(seed))
    ir = Rng(seed + 1000)
    for b in model.params.blocks():
        b.var.data[:] = ir.uniform(-0.8, 0.8, b.var.shape, dtype=np.float32).astype(b.var.dtype)
    return model


TOY_SRC = np.array([[4, 5], [6, 7], [8, 0]])
TOY_SRC_MASK = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 0.0]])
TOY_TGT = np.array([[5, 6], [7, 8], [3, 3]])
TOY_TGT_MASK = np.ones((3, 2))


def toy_model_loss(model):
    graph = TrainingGraph(model, TOY_SRC, TOY_SRC_MASK.astype(model.params.dtype),
                          shift_targets(TOY_TGT, 2), mode="infer")
    lp = log_softmax_columns(graph.forward().data)
    loss, dz = smoothed_loss(lp, TOY_TGT.reshape(6), 0.1, TOY_TGT_MASK.reshape(6))
    return loss, graph, dz


def toy_model_grads(model):
    loss, graph, dz = toy_model_loss(model)
    graph.logits.grad += dz.astype(graph.logits.dtype)
    graph.backward()
    return {b.name: b.var.grad.astype(np.float64) for b in model.params.blocks()}


class TestGradientIntegrity:
    def test_every_layer_and_whole_model(self):
        start = time.monotonic()
        worst_layer64 = worst_layer32 = 0.0
        for kind in LAYER_KINDS:
            for seed in SEEDS:
                loss64, back64, checked64 = build_layer_case(kind, seed, "float64")
                back64()
                grads64 = [v.grad.copy() for v in checked64]
                loss32, back32, checked32 = build_layer_case(kind, seed, "float32")
                back32()
                grads32 = [v.grad.astype(np.float64) for v in checked32]
                for arr64, g64, g32 in zip(checked64, grads64, grads32):
                    e64 = block_rel_err(loss64, arr64.data, g64, sample=6, rng=np.random.default_rng(seed))
                    e32 = block_rel_err(loss64, arr64.data, g32, sample=6, rng=np.random.default_rng(seed))
                    assert e64 < TOL_F64, f"{kind} seed {seed}: f64 err {e64}"
                    assert e32 < TOL_F32, f"{kind} seed {seed}: f32 err {e32}"
                    worst_layer64 = max(worst_layer64, e64)
                    worst_layer32 = max(worst_layer32, e32)
        tensor.set_default_dtype("float32")

        worst_model64 = worst_model32 = 0.0
        for seed in SEEDS:
            model32 = build_toy_model(seed, "float32")
            grads32 = toy_model_grads(model32)
            model64 = build_toy_model(seed, "float64")
            grads64 = toy_model_grads(model64)
            gen = np.random.default_rng(seed)
            for b in model64.params.blocks():
                d = gen.standard_normal(b.var.shape)
                e64 = directional_rel_err(lambda: toy_model_loss(model64)[0],
                                          b.var.data, grads64[b.name], d)
                e32 = directional_rel_err(lambda: toy_model_loss(model64)[0],
                                          b.var.data, grads32[b.name], d)
                assert e64 < TOL_F64, f"model seed {seed} {b.name}: f64 err {e64}"
                assert e32 < TOL_F32, f"model seed {seed} {b.name}: f32 err {e32}"
                worst_model64 = max(worst_model64, e64)
                worst_model32 = max(worst_model32, e32)

        # exhaustive sweep over every component on one seed
        model64 = build_toy_model(0, "float64")
        grads64 = toy_model_grads(model64)
        for b in model64.params.blocks():
            err = block_rel_err(lambda: toy_model_loss(model64)[0], b.var.data, grads64[b.name])
            assert err < TOL_F64, f"exhaustive {b.name}: {err}"
        tensor.set_default_dtype("float32")

        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"gradient integrity took {elapsed:.1f}s"
        print(f"\nPASS gradient-integrity: 20 seeds, layers worst f64={worst_layer64:.2e} "
              f"f32={worst_layer32:.2e}; model worst f64={worst_model64:.2e} "
              f"f32={worst_model32:.2e}; {elapsed:.1f}s")


class TestAttentionCorrectness:
    def test_published_equation_examples(self):
        # single source position: alignment exactly 1, context is that state
        for seed in range(5):
            p = AttentionParams("att", 3, Rng(seed))
            h_s = u32(seed, -1, 1, (3, 1, 2))
            h_t = u32(seed + 50, -1, 1, (3, 2))
            out = attend(h_s, h_t, p)
            assert np.allclose(out.alignment, 1.0, atol=1e-7)
            assert np.allclose(out.context, h_s[:, 0, :], atol=1e-5)

        # bilinear score: h_s=[1,0], w_a=I, h_t=[0.5,0.5] scores 0.5
        p = AttentionParams("att", 2, Rng(0))
        p.w_a.w.var.data[:] = np.eye(2, dtype=np.float32)
        h_s = np.zeros((2, 2, 1), dtype=np.float32)
        h_s[:, 0, 0] = [1.0, 0.0]
        out = attend(h_s, np.array([[0.5], [0.5]], dtype=np.float32), p)
        score = out._network[0].scores.data[0, 0]
        assert abs(score - 0.5) < 1e-5
        log_odds = math.log(out.alignment[0, 0] / out.alignment[1, 0])
        assert abs(log_odds - 0.5) < 1e-5

        # convex combination: identical source states pass through exactly
        p = AttentionParams("att", 3, Rng(2))
        common = u32(7, -1, 1, (3, 1, 2))
        out = attend(np.repeat(common, 5, axis=1), u32(8, -1, 1, (3, 2)), p)
        assert np.allclose(out.context, common[:, 0, :], atol=1e-5)

        # padding invariance: masked positions change nothing at all
        p = AttentionParams("att", 3, Rng(3))
        h_s = u32(9, -1, 1, (3, 4, 2))
        h_t = u32(10, -1, 1, (3, 2))
        mask = np.ones((4, 2), dtype=np.float32)
        base = attend(h_s, h_t, p, source_mask=mask)
        padded = attend(np.concatenate([h_s, u32(11, -1, 1, (3, 2, 2))], axis=1), h_t, p,
                        source_mask=np.concatenate([mask, np.zeros((2, 2), dtype=np.float32)]))
        assert np.array_equal(padded.h_o, base.h_o)
        assert np.array_equal(padded.alignment[:4], base.alignment)
        assert (padded.alignment[4:] == 0.0).all()
        print("\nPASS attention-correctness: alignment, bilinear score, convexity, padding")


class TestBeamSearchOracle:
    @staticmethod
    def toy_decoder_model(seed, vocab):
        cfg = ModelConfig(vocab_size=vocab, embedding_size=4, hidden_size=4,
                          depth=1, dropout=0.0, output_tanh=False)
        model = Model.new(cfg, Rng(seed))
        ir = Rng(seed + 5000)
        for b in model.params.blocks():
            b.var.data[:] = ir.uniform(-0.6, 0.6, b.var.shape, dtype=np.float32).astype(b.var.dtype)
        return model

    @staticmethod
    def score_candidate(tokens, src, model, alpha):
        full = np.array(list(tokens) + [Vocabulary.EOS], dtype=np.int64).reshape(-1, 1)
        src_arr = np.asarray(src, dtype=np.int64).reshape(-1, 1)
        lp = float(sequence_log_prob(src_arr, np.ones_like(src_arr, dtype=np.float32),
                                     full, np.ones_like(full, dtype=np.float32), model)[0])
        return lp / length_penalty(len(full), alpha)

    def test_exhaustive_equivalence_and_monotonicity(self):
        start = time.monotonic()
        alpha, vocab, max_len = 0.6, 6, 4
        content = [t for t in range(vocab) if t != Vocabulary.EOS]
        for seed in SEEDS:
            model = self.toy_decoder_model(seed, vocab)
            src = [4, 5, 4]
            best = -math.inf
            for n in range(max_len):
                for tokens in itertools.product(content, repeat=n):
                    best = max(best, self.score_candidate(tokens, src, model, alpha))
            cfg = DecodeConfig(beam_size=vocab ** max_len, length_penalty_alpha=alpha,
                               max_len=max_len)
            result = beam_search(src, model, cfg)
            assert not result.truncated
            assert result.score == pytest.approx(best, rel=1e-5, abs=1e-7), f"seed {seed}"
            achieved = self.score_candidate(result.tokens, src, model, alpha)
            assert achieved == pytest.approx(best, rel=1e-5, abs=1e-7)

            # larger beams never score worse
            prev = -math.inf
            for beam in (1, 2, 4, 8):
                res = beam_search(src, model, DecodeConfig(
                    beam_size=beam, length_penalty_alpha=alpha, max_len=max_len))
                assert res.score >= prev - 1e-9, f"seed {seed} beam {beam}"
                prev = res.score
        elapsed = time.monotonic() - start
        assert elapsed < 120.0, f"beam oracle took {elapsed:.1f}s"
        print(f"\nPASS beam-search-oracle: 20 seeds exhaustive + monotone, {elapsed:.1f}s")


class TestScheduleReplay:
    def test_scripted_trace(self):
        cfg = TrainConfig()
        # improve once, then stall: decay at the 12th bad eval, again 12
        # later, terminating on the second barren decay
        entropies = [1.0] + [1.0] * 24
        state = TrainState(lr=cfg.learning_rate)
        trace = []
        lrs = []
        for e in entropies:
            decision = schedule_on_eval(state, e, cfg)
            trace.append(decision.action)
            state = decision.state
            lrs.append(state.lr)
            if decision.action == TERMINATE:
                break
        assert trace[0] == CONTINUE
        assert trace[1:12] == [CONTINUE] * 11
        assert trace[12] == DECAY_RESTART and lrs[12] == pytest.approx(0.7)
        assert trace[13:24] == [CONTINUE] * 11
        assert trace[24] == TERMINATE
        assert len(trace) == 25

        # restart-from-best is the trainer's contract on a decay
        assert improvement_threshold(1.0) == 0.01
        assert improvement_threshold(0.05) == 0.001

        # replay determinism
        state2 = TrainState(lr=cfg.learning_rate)
        trace2 = []
        for e in entropies:
            d = schedule_on_eval(state2, e, cfg)
            trace2.append(d.action)
            state2 = d.state
            if d.action == TERMINATE:
                break
        assert trace2 == trace
        print("\nPASS schedule-replay: decay@12, terminate@2 barren decays, thresholds 0.01/0.001")


def synth_corpus(task, n, seed, lo=3, hi=8, n_tokens=16):
    rng = Rng(seed)
    toks = [f"t{i}" for i in range(n_tokens)]
    src, tgt = [], []
    for _ in range(n):
        L = int(rng.integers(lo, hi + 1))
        s = [toks[int(rng.integers(0, n_tokens))] for _ in range(L)]
        src.append(s)
        tgt.append(list(s) if task == "copy" else list(reversed(s)))
    return src, tgt


class TestToyEndToEnd:
    def run_task(self, task, epochs, min_accuracy):
        start = time.monotonic()
        src, tgt = synth_corpus(task, 2000, seed=123)
        held_src, held_tgt = synth_corpus(task, 200, seed=999)
        corpus = ParallelCorpus(src, tgt)
        dev = ParallelCorpus(held_src[:100], held_tgt[:100])
        vocab = Vocabulary([f"t{i}" for i in range(16)])
        assert len(vocab) == 20
        # Table-3 hyperparameters at toy dimensions; the output-projection
        # tanh is disabled since it bounds logits and pins the loss floor
        cfg = ModelConfig(vocab_size=len(vocab), embedding_size=64, hidden_size=64,
                          depth=2, dropout=0.2, output_tanh=False)
        model = Model.new(cfg, Rng(7))
        tc = TrainConfig(learning_rate=1.0, decay_factor=0.7, label_smoothing=0.1,
                         patience=12, eval_interval_sentences=4000, batch_size=16,
                         max_epochs=epochs, seed=5)
        state = Trainer(model, vocab, corpus, dev, tc, log_stream=None).train()
        correct = 0
        for s, t in zip(held_src, held_tgt):
            res = greedy_decode(vocab.encode(s), model, max_len=2 * len(s) + 10)
            correct += vocab.decode(res.tokens) == t
        elapsed = time.monotonic() - start
        accuracy = correct / len(held_src)
        assert elapsed < 300.0, f"{task} took {elapsed:.0f}s"
        assert accuracy >= min_accuracy, f"{task}: {accuracy:.1%} < {min_accuracy:.0%}"
        if task == "copy":
            assert state.best_dev_entropy < 0.1
        print(f"\nPASS toy-end-to-end {task}: exact match {accuracy:.1%}, "
              f"dev entropy {state.best_dev_entropy:.4f}, {elapsed:.0f}s")

    def test_copy_task(self):
        self.run_task("copy", epochs=40, min_accuracy=0.99)

    def test_reversal_task(self):
        self.run_task("reverse", epochs=60, min_accuracy=0.95)


class TestLossAnalytics:
    def test_hand_computed_and_uniform(self):
        p = np.array([[0.7], [0.1], [0.1], [0.1]])
        loss, _ = smoothed_loss(np.log(p), np.array([0]), 0.1, None)
        assert abs(loss - 0.5027) < 1e-4
        for eps in (0.0, 0.05, 0.1, 0.3, 0.7, 0.99):
            if eps >= 1.0:
                continue
            V = 9
            logp = np.full((V, 4), -math.log(V))
            val, _ = smoothed_loss(logp, np.array([0, 3, 5, 8]), eps, None)
            assert val == pytest.approx(math.log(V), rel=1e-12)
        print("\nPASS loss-analytics: 0.5027 example and uniform log-V identity")


class TestBleuScorer:
    def test_identity_and_hand_examples(self):
        corpus = [["the", "cat", "sat", "down"], ["it", "rained"]]
        assert f"{bleu(corpus, corpus):.2f}" == "100.00"
        # clipped counts: "the the the" vs "the cat" has p1=1/3, p2=0
        assert bleu([["the", "the", "the"]], [["the", "cat"]]) == 0.0
        # brevity: 5 matched tokens against a 10-token reference
        ref = [f"w{i}" for i in range(10)]
        val = bleu([ref[:5]], [ref])
        assert round(val, 4) == round(100.0 * math.exp(-1.0), 4) == 36.7879
        print("\nPASS bleu-scorer: identity 100.00, clipped counts, brevity to 4 decimals")
