"""minmt: a compact neural machine translation toolkit.

A small neural-network core with hand-written forward/backward passes,
an attention-based LSTM encoder-decoder, an SGD training schedule with
decay and restart-from-best, beam-search translation, and a
train/translate/score command line.
"""

__version__ = "0.1.0"

from .data import ParallelCorpus, Vocabulary, bleu, build_vocab
from .decoding import DecodeConfig, beam_search, greedy_decode, translate_batch
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .tensor import Rng, Variable
from .training import TrainConfig, Trainer

__all__ = [
    "DecodeConfig",
    "Model",
    "ModelConfig",
    "ParallelCorpus",
    "Rng",
    "TrainConfig",
    "Trainer",
    "Variable",
    "Vocabulary",
    "beam_search",
    "bleu",
    "build_vocab",
    "greedy_decode",
    "load_checkpoint",
    "save_checkpoint",
    "translate_batch",
    "__version__",
]
