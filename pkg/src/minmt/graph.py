"""Network composition: layers chained through shared Variables.

A layer is anything exposing forward / backward / calculate_gradient.
forward reads input data and writes output data; backward reads output
grad and accumulates into input grad; calculate_gradient reads output
grad plus cached input and accumulates into parameter grads. A chain
runs layers forward in declaration order and backward in exact reverse,
then runs all calculate_gradient calls.
"""

from __future__ import annotations

from .errors import ConfigError, StateError
from .tensor import Variable

TRAIN = "train"
INFER = "infer"


class ParamBlock:
    """A named trainable weight, registered once even when shared."""

    __slots__ = ("name", "var", "learnable")

    def __init__(self, name: str, var: Variable, learnable: bool = True):
        self.name = name
        self.var = var
        self.learnable = learnable

    def __repr__(self):
        return f"ParamBlock({self.name!r}, shape={self.var.shape}, learnable={self.learnable})"


class Layer:
    """Base layer contract. Subclasses set self.x (input) and self.y (output)."""

    def __init__(self):
        self.x: Variable | None = None
        self.y: Variable | None = None
        self.mode = TRAIN
        self._forward_done = False

    def forward(self):
        raise NotImplementedError

    def backward(self):
        raise NotImplementedError

    def calculate_gradient(self):
        # Most layers carry no parameters.
        pass

    def param_blocks(self) -> list[ParamBlock]:
        return []

    def output_vars(self) -> list[Variable]:
        """Variables this layer writes; their grads are per-pass scratch."""
        return [self.y] if self.y is not None else []

    def _require_forward(self):
        if not self._forward_done:
            raise StateError(f"{type(self).__name__}.backward called before forward")


class LayerChain:
    """Ordered list of layers; forward in order, backward in reverse.

    entry is the Variable feeding the first layer; exit is the last
    layer's output (or entry itself for an empty chain). The train/infer
    mode flag is chain-level and pushed to every layer (Dropout consults it).
    """

    def __init__(self, entry: Variable | None = None):
        self.layers: list[Layer] = []
        self.entry = entry
        self.mode = TRAIN

    @property
    def exit(self) -> Variable | None:
        return self.layers[-1].y if self.layers else self.entry

    def add(self, layer: Layer) -> Variable:
        """Append a layer and return its output Variable, Fig-3 style."""
        if layer.y is None:
            raise ConfigError(f"{type(layer).__name__} has no output Variable; not initialized")
        self.layers.append(layer)
        layer.mode = self.mode
        return layer.y

    def set_mode(self, mode: str):
        if mode not in (TRAIN, INFER):
            raise ConfigError(f"unknown mode {mode!r}")
        self.mode = mode
        for layer in self.layers:
            layer.mode = mode

    def forward(self) -> Variable:
        for layer in self.layers:
            layer.forward()
        return self.exit

    def backward(self):
        # Output grads inside the chain are scratch for this pass; only the
        # externally seeded exit grad, the entry grad, and parameter grads
        # persist. Rerunning backward therefore adds the identical
        # contribution again (accumulate semantics).
        exit_var = self.exit
        for layer in self.layers:
            for v in layer.output_vars():
                if v is not exit_var:
                    v.zero_grad()
        for layer in reversed(self.layers):
            layer.backward()
        for layer in reversed(self.layers):
            layer.calculate_gradient()

    def param_blocks(self) -> list[ParamBlock]:
        return collect_params(self.layers)


def collect_params(sources) -> list[ParamBlock]:
    """Declaration-ordered unique ParamBlocks from layers or chains.

    A block shared by several layers appears exactly once. Two distinct
    blocks carrying one name are a construction error.
    """
    seen_ids: set[int] = set()
    by_name: dict[str, ParamBlock] = {}
    out: list[ParamBlock] = []
    for src in sources:
        blocks = src.param_blocks() if hasattr(src, "param_blocks") else [src]
        for block in blocks:
            if id(block) in seen_ids:
                continue
            if block.name in by_name:
                raise ConfigError(f"duplicate parameter name {block.name!r}")
            seen_ids.add(id(block))
            by_name[block.name] = block
            out.append(block)
    return out
