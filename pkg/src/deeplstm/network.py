"""Deep bidirectional LSTM classifier.

The stack alternates bidirectional LSTM layers and per-timestep feedforward
layers and ends with a bidirectional LSTM layer. The classifier projects the
forward and backward outputs of the last layer at every timestep, sums the
projections over the whole sequence and applies a softmax:

    o = sum_t (W_fwd h_fwd_t + W_bwd h_bwd_t + b)

Class indices are 0-based throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cooccurrence import RegConfig, partition_groups, penalty_subgradient, penalty_value
from .recurrent import (
    BidirectionalCache,
    DropoutMasks,
    FeedforwardParams,
    LstmParams,
    bidirectional_backward,
    bidirectional_forward,
    feedforward_backward,
    feedforward_forward,
    masks_sample,
)
from .tensor_core import ShapeError, as_matrix, as_vector

__all__ = [
    "LayerSpec",
    "NetworkConfig",
    "ClassifierParams",
    "SequenceSample",
    "ForwardCache",
    "Network",
    "forward",
    "backward",
    "class_probabilities",
    "nll_loss",
    "loss_and_gradients",
    "total_loss",
    "predict",
    "sample_masks",
    "network_penalty",
    "network_penalty_subgradient",
]

LAYER_KINDS = ("blstm", "feedforward")


@dataclass
class LayerSpec:
    kind: str
    units: int
    dropout: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        if int(self.units) < 1:
            raise ValueError("layer width must be positive")
        self.units = int(self.units)
        if self.dropout and self.kind != "blstm":
            raise ValueError("dropout is only defined for blstm layers")

    @property
    def output_width(self) -> int:
        return 2 * self.units if self.kind == "blstm" else self.units


@dataclass
class NetworkConfig:
    input_dim: int
    num_classes: int
    layers: list = field(default_factory=list)
    dropout_p: float = 0.2
    diagonal_peephole: bool = False
    init_scale: float = 0.1
    forget_bias: float = 1.0

    def __post_init__(self):
        self.layers = [l if isinstance(l, LayerSpec) else LayerSpec(**l) for l in self.layers]
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.layers[-1].kind != "blstm":
            raise ValueError("the last layer must be a blstm layer (the classifier reads it)")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("input_dim must be >= 1 and num_classes >= 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    def input_width(self, index: int) -> int:
        return self.input_dim if index == 0 else self.layers[index - 1].output_width

    def with_dropout(self, index: int) -> "NetworkConfig":
        """Copy with dropout enabled on layer ``index`` and its width doubled."""
        layers = [LayerSpec(**asdict(l)) for l in self.layers]
        spec = layers[index]
        if spec.kind != "blstm":
            raise ValueError("dropout is only defined for blstm layers")
        if not spec.dropout:
            layers[index] = LayerSpec("blstm", spec.units * 2, True)
        d = self.to_dict()
        d["layers"] = layers
        return NetworkConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [asdict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def standard(cls, input_dim: int, num_classes: int,
              widths: Sequence[int] = (100, 100, 110, 110, 200)) -> "NetworkConfig":
        """Five-layer stack of the SBU setting (dropout on the last blstm layer)."""
        kinds = ["blstm", "feedforward", "blstm", "feedforward", "blstm"]
        layers = [LayerSpec(k, w, dropout=(n == 4)) for n, (k, w) in enumerate(zip(kinds, widths))]
        return cls(input_dim=input_dim, num_classes=num_classes, layers=layers)


@dataclass
class ClassifierParams:
    W_fwd: np.ndarray
    W_bwd: np.ndarray
    b: np.ndarray

    def tensors(self):
        return [("W_fwd", self.W_fwd), ("W_bwd", self.W_bwd), ("b", self.b)]


@dataclass
class SequenceSample:
    frames: np.ndarray
    label: int

    def __post_init__(self):
        self.frames = as_matrix(self.frames, "frames")
        if self.frames.shape[0] < 1:
            raise ValueError("sequence must contain at least one frame")
        self.label = int(self.label)


@dataclass
class ForwardCache:
    mode: str
    inputs: list            # per-layer input matrices (T, J_l)
    outputs: list           # per-layer output matrices
    layer_caches: list      # BidirectionalCache or None for feedforward layers
    masks: dict             # layer index -> (fwd masks, bwd masks)
    logits: np.ndarray
    T: int


class Network:
    def __init__(self, config: NetworkConfig, layers: list, classifier: ClassifierParams):
        self.config = config
        self.layers = layers
        self.classifier = classifier

    @classmethod
    def initialize(cls, config: NetworkConfig, rng: np.random.Generator,
                   scale: Optional[float] = None) -> "Network":
        scale = config.init_scale if scale is None else scale
        layers = []
        for idx, spec in enumerate(config.layers):
            J = config.input_width(idx)
            if spec.kind == "blstm":
                layers.append(tuple(
                    LstmParams.initialize(spec.units, J, rng, scale, config.forget_bias,
                                          config.diagonal_peephole)
                    for _ in range(2)))
            else:
                layers.append(FeedforwardParams.initialize(spec.units, J, rng, scale))
        N = config.layers[-1].units
        C = config.num_classes
        classifier = ClassifierParams(
            rng.uniform(-scale, scale, size=(C, N)),
            rng.uniform(-scale, scale, size=(C, N)),
            np.zeros(C),
        )
        return cls(config, layers, classifier)

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        """All parameter arrays in declaration order (checkpoint order)."""
        out = []
        for idx, layer in enumerate(self.layers):
            if isinstance(layer, tuple):
                for tag, p in zip(("fwd", "bwd"), layer):
                    out.extend((f"L{idx}.{tag}.{n}", a) for n, a in p.tensors())
            else:
                out.extend((f"L{idx}.{n}", a) for n, a in layer.tensors())
        out.extend((f"out.{n}", a) for n, a in self.classifier.tensors())
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def copy(self) -> "Network":
        clone = Network.initialize(self.config, np.random.default_rng(0))
        dst = clone.parameters()
        for name, arr in self.named_parameters():
            dst[name][...] = arr
        return clone

    def penalty_terms(self, reg: RegConfig):
        """Yield ``(prefix, {unit: matrix}, GroupSpec)`` for every penalized matrix set."""
        for idx in reg.target_layers:
            if idx < 0 or idx >= len(self.layers):
                raise ValueError(f"regularized layer index {idx} out of range")
            K = reg.groups_for(idx)
            layer = self.layers[idx]
            if isinstance(layer, tuple):
                for tag, p in zip(("fwd", "bwd"), layer):
                    yield f"L{idx}.{tag}.", p.input_weights(), partition_groups(p.N, K)
            else:
                yield f"L{idx}.", {"h": layer.W}, partition_groups(layer.W.shape[0], K)


_UNIT_TO_NAME = {"i": "W_xi", "f": "W_xf", "c": "W_xc", "o": "W_xo", "h": "W"}


def network_penalty(net: Network, reg: Optional[RegConfig]) -> float:
    if reg is None or not reg.active:
        return 0.0
    return penalty_value(((mats, spec) for _, mats, spec in net.penalty_terms(reg)), reg)


def network_penalty_subgradient(net: Network, reg: Optional[RegConfig]) -> dict:
    if reg is None or not reg.active:
        return {}
    out = {}
    for prefix, mats, spec in net.penalty_terms(reg):
        for unit, W in mats.items():
            out[prefix + _UNIT_TO_NAME[unit]] = penalty_subgradient(W, spec, reg.lambda1, reg.lambda2)
    return out


def sample_masks(net: Network, T: int, rng: np.random.Generator) -> dict:
    """Fresh per-timestep masks for every dropout layer (fwd then bwd direction)."""
    masks = {}
    for idx, spec in enumerate(net.config.layers):
        if spec.kind == "blstm" and spec.dropout:
            masks[idx] = (masks_sample(rng, net.config.dropout_p, spec.units, T),
                          masks_sample(rng, net.config.dropout_p, spec.units, T))
    return masks


def _frames(sample) -> np.ndarray:
    return sample.frames if isinstance(sample, SequenceSample) else as_matrix(sample, "frames")


def forward(net: Network, sample, mode: str = "eval", rng: Optional[np.random.Generator] = None,
            masks: Optional[dict] = None):
    """Logits for one sequence, plus the cache needed by :func:`backward`.

    In ``train`` mode the dropout layers use ``masks`` when given, otherwise
    masks drawn from ``rng``; in ``eval`` mode they scale by ``1 - p``.
    """
    X = _frames(sample)
    T, J = X.shape
    if T == 0:
        raise ValueError("empty sequence")
    if J != net.config.input_dim:
        raise ShapeError(f"sample width {J} does not match network input width {net.config.input_dim}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and masks is None:
        if any(s.dropout for s in net.config.layers):
            if rng is None:
                raise ValueError("train mode with dropout needs an rng or explicit masks")
            masks = sample_masks(net, T, rng)
        else:
            masks = {}
    masks = masks or {}
    keep = 1.0 - net.config.dropout_p
    inputs, outputs, caches = [], [], []
    for idx, (spec, layer) in enumerate(zip(net.config.layers, net.layers)):
        inputs.append(X)
        if spec.kind == "blstm":
            if spec.dropout and mode == "train":
                X, cache = bidirectional_forward(layer[0], layer[1], X, masks=masks.get(idx, (None, None)))
            elif spec.dropout:
                X, cache = bidirectional_forward(layer[0], layer[1], X, keep_prob=keep)
            else:
                X, cache = bidirectional_forward(layer[0], layer[1], X)
        else:
            X, cache = feedforward_forward(layer, X), None
        outputs.append(X)
        caches.append(cache)
    N = net.config.layers[-1].units
    clf = net.classifier
    logits = clf.W_fwd @ X[:, :N].sum(axis=0) + clf.W_bwd @ X[:, N:].sum(axis=0) + T * clf.b
    return logits, ForwardCache(mode, inputs, outputs, caches, masks, logits, T)


def class_probabilities(logits) -> np.ndarray:
    z = as_vector(logits, "logits")
    e = np.exp(z - z.max())
    return e / e.sum()


def nll_loss(probs, label: int) -> float:
    probs = as_vector(probs, "probs")
    if not 0 <= int(label) < probs.shape[0]:
        raise IndexError(f"label {label} outside 0..{probs.shape[0] - 1}")
    return float(-np.log(probs[int(label)]))


def backward(net: Network, cache: ForwardCache, label: int) -> dict:
    """Gradient of the sequence's negative log-likelihood for every parameter."""
    if cache is None or cache.mode != "train":
        raise ValueError("backward needs the cache of a train-mode forward pass")
    if len(cache.outputs) != len(net.layers):
        raise ValueError("stale forward cache: layer count mismatch")
    C = net.config.num_classes
    if not 0 <= int(label) < C:
        raise IndexError(f"label {label} outside 0..{C - 1}")
    delta = class_probabilities(cache.logits)
    delta[int(label)] -= 1.0
    T = cache.T
    N = net.config.layers[-1].units
    top = cache.outputs[-1]
    clf = net.classifier
    grads = {
        "out.W_fwd": np.outer(delta, top[:, :N].sum(axis=0)),
        "out.W_bwd": np.outer(delta, top[:, N:].sum(axis=0)),
        "out.b": T * delta,
    }
    # every timestep receives the same error through the summed logits
    dY = np.tile(np.concatenate([clf.W_fwd.T @ delta, clf.W_bwd.T @ delta]), (T, 1))
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        if isinstance(layer, tuple):
            gf, gb, dY = bidirectional_backward(layer[0], layer[1], cache.layer_caches[idx], dY)
            grads.update({f"L{idx}.fwd.{k}": v for k, v in gf.items()})
            grads.update({f"L{idx}.bwd.{k}": v for k, v in gb.items()})
        else:
            g, dY = feedforward_backward(layer, cache.inputs[idx], cache.outputs[idx], dY)
            grads.update({f"L{idx}.{k}": v for k, v in g.items()})
    return grads


def loss_and_gradients(net: Network, sample: SequenceSample, rng=None, masks=None):
    """Train-mode forward + backward for one sample: (nll, grads)."""
    logits, cache = forward(net, sample, "train", rng=rng, masks=masks)
    loss = nll_loss(class_probabilities(logits), sample.label)
    return loss, backward(net, cache, sample.label)


def total_loss(net: Network, batch: Sequence[SequenceSample], reg: Optional[RegConfig] = None,
               mode: str = "eval", rng=None) -> float:
    """Mean negative log-likelihood over ``batch`` plus the co-occurrence penalty."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    nll = [nll_loss(class_probabilities(forward(net, s, mode, rng=rng)[0]), s.label) for s in batch]
    return float(np.mean(nll)) + network_penalty(net, reg)


def predict(net: Network, sample) -> int:
    """Most probable class (eval mode); ties go to the lowest index."""
    logits, _ = forward(net, sample, "eval")
    return int(np.argmax(class_probabilities(logits)))
