"""Small MLP feature extractor with analytic forward/backward passes.

The extractor is a chain of linear layers with ReLU between them and an
identity on the final (feature) layer; logits are ``features @ V.T`` against
the classifier.  Features are not normalized here; losses that need a
direction normalize themselves.

Flattening order (used by aggregation, the proximal penalty, and
checkpoints): for each layer in order, the weight matrix row-major, then the
bias; the classifier rows are appended iff the classifier is trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backend import get_backend
from .classifier import ClassifierMatrix
from .errors import ContractError, DimensionError
from .numerics import RngStream


@dataclass
class ModelParams:
    """Feature-extractor layer parameters plus the classifier."""

    weights: list  # [np.ndarray (out, in)]
    biases: list   # [np.ndarray (out,)]
    classifier: ClassifierMatrix

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def layer_sizes(self) -> tuple:
        return (self.input_dim,) + tuple(w.shape[0] for w in self.weights)

    def n_extractor_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def clone(self) -> "ModelParams":
        """Deep copy of the extractor; a frozen classifier is shared (it is
        immutable), a trainable one is copied."""
        cls = self.classifier if self.classifier.frozen else self.classifier.copy()
        return ModelParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            cls,
        )


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, for a batch of inputs.

    inputs[l] is the activation entering layer l (inputs[0] is the data);
    preacts[l] is W_l inputs[l] + b_l.  features is the final identity
    layer's output and logits = features @ V.T.
    """

    inputs: list    # [np.ndarray (B, in_l)]
    preacts: list   # [np.ndarray (B, out_l)]
    features: np.ndarray  # (B, d)
    logits: np.ndarray    # (B, C)

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]


@dataclass
class Gradients:
    """Per-layer extractor gradients; classifier is None when frozen."""

    weights: list
    biases: list
    classifier: np.ndarray | None = None


def init_mlp(layer_sizes, classifier: ClassifierMatrix, rng: RngStream) -> ModelParams:
    """He-initialized MLP whose final layer width equals the classifier's
    feature dimension.

    ``layer_sizes`` lists the input width followed by each layer's output
    width, e.g. (4, 8, 3) is 4 -> 8 -> 3.  A single-element spec (n,)
    denotes one square n -> n layer.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) == 0:
        raise DimensionError("layer_sizes must not be empty")
    if len(sizes) == 1:
        sizes = (sizes[0], sizes[0])
    if any(s < 1 for s in sizes):
        raise DimensionError(f"layer sizes must be positive, got {sizes}")
    if sizes[-1] != classifier.feature_dim:
        raise DimensionError(
            f"final layer width {sizes[-1]} must equal classifier feature dim "
            f"{classifier.feature_dim}"
        )
    weights = []
    biases = []
    for layer, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gen = rng.child("layer", layer).generator()
        w = gen.standard_normal((n_out, n_in)) * math.sqrt(2.0 / n_in)
        weights.append(np.ascontiguousarray(w))
        biases.append(np.zeros(n_out))
    return ModelParams(weights, biases, classifier)


def forward_batch(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    """Run a (B, input_dim) batch through the extractor and classifier."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(
            f"expected batch of shape (B, {params.input_dim}), got {x.shape}"
        )
    k = get_backend()
    inputs = [x]
    preacts = []
    act = x
    last = params.n_layers - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = k.affine_nt(act, w, b)
        preacts.append(pre)
        act = pre if layer == last else k.relu(pre)
        if layer != last:
            inputs.append(act)
    features = act
    logits = k.matmul_nn(features, np.ascontiguousarray(params.classifier.vectors.T))
    return ForwardTrace(inputs, preacts, features, logits)


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    """Single-sample forward pass (a batch of one)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D input, got shape {x.shape}")
    return forward_batch(params, x[None, :])


def features_batch(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Features only, for evaluation paths that do not need the trace."""
    return forward_batch(params, x).features


def backward_batch(
    params: ModelParams,
    trace: ForwardTrace,
    dfeatures: np.ndarray,
    dlogits: np.ndarray | None = None,
) -> Gradients:
    """Chain-rule gradients of a scalar loss summed over the batch.

    ``dfeatures`` holds per-sample dL/df rows (any 1/B scaling is the
    caller's concern).  When the classifier is trainable and ``dlogits`` is
    given, its gradient dL/dv_c = sum_b dlogits[b, c] * f[b] is returned too.
    """
    if len(trace.inputs) != params.n_layers or len(trace.preacts) != params.n_layers:
        raise ContractError("trace does not match the model's layer count")
    dfeatures = np.ascontiguousarray(dfeatures, dtype=np.float64)
    if dfeatures.shape != trace.features.shape:
        raise DimensionError(
            f"dfeatures shape {dfeatures.shape} != features shape {trace.features.shape}"
        )
    k = get_backend()
    n = params.n_layers
    dw = [None] * n
    db = [None] * n
    grad = dfeatures
    for layer in range(n - 1, -1, -1):
        dw[layer] = k.matmul_tn(grad, trace.inputs[layer])
        db[layer] = k.colsum(grad)
        if layer > 0:
            upstream = k.matmul_nn(grad, params.weights[layer])
            grad = k.relu_backward(upstream, trace.preacts[layer - 1])
    dcls = None
    if dlogits is not None and not params.classifier.frozen:
        dcls = k.matmul_tn(np.ascontiguousarray(dlogits, dtype=np.float64), trace.features)
    return Gradients(dw, db, dcls)


def flatten(params: ModelParams) -> np.ndarray:
    """Copy all parameters into one vector in the documented order."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    if not params.classifier.frozen:
        parts.append(params.classifier.vectors.ravel())
    return np.concatenate(parts)


def flatten_grads(params: ModelParams, grads: Gradients) -> np.ndarray:
    """Gradients in the same order as flatten (classifier iff trainable)."""
    parts = []
    for dw, db in zip(grads.weights, grads.biases):
        parts.append(dw.ravel())
        parts.append(db)
    if not params.classifier.frozen:
        if grads.classifier is None:
            parts.append(np.zeros(params.classifier.vectors.size))
        else:
            parts.append(grads.classifier.ravel())
    return np.concatenate(parts)


def unflatten(flat: np.ndarray, template: ModelParams) -> ModelParams:
    """Rebuild a ModelParams with the template's shapes from a flat vector."""
    flat = np.asarray(flat, dtype=np.float64)
    expected = template.n_extractor_params()
    if not template.classifier.frozen:
        expected += template.classifier.vectors.size
    if flat.shape != (expected,):
        raise DimensionError(f"expected flat length {expected}, got {flat.shape}")
    weights = []
    biases = []
    pos = 0
    for w, b in zip(template.weights, template.biases):
        weights.append(np.ascontiguousarray(flat[pos : pos + w.size].reshape(w.shape)))
        pos += w.size
        biases.append(flat[pos : pos + b.size].copy())
        pos += b.size
    if template.classifier.frozen:
        cls = template.classifier
    else:
        vec = flat[pos : pos + template.classifier.vectors.size]
        cls = ClassifierMatrix(
            np.ascontiguousarray(vec.reshape(template.classifier.vectors.shape)),
            template.classifier.kind,
            frozen=False,
        )
    return ModelParams(weights, biases, cls)
