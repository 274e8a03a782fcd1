"""Two-layer attention graph network that regresses per-class classifier weights.

Layer one runs two attention heads on the node inputs and concatenates their
outputs, followed by LeakyReLU. Layer two runs a single head and has no
activation, so its rows can be read directly as classifier weights (the last
coordinate being the bias).

Attention scores are a similarity between transformed node vectors (cosine or
negative squared Euclidean distance), softmax-normalized over each node's
neighborhood, which always includes the node itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DimensionError, TrainingDiverged, UsageError
from .graph import neighborhood

KERNELS = ("cosine", "euclidean")
LEAKY_SLOPE = 0.2
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class AttentionHead:
    weight: np.ndarray
    kernel: str = "cosine"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1:
            raise ConfigurationError(f"head weight must be 2-D with >= 1 row, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("head weight has non-finite entries")
        object.__setattr__(self, "weight", w)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass(frozen=True)
class ClassifierWeightSet:
    """Classifier vectors keyed by graph node; the last column is the bias."""

    nodes: tuple
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        nodes = tuple(int(i) for i in self.nodes)
        if v.ndim != 2 or v.shape[0] != len(nodes):
            raise DimensionError(f"{len(nodes)} nodes but vectors of shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise UsageError("classifier weights must be finite")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_pos", {k: i for i, k in enumerate(nodes)})

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __contains__(self, node):
        return node in self._pos

    def rows(self, nodes):
        missing = [k for k in nodes if k not in self._pos]
        if missing:
            raise UsageError(f"no classifier row for nodes {missing}")
        return self.vectors[[self._pos[k] for k in nodes]]

    def row(self, node):
        return self.rows([node])[0]


@dataclass(frozen=True)
class GcnModel:
    heads: tuple
    output: AttentionHead
    uniform: bool = False
    slope: float = field(default=LEAKY_SLOPE)

    def __post_init__(self):
        if len(self.heads) != 2:
            raise ConfigurationError("layer one needs exactly two heads")
        a, b = self.heads
        if a.in_dim != b.in_dim or a.out_dim != b.out_dim:
            raise ConfigurationError("layer-one heads must share shapes")
        if self.output.in_dim != 2 * a.out_dim:
            raise ConfigurationError(
                f"output head expects {self.output.in_dim} inputs, layer one yields {2 * a.out_dim}")

    @classmethod
    def init(cls, in_dim, out_dim, hidden=64, kernel="cosine", seed=0, uniform=False):
        """Glorot-uniform initialization from ``seed``."""
        rng = np.random.default_rng(seed)

        def glorot(rows, cols):
            limit = math.sqrt(6.0 / (rows + cols))
            return rng.uniform(-limit, limit, size=(rows, cols))

        heads = (AttentionHead(glorot(hidden, in_dim), kernel),
                 AttentionHead(glorot(hidden, in_dim), kernel))
        return cls(heads, AttentionHead(glorot(out_dim, 2 * hidden), kernel), uniform)

    @property
    def in_dim(self):
        return self.heads[0].in_dim

    @property
    def out_dim(self):
        return self.output.out_dim

    @property
    def kernel(self):
        return self.output.kernel

    def params(self):
        return [self.heads[0].weight, self.heads[1].weight, self.output.weight]

    def with_params(self, weights):
        w1a, w1b, w2 = weights
        return replace(
            self,
            heads=(replace(self.heads[0], weight=w1a), replace(self.heads[1], weight=w1b)),
            output=replace(self.output, weight=w2),
        )

    def forward(self, g, inputs=None):
        """Per-node outputs ``Z`` (``n x out_dim``)."""
        return forward(self, g, inputs)


def uniform_attention_mode(model):
    """Same weights, but every neighbor gets weight ``1 / |neighborhood|``."""
    return replace(model, uniform=True)


# ---------------------------------------------------------------- dense propagation


def attention_matrix(weight, features, mask, kernel="cosine", uniform=False):
    """Row-stochastic ``n x n`` attention matrix and the transformed features.

    Works on plain arrays or taped tensors.
    """
    transformed = ad.matmul(features, ad.transpose(weight))
    if uniform:
        return mask / mask.sum(axis=1, keepdims=True), transformed
    if kernel == "cosine":
        unit = ad.normalize_rows(transformed)
        scores = ad.matmul(unit, ad.transpose(unit))
    else:
        scores = ad.scale(ad.pairwise_sq_dists(transformed), -1.0)
    return ad.masked_softmax_rows(scores, mask), transformed


def propagate(weights, features, mask, kernel="cosine", uniform=False, slope=LEAKY_SLOPE):
    """Full two-layer pass for ``weights = (W1a, W1b, W2)``."""
    w1a, w1b, w2 = weights
    alpha_a, ta = attention_matrix(w1a, features, mask, kernel, uniform)
    alpha_b, tb = attention_matrix(w1b, features, mask, kernel, uniform)
    hidden = ad.leaky_relu(ad.concat_cols([ad.matmul(alpha_a, ta), ad.matmul(alpha_b, tb)]), slope)
    alpha_2, t2 = attention_matrix(w2, hidden, mask, kernel, uniform)
    return ad.matmul(alpha_2, t2)


def _node_inputs(model, g, inputs):
    x = g.vectors if inputs is None else inputs
    xv = x.value if isinstance(x, ad.Tensor) else np.asarray(x)
    if xv.shape != (g.n, model.in_dim):
        raise ConfigurationError(
            f"model expects {g.n} x {model.in_dim} node inputs, got {xv.shape}")
    return x


def forward(model, g, inputs=None):
    x = _node_inputs(model, g, inputs)
    return propagate(model.params(), x, g.neighborhood_mask(), model.kernel,
                     model.uniform, model.slope)


def hidden_features(model, g, inputs=None):
    """Activated layer-one output, i.e. the inputs of the output head."""
    x = _node_inputs(model, g, inputs)
    mask = g.neighborhood_mask()
    parts = []
    for head in model.heads:
        alpha, t = attention_matrix(head.weight, x, mask, head.kernel, model.uniform)
        parts.append(alpha @ t)
    return ad.leaky_relu(np.concatenate(parts, axis=1), model.slope)


# ---------------------------------------------------------------- per-node view


def attention_coefficients(head, g, features, i, uniform=False):
    """Attention weights of node ``i`` over ``neighborhood(g, i)``."""
    nb = neighborhood(g, i)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != head.in_dim:
        raise DimensionError(f"features have {features.shape[1]} columns, head expects {head.in_dim}")
    if uniform:
        return np.full(len(nb), 1.0 / len(nb))
    wi = head.weight @ features[i]
    if head.kernel == "cosine":
        scores = np.array([ad.cosine_similarity(wi, head.weight @ features[j]) for j in nb])
    else:
        scores = np.array([-ad.l2_distance(wi, head.weight @ features[j]) ** 2 for j in nb])
    return ad.softmax_rows(scores[None, :])[0]


def aggregate(head, g, features, i, uniform=False):
    """Attention-weighted sum of transformed neighbor vectors (pre-activation)."""
    alpha = attention_coefficients(head, g, features, i, uniform)
    features = np.asarray(features, dtype=np.float64)
    out = np.zeros(head.out_dim)
    for a, j in zip(alpha, neighborhood(g, i)):
        out += a * (head.weight @ features[j])
    return out


# ---------------------------------------------------------------- regression


def init_loss(z, gt, known):
    """Mean over known nodes of the element-averaged squared residual."""
    known = list(known)
    if not known:
        raise UsageError("init_loss needs at least one known node")
    target = gt.rows(known)
    zk = ad.take_rows(z, known)
    zv = zk.value if isinstance(zk, ad.Tensor) else zk
    if zv.shape != target.shape:
        raise DimensionError(f"outputs {zv.shape} vs ground truth {target.shape}")
    return ad.mean(ad.square(ad.sub(zk, target)))


def train_init(model, g, gt, known, lr=0.01, steps=2000, inputs=None):
    """Full-batch gradient descent on :func:`init_loss`.

    Returns ``(trained_model, trace)`` where ``trace[k]`` is the loss before
    update ``k`` and the last entry is the loss after the final update.
    """
    mask = g.neighborhood_mask()
    x = _node_inputs(model, g, inputs)
    weights = [w.copy() for w in model.params()]
    trace = []
    for step in range(steps + 1):
        tape = ad.GradientTape()
        params = [tape.watch(w) for w in weights]
        z = propagate(params, x, mask, model.kernel, model.uniform, model.slope)
        loss = init_loss(z, gt, known)
        value = loss.item()
        if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
            raise TrainingDiverged(step, value)
        trace.append(value)
        if step == steps:
            break
        grads = backward_list(tape, loss, params)
        weights = [w - lr * gw for w, gw in zip(weights, grads)]
    return model.with_params(weights), trace


def backward_list(tape, loss, params):
    grads = ad.backward(tape, loss)
    return [grads[p] for p in params]


# ---------------------------------------------------------------- checkpoints


def save_model(model, path):
    """Write shapes, kernel tag and float64 weights to one ``.npz`` file."""
    w1a, w1b, w2 = model.params()
    with open(path, "wb") as fh:
        np.savez(fh, w1a=w1a, w1b=w1b, w2=w2,
                 kernel=np.array(model.kernel), uniform=np.array(model.uniform),
                 slope=np.array(model.slope))


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        kernel = str(data["kernel"])
        heads = (AttentionHead(data["w1a"], kernel), AttentionHead(data["w1b"], kernel))
        return GcnModel(heads, AttentionHead(data["w2"], kernel),
                        uniform=bool(data["uniform"]), slope=float(data["slope"]))
