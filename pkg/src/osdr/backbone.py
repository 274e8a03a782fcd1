"""Feature extractor + linear classifier over all target classes, the
source classification loss, and the unknown-class balance loss."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, FormatError, InitializationError, UsageError

DOMAINS = ("source", "target")


@dataclass(frozen=True)
class DomainDataset:
    features: np.ndarray
    labels: np.ndarray | None
    n_classes: int
    domain: str = "source"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise FormatError(f"features must be a non-empty 2-D array, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise FormatError("features must be finite")
        if self.domain not in DOMAINS:
            raise FormatError(f"domain must be one of {DOMAINS}")
        object.__setattr__(self, "features", x)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (x.shape[0],):
                raise FormatError(f"{x.shape[0]} samples but labels of shape {y.shape}")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise FormatError(f"labels must lie in [0, {self.n_classes})")
            object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def without_labels(self):
        return replace(self, labels=None)


@dataclass(frozen=True)
class Backbone:
    """``phi_weight`` of ``None`` means an identity extractor.

    ``class_nodes[k]`` is the graph node of class ``k``; ``known`` and
    ``unknown`` partition the class indices.
    """

    psi_weight: np.ndarray
    psi_bias: np.ndarray
    known: tuple
    unknown: tuple
    class_nodes: tuple
    phi_weight: np.ndarray | None = None
    phi_bias: np.ndarray | None = None

    def __post_init__(self):
        w = np.asarray(self.psi_weight, dtype=np.float64)
        b = np.asarray(self.psi_bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError(f"classifier weight {w.shape} and bias {b.shape} disagree")
        object.__setattr__(self, "psi_weight", w)
        object.__setattr__(self, "psi_bias", b)
        known, unknown = tuple(self.known), tuple(self.unknown)
        if sorted(known + unknown) != list(range(w.shape[0])):
            raise UsageError("known and unknown must partition the class indices")
        object.__setattr__(self, "known", known)
        object.__setattr__(self, "unknown", unknown)
        object.__setattr__(self, "class_nodes", tuple(int(c) for c in self.class_nodes))
        if len(self.class_nodes) != w.shape[0]:
            raise UsageError("need one graph node per class")
        if self.phi_weight is not None:
            pw = np.asarray(self.phi_weight, dtype=np.float64)
            pb = (np.zeros(pw.shape[0]) if self.phi_bias is None
                  else np.asarray(self.phi_bias, dtype=np.float64))
            if pw.shape[0] != w.shape[1] or pb.shape != (pw.shape[0],):
                raise DimensionError(f"extractor {pw.shape} does not feed classifier {w.shape}")
            object.__setattr__(self, "phi_weight", pw)
            object.__setattr__(self, "phi_bias", pb)

    @classmethod
    def create(cls, n_classes, known, in_dim, class_nodes, affine=False):
        """Zero classifier; identity extractor, or an affine one set to identity."""
        known = tuple(known)
        unknown = tuple(k for k in range(n_classes) if k not in known)
        pw = np.eye(in_dim) if affine else None
        pb = np.zeros(in_dim) if affine else None
        return cls(np.zeros((n_classes, in_dim)), np.zeros(n_classes), known, unknown,
                   tuple(class_nodes), pw, pb)

    @property
    def n_classes(self):
        return self.psi_weight.shape[0]

    @property
    def feature_dim(self):
        return self.psi_weight.shape[1]

    @property
    def in_dim(self):
        return self.feature_dim if self.phi_weight is None else self.phi_weight.shape[1]

    @property
    def unknown_ratio(self):
        return len(self.unknown) / self.n_classes

    def params(self):
        """Trainable arrays by name (the extractor only when affine)."""
        p = {"psi_weight": self.psi_weight, "psi_bias": self.psi_bias}
        if self.phi_weight is not None:
            p["phi_weight"] = self.phi_weight
            p["phi_bias"] = self.phi_bias
        return p

    def with_params(self, params):
        return replace(self, **params)

    def classifier_rows(self):
        """Classifier rows with the bias appended as the last column."""
        return np.concatenate([self.psi_weight, self.psi_bias[:, None]], axis=1)

    def features(self, x):
        return extract(self.params(), x)

    def logits(self, x):
        return classify(self.params(), self.features(x))

    def responses(self, x):
        return responses(self, x)


def extract(params, x):
    """``phi(x)`` for a parameter mapping of arrays or tensors."""
    if "phi_weight" not in params:
        return x
    return ad.add_row(ad.matmul(x, ad.transpose(params["phi_weight"])), params["phi_bias"])


def classify(params, feats):
    return ad.add_row(ad.matmul(feats, ad.transpose(params["psi_weight"])), params["psi_bias"])


def _check_input(bb, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != bb.in_dim:
        raise DimensionError(f"backbone expects {bb.in_dim}-d inputs, got {x.shape[1]}")
    return x


def responses(bb, x):
    """Softmax class probabilities, one row per sample."""
    return ad.softmax_rows(bb.logits(_check_input(bb, x)))


def merge_weight_sets(primary, fallback):
    """Rows of ``primary`` where present, otherwise rows of ``fallback``."""
    from .gcn import ClassifierWeightSet

    nodes = sorted(set(primary.nodes) | set(fallback.nodes))
    rows = [primary.row(k) if k in primary else fallback.row(k) for k in nodes]
    return ClassifierWeightSet(nodes, np.stack(rows))


def init_classifier_from_gcn(bb, weights):
    """Set every classifier row (weight + bias) from a ClassifierWeightSet."""
    missing = [k for k, node in enumerate(bb.class_nodes) if node not in weights]
    if missing:
        raise InitializationError(f"no classifier weights for classes {missing}")
    rows = weights.rows(bb.class_nodes)
    if rows.shape[1] != bb.feature_dim + 1:
        raise InitializationError(
            f"weight rows have {rows.shape[1]} entries, expected {bb.feature_dim + 1}")
    return replace(bb, psi_weight=rows[:, :-1].copy(), psi_bias=rows[:, -1].copy())


# ---------------------------------------------------------------- losses


def cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.intp)
    logp = ad.log_softmax_rows(logits)
    return ad.scale(ad.sum(ad.gather(logp, np.arange(labels.size), labels)), -1.0 / labels.size)


def classification_loss(bb, source, params=None):
    """Mean cross-entropy of the source labels under ``bb``."""
    if source.labels is None:
        raise UsageError("classification_loss needs a labeled dataset")
    params = bb.params() if params is None else params
    x = _check_input(bb, source.features)
    return cross_entropy(classify(params, extract(params, x)), source.labels)


def unknown_mass(probs, unknown):
    """Mean over samples of the probability assigned to unknown classes."""
    n = (probs.value if isinstance(probs, ad.Tensor) else np.asarray(probs)).shape[0]
    return ad.scale(ad.sum(ad.take_cols(probs, list(unknown))), 1.0 / n)


def balance_from_probs(probs, unknown, ratio):
    """``-log(mass)`` while the unknown mass is below ``ratio``, else 0."""
    if not unknown:
        raise UsageError("balance loss needs at least one unknown class")
    mass = unknown_mass(probs, unknown)
    mv = float(mass.value if isinstance(mass, ad.Tensor) else mass)
    if mv >= ratio - 1e-12:
        return ad.Tensor(0.0) if isinstance(mass, ad.Tensor) else 0.0
    return ad.scale(ad.log(mass), -1.0)


def balance_loss(bb, target_batch, params=None):
    if not bb.unknown:
        raise UsageError("balance loss needs at least one unknown class")
    x = _check_input(bb, target_batch)
    params = bb.params() if params is None else params
    probs = ad.softmax_rows(classify(params, extract(params, x)))
    return balance_from_probs(probs, bb.unknown, bb.unknown_ratio)


# ---------------------------------------------------------------- dataset files

_HEADER = struct.Struct("<III")


def write_dataset(ds, path):
    """Binary layout: little-endian uint32 header (n, d, has_labels), then
    float32 features row-major, then int32 labels if present."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(len(ds), ds.dim, int(ds.labels is not None)))
        fh.write(ds.features.astype("<f4").tobytes())
        if ds.labels is not None:
            fh.write(ds.labels.astype("<i4").tobytes())


def read_dataset(path, n_classes, domain="source"):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    n, d, has_labels = _HEADER.unpack_from(data)
    expected = _HEADER.size + 4 * n * d + (4 * n if has_labels else 0)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    feats = np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<i4", count=n, offset=_HEADER.size + 4 * n * d)
    return DomainDataset(feats.reshape(n, d).astype(np.float64),
                         None if labels is None else labels.astype(np.int64), n_classes, domain)


def write_dataset_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = [f"f{k}" for k in range(ds.dim)]
        w.writerow(header + (["label"] if ds.labels is not None else []))
        for i, row in enumerate(ds.features):
            vals = [repr(float(v)) for v in row]
            w.writerow(vals + ([int(ds.labels[i])] if ds.labels is not None else []))


def read_dataset_csv(path, n_classes, domain="source"):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    has_labels = header[-1] == "label"
    try:
        values = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if has_labels:
        return DomainDataset(values[:, :-1], values[:, -1].astype(np.int64), n_classes, domain)
    return DomainDataset(values, None, n_classes, domain)


def load_dataset(path, n_classes, domain="source"):
    if str(path).endswith(".csv"):
        return read_dataset_csv(path, n_classes, domain)
    return read_dataset(path, n_classes, domain)


def save_backbone(bb, path):
    arrays = {k: v for k, v in bb.params().items()}
    with open(path, "wb") as fh:
        np.savez(fh, known=np.array(bb.known, dtype=np.int64),
                 unknown=np.array(bb.unknown, dtype=np.int64),
                 class_nodes=np.array(bb.class_nodes, dtype=np.int64), **arrays)


def load_backbone(path):
    with np.load(path, allow_pickle=False) as data:
        return Backbone(
            data["psi_weight"], data["psi_bias"],
            tuple(int(k) for k in data["known"]), tuple(int(k) for k in data["unknown"]),
            tuple(int(k) for k in data["class_nodes"]),
            data["phi_weight"] if "phi_weight" in data else None,
            data["phi_bias"] if "phi_bias" in data else None,
        )
