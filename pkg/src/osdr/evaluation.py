"""Top-1 accuracy on known, unknown and all target classes, plus the
top-k prediction and attention dumps used for inspection."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import UsageError
from .gcn import attention_matrix, hidden_features


@dataclass(frozen=True)
class EvalReport:
    known_acc: float
    unknown_acc: float
    all_acc: float
    per_class: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    fingerprint: str = ""
    seed: int | None = None

    def to_dict(self):
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["per_class"] = {int(k): v for k, v in d["per_class"].items()}
        return cls(**d)

    def table(self, name="model"):
        """Aligned text row in the Known / Unknown / all layout."""
        head = f"{'':<16}{'Known':>8}{'Unknown':>9}{'all':>8}"
        row = (f"{name:<16}{100 * self.known_acc:>8.1f}"
               f"{100 * self.unknown_acc:>9.1f}{100 * self.all_acc:>8.1f}")
        return head + "\n" + row


def fingerprint(obj):
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def predict(bb, x):
    """Top-1 class per sample; ``argmax`` resolves ties to the lowest index."""
    return np.argmax(bb.logits(np.asarray(x, dtype=np.float64)), axis=1)


def accuracy_report(pred, truth, known, unknown, config=None, seed=None):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    correct = pred == truth
    is_known = np.isin(truth, list(known))
    is_unknown = np.isin(truth, list(unknown))
    n_known, n_unknown = int(is_known.sum()), int(is_unknown.sum())
    ck, cu = int(correct[is_known].sum()), int(correct[is_unknown].sum())
    per_class = {}
    for k in sorted(set(truth.tolist())):
        sel = truth == k
        per_class[int(k)] = float(correct[sel].mean())
    return EvalReport(
        known_acc=ck / n_known if n_known else 0.0,
        unknown_acc=cu / n_unknown if n_unknown else 0.0,
        all_acc=(ck + cu) / truth.size,
        per_class=per_class,
        counts={"known": n_known, "unknown": n_unknown, "all": int(truth.size),
                "correct_known": ck, "correct_unknown": cu},
        fingerprint=fingerprint(config) if config is not None else "",
        seed=seed,
    )


def evaluate(bb, target, config=None, seed=None):
    if target.labels is None:
        raise UsageError("evaluate needs target ground-truth labels")
    return accuracy_report(predict(bb, target.features), target.labels,
                           bb.known, bb.unknown, config, seed)


def top_k_predictions(bb, x, k):
    """``k`` most probable ``(class, probability)`` pairs, ties by class index."""
    if not 1 <= k <= bb.n_classes:
        raise UsageError(f"k must be in [1, {bb.n_classes}], got {k}")
    probs = bb.responses(np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    order = np.lexsort((np.arange(probs.size), -probs))[:k]
    return [(int(c), float(probs[c])) for c in order]


def dump_attention(model, g, node, k, inputs=None):
    """Largest output-layer attention coefficients of ``node``, with names.

    ``k`` larger than the neighborhood is truncated to its size.
    """
    if not 0 <= node < g.n:
        raise UsageError(f"node index {node} out of range [0, {g.n})")
    hidden = hidden_features(model, g, inputs)
    alpha, _ = attention_matrix(model.output.weight, hidden, g.neighborhood_mask(),
                                model.kernel, model.uniform)
    nb = sorted(g.neighbors(node) + (node,))
    coeffs = alpha[node, nb]
    order = np.lexsort((np.array(nb), -coeffs))[:k]
    return [(g.names[nb[i]], float(coeffs[i])) for i in order]
