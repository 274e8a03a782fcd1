"""Reproducible synthetic open-set instances.

Class prototypes sit on a sphere of radius ``separation``. Source samples
scatter around the prototypes of the known classes; target samples scatter
around rotated and translated prototypes of every class. Semantic vectors are
a random linear projection of the prototypes plus noise, and the class graph
is a balanced tree whose internal nodes are auxiliary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .backbone import DomainDataset, read_dataset, write_dataset
from .errors import ConfigurationError, UsageError
from .gcn import ClassifierWeightSet
from .graph import KnowledgeGraph, graph_paths, load_graph, save_graph, validate_reachability

log = logging.getLogger(__name__)

MIN_SOURCE_ACCURACY = 0.95
MAX_ATTEMPTS = 20


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 10
    openness: float = 0.2
    dim: int = 32
    source_per_class: int = 60
    target_per_class: int = 60
    shift_norm: float = 3.0
    shift_angle: float = 0.3
    separation: float = 6.0
    noise: float = 1.0
    semantic_dim: int = 16
    semantic_noise: float = 0.1
    branching: int = 3
    latent_dim: int = 0
    logit_scale: float = 10.0
    seed: int = 0

    @property
    def n_unknown(self):
        return int(math.floor(self.openness * self.n_classes + 0.5))

    @property
    def n_known(self):
        return self.n_classes - self.n_unknown

    def validate(self):
        if not 0.0 < self.openness < 1.0:
            raise ConfigurationError(f"openness must be in (0, 1), got {self.openness}")
        if self.n_unknown < 1 or self.n_known < 1:
            raise ConfigurationError(
                f"{self.n_classes} classes at openness {self.openness} leave "
                f"{self.n_known} known / {self.n_unknown} unknown")
        if self.dim < 2 or self.semantic_dim < 2:
            raise ConfigurationError("feature and semantic dims must be >= 2")
        if self.semantic_noise < 0 or self.noise < 0 or self.shift_norm < 0:
            raise ConfigurationError("noise levels and shift must be >= 0")
        if self.source_per_class < 1 or self.target_per_class < 1:
            raise ConfigurationError("need at least one sample per class")
        if not 0 <= self.latent_dim <= self.dim:
            raise ConfigurationError("latent_dim must be in [0, dim] (0 means full rank)")
        if self.logit_scale <= 0:
            raise ConfigurationError("logit_scale must be > 0")
        if self.branching < 2:
            raise ConfigurationError("branching must be >= 2")
        return self


# A strong shift (norm 6, rotation 0.5 rad) so that matching has something
# to correct, and rich low-noise semantics so that the graph carries signal.
_REFERENCE_WORLD = dict(shift_norm=6.0, shift_angle=0.5, semantic_dim=64, semantic_noise=0.05,
                        seed=7)

REFERENCE_INSTANCES = {
    "desk-i2awa-02": SynthSpec(n_classes=10, openness=0.2, **_REFERENCE_WORLD),
    "desk-i2awa-04": SynthSpec(n_classes=10, openness=0.4, **_REFERENCE_WORLD),
    "desk-i2cifar": SynthSpec(n_classes=15, openness=10 / 15, **_REFERENCE_WORLD),
}


def reference_instance(name):
    try:
        return REFERENCE_INSTANCES[name]
    except KeyError:
        raise UsageError(
            f"unknown instance {name!r}; choose from {sorted(REFERENCE_INSTANCES)}") from None


@dataclass(frozen=True)
class SynthInstance:
    spec: SynthSpec
    source: DomainDataset
    target: DomainDataset
    truth: np.ndarray
    graph: KnowledgeGraph
    gt_known: ClassifierWeightSet
    seed_used: int

    @property
    def known(self):
        return tuple(range(self.spec.n_known))

    @property
    def class_nodes(self):
        return tuple(range(self.spec.n_classes))

    def labeled_target(self):
        return replace(self.target, labels=self.truth)


def _rotation(rng, dim, angle):
    """Orthogonal map turning every vector by ``angle`` (odd dims keep one axis)."""
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    block = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    for k in range(0, dim - 1, 2):
        block[k:k + 2, k:k + 2] = [[c, -s], [s, c]]
    return q @ block @ q.T


def _tree(rng, n_classes, branching):
    """Balanced tree over shuffled class leaves; returns (n_aux, edges, children)."""
    level = list(rng.permutation(n_classes))
    edges, children = [], []
    next_id = n_classes
    while len(level) > 1:
        parents = []
        for start in range(0, len(level), branching):
            group = level[start:start + branching]
            parent = next_id
            next_id += 1
            children.append(group)
            edges.extend((parent, int(c)) for c in group)
            parents.append(parent)
        level = parents
    return next_id - n_classes, edges, children


def least_squares_classifiers(x, y, n_classes, scale=1.0):
    """One-vs-rest least squares onto ``scale``-valued one-hot targets; rows
    are ``[weights..., bias]`` per class."""
    design = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    onehot = scale * np.eye(n_classes)[y]
    coef, *_ = np.linalg.lstsq(design, onehot, rcond=None)
    return coef.T


def _draw(spec, seed):
    rng = np.random.default_rng(seed)
    d, lt, ls = spec.dim, spec.n_classes, spec.n_known
    if spec.latent_dim:
        basis, _ = np.linalg.qr(rng.normal(size=(d, spec.latent_dim)))
        protos = rng.normal(size=(lt, spec.latent_dim)) @ basis.T
    else:
        protos = rng.normal(size=(lt, d))
    protos *= spec.separation / np.linalg.norm(protos, axis=1, keepdims=True)
    rot = _rotation(rng, d, spec.shift_angle)
    direction = rng.normal(size=d)
    shift = spec.shift_norm * direction / np.linalg.norm(direction)
    target_protos = protos @ rot.T + shift

    ys = np.repeat(np.arange(ls), spec.source_per_class)
    xs = protos[ys] + spec.noise * rng.normal(size=(ys.size, d))
    yt = np.repeat(np.arange(lt), spec.target_per_class)
    xt = target_protos[yt] + spec.noise * rng.normal(size=(yt.size, d))
    # stored as float32 on disk, so generate on that grid
    xs = xs.astype(np.float32).astype(np.float64)
    xt = xt.astype(np.float32).astype(np.float64)

    proj = rng.normal(size=(spec.semantic_dim, d)) / math.sqrt(d)
    sem = protos @ proj.T / spec.separation
    sem = sem + spec.semantic_noise * rng.normal(size=sem.shape)
    n_aux, edges, children = _tree(rng, lt, spec.branching)
    vectors = list(sem)
    for group in children:
        mean = np.mean([vectors[c] for c in group], axis=0)
        vectors.append(mean + spec.semantic_noise * rng.normal(size=mean.shape))

    names = [f"class_{k:02d}" for k in range(lt)] + [f"aux_{k:02d}" for k in range(n_aux)]
    roles = ["known"] * ls + ["unknown"] * (lt - ls) + ["aux"] * n_aux
    graph = KnowledgeGraph(names, np.stack(vectors), edges, roles)
    gt = least_squares_classifiers(xs, ys, ls, spec.logit_scale)
    return xs, ys, xt, yt, graph, gt


def generate(spec):
    """Draw an instance; redraw with derived seeds until the least-squares
    source classifiers reach 95% training accuracy."""
    spec.validate()
    for attempt in range(MAX_ATTEMPTS):
        seed = spec.seed + 1000 * attempt
        xs, ys, xt, yt, graph, gt = _draw(spec, seed)
        design = np.concatenate([xs, np.ones((xs.shape[0], 1))], axis=1)
        acc = float(np.mean(np.argmax(design @ gt.T, axis=1) == ys))
        if acc >= MIN_SOURCE_ACCURACY:
            break
        log.warning("seed %d: source least-squares accuracy %.3f < %.2f, redrawing",
                    seed, acc, MIN_SOURCE_ACCURACY)
    else:
        raise ConfigurationError(
            f"no draw reached {MIN_SOURCE_ACCURACY:.0%} source accuracy in {MAX_ATTEMPTS} attempts")
    assert validate_reachability(graph) is None
    lt = spec.n_classes
    return SynthInstance(
        spec=spec,
        source=DomainDataset(xs, ys, lt, "source"),
        target=DomainDataset(xt, None, lt, "target"),
        truth=yt,
        graph=graph,
        gt_known=ClassifierWeightSet(range(spec.n_known), gt),
        seed_used=seed,
    )


def labeled_clusters(n_s, n_t, dim, n_classes, separation, shift, seed):
    """Two labeled Gaussian-cluster samples sharing class centers."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, dim))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    ys = np.arange(n_s) % n_classes
    yt = np.arange(n_t) % n_classes
    xs = centers[ys] + rng.normal(size=(n_s, dim))
    offset = rng.normal(size=dim)
    offset *= shift / max(np.linalg.norm(offset), 1e-12)
    xt = centers[yt] + offset + rng.normal(size=(n_t, dim))
    return xs, ys, xt, yt


def teacher_toy(seed):
    """Small graph whose known-node targets come from a random teacher model.

    Returns ``(graph, targets, known, student)``: the student has the same
    architecture as the teacher but a different initialization.
    """
    from .gcn import GcnModel

    rng = np.random.default_rng(42)
    n, c, hidden, out = 6, 4, 64, 2
    known = (0, 1, 3)
    roles = ["known" if i in known else "unknown" for i in range(n)]
    graph = KnowledgeGraph([f"n{i}" for i in range(n)], rng.normal(size=(n, c)),
                           [(0, 1), (1, 2), (2, 3), (3, 4), (1, 5)], roles)
    teacher = GcnModel.init(c, out, hidden=hidden, seed=1000 + seed)
    targets = ClassifierWeightSet(range(n), teacher.forward(graph))
    student = GcnModel.init(c, out, hidden=hidden, seed=seed)
    return graph, targets, known, student


def write_instance(inst, out_dir):
    """Write datasets, graph files, ground-truth classifiers and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(inst.source, out / "source.bin")
    write_dataset(inst.target, out / "target.bin")
    write_dataset(inst.labeled_target(), out / "target_truth.bin")
    save_graph(inst.graph, *graph_paths(out))
    np.save(out / "gt_known.npy", inst.gt_known.vectors)
    manifest = {"spec": asdict(inst.spec), "seed_used": inst.seed_used,
                "n_known": inst.spec.n_known, "n_unknown": inst.spec.n_unknown}
    (out / "instance.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_instance(directory):
    """Read back a directory written by :func:`write_instance`."""
    d = Path(directory)
    try:
        meta = json.loads((d / "instance.json").read_text())
    except FileNotFoundError:
        raise UsageError(f"{d} has no instance.json; run gen-data first") from None
    spec = SynthSpec(**meta["spec"]).validate()
    lt = spec.n_classes
    truth = read_dataset(d / "target_truth.bin", lt, "target")
    return SynthInstance(
        spec=spec,
        source=read_dataset(d / "source.bin", lt, "source"),
        target=read_dataset(d / "target.bin", lt, "target"),
        truth=truth.labels,
        graph=load_graph(*graph_paths(d)),
        gt_known=ClassifierWeightSet(range(spec.n_known), np.load(d / "gt_known.npy")),
        seed_used=int(meta["seed_used"]),
    )
