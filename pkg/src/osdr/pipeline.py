"""Two-stage training: regress classifier weights with the graph network,
then fine-tune extractor and classifier jointly on the weighted sum of
classification, transfer, balance and discrepancy losses."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .backbone import (Backbone, balance_from_probs, classify, cross_entropy, extract,
                       init_classifier_from_gcn, merge_weight_sets)
from .errors import ConfigurationError, TrainingDiverged, UsageError
from .evaluation import accuracy_report, fingerprint, predict
from .gcn import ClassifierWeightSet, GcnModel, propagate, train_init
from .graph import validate_reachability
from .matching import SmoConfig, discrepancy_loss, filter_pairs, match_greedy

TERMS = ("cls", "tran", "lb", "d")


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    tran: float = 1.0
    lb: float = 1.0
    d: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_tran: float
    l_lb: float
    l_d: float
    weights: LossWeights
    total: float

    @classmethod
    def from_terms(cls, terms, weights):
        vals = [float(terms.get(t, 0.0)) for t in TERMS]
        lams = [getattr(weights, t) for t in TERMS]
        total = 0.0
        for lam, v in zip(lams, vals):
            total += lam * v
        return cls(*vals, weights, total)


@dataclass(frozen=True)
class StageAConfig:
    lr: float = 0.05
    steps: int = 1500
    hidden: int = 64
    kernel: str = "cosine"


@dataclass(frozen=True)
class JointConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 0.05
    affine: bool = True
    refresh_unknown: bool = False
    transfer_hidden: int = 16
    transfer_steps: int = 300
    transfer_lr: float = 0.05

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    instance: str = "desk-i2awa-02"
    stage_a: StageAConfig = field(default_factory=StageAConfig)
    joint: JointConfig = field(default_factory=JointConfig)
    smo: SmoConfig = field(default_factory=SmoConfig)
    attention: bool = True
    smo_enabled: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def effective_weights(self):
        """Loss weights with the discrepancy term zeroed when matching is off."""
        return self.weights if self.smo_enabled else replace(self.weights, d=0.0)

    def arm(self, attention, smo):
        return replace(self, attention=attention, smo_enabled=smo)

    def to_dict(self):
        return asdict(self)

    def fingerprint(self):
        return fingerprint(self.to_dict())


ARMS = {
    "zGCN": (False, False),
    "zGCN+SMO": (False, True),
    "AGCN": (True, False),
    "AGCN-SMO": (True, True),
}


# ---------------------------------------------------------------- manifest


_SECTIONS = {
    "stage_a": StageAConfig,
    "joint": JointConfig,
    "smo": SmoConfig,
    "weights": LossWeights,
}


def _coerce(kind, text):
    text = text.strip()
    if kind is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if text.lower() in ("", "none"):
        return None
    return kind(text)


def _section(cls, items, name):
    hints = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in items:
        if key not in hints:
            raise ConfigurationError(f"[{name}] unknown key {key!r}")
        default = getattr(cls(), key)
        kind = type(default) if default is not None else float
        try:
            kwargs[key] = _coerce(kind, raw)
        except ValueError as exc:
            raise ConfigurationError(f"[{name}] {key}: {exc}") from None
    return cls(**kwargs)


def parse_manifest(text):
    """Parse ``key = value`` sections into a :class:`PipelineConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"bad manifest: {exc}") from None
    kwargs = {}
    for name in cp.sections():
        items = cp.items(name)
        if name == "run":
            for key, raw in items:
                if key == "seed":
                    try:
                        kwargs["seed"] = int(raw)
                    except ValueError:
                        raise ConfigurationError(f"[run] seed: not an integer: {raw!r}") from None
                elif key == "instance":
                    kwargs["instance"] = raw.strip()
                else:
                    raise ConfigurationError(f"[run] unknown key {key!r}")
        elif name == "ablation":
            for key, raw in items:
                if key not in ("attention", "smo"):
                    raise ConfigurationError(f"[ablation] unknown key {key!r}")
                try:
                    kwargs["attention" if key == "attention" else "smo_enabled"] = _coerce(bool, raw)
                except ValueError as exc:
                    raise ConfigurationError(f"[ablation] {key}: {exc}") from None
        elif name in _SECTIONS:
            kwargs[name] = _section(_SECTIONS[name], items, name)
        else:
            raise ConfigurationError(f"unknown manifest section [{name}]")
    return PipelineConfig(**kwargs)


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh.read())


def format_manifest(config):
    lines = ["[run]", f"instance = {config.instance}", f"seed = {config.seed}", "",
             "[ablation]", f"attention = {str(config.attention).lower()}",
             f"smo = {str(config.smo_enabled).lower()}", ""]
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in asdict(getattr(config, name)).items():
            if isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {'' if value is None else value}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------- stage A


def run_stage_a(config, g, gt_known):
    """Train the graph network on the known classes and harvest its output
    for every node. Returns ``(model, weights, trace)``."""
    missing = validate_reachability(g)
    if missing:
        raise UsageError(f"unknown nodes unreachable from known ones: {missing}")
    sa = config.stage_a
    model = GcnModel.init(g.dim, gt_known.dim, hidden=sa.hidden, kernel=sa.kernel,
                          seed=config.seed, uniform=not config.attention)
    model, trace = train_init(model, g, gt_known, list(gt_known.nodes), lr=sa.lr, steps=sa.steps)
    return model, ClassifierWeightSet(range(g.n), model.forward(g)), trace


def initial_backbone(config, g, gt_known, stage_a_weights, class_nodes, known):
    """Classifier rows from the known-class ground truth and, for the rest,
    from the graph network output."""
    bb = Backbone.create(len(class_nodes), known, gt_known.dim - 1, class_nodes,
                         affine=config.joint.affine)
    return init_classifier_from_gcn(bb, merge_weight_sets(gt_known, stage_a_weights))


# ---------------------------------------------------------------- joint stage


def classifier_rows(params):
    """Classifier weights with the bias appended, from a parameter mapping."""
    bias = params["psi_bias"]
    n = (bias.value if isinstance(bias, ad.Tensor) else np.asarray(bias)).shape[0]
    return ad.concat_cols([params["psi_weight"], ad.reshape(bias, (n, 1))])


def transfer_loss(model_weights, g, stage_a_inputs, psi_rows, class_nodes, known,
                  kernel="cosine", uniform=False, mask=None):
    """Mean squared gap between the graph network run on stage-A classifier
    vectors and the current classifier rows of the known classes."""
    known = list(known)
    if not known:
        raise UsageError("transfer_loss needs at least one known class")
    mask = g.neighborhood_mask() if mask is None else mask
    z = propagate(model_weights, stage_a_inputs, mask, kernel, uniform)
    zk = ad.take_rows(z, [class_nodes[k] for k in known])
    rk = ad.take_rows(psi_rows, known)
    return ad.mean(ad.square(ad.sub(zk, rk)))


def transfer_model(config, g, stage_a_weights, gt_known):
    """Graph network mapping stage-A classifier vectors to classifier vectors,
    pre-fit so that it reproduces the known-class ground truth."""
    jc = config.joint
    f = stage_a_weights.dim
    model = GcnModel.init(f, f, hidden=jc.transfer_hidden, kernel=config.stage_a.kernel,
                          seed=config.seed + 1, uniform=not config.attention)
    inputs = stage_a_weights.rows(range(g.n))
    model, _ = train_init(model, g, gt_known, list(gt_known.nodes), lr=jc.transfer_lr,
                          steps=jc.transfer_steps, inputs=inputs)
    return model


@dataclass
class JointResult:
    backbone: Backbone
    model: GcnModel
    trace: list
    pairs: list


def _epoch_pairs(bb_params, xs, xt, smo, unknown_unused=None):
    fs = extract(bb_params, xs)
    ft = extract(bb_params, xt)
    pairs = match_greedy(fs, ft)
    ps = ad.softmax_rows(classify(bb_params, fs))
    pt = ad.softmax_rows(classify(bb_params, ft))
    raw = filter_pairs(pairs, ps, pt, math.inf)
    tau = smo.threshold(np.array([p.resp_dist for p in raw]))
    return filter_pairs(pairs, ps, pt, tau)


def _loss_terms(params, gcn_w, weights, ctx, batch):
    """Active loss terms for one step; zero-weight terms are not computed."""
    terms = {}
    if weights.cls:
        xb, yb = ctx["xs"][batch], ctx["ys"][batch]
        terms["cls"] = cross_entropy(classify(params, extract(params, xb)), yb)
    if weights.tran:
        terms["tran"] = transfer_loss(gcn_w, ctx["g"], ctx["inputs"], classifier_rows(params),
                                      ctx["class_nodes"], ctx["known"], ctx["kernel"],
                                      ctx["uniform"], ctx["mask"])
    if weights.lb:
        probs = ad.softmax_rows(classify(params, extract(params, ctx["xt"])))
        terms["lb"] = balance_from_probs(probs, ctx["unknown"], ctx["ratio"])
    if weights.d and ctx["pairs"]:
        terms["d"] = discrepancy_loss(ctx["pairs"], extract(params, ctx["xs"]),
                                      extract(params, ctx["xt"]), ctx["reduction"])
    return terms


def _as_float(x):
    return float(x.value) if isinstance(x, ad.Tensor) else float(x)


def run_joint(config, bb, model, g, source, target, stage_a_weights, truth=None):
    """Minibatch SGD on the weighted total loss.

    Matching (when its weight is non-zero) is recomputed on the current
    features every ``rematch_period`` epochs. The returned trace holds one
    record per epoch, evaluated on the full data after the epoch's updates.
    """
    if source.labels is None:
        raise UsageError("source dataset must be labeled")
    weights = config.effective_weights
    jc = config.joint
    rng = np.random.default_rng(config.seed)
    ctx = {
        "xs": source.features, "ys": source.labels, "xt": target.features, "g": g,
        "inputs": stage_a_weights.rows(range(g.n)), "class_nodes": bb.class_nodes,
        "known": bb.known, "unknown": bb.unknown, "ratio": bb.unknown_ratio,
        "kernel": model.kernel, "uniform": model.uniform, "mask": g.neighborhood_mask(),
        "reduction": config.smo.reduction, "pairs": [],
    }
    params = dict(bb.params())
    gcn_w = list(model.params())
    n_s = len(source)
    trace = []
    step = 0
    for epoch in range(jc.epochs):
        if weights.d and epoch % config.smo.rematch_period == 0:
            ctx["pairs"] = _epoch_pairs(params, ctx["xs"], ctx["xt"], config.smo)
        order = rng.permutation(n_s)
        for start in range(0, n_s, jc.batch_size):
            batch = order[start:start + jc.batch_size]
            tape = ad.GradientTape()
            tp = {k: tape.watch(v) for k, v in params.items()}
            tg = [tape.watch(w) for w in gcn_w]
            terms = _loss_terms(tp, tg, weights, ctx, batch)
            total = None
            for name, term in terms.items():
                value = _as_float(term)
                if not math.isfinite(value):
                    raise TrainingDiverged(step, value, term=name)
                weighted = ad.scale(term, getattr(weights, name))
                total = weighted if total is None else ad.add(total, weighted)
            if total is None or not isinstance(total, ad.Tensor) or total.tape is not tape:
                step += 1
                continue
            grads = ad.backward(tape, total)
            params = {k: v - jc.lr * grads[tp[k]] for k, v in params.items()}
            gcn_w = [w - jc.lr * grads[t] for w, t in zip(gcn_w, tg)]
            step += 1
        if jc.refresh_unknown:
            z = propagate(gcn_w, ctx["inputs"], ctx["mask"], ctx["kernel"], ctx["uniform"])
            rows = z[[bb.class_nodes[k] for k in bb.unknown]]
            pw, pb = params["psi_weight"].copy(), params["psi_bias"].copy()
            pw[list(bb.unknown)] = rows[:, :-1]
            pb[list(bb.unknown)] = rows[:, -1]
            params["psi_weight"], params["psi_bias"] = pw, pb
        record = _epoch_record(epoch, params, gcn_w, weights, ctx, bb, truth)
        trace.append(record)
    final = bb.with_params(params)
    return JointResult(final, model.with_params(gcn_w), trace, ctx["pairs"])


def _epoch_record(epoch, params, gcn_w, weights, ctx, bb, truth):
    full = np.arange(ctx["xs"].shape[0])
    terms = {k: _as_float(v) for k, v in _loss_terms(params, gcn_w, weights, ctx, full).items()}
    breakdown = LossBreakdown.from_terms(terms, weights)
    accs = {"known_acc": float("nan"), "unknown_acc": float("nan"), "all_acc": float("nan")}
    if truth is not None:
        pred = np.argmax(classify(params, extract(params, ctx["xt"])), axis=1)
        rep = accuracy_report(pred, truth, bb.known, bb.unknown)
        accs = {"known_acc": rep.known_acc, "unknown_acc": rep.unknown_acc,
                "all_acc": rep.all_acc}
    return {"epoch": epoch, "breakdown": breakdown, **accs}


TRACE_COLUMNS = ("epoch", "l_cls", "l_tran", "l_lb", "l_d", "total",
                 "known_acc", "unknown_acc", "all_acc")


def trace_rows(trace):
    for rec in trace:
        b = rec["breakdown"]
        yield [rec["epoch"], b.l_cls, b.l_tran, b.l_lb, b.l_d, b.total,
               rec["known_acc"], rec["unknown_acc"], rec["all_acc"]]


def write_trace_csv(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace_rows(trace):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


# ---------------------------------------------------------------- whole run


@dataclass
class PipelineResult:
    config: PipelineConfig
    stage_a_model: GcnModel
    stage_a_weights: ClassifierWeightSet
    stage_a_trace: list
    initial: Backbone
    joint: JointResult
    report: object


def run_pipeline(config, inst):
    """Stage A, classifier initialization, joint stage and evaluation on one
    synthetic instance."""
    model, weights, trace_a = run_stage_a(config, inst.graph, inst.gt_known)
    bb0 = initial_backbone(config, inst.graph, inst.gt_known, weights,
                           inst.class_nodes, inst.known)
    tmodel = transfer_model(config, inst.graph, weights, inst.gt_known)
    joint = run_joint(config, bb0, tmodel, inst.graph, inst.source, inst.target, weights,
                      truth=inst.truth)
    report = accuracy_report(predict(joint.backbone, inst.target.features), inst.truth,
                             joint.backbone.known, joint.backbone.unknown,
                             config.to_dict(), config.seed)
    return PipelineResult(config, model, weights, trace_a, bb0, joint, report)
