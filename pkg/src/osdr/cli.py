"""Command-line entry point.

Every command writes into ``--out``. Files are staged in a scratch
directory next to it and moved into place only after the whole command
succeeded, so a failed run leaves nothing behind.
"""

from __future__ import annotations

import csv
import json
import logging
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import kernels, synth
from .backbone import load_backbone, save_backbone
from .errors import OsdrError
from .evaluation import dump_attention, evaluate, top_k_predictions
from .gcn import load_model, save_model
from .matching import (SmoConfig, benchmark_matchers, filter_pairs, match_greedy,
                       write_pairs_csv)
from .pipeline import (ARMS, PipelineConfig, format_manifest, initial_backbone, load_manifest,
                       run_pipeline, run_stage_a, write_trace_csv)

log = logging.getLogger("osdr")

INSTANCES = sorted(synth.REFERENCE_INSTANCES)


class CommandFailed(click.ClickException):
    exit_code = 2


@contextmanager
def staged_output(out):
    """Yield a scratch directory whose files land in ``out`` on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        yield scratch
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    out.mkdir(exist_ok=True)
    for item in sorted(scratch.iterdir()):
        target = out / item.name
        if target.is_dir():
            shutil.rmtree(target)
        item.replace(target)
    scratch.rmdir()


def _fail(exc):
    raise CommandFailed(f"{type(exc).__name__}: {exc}") from exc


def resolve_config(config_path, instance, seed):
    """Manifest values, overridden by explicit flags. A seed must come from
    one of the two."""
    try:
        cfg = load_manifest(config_path) if config_path else None
    except (OsdrError, OSError) as exc:
        _fail(exc)
    if cfg is None:
        if seed is None:
            raise CommandFailed("a seed is required: pass --seed or a manifest with [run] seed")
        cfg = PipelineConfig()
    if instance is not None:
        cfg = replace(cfg, instance=instance)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if cfg.instance not in synth.REFERENCE_INSTANCES:
        raise CommandFailed(f"unknown instance {cfg.instance!r}; choose from {INSTANCES}")
    return cfg


def load_or_generate(cfg, data):
    if data:
        return synth.load_instance(data)
    return synth.generate(synth.reference_instance(cfg.instance))


def write_report(scratch, report, name):
    (scratch / "report.json").write_text(report.to_json() + "\n")
    (scratch / "report.txt").write_text(report.table(name) + "\n")


def common(fn):
    fn = click.option("--out", type=click.Path(file_okay=False), required=True,
                      help="Output directory.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Random seed.")(fn)
    fn = click.option("--instance", type=click.Choice(INSTANCES), default=None,
                      help="Reference synthetic instance.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                      default=None, help="Run manifest (INI).")(fn)
    return fn


data_option = click.option("--data", type=click.Path(file_okay=False), default=None,
                           help="Instance directory from gen-data (default: regenerate).")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Open-set domain recognition on synthetic desk-scale instances."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command("gen-data")
@click.option("--instance", type=click.Choice(INSTANCES), required=True)
@click.option("--seed", type=int, default=None,
              help="Data seed (default: the instance's pinned seed).")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def gen_data(instance, seed, out):
    """Write datasets, graph files and ground-truth classifiers."""
    spec = synth.reference_instance(instance)
    if seed is not None:
        spec = replace(spec, seed=seed)
    try:
        with staged_output(out) as scratch:
            inst = synth.generate(spec)
            synth.write_instance(inst, scratch)
    except OsdrError as exc:
        _fail(exc)
    click.echo(f"wrote {instance} (seed {inst.seed_used}) to {out}")


@main.command("train-gcn")
@common
@data_option
def train_gcn(config_path, instance, seed, out, data):
    """Stage A: fit the graph network to the known-class classifiers."""
    cfg = resolve_config(config_path, instance, seed)
    try:
        with staged_output(out) as scratch:
            inst = load_or_generate(cfg, data)
            model, weights, trace = run_stage_a(cfg, inst.graph, inst.gt_known)
            save_model(model, scratch / "gcn.npz")
            np.save(scratch / "stage_a_weights.npy", weights.vectors)
            with open(scratch / "stage_a_trace.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "init_loss"])
                w.writerows([k, repr(v)] for k, v in enumerate(trace))
            summary = {"final_loss": trace[-1], "steps": len(trace) - 1, "seed": cfg.seed,
                       "fingerprint": cfg.fingerprint(), "attention": cfg.attention}
            (scratch / "manifest.ini").write_text(format_manifest(cfg))
            (scratch / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    except OsdrError as exc:
        _fail(exc)
    click.echo(f"stage A final loss {trace[-1]:.3e}")


@main.command("match")
@common
@data_option
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Backbone checkpoint (default: the stage-A initialized backbone).")
@click.option("--tau", type=float, default=None, help="Fixed threshold (default: quantile).")
def match(config_path, instance, seed, out, data, checkpoint, tau):
    """Match target samples to source samples and dump the filtered pairs."""
    cfg = resolve_config(config_path, instance, seed)
    try:
        with staged_output(out) as scratch:
            inst = load_or_generate(cfg, data)
            if checkpoint:
                bb = load_backbone(checkpoint)
            else:
                _, weights, _ = run_stage_a(cfg, inst.graph, inst.gt_known)
                bb = initial_backbone(cfg, inst.graph, inst.gt_known, weights,
                                      inst.class_nodes, inst.known)
            xs, xt = inst.source.features, inst.target.features
            pairs = match_greedy(bb.features(xs), bb.features(xt))
            ps, pt = bb.responses(xs), bb.responses(xt)
            smo = cfg.smo if tau is None else replace(cfg.smo, tau=tau)
            raw = filter_pairs(pairs, ps, pt, np.inf)
            threshold = smo.threshold(np.array([p.resp_dist for p in raw]))
            pairs = filter_pairs(pairs, ps, pt, threshold)
            write_pairs_csv(pairs, scratch / "pairs.csv")
            n_pass = sum(p.passed for p in pairs)
            correct = sum(p.passed and inst.source.labels[p.source] == inst.truth[p.target]
                          for p in pairs)
            summary = {"tau": threshold, "pairs": len(pairs), "passed": n_pass,
                       "passed_same_class": int(correct), "seed": cfg.seed}
            (scratch / "match.json").write_text(json.dumps(summary, indent=2) + "\n")
    except OsdrError as exc:
        _fail(exc)
    click.echo(f"{n_pass}/{len(pairs)} pairs pass at tau={threshold:.4f}")


@main.command("bench-match")
@click.option("--n", "n", type=int, default=1000, show_default=True)
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def bench_match(n, dim, seed, out):
    """Time greedy against Hungarian matching on an n x n instance."""
    if n < 1 or dim < 1:
        raise CommandFailed("--n and --dim must be positive")
    with staged_output(out) as scratch:
        rep = benchmark_matchers(n, n, dim, seed)
        (scratch / "bench.json").write_text(rep.to_json() + "\n")
    ratio = rep.hungarian_ms / max(rep.greedy_ms, 1e-9)
    click.echo(f"greedy {rep.greedy_ms:.1f} ms (acc {rep.greedy_acc:.3f}), "
               f"hungarian {rep.hungarian_ms:.1f} ms (acc {rep.hungarian_acc:.3f}), "
               f"ratio {ratio:.1f}x [{kernels.BACKEND}]")


def _arm_name(cfg):
    for name, switches in ARMS.items():
        if switches == (cfg.attention, cfg.smo_enabled):
            return name
    raise AssertionError("unreachable")


@main.command("train-joint")
@common
@data_option
def train_joint(config_path, instance, seed, out, data):
    """Stage A, classifier initialization and joint training."""
    cfg = resolve_config(config_path, instance, seed)
    try:
        with staged_output(out) as scratch:
            inst = load_or_generate(cfg, data)
            res = run_pipeline(cfg, inst)
            save_backbone(res.joint.backbone, scratch / "backbone.npz")
            save_model(res.stage_a_model, scratch / "gcn.npz")
            write_trace_csv(res.joint.trace, scratch / "trace.csv")
            write_pairs_csv(res.joint.pairs, scratch / "pairs.csv")
            (scratch / "manifest.ini").write_text(format_manifest(cfg))
            write_report(scratch, res.report, _arm_name(cfg))
    except OsdrError as exc:
        _fail(exc)
    click.echo(res.report.table(_arm_name(cfg)))


@main.command("evaluate")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--instance", type=click.Choice(INSTANCES), default=None)
@data_option
@click.option("--out", type=click.Path(file_okay=False), required=True)
def evaluate_cmd(checkpoint, instance, data, out):
    """Score a backbone checkpoint on the labeled target domain."""
    if not (instance or data):
        raise CommandFailed("pass --instance or --data")
    try:
        with staged_output(out) as scratch:
            inst = (synth.load_instance(data) if data
                    else synth.generate(synth.reference_instance(instance)))
            bb = load_backbone(checkpoint)
            rep = evaluate(bb, inst.labeled_target(),
                           config={"checkpoint": Path(checkpoint).name,
                                   "instance": instance or str(data)})
            write_report(scratch, rep, Path(checkpoint).stem)
    except OsdrError as exc:
        _fail(exc)
    click.echo(rep.table(Path(checkpoint).stem))


def _parse_arms(text):
    names = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in names if a not in ARMS]
    if bad or not names:
        raise CommandFailed(f"unknown arms {bad}; choose from {list(ARMS)}")
    return names


SUMMARY_COLUMNS = ("arm", "known_mean", "known_std", "unknown_mean", "unknown_std",
                   "all_mean", "all_std", "seeds")


@main.command("ablate")
@common
@click.option("--seeds", "n_seeds", type=int, default=10, show_default=True,
              help="Seeds seed..seed+N-1 per arm.")
@click.option("--arms", default=",".join(ARMS), show_default=True,
              help="Comma-separated subset of the four arms.")
def ablate(config_path, instance, seed, out, n_seeds, arms):
    """Run the attention x matching grid over several seeds."""
    cfg = resolve_config(config_path, instance, seed)
    names = _parse_arms(arms)
    if n_seeds < 1:
        raise CommandFailed("--seeds must be >= 1")
    t0 = time.perf_counter()
    try:
        with staged_output(out) as scratch:
            inst = synth.generate(synth.reference_instance(cfg.instance))
            runs = []
            for name in names:
                arm_cfg = cfg.arm(*ARMS[name])
                for s in range(cfg.seed, cfg.seed + n_seeds):
                    rep = run_pipeline(replace(arm_cfg, seed=s), inst).report
                    runs.append((name, s, rep))
                    log.info("%s seed %d: unknown %.3f", name, s, rep.unknown_acc)
            with open(scratch / "runs.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["arm", "seed", "known_acc", "unknown_acc", "all_acc"])
                for name, s, rep in runs:
                    w.writerow([name, s, repr(rep.known_acc), repr(rep.unknown_acc),
                                repr(rep.all_acc)])
            rows = []
            for name in names:
                reps = [r for a, _, r in runs if a == name]
                row = [name]
                for key in ("known_acc", "unknown_acc", "all_acc"):
                    vals = np.array([getattr(r, key) for r in reps])
                    row += [float(vals.mean()), float(vals.std())]
                rows.append(row + [len(reps)])
            with open(scratch / "summary.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(SUMMARY_COLUMNS)
                w.writerows([r[0]] + [repr(v) for v in r[1:-1]] + [r[-1]] for r in rows)
            table = [f"{'':<12}{'Known':>14}{'Unknown':>14}{'all':>14}"]
            for r in rows:
                cells = "".join(f"{100 * m:>8.1f} ±{100 * s:4.1f}" for m, s in
                                zip(r[1:7:2], r[2:7:2]))
                table.append(f"{r[0]:<12}{cells}")
            text = "\n".join(table)
            (scratch / "summary.txt").write_text(text + "\n")
            (scratch / "manifest.ini").write_text(format_manifest(cfg))
    except OsdrError as exc:
        _fail(exc)
    click.echo(text)
    click.echo(f"{len(runs)} runs in {time.perf_counter() - t0:.1f} s")


@main.command("inspect")
@click.option("--data", type=click.Path(file_okay=False), default=None)
@click.option("--instance", type=click.Choice(INSTANCES), default=None)
@click.option("--gcn", "gcn_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Graph-network checkpoint for attention dumps.")
@click.option("--node", default=None, help="Node name whose attention to dump.")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Backbone checkpoint for top-k predictions.")
@click.option("--sample", type=int, multiple=True, help="Target sample index (repeatable).")
@click.option("-k", "k", type=int, default=3, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def inspect_cmd(data, instance, gcn_path, node, checkpoint, sample, k, out):
    """Top-k attention coefficients of a node and top-k predictions of samples."""
    if not (instance or data):
        raise CommandFailed("pass --instance or --data")
    if not (gcn_path and node) and not (checkpoint and sample):
        raise CommandFailed("pass --gcn with --node, or --checkpoint with --sample")
    result = {}
    try:
        with staged_output(out) as scratch:
            inst = (synth.load_instance(data) if data
                    else synth.generate(synth.reference_instance(instance)))
            if gcn_path and node:
                model = load_model(gcn_path)
                coeffs = dump_attention(model, inst.graph, inst.graph.index(node), k)
                result["attention"] = {"node": node,
                                       "top": [{"neighbor": n, "alpha": a} for n, a in coeffs]}
            if checkpoint and sample:
                bb = load_backbone(checkpoint)
                xt = inst.target.features
                preds = []
                for i in sample:
                    if not 0 <= i < len(xt):
                        raise CommandFailed(f"sample {i} out of range [0, {len(xt)})")
                    top = top_k_predictions(bb, xt[i], k)
                    preds.append({"sample": i, "truth": int(inst.truth[i]),
                                  "top": [{"class": c, "prob": p} for c, p in top]})
                result["predictions"] = preds
            (scratch / "inspect.json").write_text(json.dumps(result, indent=2) + "\n")
    except OsdrError as exc:
        _fail(exc)
    click.echo(json.dumps(result, indent=2))


if __name__ == "__main__":
    main()
