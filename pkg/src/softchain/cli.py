"""Command-line entry points.

Commands: train, evaluate, explain, decode, benchmark, prep-countries,
mentionize. Every run is reproducible from its logged config hash and
seed; the data root comes from --data-root or the SOFTCHAIN_DATA
environment variable.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import datasets as ds
from .evaluation import auc_pr  # noqa: F401 (re-exported for scripting)
from .explain import decode_rules, explanation_dict, render_explanation
from .harness import (
    BENCH_CSV_HEADER,
    RunConfig,
    benchmark_dataset,
    evaluate_run,
    fresh_prover,
    from_preset,
    parse_config_file,
    run_training,
)
from .kb import ENT, KB, PRED, Atom, ParseError, parse_mention_templates, parse_triples
from .params import VocabMismatch, load_checkpoint, save_checkpoint


def _build_cfg(dataset, config, overrides) -> RunConfig:
    if dataset not in ds.PRESETS:
        raise click.ClickException(
            f"unknown dataset {dataset!r}; choose from {sorted(ds.PRESETS)}"
        )
    file_overrides = {}
    if config:
        try:
            file_overrides = parse_config_file(Path(config).read_text())
        except (OSError, ValueError) as exc:
            raise click.ClickException(str(exc))
    merged = {**file_overrides, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return from_preset(dataset, **merged)
    except TypeError as exc:
        raise click.ClickException(str(exc))


_shared = [
    click.option("--data-root", default=None, help="dataset directory root"),
    click.option("--seed", type=int, default=None),
    click.option("--k", type=int, default=None, help="embedding dimension"),
    click.option("--depth", type=int, default=None, help="maximum proof depth"),
    click.option("--k-facts", type=int, default=None, help="facts unified per goal"),
    click.option("--k-rules", type=int, default=None, help="rules unified per group"),
    click.option("--kernel-bandwidth", type=float, default=None),
    click.option("--threads", type=int, default=None, help="worker processes for evaluation"),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


@click.group()
def main() -> None:
    """Differentiable backward chaining over knowledge bases."""


@main.command()
@click.option("--dataset", required=True)
@click.option("--config", default=None, help="key=value config file")
@click.option("--out", default="checkpoint.npz", help="checkpoint path")
@click.option("--metrics", default=None, help="metrics CSV path")
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--l2", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--schedule", default=None, help="joint | rules-then-joint:R,J")
@click.option("--attention/--no-attention", default=None)
@click.option("--mention-encoder/--no-mention-encoder", default=None)
@click.option("--mention-fraction", type=float, default=None)
@click.option("--early-stop-patience", type=int, default=None)
@shared_options
def train(dataset, config, out, metrics, **overrides) -> None:
    """Train a model on a dataset preset and write a checkpoint."""
    cfg = _build_cfg(dataset, config, overrides)
    rows = ["epoch,loss,val_metric,seconds"]

    def log_epoch(entry) -> None:
        rows.append(f"{entry.epoch},{entry.loss:.6f},{entry.val_metric:.6f},{entry.seconds:.3f}")
        click.echo(rows[-1])

    try:
        run = run_training(cfg, on_epoch=log_epoch)
    except FileNotFoundError as exc:
        raise click.ClickException(f"missing dataset file: {exc}")
    save_checkpoint(out, run.store, run.result.opt, config={"run": cfg.__dict__})
    if metrics:
        Path(metrics).write_text("\n".join(rows) + "\n")
    click.echo(
        f"done: {len(run.result.history)} epochs, best val "
        f"{run.result.best_val:.4f} @ epoch {run.result.best_epoch}, "
        f"config {cfg.config_hash()}"
    )


def _load_run(checkpoint, dataset, data_root, mention_fraction, mention_seed):
    data = ds.load_dataset(
        dataset, data_root, mention_fraction=mention_fraction or 0.0,
        mention_seed=mention_seed or 0,
    )
    try:
        store, _opt, config = load_checkpoint(checkpoint, data.kb)
    except VocabMismatch as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    run_cfg = RunConfig(**config.get("run", {})) if config.get("run") else from_preset(dataset)
    return data, store, run_cfg


@main.command()
@click.option("--checkpoint", required=True)
@click.option("--dataset", required=True)
@click.option("--split", default="test", type=click.Choice(["valid", "test"]))
@click.option("--out", default=None, help="report JSON path")
@click.option("--mention-fraction", type=float, default=None)
@click.option("--mention-seed", type=int, default=None)
@shared_options
def evaluate(checkpoint, dataset, split, out, mention_fraction, mention_seed, **overrides) -> None:
    """Evaluate a checkpoint: AUC-PR for countries, MRR/HITS otherwise."""
    data, store, cfg = _load_run(checkpoint, dataset, overrides.get("data_root"), mention_fraction, mention_seed)
    report = evaluate_run(data, store, cfg, split)
    text = json.dumps(report, indent=1)
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command()
@click.option("--checkpoint", required=True)
@click.option("--dataset", required=True)
@click.option("--goal", required=True, help="e.g. 'locatedIn(country007, europe)'")
@click.option("--format", "fmt", default="text", type=click.Choice(["text", "json"]))
@click.option("--mention-fraction", type=float, default=None)
@click.option("--mention-seed", type=int, default=None)
@shared_options
def explain(checkpoint, dataset, goal, fmt, mention_fraction, mention_seed, **overrides) -> None:
    """Render the best proof of a goal."""
    data, store, cfg = _load_run(checkpoint, dataset, overrides.get("data_root"), mention_fraction, mention_seed)
    try:
        atom = parse_goal(goal, data.kb)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    prover = fresh_prover(data, store, cfg)
    result = prover.prove(atom)
    if fmt == "json":
        click.echo(json.dumps(explanation_dict(atom, result, data.kb, store, prover.kcfg), indent=1))
    else:
        click.echo(render_explanation(atom, result, data.kb, store, prover.kcfg))


@main.command()
@click.option("--checkpoint", required=True)
@click.option("--dataset", required=True)
@click.option("--top", type=int, default=20)
@click.option("--min-confidence", type=float, default=0.5)
@click.option("--format", "fmt", default="text", type=click.Choice(["text", "json"]))
@click.option("--mention-fraction", type=float, default=None)
@click.option("--mention-seed", type=int, default=None)
@shared_options
def decode(checkpoint, dataset, top, min_confidence, fmt, mention_fraction, mention_seed, **overrides) -> None:
    """Decode rule templates to their nearest known predicates."""
    data, store, cfg = _load_run(checkpoint, dataset, overrides.get("data_root"), mention_fraction, mention_seed)
    from .kernel import KernelConfig

    rules = decode_rules(store, data.kb, KernelConfig(cfg.kernel_bandwidth), min_confidence)[:top]
    if fmt == "json":
        payload = [{"rule": r.text, "confidence": r.confidence} for r in rules]
        click.echo(json.dumps(payload, indent=1))
    else:
        for r in rules:
            click.echo(f"{r.confidence:.4f}  {r.text}")


@main.command()
@click.option("--dataset", required=True)
@click.option("--grid", default="1,3,5", help="comma-separated k values (k_f = k_r)")
@click.option("--batches", type=int, default=10)
@click.option("--out", default=None, help="CSV path")
@shared_options
def benchmark(dataset, grid, batches, out, **overrides) -> None:
    """Timed training batches: pruned grid points plus an exhaustive
    reference; reports examples/second and peak memory."""
    cfg = _build_cfg(dataset, None, overrides)
    points = [(int(x), int(x)) for x in grid.split(",") if x.strip()]
    records = benchmark_dataset(cfg, points, batches=batches)
    lines = [BENCH_CSV_HEADER] + [r.csv_row() for r in records]
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    click.echo(text)


@main.command("prep-countries")
@click.option("--data-root", default=None)
@click.option("--level", default="S1", type=click.Choice(["S1", "S2", "S3"]))
@click.option("--out", default=None, help="directory for the task TSVs")
def prep_countries(data_root, level, out) -> None:
    """Materialise the countries task files for one difficulty level."""
    from .kb import build_countries_task

    ddir = ds.ensure_dataset(f"countries-{level.lower()}", data_root)
    raw = KB()
    parse_triples((ddir / "raw.tsv").read_text(), raw)
    split = json.loads((ddir / "split.json").read_text())
    train_kb, eval_sets = build_countries_task(raw, level, split["test"], split["valid"])
    out_dir = Path(out) if out else ddir.parent / f"countries_{level.lower()}"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train.tsv").write_text(train_kb.to_triples_text())
    for name in ("valid", "test"):
        lines = [
            f"{raw.vocab.name(atom.args[0])}\t{raw.pred_str(atom.pred)}\t{raw.vocab.name(atom.args[1])}"
            for atom, label in eval_sets[name]
            if label
        ]
        (out_dir / f"{name}.tsv").write_text("\n".join(lines) + "\n")
    click.echo(f"wrote {out_dir}")


@main.command()
@click.option("--in", "in_path", required=True, help="input triples TSV")
@click.option("--out", "out_path", required=True, help="output triples TSV")
@click.option("--mentions", required=True, help="mention template TSV")
@click.option("--fraction", type=float, default=0.5)
@click.option("--seed", type=int, default=0)
def mentionize(in_path, out_path, mentions, fraction, seed) -> None:
    """Replace a fraction of facts with textual mention facts."""
    from .kb import mentionize as mentionize_kb

    kb = KB()
    try:
        parse_triples(Path(in_path).read_text(), kb)
        templates = parse_mention_templates(Path(mentions).read_text())
        out_kb = mentionize_kb(kb, fraction, templates, seed)
    except (ParseError, ValueError) as exc:
        raise click.ClickException(str(exc))
    Path(out_path).write_text(out_kb.to_triples_text())
    click.echo(f"wrote {out_path} ({len(out_kb.facts)} facts)")


def parse_goal(text: str, kb: KB) -> Atom:
    """Parse 'pred(subject, object)' against a KB's vocabulary."""
    text = text.strip()
    if not (text.endswith(")") and "(" in text):
        raise ValueError(f"cannot parse goal {text!r}; expected pred(a, b)")
    pred_s, rest = text.split("(", 1)
    args = [a.strip() for a in rest[:-1].split(",")]
    if len(args) != 2:
        raise ValueError("goals are binary: pred(a, b)")
    pred = kb.vocab.lookup(PRED, pred_s.strip())
    if pred is None:
        raise ValueError(f"unknown predicate {pred_s.strip()!r}")
    terms = []
    for a in args:
        sym = kb.vocab.lookup(ENT, a)
        if sym is None:
            raise ValueError(f"unknown entity {a!r}")
        terms.append(sym)
    return Atom(pred, tuple(terms))


if __name__ == "__main__":
    main()
