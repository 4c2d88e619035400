"""Command-line interface.

Subcommands: generate-synthetic, pretrain, adapt, evaluate, matrix, ablate,
sweep, significance. Global flags --config/--seed/--out/--workers apply to
whichever subcommand uses them.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
import torch
import yaml

from . import report, storage
from .adapt import adapt_target
from .config import config_to_dict, load_config
from .models import ModelBundle, build_bundle
from .pretrain import pretrain_source
from .runner import (
    MissingInputError,
    ScenarioSpec,
    build_domain_pair,
    evaluate_bundle,
    matrix_specs,
    run_matrix,
    run_scenario,
    sensitivity_sweep,
)
from .stats import wilcoxon_signed_rank


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="Layered YAML config file.")
@click.option("--seed", type=int, default=None, help="Override every phase seed.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None,
              help="Output directory.")
@click.option("--workers", type=int, default=None, help="Parallel scenario workers.")
@click.pass_context
def main(ctx, config_path, seed, out_dir, workers):
    """Time-series domain adaptation toolkit."""
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, seed=seed, out_dir=out_dir, workers=workers)


def _load(ctx, family=None):
    overrides = {}
    if ctx.obj.get("seed") is not None:
        s = ctx.obj["seed"]
        overrides = {"pretrain": {"seed": s}, "adapt": {"seed": s},
                     "runner": {"seeds": [s]}}
        if family == "synthetic" or family is None:
            overrides["dataset"] = {"synthetic": {"seed": s}}
    try:
        return load_config(ctx.obj.get("config_path"), family=family, overrides=overrides)
    except ValueError:
        if overrides.pop("dataset", None) is None:
            raise
        # non-synthetic config: drop the synthetic seed override and retry
        return load_config(ctx.obj.get("config_path"), family=family, overrides=overrides)


def _out(ctx, default: str) -> Path:
    out = ctx.obj.get("out_dir") or Path(default)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(ctx, cfg) -> tuple[int, ...]:
    if ctx.obj.get("seed") is not None:
        return (ctx.obj["seed"],)
    return cfg.runner.seeds


def _workers(ctx, cfg) -> int:
    return ctx.obj.get("workers") or cfg.runner.workers


@main.command("generate-synthetic")
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="Synthetic spec file (defaults to the config's).")
@click.option("--format", "fmt", type=click.Choice(["bin", "csv"]), default="bin")
@click.pass_context
def generate_synthetic(ctx, spec_path, fmt):
    """Generate a synthetic domain-shift pair and write both domain dirs."""
    from .data import make_synthetic_shift_pair

    if spec_path is not None:
        spec = storage.load_synthetic_spec(spec_path)
        if ctx.obj.get("seed") is not None:
            spec = replace(spec, seed=ctx.obj["seed"])
    else:
        cfg, _ = _load(ctx, family="synthetic")
        spec = cfg.dataset.synthetic
    out = _out(ctx, "synthetic-data")
    source, target = make_synthetic_shift_pair(spec)
    storage.save_domain(source, out / "source", fmt=fmt)
    storage.save_domain(target, out / "target", fmt=fmt)
    storage.save_synthetic_spec(spec, out / "spec.yaml")
    click.echo(f"wrote {len(source.samples)} source / {len(target.samples)} target samples "
               f"to {out}")


@main.command()
@click.pass_context
def pretrain(ctx):
    """Pretrain the source model; writes a checkpoint dir plus metrics."""
    cfg, doc = _load(ctx)
    out = _out(ctx, "pretrain-out")
    seed = ctx.obj.get("seed")
    seed = cfg.pretrain.seed if seed is None else seed
    spec = ScenarioSpec(source="source", target="target", family=cfg.dataset.family)
    source_ds, _ = build_domain_pair(spec, cfg, seed)
    bundle = build_bundle(cfg.model, seed=seed, role="source")
    bundle, curves = pretrain_source(bundle, source_ds, cfg.cpc, replace(cfg.pretrain, seed=seed))
    bundle.save(out / "checkpoint")
    report.write_training_curves(curves, out / "metrics.csv")
    report.render_curves_figure(curves, out / "curves.png", "epoch",
                                ["sup_loss", "cpc_loss", "val_acc"])
    (out / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    click.echo(f"pretrained {cfg.pretrain.epochs} epochs; "
               f"best val_acc {max(c['val_acc'] for c in curves):.4f}; "
               f"checkpoint at {out / 'checkpoint'}")


@main.command()
@click.option("--source-ckpt", type=click.Path(path_type=Path), required=True)
@click.option("--target", "target_name", default="target",
              help="Target domain name (real families) or 'target' (synthetic).")
@click.pass_context
def adapt(ctx, source_ckpt, target_name):
    """Adapt the target encoder against the frozen pretrained source model."""
    cfg, doc = _load(ctx)
    out = _out(ctx, "adapt-out")
    if not (Path(source_ckpt) / "manifest.yaml").exists():
        raise click.ClickException(
            f"no checkpoint at {source_ckpt}; produce one with "
            f"`slarda --config <file> --out <dir> pretrain`")
    seed = ctx.obj.get("seed")
    seed = cfg.adapt.seed if seed is None else seed
    source_name = cfg.dataset.domains[0] if cfg.dataset.domains else "source"
    if target_name == source_name:
        source_name = next(d for d in cfg.dataset.domains if d != target_name)
    spec = ScenarioSpec(source=source_name, target=target_name, family=cfg.dataset.family)
    source_ds, target_ds = build_domain_pair(spec, cfg, seed)
    bundle = ModelBundle.load(source_ckpt)
    target_model, teacher, _, curves = adapt_target(
        bundle, source_ds, target_ds, replace(cfg.adapt, seed=seed),
        disc_config=cfg.model.discriminator)
    target_model.save(out / "target-checkpoint")
    teacher.bundle.save(out / "teacher-checkpoint")
    report.write_training_curves(
        curves, out / "metrics.csv",
        comments=["target_val_acc uses validation labels for monitoring only"])
    report.render_curves_figure(curves, out / "curves.png", "iteration",
                                ["disc_loss", "adv_loss", "ca_loss", "target_val_acc"])
    (out / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    click.echo(f"adapted {cfg.adapt.iterations} iterations; checkpoints at {out}")


@main.command()
@click.option("--ckpt", type=click.Path(path_type=Path), required=True)
@click.option("--domain", "domain_name", default="target")
@click.option("--split", default="test", type=click.Choice(["train", "val", "test"]))
@click.pass_context
def evaluate(ctx, ckpt, domain_name, split):
    """Evaluate a checkpoint on a labeled split of a domain."""
    cfg, _ = _load(ctx)
    out = _out(ctx, "evaluate-out")
    if not (Path(ckpt) / "manifest.yaml").exists():
        raise click.ClickException(
            f"no checkpoint at {ckpt}; produce one with the pretrain or adapt subcommands")
    seed = ctx.obj.get("seed")
    seed = 0 if seed is None else seed
    if cfg.dataset.family == "synthetic":
        spec = ScenarioSpec(source="source", target="target", family="synthetic")
        source_ds, target_ds = build_domain_pair(spec, cfg, seed)
        dataset = source_ds if domain_name == "source" else target_ds
    else:
        other = next(d for d in cfg.dataset.domains if d != domain_name)
        spec = ScenarioSpec(source=other, target=domain_name, family=cfg.dataset.family)
        _, dataset = build_domain_pair(spec, cfg, seed)
    bundle = ModelBundle.load(ckpt)
    if bundle.role != "target":
        bundle = bundle.clone(role="target")
    scores = evaluate_bundle(bundle, dataset, split=split)
    rows = [{"index": i, "prediction": int(p),
             **{f"p{c}": f"{scores['probabilities'][i, c]:.6f}"
                for c in range(scores["probabilities"].shape[1])}}
            for i, p in enumerate(scores["predictions"])]
    report.write_csv(out / "predictions.csv", rows, list(rows[0].keys()))
    click.echo(f"{domain_name}/{split}: accuracy {scores['accuracy']:.2f}% "
               f"macro-F1 {scores['macro_f1']:.2f}% (n={scores['n']})")


@main.command()
@click.option("--variant", default="full")
@click.option("--cache-dir", type=click.Path(path_type=Path), default=None)
@click.pass_context
def matrix(ctx, variant, cache_dir):
    """Run every ordered source->target pair of the configured family."""
    cfg, doc = _load(ctx)
    out = _out(ctx, "matrix-out")
    if cfg.dataset.family == "synthetic":
        domains = ("source", "target")
        specs = [ScenarioSpec(source="source", target="target", family="synthetic",
                              variant=variant, seeds=_seeds(ctx, cfg))]
    else:
        domains = cfg.dataset.domains
        specs = matrix_specs(domains, cfg.dataset.family, variant, _seeds(ctx, cfg))
    click.echo(f"running {len(specs)} scenarios over domains {list(domains)}")
    results = run_matrix(specs, doc, workers=_workers(ctx, cfg), cache_dir=cache_dir)
    report.render_matrix_report(results, out)
    failed = [r for r in results if r.error is not None]
    for r in failed:
        click.echo(f"FAILED {r.spec.name}: {r.error}", err=True)
    click.echo(f"matrix written to {out} ({len(results) - len(failed)}/{len(results)} ok)")


@main.command()
@click.option("--cache-dir", type=click.Path(path_type=Path), default=None)
@click.pass_context
def ablate(ctx, cache_dir):
    """Run the full/no_sl/no_ar/no_teacher/source_only variants of one scenario."""
    cfg, doc = _load(ctx)
    out = _out(ctx, "ablate-out")
    seeds = _seeds(ctx, cfg)
    if cfg.dataset.family == "synthetic":
        source, target = "source", "target"
    else:
        source, target = cfg.dataset.domains[0], cfg.dataset.domains[1]
    specs = [ScenarioSpec(source=source, target=target, family=cfg.dataset.family,
                          variant=v, seeds=seeds)
             for v in ("full", "no_sl", "no_ar", "no_teacher", "source_only")]
    results = run_matrix(specs, doc, workers=_workers(ctx, cfg), cache_dir=cache_dir)
    report.render_ablation_report(results, out)
    for r in results:
        status = f"{r.mean_accuracy:.2f}% ± {r.std_accuracy:.2f}" if r.error is None \
            else f"FAILED: {r.error}"
        click.echo(f"{r.spec.variant:12s} {status}")
    click.echo(f"ablation written to {out}")


@main.command()
@click.option("--parameter", type=click.Choice(["lambda", "zeta"]), required=True)
@click.option("--values", required=True,
              help="Comma-separated ascending values, e.g. 0.001,0.005,0.05,1.0")
@click.option("--cache-dir", type=click.Path(path_type=Path), default=None)
@click.pass_context
def sweep(ctx, parameter, values, cache_dir):
    """Sensitivity sweep over the class-conditional weight or the confidence
    threshold."""
    cfg, doc = _load(ctx)
    out = _out(ctx, "sweep-out")
    value_list = [float(v) for v in values.split(",")]
    if cfg.dataset.family == "synthetic":
        source, target = "source", "target"
    else:
        source, target = cfg.dataset.domains[0], cfg.dataset.domains[1]
    base = ScenarioSpec(source=source, target=target, family=cfg.dataset.family,
                        variant="full", seeds=_seeds(ctx, cfg))
    results = sensitivity_sweep(base, parameter, value_list, doc, cache_dir=cache_dir)
    report.render_sweep_report(parameter, results, out)
    for value, res in results:
        status = f"{res.mean_accuracy:.2f}%" if res.error is None else f"FAILED: {res.error}"
        click.echo(f"{parameter}={value:g}: {status}")
    click.echo(f"sweep written to {out}")


@main.command()
@click.option("--a", "path_a", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--b", "path_b", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--column", default="accuracy")
def significance(path_a, path_b, column):
    """Two-sided Wilcoxon signed-rank test on paired per-scenario scores.

    Inputs are CSV files sharing a numeric column, paired row by row.
    """
    a = [float(row[column]) for row in report.read_csv(path_a) if row.get(column)]
    b = [float(row[column]) for row in report.read_csv(path_b) if row.get(column)]
    result = wilcoxon_signed_rank(np.asarray(a), np.asarray(b))
    kind = "exact" if result.exact else "normal-approximate"
    click.echo(f"W+ = {result.statistic:g}, n = {result.n_effective}, "
               f"two-sided p = {result.p_value:.6g} ({kind})")


if __name__ == "__main__":
    main()
