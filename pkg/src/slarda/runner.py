"""Scenario orchestration: per-seed pipelines, scenario matrices, ablations,
sensitivity sweeps, and evaluation.

Scenarios are independent; the matrix runner can farm them out to worker
processes and merges immutable result records. Failures are isolated: a
failed scenario marks its cell and the rest of the matrix continues.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import storage
from .adapt import adapt_target
from .config import (
    ExperimentConfig,
    config_hash,
    config_to_dict,
    deep_merge,
    resolve_config,
)
from .data import (
    DomainDataset,
    WindowingSpec,
    make_synthetic_shift_pair,
    normalize_dataset,
    split_dataset,
)
from .models import ModelBundle, build_bundle
from .pretrain import pretrain_source

VARIANTS = ("full", "no_sl", "no_ar", "no_teacher", "source_only")

LAMBDA_SWEEP_RANGE = (0.0001, 1.0)
ZETA_SWEEP_RANGE = (0.1, 0.99)


class MissingInputError(FileNotFoundError):
    """A required checkpoint or raw-data directory is absent."""


@dataclass(frozen=True)
class ScenarioSpec:
    source: str
    target: str
    family: str = "synthetic"
    variant: str = "full"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source == self.target:
            raise ValueError(f"source and target must differ, both are {self.source!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def name(self) -> str:
        return f"{self.source}->{self.target}"


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    accuracies: list[float]            # percent, one per seed
    macro_f1s: list[float]             # percent, one per seed
    wall_clock_seconds: float
    config_hash: str
    error: Optional[str] = None

    def __post_init__(self):
        if self.error is None:
            if len(self.accuracies) != len(self.spec.seeds):
                raise ValueError(
                    f"{len(self.accuracies)} accuracies for {len(self.spec.seeds)} seeds"
                )
            for acc in itertools.chain(self.accuracies, self.macro_f1s):
                if not 0.0 <= acc <= 100.0:
                    raise ValueError(f"metric {acc} outside [0, 100]")

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean(self.macro_f1s))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def predict_target(bundle: ModelBundle, batch: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and softmax probability rows for a test batch.

    Only the encoder and classifier run (no context net, no discriminator).
    Argmax ties break to the lowest class index.
    """
    if bundle.role != "target":
        raise ValueError(f"inference path expects a target-role bundle, got {bundle.role!r}")
    bundle.eval()
    with torch.no_grad():
        probs = torch.softmax(bundle.logits(batch), dim=1).numpy()
    return probs.argmax(axis=1), probs


def accuracy_percent(preds: np.ndarray, labels: np.ndarray) -> float:
    return 100.0 * float((preds == labels).mean())


def macro_f1_percent(preds: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    """Unweighted mean per-class F1; a class with no predictions and no
    support contributes 0."""
    f1s = []
    for c in range(num_classes):
        tp = int(((preds == c) & (labels == c)).sum())
        fp = int(((preds == c) & (labels != c)).sum())
        fn = int(((preds != c) & (labels == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
    return 100.0 * float(np.mean(f1s))


def evaluate_bundle(bundle: ModelBundle, dataset: DomainDataset, split: str = "test") -> dict:
    x, y = dataset.split_arrays(split)
    if (y < 0).any():
        raise ValueError(f"{dataset.name} {split} split has unlabeled samples; cannot evaluate")
    preds, probs = predict_target(bundle, torch.as_tensor(x, dtype=torch.float32))
    return {
        "accuracy": accuracy_percent(preds, y),
        "macro_f1": macro_f1_percent(preds, y, dataset.num_classes),
        "n": len(y),
        "predictions": preds,
        "probabilities": probs,
    }


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def build_domain_pair(spec: ScenarioSpec, cfg: ExperimentConfig, seed: int,
                      ) -> tuple[DomainDataset, DomainDataset]:
    """Source/target datasets for one run, seeded for splits and generation."""
    ds_cfg = cfg.dataset
    if ds_cfg.family == "synthetic":
        synth = replace(ds_cfg.synthetic, seed=seed)
        return make_synthetic_shift_pair(synth)

    root = Path(ds_cfg.data_root or f"data/{ds_cfg.family}")
    windowing = None
    if ds_cfg.window_size is not None:
        windowing = WindowingSpec(window_size=ds_cfg.window_size,
                                  stride=ds_cfg.stride or ds_cfg.window_size)
    domains = {}
    for role, name in (("source", spec.source), ("target", spec.target)):
        domain_dir = root / name
        if not domain_dir.exists():
            raise MissingInputError(
                f"raw domain directory {domain_dir} is missing; place the {ds_cfg.family} "
                f"corpus there in the documented layout (metadata.txt + record files), "
                f"or generate a synthetic benchmark with "
                f"`slarda generate-synthetic --out {root}`"
            )
        ds = storage.load_domain(domain_dir, windowing=windowing, labeled=(role == "source"))
        splits = storage.load_domain_splits(domain_dir)
        if splits is not None:
            ds.splits = splits
            ds.validate()
        else:
            ds = split_dataset(ds, ds_cfg.split_ratios, seed=seed)
        if ds_cfg.normalize:
            ds = normalize_dataset(ds)
        domains[role] = ds
    return domains["source"], domains["target"]


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------

def apply_variant(doc: dict, variant: str) -> dict:
    """Resolve an ablation variant into config overrides."""
    if variant == "no_sl":
        return deep_merge(doc, {"pretrain": {"cpc_weight": 0.0}})
    if variant == "no_teacher":
        return deep_merge(doc, {"adapt": {"lambda_ca": 0.0}})
    if variant == "no_ar":
        return deep_merge(doc, {"adapt": {"disc_kind": "pooled"}})
    return doc


def _pretrain_cache_key(doc: dict, seed: int) -> str:
    relevant = {
        "dataset": doc["dataset"],
        "model": doc["model"],
        "pretrain": doc["pretrain"],
        "seed": seed,
    }
    return config_hash(relevant)


def pretrained_source_for_seed(spec: ScenarioSpec, cfg: ExperimentConfig, doc: dict,
                               seed: int, cache_dir: Optional[Path] = None,
                               ) -> tuple[ModelBundle, DomainDataset, DomainDataset]:
    """Pretrain (or load from cache) the source model for one seed."""
    source_ds, target_ds = build_domain_pair(spec, cfg, seed)
    if cache_dir is not None:
        ckpt = Path(cache_dir) / _pretrain_cache_key(doc, seed)
        if (ckpt / "manifest.yaml").exists():
            return ModelBundle.load(ckpt), source_ds, target_ds
    bundle = build_bundle(cfg.model, seed=seed, role="source")
    pre_cfg = replace(cfg.pretrain, seed=seed)
    bundle, _ = pretrain_source(bundle, source_ds, cfg.cpc, pre_cfg)
    if cache_dir is not None:
        bundle.save(Path(cache_dir) / _pretrain_cache_key(doc, seed))
    return bundle, source_ds, target_ds


def run_scenario(spec: ScenarioSpec, base_doc: dict,
                 cache_dir: Optional[Path] = None) -> ScenarioResult:
    """Full per-seed pipeline (pretrain -> adapt -> evaluate) for one scenario.

    The variant controls the pipeline: no_sl drops the contrastive pretraining
    term, no_ar swaps in the pooled fully-connected discriminator, no_teacher
    sets the class-conditional weight to zero, source_only skips adaptation.
    """
    torch.set_num_threads(1)  # keeps results identical across worker layouts
    doc = apply_variant(deep_merge(config_to_dict(base_doc), spec.overrides), spec.variant)
    cfg = resolve_config(doc)
    started = time.perf_counter()
    accuracies, macro_f1s = [], []
    for seed in spec.seeds:
        bundle, source_ds, target_ds = pretrained_source_for_seed(
            spec, cfg, doc, seed, cache_dir=cache_dir)
        if spec.variant == "source_only":
            target_model = bundle.clone(role="target")
        else:
            adapt_cfg = replace(cfg.adapt, seed=seed)
            target_model, _, _, _ = adapt_target(
                bundle, source_ds, target_ds, adapt_cfg,
                disc_config=cfg.model.discriminator,
            )
        scores = evaluate_bundle(target_model, target_ds, split="test")
        accuracies.append(scores["accuracy"])
        macro_f1s.append(scores["macro_f1"])
    return ScenarioResult(
        spec=spec,
        accuracies=accuracies,
        macro_f1s=macro_f1s,
        wall_clock_seconds=time.perf_counter() - started,
        config_hash=config_hash(doc),
    )


def ordered_pairs(domains: tuple[str, ...]) -> list[tuple[str, str]]:
    """All ordered (source, target) pairs: d domains -> d*(d-1) scenarios."""
    return [(s, t) for s in domains for t in domains if s != t]


def matrix_specs(domains, family: str, variant: str = "full",
                 seeds: tuple[int, ...] = (0, 1, 2, 3, 4)) -> list[ScenarioSpec]:
    return [
        ScenarioSpec(source=s, target=t, family=family, variant=variant, seeds=tuple(seeds))
        for s, t in ordered_pairs(tuple(domains))
    ]


def _run_spec_worker(args) -> ScenarioResult:
    spec, doc, cache_dir = args
    return run_scenario(spec, doc, cache_dir=cache_dir)


def run_matrix(specs: list[ScenarioSpec], base_doc: dict, workers: int = 1,
               cache_dir: Optional[Path] = None,
               runner: Optional[Callable] = None) -> list[ScenarioResult]:
    """Run every scenario, isolating failures into error-marked results."""
    if not specs:
        raise ValueError("need at least one scenario spec")
    results: list[ScenarioResult] = []
    if workers > 1 and runner is None:
        payloads = [(spec, config_to_dict(base_doc), cache_dir) for spec in specs]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_spec_worker, p) for p in payloads]
            for spec, future in zip(specs, futures):
                try:
                    results.append(future.result())
                except Exception as exc:  # failure isolation
                    results.append(ScenarioResult(
                        spec=spec, accuracies=[], macro_f1s=[],
                        wall_clock_seconds=0.0, config_hash="", error=str(exc)))
        return results
    run = runner or run_scenario
    for spec in specs:
        try:
            results.append(run(spec, base_doc, cache_dir=cache_dir))
        except Exception as exc:
            results.append(ScenarioResult(
                spec=spec, accuracies=[], macro_f1s=[],
                wall_clock_seconds=0.0, config_hash="", error=str(exc)))
    return results


def sensitivity_sweep(base_spec: ScenarioSpec, parameter: str, values,
                      base_doc: dict, cache_dir: Optional[Path] = None,
                      runner: Optional[Callable] = None,
                      ) -> list[tuple[float, ScenarioResult]]:
    """One scenario run per parameter value; values validated before any run."""
    ranges = {"lambda": LAMBDA_SWEEP_RANGE, "zeta": ZETA_SWEEP_RANGE}
    keys = {"lambda": "lambda_ca", "zeta": "confidence_threshold"}
    if parameter not in ranges:
        raise ValueError(f"parameter must be 'lambda' or 'zeta', got {parameter!r}")
    values = [float(v) for v in values]
    if not values:
        raise ValueError("need at least one sweep value")
    if sorted(values) != values:
        raise ValueError(f"sweep values must be sorted ascending, got {values}")
    low, high = ranges[parameter]
    for v in values:
        if not low <= v <= high:
            raise ValueError(f"{parameter}={v} outside legal range [{low}, {high}]")

    run = runner or run_scenario
    out = []
    for v in values:
        spec = replace(base_spec, overrides=deep_merge(
            base_spec.overrides, {"adapt": {keys[parameter]: v}}))
        out.append((v, run(spec, base_doc, cache_dir=cache_dir)))
    return out
