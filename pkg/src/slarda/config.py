"""Layered experiment configuration.

A config document has five sections (dataset, model, pretrain, adapt,
runner); a YAML file overrides the chosen family preset key by key. Every
training scalar appears by name with its family default: batch size 512 for
mfd and 128 for har/ssc, learning rate 1e-3 for ssc and 1e-4 for har/mfd,
weight decay 3e-4, class-conditional weight 0.005, teacher momentum 0.996,
confidence threshold 0.9, 60/20/20 splits, 5 seeds.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .adapt import AdaptConfig
from .data import SyntheticShiftSpec
from .models import ModelConfig
from .pretrain import CPCConfig, PretrainConfig
from .storage import synthetic_spec_from_dict, synthetic_spec_to_dict

FAMILIES = ("synthetic", "har", "ssc", "mfd")

# Frequency-shift presets for the synthetic benchmark, in cycles per window.
SHIFT_PRESETS = {"none": 0.0, "small": 1.5, "medium": 3.0, "large": 6.0}


@dataclass(frozen=True)
class DatasetConfig:
    family: str
    synthetic: Optional[SyntheticShiftSpec] = None
    data_root: Optional[str] = None
    domains: tuple[str, ...] = ()
    window_size: Optional[int] = None
    stride: Optional[int] = None
    normalize: bool = True
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown dataset family {self.family!r} (have {FAMILIES})")
        if self.family == "synthetic" and self.synthetic is None:
            raise ValueError("synthetic family needs a dataset.synthetic section")


@dataclass(frozen=True)
class RunnerConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig
    model: ModelConfig
    pretrain: PretrainConfig
    cpc: CPCConfig
    adapt: AdaptConfig
    runner: RunnerConfig


_SYNTHETIC_DEFAULTS = {
    "dataset": {
        "family": "synthetic",
        "normalize": False,
        "split_ratios": [0.6, 0.2, 0.2],
        "synthetic": {
            "num_classes": 3,
            "channels": 1,
            "length": 512,
            "class_signals": [
                {"base_freq": 8.0, "harmonic_amps": [1.0, 0.4]},
                {"base_freq": 16.0, "harmonic_amps": [1.0, 0.4]},
                {"base_freq": 24.0, "harmonic_amps": [1.0, 0.4]},
            ],
            "shift_kinds": ["frequency_offset"],
            "shift_magnitude": SHIFT_PRESETS["medium"],
            "samples_per_class": 120,
            "noise_std": 0.3,
            "seed": 0,
        },
    },
    "model": {
        "encoder": {"num_layers": 3, "channels": 8, "kernel_size": 16, "stride": 2,
                    "input_channels": 1},
        "context": {"hidden_dim": 32, "input_dim": 32, "num_layers": 1},
        "discriminator": {"feedforward_dim": 64, "input_channels": 32, "num_layers": 2,
                          "num_heads": 4, "hidden_dim": 64, "max_seq_len": 256},
    },
    "pretrain": {
        "epochs": 15,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "weight_decay": 3e-4,
        "cpc_weight": 1.0,
        "cpc": {"horizon": 4, "t_min": 0},
    },
    "adapt": {
        "iterations": 300,
        "batch_size": 32,
        "disc_learning_rate": 1e-3,
        "encoder_learning_rate": 1e-3,
        "weight_decay": 3e-4,
        "lambda_ca": 0.05,
        "teacher_momentum": 0.996,
        "confidence_threshold": 0.9,
        "train_classifier": False,
        "disc_kind": "attention",
    },
    "runner": {"seeds": [0, 1, 2, 3, 4], "workers": 1},
}

# Real-corpus presets. Epoch and iteration budgets are desk-scale documented
# defaults; the papers' corpora need far larger budgets and GPU time.
_REAL_DEFAULTS = {
    "har": {
        "dataset": {"family": "har", "data_root": "data/har",
                    "domains": ["A", "B", "C", "D"], "window_size": 128, "stride": 64,
                    "normalize": True, "split_ratios": [0.6, 0.2, 0.2]},
        "model": {
            "encoder": {"num_layers": 3, "channels": 16, "kernel_size": 8, "stride": 2,
                        "input_channels": 113},
            "context": {"hidden_dim": 16, "input_dim": 64, "num_layers": 1},
            "discriminator": {"feedforward_dim": 64, "input_channels": 64, "num_layers": 8,
                              "num_heads": 2, "hidden_dim": 64, "max_seq_len": 64},
        },
        "pretrain": {"epochs": 40, "batch_size": 128, "learning_rate": 1e-4,
                     "weight_decay": 3e-4, "cpc_weight": 1.0, "cpc": {"horizon": 4, "t_min": 0}},
        "adapt": {"iterations": 1000, "batch_size": 128, "disc_learning_rate": 1e-4,
                  "encoder_learning_rate": 1e-4, "weight_decay": 3e-4, "lambda_ca": 0.005,
                  "teacher_momentum": 0.996, "confidence_threshold": 0.9,
                  "train_classifier": False, "disc_kind": "attention"},
        "runner": {"seeds": [0, 1, 2, 3, 4], "workers": 1},
    },
    "ssc": {
        "dataset": {"family": "ssc", "data_root": "data/ssc",
                    "domains": ["EDF", "SH1", "SH2"], "window_size": 3000, "stride": 3000,
                    "normalize": True, "split_ratios": [0.6, 0.2, 0.2]},
        "model": {
            "encoder": {"num_layers": 3, "channels": 32, "kernel_size": 25, "stride": 3,
                        "input_channels": 1},
            "context": {"hidden_dim": 64, "input_dim": 128, "num_layers": 1},
            "discriminator": {"feedforward_dim": 512, "input_channels": 128, "num_layers": 8,
                              "num_heads": 4, "hidden_dim": 128, "max_seq_len": 128},
        },
        "pretrain": {"epochs": 40, "batch_size": 128, "learning_rate": 1e-3,
                     "weight_decay": 3e-4, "cpc_weight": 1.0, "cpc": {"horizon": 4, "t_min": 0}},
        "adapt": {"iterations": 1000, "batch_size": 128, "disc_learning_rate": 1e-3,
                  "encoder_learning_rate": 1e-3, "weight_decay": 3e-4, "lambda_ca": 0.005,
                  "teacher_momentum": 0.996, "confidence_threshold": 0.9,
                  "train_classifier": False, "disc_kind": "attention"},
        "runner": {"seeds": [0, 1, 2, 3, 4], "workers": 1},
    },
    "mfd": {
        "dataset": {"family": "mfd", "data_root": "data/mfd",
                    "domains": ["H", "I", "J", "K"], "window_size": 5120, "stride": 4096,
                    "normalize": True, "split_ratios": [0.6, 0.2, 0.2]},
        "model": {
            "encoder": {"num_layers": 5, "channels": 8, "kernel_size": 32, "stride": 2,
                        "input_channels": 1},
            "context": {"hidden_dim": 64, "input_dim": 128, "num_layers": 1},
            "discriminator": {"feedforward_dim": 128, "input_channels": 128, "num_layers": 4,
                              "num_heads": 4, "hidden_dim": 128, "max_seq_len": 256},
        },
        "pretrain": {"epochs": 40, "batch_size": 512, "learning_rate": 1e-4,
                     "weight_decay": 3e-4, "cpc_weight": 1.0, "cpc": {"horizon": 4, "t_min": 0}},
        "adapt": {"iterations": 1000, "batch_size": 512, "disc_learning_rate": 1e-4,
                  "encoder_learning_rate": 1e-4, "weight_decay": 3e-4, "lambda_ca": 0.005,
                  "teacher_momentum": 0.996, "confidence_threshold": 0.9,
                  "train_classifier": False, "disc_kind": "attention"},
        "runner": {"seeds": [0, 1, 2, 3, 4], "workers": 1},
    },
}


def default_config_dict(family: str) -> dict:
    if family == "synthetic":
        return copy.deepcopy(_SYNTHETIC_DEFAULTS)
    if family in _REAL_DEFAULTS:
        return copy.deepcopy(_REAL_DEFAULTS[family])
    raise ValueError(f"unknown dataset family {family!r} (have {FAMILIES})")


def deep_merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; non-dict values (including lists) replace."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _take(section: dict, allowed: set[str], where: str) -> dict:
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return section


def resolve_config(doc: dict) -> ExperimentConfig:
    """Validate a merged config dict into typed configs."""
    _take(doc, {"dataset", "model", "pretrain", "adapt", "runner"}, "config")
    for section in ("dataset", "model", "pretrain", "adapt", "runner"):
        if section not in doc:
            raise ValueError(f"config is missing the '{section}' section")

    ds = dict(doc["dataset"])
    _take(ds, {"family", "synthetic", "data_root", "domains", "window_size", "stride",
               "normalize", "split_ratios"}, "dataset")
    synthetic = None
    if ds.get("synthetic") is not None:
        synthetic = synthetic_spec_from_dict(ds["synthetic"])
    dataset = DatasetConfig(
        family=ds["family"],
        synthetic=synthetic,
        data_root=ds.get("data_root"),
        domains=tuple(ds.get("domains", ())),
        window_size=ds.get("window_size"),
        stride=ds.get("stride"),
        normalize=ds.get("normalize", True),
        split_ratios=tuple(ds.get("split_ratios", (0.6, 0.2, 0.2))),
    )

    pt = dict(doc["pretrain"])
    _take(pt, {"epochs", "batch_size", "learning_rate", "weight_decay", "cpc_weight",
               "cpc", "seed"}, "pretrain")
    cpc_doc = dict(pt.pop("cpc", {}))
    _take(cpc_doc, {"horizon", "t_min", "temperature_free"}, "pretrain.cpc")
    cpc = CPCConfig(**cpc_doc)
    pretrain = PretrainConfig(**pt)

    model_doc = dict(doc["model"])
    _take(model_doc, {"encoder", "context", "discriminator"}, "model")
    num_classes = _dataset_num_classes(dataset)
    model = ModelConfig.from_dict({
        **model_doc,
        "num_classes": num_classes,
        "cpc_horizon": cpc.horizon,
    })

    ad = dict(doc["adapt"])
    _take(ad, {"iterations", "batch_size", "disc_learning_rate", "encoder_learning_rate",
               "weight_decay", "lambda_ca", "teacher_momentum", "confidence_threshold",
               "seed", "train_classifier", "disc_kind"}, "adapt")
    adapt = AdaptConfig(**ad)

    rn = dict(doc["runner"])
    _take(rn, {"seeds", "workers"}, "runner")
    runner = RunnerConfig(seeds=tuple(rn.get("seeds", (0, 1, 2, 3, 4))),
                          workers=rn.get("workers", 1))

    return ExperimentConfig(dataset=dataset, model=model, pretrain=pretrain,
                            cpc=cpc, adapt=adapt, runner=runner)


def _dataset_num_classes(dataset: DatasetConfig) -> int:
    if dataset.family == "synthetic":
        return dataset.synthetic.num_classes
    return {"har": 4, "ssc": 5, "mfd": 3}[dataset.family]


def load_config(path: Optional[Path] = None, family: Optional[str] = None,
                overrides: Optional[dict] = None) -> tuple[ExperimentConfig, dict]:
    """Load a config file over its family preset.

    The family comes from the file's dataset.family when present. Returns
    both the typed config and the merged dict (for hashing and echoing).
    """
    file_doc = {}
    if path is not None:
        file_doc = yaml.safe_load(Path(path).read_text()) or {}
    fam = family or file_doc.get("dataset", {}).get("family") or "synthetic"
    doc = deep_merge(default_config_dict(fam), file_doc)
    if overrides:
        doc = deep_merge(doc, overrides)
    return resolve_config(doc), doc


def config_to_dict(doc_or_cfg) -> dict:
    if isinstance(doc_or_cfg, dict):
        return doc_or_cfg
    cfg: ExperimentConfig = doc_or_cfg
    return {
        "dataset": {
            "family": cfg.dataset.family,
            "synthetic": (synthetic_spec_to_dict(cfg.dataset.synthetic)
                          if cfg.dataset.synthetic else None),
            "data_root": cfg.dataset.data_root,
            "domains": list(cfg.dataset.domains),
            "window_size": cfg.dataset.window_size,
            "stride": cfg.dataset.stride,
            "normalize": cfg.dataset.normalize,
            "split_ratios": list(cfg.dataset.split_ratios),
        },
        "model": cfg.model.to_dict(),
        "pretrain": {
            "epochs": cfg.pretrain.epochs,
            "batch_size": cfg.pretrain.batch_size,
            "learning_rate": cfg.pretrain.learning_rate,
            "weight_decay": cfg.pretrain.weight_decay,
            "cpc_weight": cfg.pretrain.cpc_weight,
            "seed": cfg.pretrain.seed,
            "cpc": {"horizon": cfg.cpc.horizon, "t_min": cfg.cpc.t_min},
        },
        "adapt": {
            "iterations": cfg.adapt.iterations,
            "batch_size": cfg.adapt.batch_size,
            "disc_learning_rate": cfg.adapt.disc_learning_rate,
            "encoder_learning_rate": cfg.adapt.encoder_learning_rate,
            "weight_decay": cfg.adapt.weight_decay,
            "lambda_ca": cfg.adapt.lambda_ca,
            "teacher_momentum": cfg.adapt.teacher_momentum,
            "confidence_threshold": cfg.adapt.confidence_threshold,
            "seed": cfg.adapt.seed,
            "train_classifier": cfg.adapt.train_classifier,
            "disc_kind": cfg.adapt.disc_kind,
        },
        "runner": {"seeds": list(cfg.runner.seeds), "workers": cfg.runner.workers},
    }


def config_hash(doc_or_cfg) -> str:
    doc = config_to_dict(doc_or_cfg)
    canonical = json.dumps(doc, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
