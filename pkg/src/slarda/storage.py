"""On-disk domain layout and declarative spec files.

A raw domain directory looks like::

    domain/
      metadata.txt     # key=value lines: channels, length, classes, sampling_rate
      labels.txt       # optional, "<record-file>,<label>" per line
      rec_00000.bin    # little-endian float32, row-major channels x time
      rec_00001.csv    # or delimited text, one channel per row

The loader auto-detects the record format by extension. Records longer than
the manifest ``length`` are segmented with a windowing spec; exact-length
records are taken as pre-epoched samples.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .data import (
    DomainDataset,
    SyntheticShiftSpec,
    ClassSignalParams,
    TimeSeriesSample,
    WindowingSpec,
    segment_sliding_window,
    split_indices,
)

METADATA_FILE = "metadata.txt"
LABELS_FILE = "labels.txt"
RECORD_EXTENSIONS = (".bin", ".csv")


def read_metadata(domain_dir: Path) -> dict:
    path = Path(domain_dir) / METADATA_FILE
    if not path.exists():
        raise FileNotFoundError(f"no {METADATA_FILE} in {domain_dir}")
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    for required in ("channels", "length", "classes"):
        if required not in meta:
            raise ValueError(f"{path}: missing required key '{required}'")
    meta["channels"] = int(meta["channels"])
    meta["length"] = int(meta["length"])
    meta["classes"] = int(meta["classes"])
    if "sampling_rate" in meta:
        meta["sampling_rate"] = float(meta["sampling_rate"])
    return meta


def write_metadata(domain_dir: Path, channels: int, length: int, classes: int,
                   sampling_rate: float = 1.0) -> None:
    domain_dir = Path(domain_dir)
    domain_dir.mkdir(parents=True, exist_ok=True)
    text = (
        f"channels={channels}\n"
        f"length={length}\n"
        f"classes={classes}\n"
        f"sampling_rate={sampling_rate}\n"
    )
    (domain_dir / METADATA_FILE).write_text(text)


def read_labels(domain_dir: Path) -> dict[str, int]:
    path = Path(domain_dir) / LABELS_FILE
    if not path.exists():
        return {}
    labels = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, value = line.partition(",")
        labels[name.strip()] = int(value)
    return labels


def read_record(path: Path, channels: int) -> np.ndarray:
    """Load one record file as a (channels x time) float array."""
    path = Path(path)
    if path.suffix == ".bin":
        flat = np.fromfile(path, dtype="<f4").astype(float)
        if flat.size % channels != 0:
            raise ValueError(f"{path}: {flat.size} floats not divisible by {channels} channels")
        return flat.reshape(channels, -1)
    if path.suffix == ".csv":
        arr = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
        if arr.shape[0] != channels:
            raise ValueError(f"{path}: expected {channels} rows, got {arr.shape[0]}")
        return arr
    raise ValueError(f"{path}: unsupported record extension (use {RECORD_EXTENSIONS})")


def write_record(path: Path, values: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        np.asarray(values, dtype="<f4").tofile(path)
    elif path.suffix == ".csv":
        np.savetxt(path, np.asarray(values, dtype=float), delimiter=",")
    else:
        raise ValueError(f"{path}: unsupported record extension (use {RECORD_EXTENSIONS})")


def load_domain(
    domain_dir: Path,
    windowing: Optional[WindowingSpec] = None,
    name: Optional[str] = None,
    labeled: bool = True,
) -> DomainDataset:
    """Load a raw domain directory into an (unsplit) DomainDataset.

    Records longer than the manifest length need a windowing spec; the
    record-level label is propagated to every window.
    """
    domain_dir = Path(domain_dir)
    meta = read_metadata(domain_dir)
    labels = read_labels(domain_dir)
    record_paths = sorted(
        p for p in domain_dir.iterdir()
        if p.suffix in RECORD_EXTENSIONS and p.name not in (METADATA_FILE, LABELS_FILE)
    )
    if not record_paths:
        raise FileNotFoundError(f"{domain_dir}: no record files ({RECORD_EXTENSIONS})")

    samples: list[TimeSeriesSample] = []
    for path in record_paths:
        values = read_record(path, meta["channels"])
        label = labels.get(path.name)
        if values.shape[1] == meta["length"]:
            samples.append(TimeSeriesSample(values=values, label=label))
        elif values.shape[1] > meta["length"]:
            if windowing is None:
                raise ValueError(
                    f"{path}: record length {values.shape[1]} exceeds manifest length "
                    f"{meta['length']} and no windowing spec was given"
                )
            track = None if label is None else np.full(values.shape[1], label, dtype=int)
            samples.extend(
                segment_sliding_window(values, windowing, label_track=track, name=path.name)
            )
        else:
            raise ValueError(
                f"{path}: record length {values.shape[1]} is shorter than manifest "
                f"length {meta['length']}"
            )
    return DomainDataset(
        name=name or domain_dir.name,
        samples=samples,
        splits=None,
        num_classes=meta["classes"],
        labeled=labeled,
    )


def save_domain(dataset: DomainDataset, domain_dir: Path, fmt: str = "bin",
                sampling_rate: float = 1.0) -> None:
    """Write a dataset to the raw domain layout, one record per sample."""
    if fmt not in ("bin", "csv"):
        raise ValueError(f"fmt must be 'bin' or 'csv', got {fmt!r}")
    domain_dir = Path(domain_dir)
    write_metadata(
        domain_dir,
        channels=dataset.num_channels,
        length=dataset.window_size,
        classes=dataset.num_classes,
        sampling_rate=sampling_rate,
    )
    label_lines = []
    for i, sample in enumerate(dataset.samples):
        fname = f"rec_{i:05d}.{fmt}"
        write_record(domain_dir / fname, sample.values)
        if sample.label is not None:
            label_lines.append(f"{fname},{sample.label}")
    if label_lines:
        (domain_dir / LABELS_FILE).write_text("\n".join(label_lines) + "\n")
    if dataset.splits is not None:
        split_doc = {k: np.asarray(v).tolist() for k, v in dataset.splits.items()}
        (domain_dir / "splits.yaml").write_text(yaml.safe_dump(split_doc))


def load_domain_splits(domain_dir: Path) -> Optional[dict[str, np.ndarray]]:
    path = Path(domain_dir) / "splits.yaml"
    if not path.exists():
        return None
    doc = yaml.safe_load(path.read_text())
    return {k: np.asarray(v, dtype=int) for k, v in doc.items()}


# ---------------------------------------------------------------------------
# Synthetic spec files
# ---------------------------------------------------------------------------

def synthetic_spec_from_dict(doc: dict) -> SyntheticShiftSpec:
    doc = dict(doc)
    signals = doc.pop("class_signals")
    class_signals = tuple(
        ClassSignalParams(
            base_freq=float(s["base_freq"]),
            harmonic_amps=tuple(float(a) for a in s.get("harmonic_amps", [1.0])),
        )
        for s in signals
    )
    known = {
        "num_classes", "channels", "length", "shift_kinds", "shift_magnitude",
        "samples_per_class", "noise_std", "seed", "split_ratios", "probe_min_accuracy",
    }
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
    if "shift_kinds" in doc:
        doc["shift_kinds"] = tuple(doc["shift_kinds"])
    if "split_ratios" in doc:
        doc["split_ratios"] = tuple(float(r) for r in doc["split_ratios"])
    return SyntheticShiftSpec(class_signals=class_signals, **doc)


def synthetic_spec_to_dict(spec: SyntheticShiftSpec) -> dict:
    return {
        "num_classes": spec.num_classes,
        "channels": spec.channels,
        "length": spec.length,
        "class_signals": [
            {"base_freq": p.base_freq, "harmonic_amps": list(p.harmonic_amps)}
            for p in spec.class_signals
        ],
        "shift_kinds": list(spec.shift_kinds),
        "shift_magnitude": spec.shift_magnitude,
        "samples_per_class": spec.samples_per_class,
        "noise_std": spec.noise_std,
        "seed": spec.seed,
        "split_ratios": list(spec.split_ratios),
        "probe_min_accuracy": spec.probe_min_accuracy,
    }


def load_synthetic_spec(path: Path) -> SyntheticShiftSpec:
    return synthetic_spec_from_dict(yaml.safe_load(Path(path).read_text()))


def save_synthetic_spec(spec: SyntheticShiftSpec, path: Path) -> None:
    Path(path).write_text(yaml.safe_dump(synthetic_spec_to_dict(spec), sort_keys=False))
