"""Time-series ingestion: windowing, resampling, synthetic domain pairs, splits.

Everything here is pure given its inputs and seed, so calls are safe from
multiple threads on distinct inputs. Arrays are float64 numpy matrices of
shape (channels, time) unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class EmptyInputError(ValueError):
    """Recording too short to produce a single window."""


class GenerationError(RuntimeError):
    """Synthetic generation failed its separability self-check."""


SHIFT_KINDS = ("sampling_rate", "frequency_offset", "gain_offset", "noise")

# Seed-stream tags so each sample's raw waveform is independently
# re-derivable (the sampling-rate compose test depends on this).
_SOURCE_STREAM = 0
_TARGET_STREAM = 1


@dataclass(frozen=True)
class TimeSeriesSample:
    """One multichannel window (channels x time) with an optional class label."""

    values: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"sample values must be 2-D (channels x time), got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("sample values contain NaN/Inf")
        object.__setattr__(self, "values", v)

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]

    @property
    def num_steps(self) -> int:
        return self.values.shape[1]


@dataclass
class DomainDataset:
    """A named domain: samples plus train/val/test index sets.

    ``labeled`` is False for a target-domain training split; samples may still
    carry ground-truth labels, but they are for evaluation only and training
    code must not read them. ``splits`` may be None until split_dataset
    assigns them.
    """

    name: str
    samples: list[TimeSeriesSample]
    splits: Optional[dict[str, np.ndarray]] = None
    num_classes: int = 0
    labeled: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = len(self.samples)
        if n == 0:
            raise ValueError(f"domain '{self.name}' has no samples")
        shapes = {s.values.shape for s in self.samples}
        if len(shapes) != 1:
            raise ValueError(f"domain '{self.name}' mixes sample shapes: {sorted(shapes)}")
        if self.splits is not None:
            all_idx = np.concatenate([np.asarray(v) for v in self.splits.values()])
            if len(np.unique(all_idx)) != len(all_idx):
                raise ValueError(f"domain '{self.name}' splits overlap")
            if sorted(all_idx.tolist()) != list(range(n)):
                raise ValueError(f"domain '{self.name}' splits do not cover all {n} indices")
        if self.labeled:
            for i, s in enumerate(self.samples):
                if s.label is None:
                    raise ValueError(f"domain '{self.name}' is labeled but sample {i} has no label")
                if not 0 <= s.label < self.num_classes:
                    raise ValueError(
                        f"domain '{self.name}' sample {i} label {s.label} outside [0, {self.num_classes})"
                    )

    @property
    def num_channels(self) -> int:
        return self.samples[0].num_channels

    @property
    def window_size(self) -> int:
        return self.samples[0].num_steps

    def split_arrays(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Stack one split into (X: n x M x K, y: n) arrays.

        Unlabeled samples get label -1.
        """
        if self.splits is None:
            raise ValueError(f"domain '{self.name}' has no splits assigned yet")
        idx = self.splits[split]
        x = np.stack([self.samples[i].values for i in idx])
        y = np.array([-1 if self.samples[i].label is None else self.samples[i].label for i in idx])
        return x, y


@dataclass(frozen=True)
class WindowingSpec:
    window_size: int
    stride: int
    interpolate_missing: bool = True

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


def interpolate_missing_values(series: np.ndarray) -> np.ndarray:
    """Fill NaNs per channel by linear interpolation (edges held constant).

    A channel that is entirely NaN is an error.
    """
    out = np.array(series, dtype=float, copy=True)
    for ch in range(out.shape[0]):
        row = out[ch]
        bad = ~np.isfinite(row)
        if not bad.any():
            continue
        if bad.all():
            raise ValueError(f"channel {ch} has no finite values to interpolate from")
        good_idx = np.flatnonzero(~bad)
        out[ch, bad] = np.interp(np.flatnonzero(bad), good_idx, row[good_idx])
    return out


def window_count(length: int, window_size: int, stride: int) -> int:
    """Number of windows a sliding segmentation produces."""
    if length < window_size:
        return 0
    return (length - window_size) // stride + 1


def segment_sliding_window(
    series: np.ndarray,
    spec: WindowingSpec,
    label_track: Optional[np.ndarray] = None,
    name: str = "recording",
) -> list[TimeSeriesSample]:
    """Segment an (M x L) recording into fixed-size windows.

    Each window is an exact contiguous slice at offsets 0, stride, 2*stride, ...
    When ``label_track`` (per-timestep integer labels, length L) is given,
    each window gets the majority label over its steps; ties resolve to the
    smallest label value.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2:
        raise ValueError(f"{name}: expected 2-D (channels x time), got shape {series.shape}")
    length = series.shape[1]
    if length < spec.window_size:
        raise EmptyInputError(
            f"{name}: length {length} is shorter than window_size {spec.window_size}"
        )
    if spec.interpolate_missing:
        series = interpolate_missing_values(series)
    elif not np.isfinite(series).all():
        raise ValueError(f"{name}: contains non-finite values and interpolation is disabled")
    if label_track is not None and len(label_track) != length:
        raise ValueError(f"{name}: label track length {len(label_track)} != series length {length}")

    windows = []
    for start in range(0, length - spec.window_size + 1, spec.stride):
        stop = start + spec.window_size
        label = None
        if label_track is not None:
            values, counts = np.unique(np.asarray(label_track[start:stop], dtype=int), return_counts=True)
            label = int(values[np.argmax(counts)])
        windows.append(TimeSeriesSample(values=series[:, start:stop].copy(), label=label))
    return windows


def resample_to_length(series: np.ndarray, target_len: int) -> np.ndarray:
    """Linear-interpolation resampling of (M x L) onto a uniform grid of target_len.

    Endpoints are preserved exactly.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[None, :]
    if not np.isfinite(series).all():
        raise ValueError("resample_to_length: input contains non-finite values")
    length = series.shape[1]
    if length < 1 or target_len < 1:
        raise ValueError(f"lengths must be >= 1, got L={length}, target={target_len}")
    if target_len == length:
        return series.copy()
    old_grid = np.arange(length, dtype=float)
    new_grid = np.linspace(0.0, length - 1.0, target_len)
    out = np.empty((series.shape[0], target_len))
    for ch in range(series.shape[0]):
        out[ch] = np.interp(new_grid, old_grid, series[ch])
    # np.interp can leave tiny float error at the exact endpoints; pin them.
    out[:, 0] = series[:, 0]
    out[:, -1] = series[:, -1]
    return out


def split_indices(n: int, ratios: tuple[float, float, float], seed: int) -> dict[str, np.ndarray]:
    """Seeded shuffled train/val/test index sets over range(n).

    Val and test sizes are floor allocations of their ratios; the remainder
    goes to train.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")

    n_val = int(n * ratios[1])
    n_test = int(n * ratios[2])
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) == 0:
        raise ValueError(f"split of {n} samples with ratios {ratios} leaves an empty split")

    perm = np.random.default_rng(seed).permutation(n)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }


def split_dataset(
    dataset: DomainDataset,
    ratios: tuple[float, float, float],
    seed: int,
) -> DomainDataset:
    """Assign seeded shuffled train/val/test splits to a dataset."""
    splits = split_indices(len(dataset.samples), ratios, seed)
    return DomainDataset(
        name=dataset.name,
        samples=dataset.samples,
        splits=splits,
        num_classes=dataset.num_classes,
        labeled=dataset.labeled,
    )


# ---------------------------------------------------------------------------
# Synthetic domain-shift benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassSignalParams:
    """Waveform recipe for one class: base frequency plus harmonic mix.

    ``base_freq`` is in cycles per window. ``harmonic_amps[j]`` is the
    amplitude of the (j+1)-th harmonic of the base frequency.
    """

    base_freq: float
    harmonic_amps: tuple[float, ...] = (1.0,)


@dataclass(frozen=True)
class SyntheticShiftSpec:
    num_classes: int
    channels: int
    length: int
    class_signals: tuple[ClassSignalParams, ...]
    shift_kinds: tuple[str, ...]
    shift_magnitude: float
    samples_per_class: int
    noise_std: float = 0.1
    seed: int = 0
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    probe_min_accuracy: float = 0.95

    def __post_init__(self):
        if len(self.class_signals) != self.num_classes:
            raise ValueError(
                f"need {self.num_classes} class_signals entries, got {len(self.class_signals)}"
            )
        unknown = set(self.shift_kinds) - set(SHIFT_KINDS)
        if unknown:
            raise ValueError(f"unknown shift kinds {sorted(unknown)}; valid: {SHIFT_KINDS}")
        if self.shift_magnitude < 0:
            raise ValueError("shift_magnitude must be >= 0")


@dataclass(frozen=True)
class _DomainRecipe:
    """Resolved per-domain generation parameters after applying the shift."""

    freqs: tuple[float, ...]        # per-class base frequency, cycles per window
    gain: float
    offset: float
    noise_std: float
    length_factor: float            # >1 means generate longer then resample down


def effective_recipe(spec: SyntheticShiftSpec, domain: str) -> _DomainRecipe:
    """Generation parameters for 'source' (base) or 'target' (shift applied)."""
    freqs = [p.base_freq for p in spec.class_signals]
    gain, offset = 1.0, 0.0
    noise = spec.noise_std
    factor = 1.0
    if domain == "target" and spec.shift_magnitude > 0:
        m = spec.shift_magnitude
        if "frequency_offset" in spec.shift_kinds:
            freqs = [f + m for f in freqs]
        if "gain_offset" in spec.shift_kinds:
            gain, offset = 1.0 + m, 0.5 * m
        if "noise" in spec.shift_kinds:
            noise = spec.noise_std * (1.0 + m)
        if "sampling_rate" in spec.shift_kinds:
            factor = 1.0 + m
    elif domain != "source" and domain != "target":
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    return _DomainRecipe(tuple(freqs), gain, offset, noise, factor)


def synthesize_waveform(
    spec: SyntheticShiftSpec,
    class_index: int,
    recipe: _DomainRecipe,
    length: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One raw (channels x length) waveform for a class under a domain recipe.

    Channels share the class frequency but draw independent phases. Base
    frequencies are cycles per ``spec.length`` samples, so a longer generation
    (sampling-rate shift) holds more cycles and squeezing it back down scales
    every frequency up by the rate factor.
    """
    params = spec.class_signals[class_index]
    base = recipe.freqs[class_index]
    t = np.arange(length) / float(spec.length)
    out = np.zeros((spec.channels, length))
    for ch in range(spec.channels):
        for j, amp in enumerate(params.harmonic_amps):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            out[ch] += amp * np.sin(2.0 * np.pi * base * (j + 1) * t + phase)
        out[ch] += rng.normal(0.0, recipe.noise_std, size=length)
    return recipe.gain * out + recipe.offset


def _sample_rng(spec: SyntheticShiftSpec, stream: int, class_index: int, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, stream, class_index, index])


def _generate_domain(spec: SyntheticShiftSpec, domain: str, name: str, labeled: bool) -> DomainDataset:
    stream = _SOURCE_STREAM if domain == "source" else _TARGET_STREAM
    recipe = effective_recipe(spec, domain)
    raw_len = int(round(spec.length * recipe.length_factor))
    samples = []
    for c in range(spec.num_classes):
        for i in range(spec.samples_per_class):
            rng = _sample_rng(spec, stream, c, i)
            values = synthesize_waveform(spec, c, recipe, raw_len, rng)
            if raw_len != spec.length:
                values = resample_to_length(values, spec.length)
            samples.append(TimeSeriesSample(values=values, label=c))
    splits = split_indices(len(samples), spec.split_ratios, seed=spec.seed + stream)
    return DomainDataset(
        name=name,
        samples=samples,
        splits=splits,
        num_classes=spec.num_classes,
        labeled=labeled,
    )


def spectral_features(x: np.ndarray) -> np.ndarray:
    """Magnitude spectrum per channel, flattened: (n, M, K) -> (n, M * (K//2+1))."""
    mags = np.abs(np.fft.rfft(x, axis=-1))
    return mags.reshape(x.shape[0], -1)


class NearestCentroidProbe:
    """Nearest class-centroid classifier on magnitude-spectrum features.

    Used as the generator's separability self-check and as a desk-scale
    reference classifier in tests.
    """

    def __init__(self):
        self.centroids: Optional[np.ndarray] = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "NearestCentroidProbe":
        feats = spectral_features(x)
        classes = np.unique(y)
        self.centroids = np.stack([feats[y == c].mean(axis=0) for c in classes])
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.centroids is None:
            raise RuntimeError("probe not fitted")
        feats = spectral_features(x)
        d = ((feats[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(d, axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(x) == y).mean())


def make_synthetic_shift_pair(spec: SyntheticShiftSpec) -> tuple[DomainDataset, DomainDataset]:
    """Generate a (labeled source, unlabeled target) pair under the configured shift.

    The target's training split is unlabeled for training purposes; its
    samples still carry ground-truth labels so evaluation works. Generation is
    bit-deterministic given the seed. Raises GenerationError when a nearest-
    centroid probe cannot reach the configured accuracy on the source train
    split (the classes would not be separable enough to benchmark anything).
    """
    source = _generate_domain(spec, "source", name="synthetic-source", labeled=True)
    target = _generate_domain(spec, "target", name="synthetic-target", labeled=False)

    x_train, y_train = source.split_arrays("train")
    probe_acc = NearestCentroidProbe().fit(x_train, y_train).accuracy(x_train, y_train)
    if probe_acc < spec.probe_min_accuracy:
        raise GenerationError(
            f"source classes are not separable: nearest-centroid probe train accuracy "
            f"{probe_acc:.3f} < required {spec.probe_min_accuracy:.3f}"
        )
    return source, target


def normalize_dataset(dataset: DomainDataset) -> DomainDataset:
    """Per-channel z-score using the domain's own training-split statistics."""
    x_train, _ = dataset.split_arrays("train")
    mean = x_train.mean(axis=(0, 2), keepdims=False)
    std = x_train.std(axis=(0, 2), keepdims=False)
    std = np.where(std < 1e-12, 1.0, std)
    samples = [
        replace(s, values=(s.values - mean[:, None]) / std[:, None]) for s in dataset.samples
    ]
    return DomainDataset(
        name=dataset.name,
        samples=samples,
        splits=dataset.splits,
        num_classes=dataset.num_classes,
        labeled=dataset.labeled,
    )
