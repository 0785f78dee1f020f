"""Trials, datasets, the on-disk container, preprocessing and the synthetic EEG oracle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps
from scipy.stats import ortho_group

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class DatasetFormatError(ValueError):
    """Raised when a dataset directory does not match the container format."""


@dataclass(frozen=True)
class Trial:
    samples: np.ndarray
    label: int
    subject_id: str = "S01"
    session_id: str = "0"
    sample_rate_hz: float = 250.0

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"trial samples must be a non-empty C x T matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("trial samples must be finite")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        if int(self.label) < 0:
            raise ValueError("label must be a non-negative class index")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "label", int(self.label))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def with_samples(self, samples, **changes) -> "Trial":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class Dataset:
    trials: tuple
    channel_names: tuple
    class_names: tuple
    sample_rate_hz: float

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        K = len(self.class_names)
        C = len(self.channel_names)
        shapes = {t.samples.shape for t in self.trials}
        if len(shapes) > 1:
            raise ValueError(f"all trials must share one shape, got {sorted(shapes)}")
        for t in self.trials:
            if t.n_channels != C:
                raise ValueError(f"trial has {t.n_channels} channels, dataset declares {C}")
            if t.label >= K:
                raise ValueError(f"label {t.label} out of range for {K} classes")
            if not math.isclose(t.sample_rate_hz, self.sample_rate_hz):
                raise ValueError("trial sample rate differs from dataset sample rate")

    def __len__(self):
        return len(self.trials)

    @property
    def X(self) -> np.ndarray:
        """Stacked samples, shape ``(n_trials, C, T)``."""
        if not self.trials:
            return np.zeros((0, len(self.channel_names), 0))
        return np.stack([t.samples for t in self.trials])

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    @property
    def subjects(self) -> list:
        """Subject ids in order of first appearance."""
        return list(dict.fromkeys(t.subject_id for t in self.trials))

    def subset(self, indices) -> "Dataset":
        return replace(self, trials=tuple(self.trials[i] for i in indices))

    def with_trials(self, trials) -> "Dataset":
        return replace(self, trials=tuple(trials))

    def map(self, fn) -> "Dataset":
        trials = [fn(t) for t in self.trials]
        rate = trials[0].sample_rate_hz if trials else self.sample_rate_hz
        return replace(self, trials=tuple(trials), sample_rate_hz=rate)


# ---------------------------------------------------------------- container


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` as a manifest plus one little-endian float32 file per trial."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    width = max(4, len(str(len(ds.trials))))
    for i, t in enumerate(ds.trials):
        name = f"trial_{i:0{width}d}.f32"
        (path / name).write_bytes(np.ascontiguousarray(t.samples, dtype="<f4").tobytes())
        entries.append({
            "file": name,
            "subject_id": t.subject_id,
            "session_id": t.session_id,
            "label": t.label,
        })
    shape = list(ds.trials[0].samples.shape) if ds.trials else [len(ds.channel_names), 0]
    manifest = {
        "format_version": FORMAT_VERSION,
        "sample_rate_hz": ds.sample_rate_hz,
        "channel_names": list(ds.channel_names),
        "class_names": list(ds.class_names),
        "n_samples": shape[1],
        "trials": entries,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")


def _read_manifest(path: Path) -> dict:
    mpath = path / MANIFEST
    if not mpath.is_file():
        raise DatasetFormatError(f"{path}: missing {MANIFEST}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{mpath}: ill-formed manifest ({exc})") from exc
    required = ("format_version", "sample_rate_hz", "channel_names", "class_names", "trials")
    missing = [k for k in required if k not in manifest]
    if missing:
        raise DatasetFormatError(f"{mpath}: manifest lacks {', '.join(missing)}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise DatasetFormatError(f"{mpath}: unsupported format_version {manifest['format_version']}")
    for i, entry in enumerate(manifest["trials"]):
        for key in ("file", "subject_id", "session_id", "label"):
            if key not in entry:
                raise DatasetFormatError(f"{mpath}: trial {i} lacks '{key}'")
    return manifest


def _read_raw(fpath: Path, C: int, n_samples) -> np.ndarray:
    raw = fpath.read_bytes()
    if n_samples is not None:
        if len(raw) != C * n_samples * 4:
            raise DatasetFormatError(
                f"{fpath.name}: {len(raw)} bytes, expected C*T*4 = {C * n_samples * 4}")
    elif len(raw) % (4 * C) or not raw:
        raise DatasetFormatError(f"{fpath.name}: {len(raw)} bytes is not a multiple of C*4 = {4 * C}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(C, -1)


def _read_csv(fpath: Path, C: int) -> np.ndarray:
    x = np.loadtxt(fpath, delimiter=",", dtype=np.float64, ndmin=2)
    if x.shape[0] != C:
        raise DatasetFormatError(f"{fpath.name}: {x.shape[0]} rows, expected {C} channels")
    return x


def load_dataset(path) -> Dataset:
    """Read a dataset directory written by :func:`save_dataset`.

    Trial files ending in ``.csv`` are parsed as C rows of comma-separated
    values; every other file is raw float32 little-endian, channel-major.
    """
    path = Path(path)
    manifest = _read_manifest(path)
    C = len(manifest["channel_names"])
    rate = float(manifest["sample_rate_hz"])
    n_samples = manifest.get("n_samples")
    trials = []
    for i, entry in enumerate(manifest["trials"]):
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise DatasetFormatError(f"trial {i} ({entry['file']}): file not found")
        if fpath.suffix.lower() == ".csv":
            x = _read_csv(fpath, C)
        else:
            x = _read_raw(fpath, C, n_samples or None)
            n_samples = x.shape[1]
        if not np.all(np.isfinite(x)):
            raise DatasetFormatError(f"trial {i} ({entry['file']}): non-finite values")
        trials.append(Trial(x, int(entry["label"]), str(entry["subject_id"]),
                            str(entry["session_id"]), rate))
    return Dataset(tuple(trials), tuple(manifest["channel_names"]),
                   tuple(manifest["class_names"]), rate)


# ------------------------------------------------------------- preprocessing


@dataclass(frozen=True)
class PreprocessConfig:
    band_low_hz: float = 8.0
    band_high_hz: float = 32.0
    target_rate_hz: float = 250.0
    crop_seconds: float = 4.0
    taper_hz: float = 1.0

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz < self.target_rate_hz / 2:
            raise ValueError("need 0 < band_low < band_high < target_rate / 2")
        n = self.crop_seconds * self.target_rate_hz
        if abs(n - round(n)) > 1e-9 or n <= 0:
            raise ValueError("crop_seconds * target_rate must be a positive integer")
        if self.taper_hz < 0:
            raise ValueError("taper_hz must be non-negative")


def band_gain(freqs, low, high, taper=1.0):
    """Zero-phase passband gain: 1 inside, 0 outside, raised-cosine ramps of width ``taper`` just inside each edge."""
    freqs = np.asarray(freqs, dtype=np.float64)
    g = ((freqs >= low) & (freqs <= high)).astype(np.float64)
    if taper > 0:
        lo = (freqs >= low) & (freqs < low + taper)
        g[lo] = 0.5 * (1 - np.cos(np.pi * (freqs[lo] - low) / taper))
        hi = (freqs > high - taper) & (freqs <= high)
        g[hi] = 0.5 * (1 - np.cos(np.pi * (high - freqs[hi]) / taper))
    return g


def bandpass_filter(trial: Trial, cfg: PreprocessConfig = PreprocessConfig()) -> Trial:
    fs = trial.sample_rate_hz
    if cfg.band_high_hz >= fs / 2 or cfg.band_low_hz <= 0:
        raise ValueError(f"band {cfg.band_low_hz}-{cfg.band_high_hz} Hz outside (0, Nyquist={fs / 2})")
    T = trial.n_samples
    if T < 2:
        raise ValueError("bandpass needs at least 2 samples")
    spec = np.fft.rfft(trial.samples, axis=1)
    gain = band_gain(np.fft.rfftfreq(T, 1.0 / fs), cfg.band_low_hz, cfg.band_high_hz, cfg.taper_hz)
    return trial.with_samples(np.fft.irfft(spec * gain, n=T, axis=1))


def resample(trial: Trial, target_rate_hz: float) -> Trial:
    """FFT resampling (spectrum truncation or zero padding) to ``target_rate_hz``."""
    if target_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    fs = trial.sample_rate_hz
    if math.isclose(target_rate_hz, fs):
        return trial
    n_new = int(round(trial.n_samples * target_rate_hz / fs))
    if n_new < 1:
        raise ValueError("resampled trial would be empty")
    x = sps.resample(trial.samples, n_new, axis=1)
    return trial.with_samples(x, sample_rate_hz=float(target_rate_hz))


def crop(trial: Trial, seconds: float) -> Trial:
    """Keep the first ``floor(seconds * rate)`` samples."""
    n = int(math.floor(seconds * trial.sample_rate_hz + 1e-9))
    if n < 1 or n > trial.n_samples:
        raise ValueError(f"cannot crop {trial.n_samples} samples to {n}")
    return trial.with_samples(trial.samples[:, :n])


def preprocess_trial(trial: Trial, cfg: PreprocessConfig = PreprocessConfig()) -> Trial:
    """Resample, band-pass, then crop."""
    t = resample(trial, cfg.target_rate_hz)
    t = bandpass_filter(t, cfg)
    return crop(t, cfg.crop_seconds)


def preprocess_dataset(ds: Dataset, cfg: PreprocessConfig = PreprocessConfig()) -> Dataset:
    return ds.map(lambda t: preprocess_trial(t, cfg))


# ----------------------------------------------------------- synthetic oracle

MI_CHANNELS = ("C3", "C4", "FC3", "FC4", "CP3", "CP4", "C1", "C2", "C5", "C6",
               "FC1", "FC2", "CP1", "CP2", "Cz", "FCz", "CPz", "Pz", "Fz", "POz", "P1", "P2")
MI_CLASSES = ("left_hand", "right_hand", "feet", "tongue")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 1
    n_classes: int = 2
    trials_per_class: int = 30
    n_channels: int = 8
    n_samples: int = 500
    sample_rate_hz: float = 250.0
    class_freqs_hz: tuple = (10.0, 22.0)
    mixing_strength: float = 0.3
    noise_floor: float = 0.3
    seed: int = 0
    band: tuple = field(default=(8.0, 32.0))

    def __post_init__(self):
        object.__setattr__(self, "class_freqs_hz", tuple(float(f) for f in self.class_freqs_hz))
        if min(self.n_subjects, self.n_classes, self.trials_per_class,
               self.n_channels, self.n_samples) < 1:
            raise ValueError("counts and shapes must be positive")
        if self.n_classes < 1 or len(self.class_freqs_hz) != self.n_classes:
            raise ValueError("need one carrier frequency per class")
        if len(set(self.class_freqs_hz)) != self.n_classes:
            raise ValueError("class frequencies must be distinct")
        lo, hi = self.band
        if any(f < lo or f > hi for f in self.class_freqs_hz):
            raise ValueError(f"class frequencies must lie in [{lo}, {hi}] Hz")
        if not 0 <= self.mixing_strength <= 1:
            raise ValueError("mixing_strength must be in [0, 1]")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be non-negative")
        if self.sample_rate_hz <= 2 * hi:
            raise ValueError("sample rate too low for the carrier band")


def pink_noise(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    """Gaussian noise with power falling as 1/f along the last axis, rescaled to std ``scale`` per row."""
    n = shape[-1]
    white = rng.standard_normal(shape)
    spec = np.fft.rfft(white, axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    f[0] = 1.0
    spec = spec / np.sqrt(f)
    spec[..., 0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    sd = x.std(axis=-1, keepdims=True)
    sd[sd == 0] = 1.0
    return scale * x / sd


def mixing_matrix(rng: np.random.Generator, C: int, strength: float) -> np.ndarray:
    Q = ortho_group.rvs(C, random_state=rng) if C > 1 else np.ones((1, 1))
    return (1 - strength) * np.eye(C) + strength * Q


def synthesize_dataset(cfg: SynthConfig = SynthConfig()) -> Dataset:
    """Desk-scale EEG stand-in with known class structure.

    Class ``c`` puts a sinusoid at ``class_freqs_hz[c]`` (random phase,
    amplitude in [0.8, 1.2]) on carrier channel ``c % C``; each subject mixes
    channels with its own blend of identity and a random orthogonal matrix;
    independent 1/f noise of std ``noise_floor`` is added per channel.
    Trials interleave classes in acquisition order.
    """
    C, T, fs = cfg.n_channels, cfg.n_samples, cfg.sample_rate_hz
    t = np.arange(T) / fs
    names = MI_CHANNELS[:C] if C <= len(MI_CHANNELS) else tuple(f"Ch{i}" for i in range(C))
    classes = (MI_CLASSES[:cfg.n_classes] if cfg.n_classes <= len(MI_CLASSES)
               else tuple(f"class{i}" for i in range(cfg.n_classes)))
    trials = []
    for s in range(cfg.n_subjects):
        sub_rng = np.random.default_rng([cfg.seed, s])
        M = mixing_matrix(sub_rng, C, cfg.mixing_strength)
        for i in range(cfg.trials_per_class):
            for c, f in enumerate(cfg.class_freqs_hz):
                src = np.zeros((C, T))
                amp = sub_rng.uniform(0.8, 1.2)
                phase = sub_rng.uniform(0, 2 * np.pi)
                src[c % C] = amp * np.sin(2 * np.pi * f * t + phase)
                x = M @ src
                if cfg.noise_floor > 0:
                    x = x + pink_noise(sub_rng, (C, T), cfg.noise_floor)
                trials.append(Trial(x, c, f"S{s + 1:02d}", "0", fs))
    return Dataset(tuple(trials), names, classes, fs)


def group_indices(ds: Dataset, keys: Sequence) -> dict:
    """Trial indices grouped by key, in first-appearance order."""
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    return groups
