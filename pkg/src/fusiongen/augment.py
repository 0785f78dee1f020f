"""Baseline data augmentations for EEG trials.

Every function maps trials to new trials of the same shape and sample rate.
Random draws come only from the ``rng`` argument, so results are fixed by
the inputs and the generator's seed.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Trial

BASELINES = ("noise", "scale", "flip", "cut_resize", "fshift", "channel_reflection", "dwt")


@dataclass(frozen=True)
class AugmentParams:
    """Default ranges for the random baselines."""

    sigma_rel: float = 0.05
    scale_range: tuple = (0.8, 1.2)
    cut_ratio_range: tuple = (0.7, 0.95)
    fshift_hz_range: tuple = (-2.0, 2.0)
    flip_mode: str = "time"

    def __post_init__(self):
        if self.sigma_rel < 0:
            raise ValueError("sigma_rel must be non-negative")
        for name in ("scale_range", "cut_ratio_range", "fshift_hz_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be (low, high) with low <= high")
        lo, hi = self.cut_ratio_range
        if lo <= 0 or hi > 1:
            raise ValueError("cut ratios must lie in (0, 1]")
        if self.flip_mode not in ("time", "sign"):
            raise ValueError("flip_mode must be 'time' or 'sign'")


def _uniform(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


# ------------------------------------------------------------ amplitude


def aug_noise(x: Trial, sigma_rel: float = 0.05, rng: np.random.Generator | None = None) -> Trial:
    """Add white Gaussian noise with ``sigma = sigma_rel * std(x)``."""
    if sigma_rel < 0:
        raise ValueError("sigma_rel must be non-negative")
    if sigma_rel == 0:
        return x
    rng = np.random.default_rng() if rng is None else rng
    sigma = sigma_rel * x.samples.std()
    return x.with_samples(x.samples + sigma * rng.standard_normal(x.samples.shape))


def aug_scale(x: Trial, factor_range=(0.8, 1.2), rng: np.random.Generator | None = None,
              return_factor: bool = False):
    """Multiply the whole trial by one factor drawn uniformly from ``factor_range``."""
    rng = np.random.default_rng() if rng is None else rng
    s = _uniform(rng, factor_range)
    out = x.with_samples(s * x.samples)
    return (out, s) if return_factor else out


def aug_flip(x: Trial, mode: str = "time") -> Trial:
    """Reverse every channel in time (``mode="time"``) or negate it (``mode="sign"``)."""
    if mode == "time":
        return x.with_samples(x.samples[:, ::-1])
    if mode == "sign":
        return x.with_samples(-x.samples)
    raise ValueError("mode must be 'time' or 'sign'")


# ------------------------------------------------------------ time/frequency


def aug_cut_resize(x: Trial, ratio_range=(0.7, 0.95), rng: np.random.Generator | None = None,
                   return_cut: bool = False):
    """Cut a random segment covering ``rho * T`` samples and stretch it back to ``T``.

    The segment is resampled by linear interpolation, so every frequency is
    scaled by ``rho``.  ``rho = 1`` reproduces the input exactly.
    """
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = ratio_range
    if lo <= 0 or hi > 1 or lo > hi:
        raise ValueError("ratio_range must satisfy 0 < low <= high <= 1")
    T = x.n_samples
    rho = _uniform(rng, ratio_range)
    L = min(T, max(2, int(round(rho * T))))
    start = int(rng.integers(0, T - L + 1))
    grid = np.arange(T, dtype=np.float64)
    pos = start + np.linspace(0.0, L - 1, T)
    out = np.stack([np.interp(pos, grid, row) for row in x.samples])
    res = x.with_samples(out)
    return (res, (start, L)) if return_cut else res


def aug_fshift(x: Trial, shift_hz_range=(-2.0, 2.0), rng: np.random.Generator | None = None,
               return_shift: bool = False):
    """Circularly shift the one-sided spectrum by ``delta`` Hz.

    ``delta`` is rounded to the nearest frequency bin ``fs / T``.  Working on
    the one-sided spectrum and inverting with ``irfft`` keeps the result real.
    """
    rng = np.random.default_rng() if rng is None else rng
    delta = _uniform(rng, shift_hz_range)
    T = x.n_samples
    bins = int(round(delta * T / x.sample_rate_hz))
    if bins == 0:
        res = x
    else:
        spec = np.fft.rfft(x.samples, axis=1)
        res = x.with_samples(np.fft.irfft(np.roll(spec, bins, axis=1), n=T, axis=1))
    return (res, bins * x.sample_rate_hz / T) if return_shift else res


# ------------------------------------------------------------ spatial


@dataclass(frozen=True)
class ChannelPairMap:
    """Mirrored channel pairs plus the class swap that reflection implies."""

    pairs: tuple = ()
    label_swap: dict = field(default_factory=dict)
    n_channels: int | None = None

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        seen = set()
        for a, b in pairs:
            if a == b:
                raise ValueError(f"pair ({a}, {b}) maps a channel onto itself")
            for i in (a, b):
                if i < 0 or (self.n_channels is not None and i >= self.n_channels):
                    raise ValueError(f"channel index {i} out of range")
                if i in seen:
                    raise ValueError(f"channel {i} appears in more than one pair")
                seen.add(i)
        swap = {int(k): int(v) for k, v in dict(self.label_swap).items()}
        for k, v in swap.items():
            if swap.get(v, v) != k:
                raise ValueError("label_swap must be an involution")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "label_swap", swap)

    def permutation(self, C: int) -> np.ndarray:
        perm = np.arange(C)
        for a, b in self.pairs:
            if max(a, b) >= C:
                raise ValueError(f"pair ({a}, {b}) out of range for {C} channels")
            perm[a], perm[b] = b, a
        return perm

    def map_label(self, label: int) -> int:
        return self.label_swap.get(int(label), int(label))

    @classmethod
    def from_names(cls, pairs, label_swap, channel_names, class_names=()) -> "ChannelPairMap":
        ch = {n: i for i, n in enumerate(channel_names)}
        cl = {n: i for i, n in enumerate(class_names)}

        def look(table, name, kind):
            if name not in table:
                raise ValueError(f"unknown {kind} {name!r}")
            return table[name]

        idx_pairs = [(look(ch, a, "channel"), look(ch, b, "channel")) for a, b in pairs]
        swap = {}
        for a, b in label_swap:
            ia, ib = look(cl, a, "class"), look(cl, b, "class")
            swap[ia] = ib
            swap[ib] = ia
        return cls(tuple(idx_pairs), swap, len(channel_names))

    @classmethod
    def load(cls, path, channel_names, class_names=()) -> "ChannelPairMap":
        """Read ``{"pairs": [[name, name], ...], "label_swap": [[class, class], ...]}``."""
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict) or "pairs" not in doc:
            raise ValueError(f"{path}: expected an object with a 'pairs' list")
        return cls.from_names(doc["pairs"], doc.get("label_swap", []), channel_names, class_names)

    @classmethod
    def standard(cls, channel_names, class_names=()) -> "ChannelPairMap":
        """Pair 10-20 style names by hemisphere (``C3``/``C4``, ``FC5``/``FC6``, ...).

        Odd electrode numbers sit on the left, even on the right; ``2k-1`` is
        paired with ``2k`` under the same prefix.  ``left_hand`` and
        ``right_hand`` swap when both classes exist.
        """
        names = list(channel_names)
        pairs = []
        for n in names:
            m = re.fullmatch(r"([A-Za-z]+)(\d+)", n)
            if not m or int(m.group(2)) % 2 == 0:
                continue
            mate = f"{m.group(1)}{int(m.group(2)) + 1}"
            if mate in names:
                pairs.append((n, mate))
        swap = [("left_hand", "right_hand")] if {"left_hand", "right_hand"} <= set(class_names) else []
        return cls.from_names(pairs, swap, names, class_names)


def aug_channel_reflection(x: Trial, pair_map: ChannelPairMap) -> Trial:
    """Swap mirrored channel rows and map the label through ``label_swap``."""
    perm = pair_map.permutation(x.n_channels)
    return x.with_samples(x.samples[perm], label=pair_map.map_label(x.label))


# ------------------------------------------------------------ wavelet


def haar_dwt(x):
    """Single-level orthonormal Haar transform along the last axis (even length)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2:
        raise ValueError("Haar transform needs an even number of samples")
    ev, od = x[..., 0::2], x[..., 1::2]
    return (ev + od) / np.sqrt(2.0), (ev - od) / np.sqrt(2.0)


def haar_idwt(approx, detail):
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    out = np.empty(approx.shape[:-1] + (2 * approx.shape[-1],))
    out[..., 0::2] = (approx + detail) / np.sqrt(2.0)
    out[..., 1::2] = (approx - detail) / np.sqrt(2.0)
    return out


def aug_dwt(a: Trial, b: Trial, rng: np.random.Generator | None = None) -> Trial:
    """Approximation band of ``a`` recombined with the detail band of ``b``.

    ``rng`` is accepted for a uniform signature; the recombination itself is
    deterministic.
    """
    if a.label != b.label:
        raise ValueError(f"label mismatch: {a.label} vs {b.label}")
    if a.samples.shape != b.samples.shape:
        raise ValueError("trials differ in shape")
    approx, _ = haar_dwt(a.samples)
    _, detail = haar_dwt(b.samples)
    return a.with_samples(haar_idwt(approx, detail))


# ------------------------------------------------------------ dataset level


def apply_baseline(method: str, trial: Trial, rng: np.random.Generator, params: AugmentParams,
                   partner: Trial | None = None, pair_map: ChannelPairMap | None = None) -> Trial:
    """Run one named baseline on ``trial``."""
    if method == "noise":
        return aug_noise(trial, params.sigma_rel, rng)
    if method == "scale":
        return aug_scale(trial, params.scale_range, rng)
    if method == "flip":
        return aug_flip(trial, params.flip_mode)
    if method == "cut_resize":
        return aug_cut_resize(trial, params.cut_ratio_range, rng)
    if method == "fshift":
        return aug_fshift(trial, params.fshift_hz_range, rng)
    if method == "channel_reflection":
        if pair_map is None:
            raise ValueError("channel_reflection needs a ChannelPairMap")
        return aug_channel_reflection(trial, pair_map)
    if method == "dwt":
        if partner is None:
            raise ValueError("dwt needs a partner trial")
        return aug_dwt(trial, partner, rng)
    raise ValueError(f"unknown augmentation {method!r}; choose from {', '.join(BASELINES)}")


def augment_dataset(ds: Dataset, method: str, n_per_class: int, rng: np.random.Generator,
                    params: AugmentParams = AugmentParams(),
                    pair_map: ChannelPairMap | None = None) -> Dataset:
    """Produce ``n_per_class`` augmented trials per class present in ``ds``.

    Each output applies ``method`` to a trial drawn with replacement from its
    class.  ``dwt`` pairs it with a different same-class trial when one
    exists.  Only the augmented trials are returned.
    """
    if method not in BASELINES:
        raise ValueError(f"unknown augmentation {method!r}; choose from {', '.join(BASELINES)}")
    if n_per_class < 0:
        raise ValueError("n_per_class must be non-negative")
    if method == "channel_reflection" and pair_map is None:
        pair_map = ChannelPairMap.standard(ds.channel_names, ds.class_names)
    labels = ds.labels
    out = []
    for c in np.unique(labels):
        pool = np.flatnonzero(labels == c)
        for _ in range(n_per_class):
            i = int(rng.choice(pool))
            partner = None
            if method == "dwt":
                others = pool[pool != i] if len(pool) > 1 else pool
                partner = ds.trials[int(rng.choice(others))]
            out.append(apply_baseline(method, ds.trials[i], rng, params, partner, pair_map))
    return ds.with_trials(out)
