"""Feature matching fusion at the bottleneck and its propagation to skip layers.

A bottleneck map ``F`` has shape ``(d, C, T')``.  Position ``q = c * T' + t'``
names the depth-``d`` vector ``F[:, c, t']``.  Fusion picks ``k`` target
positions, swaps each for the most cosine-similar source vector, and then
copies coordinate-aligned source windows into the shallower layers so the
decoder's skip connections see the same substitution.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass(frozen=True)
class LayerRegion:
    layer: int
    channel: int
    start: int
    stop: int


@dataclass
class FusionPlan:
    """Selected bottleneck cells, their matches and the derived skip-layer windows.

    ``selected`` and ``matches`` hold ``(c, t')`` pairs.  A match of ``None``
    marks a zero-norm target (or one facing only zero-norm sources) that keeps
    its own feature; such cells are listed in ``skipped`` and produce no
    layer regions.
    """

    bottleneck_shape: tuple
    selected: list = field(default_factory=list)
    matches: list = field(default_factory=list)
    similarities: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    layer_regions: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.selected)

    def to_dict(self) -> dict:
        return {
            "bottleneck_shape": list(self.bottleneck_shape),
            "selected": [list(s) for s in self.selected],
            "matches": [None if m is None else list(m) for m in self.matches],
            "similarities": [None if s is None or math.isnan(s) else float(s) for s in self.similarities],
            "skipped": [list(s) for s in self.skipped],
            "layer_regions": {
                str(layer): [[r.channel, r.start, r.stop] for r in regs]
                for layer, regs in self.layer_regions.items()
            },
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def vectorize(F) -> np.ndarray:
    """``(d, C, T')`` map to ``(C*T', d)`` rows; row ``c*T' + t'`` is ``F[:, c, t']``."""
    F = np.asarray(F, dtype=np.float64)
    d = F.shape[0]
    return F.reshape(d, -1).T.copy()


def reassemble(vectors, shape) -> np.ndarray:
    """Inverse of :func:`vectorize` for a map of ``shape = (d, C, T')``."""
    d = shape[0]
    return np.asarray(vectors, dtype=np.float64).T.reshape(d, *shape[1:]).copy()


def match_features(targets, sources, Q):
    """For every ``q`` in ``Q`` return the source index with the highest cosine similarity.

    Returns ``(matches, similarities)``; a match of ``-1`` (similarity
    ``nan``) marks a target that cannot be matched.
    """
    targets = np.asarray(targets, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.int64)
    return kernels.cosine_argmax(targets[Q], sources)


def sample_positions(N: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    k = int(round(alpha * N))
    return rng.choice(N, size=k, replace=False) if k else np.zeros(0, dtype=np.int64)


def fuse_bottleneck(F_t, F_m, cfg: FusionConfig):
    """Replace ``round(alpha * N)`` random target vectors by their best source match."""
    F_t = np.asarray(F_t, dtype=np.float64)
    F_m = np.asarray(F_m, dtype=np.float64)
    if F_t.shape != F_m.shape or F_t.ndim != 3:
        raise ValueError(f"bottleneck shapes differ: {F_t.shape} vs {F_m.shape}")
    _, C, Tb = F_t.shape
    N = C * Tb
    rng = np.random.default_rng(cfg.seed)
    Q = sample_positions(N, cfg.alpha, rng)
    plan = FusionPlan(bottleneck_shape=F_t.shape)
    if len(Q) == 0:
        return F_t.copy(), plan
    vt = vectorize(F_t)
    vm = vectorize(F_m)
    idx, sims = match_features(vt, vm, Q)
    out = vt.copy()
    for q, p, s in zip(Q, idx, sims):
        cell = divmod(int(q), Tb)
        plan.selected.append(cell)
        if p < 0:
            plan.matches.append(None)
            plan.similarities.append(float("nan"))
            plan.skipped.append(cell)
            continue
        out[q] = vm[p]
        plan.matches.append(divmod(int(p), Tb))
        plan.similarities.append(float(s))
    return reassemble(out, F_t.shape), plan


def layer_window(t_b: int, T_layer: int, T_bottleneck: int) -> tuple:
    """Time window ``[floor(t*Tl/TL), ceil((t+1)*Tl/TL))`` of layer length ``Tl`` covering bottleneck cell ``t``."""
    start = (t_b * T_layer) // T_bottleneck
    stop = -((-(t_b + 1) * T_layer) // T_bottleneck)
    return start, stop


def plan_regions(plan: FusionPlan, layer_lengths) -> dict:
    """Fill ``plan.layer_regions`` for every shallower layer and return it.

    ``layer_lengths`` lists the time length of each layer, shallow first,
    bottleneck last.
    """
    T_b = layer_lengths[-1]
    regions = {}
    for ell, T_l in enumerate(layer_lengths[:-1]):
        regs = []
        for cell, match in zip(plan.selected, plan.matches):
            if match is None:
                continue
            c, t_b = cell
            start, stop = layer_window(t_b, T_l, T_b)
            regs.append(LayerRegion(ell, c, start, stop))
        regions[ell] = regs
    plan.layer_regions = regions
    return regions


def propagate_plan(plan: FusionPlan, target_stack, source_stack):
    """Apply ``plan`` to every layer of ``target_stack`` (shallow first, bottleneck last).

    The bottleneck receives each matched source vector; shallower layers copy
    the source features found at the same channel row and time window.
    """
    if len(target_stack) != len(source_stack):
        raise ValueError("stacks differ in depth")
    for a, b in zip(target_stack, source_stack):
        if np.shape(a) != np.shape(b):
            raise ValueError(f"stack layer shapes differ: {np.shape(a)} vs {np.shape(b)}")
    out = [np.array(F, dtype=np.float64, copy=True) for F in target_stack]
    if not plan.selected:
        return out
    lengths = [F.shape[-1] for F in out]
    if tuple(out[-1].shape) != tuple(plan.bottleneck_shape):
        raise ValueError("plan was made for a different bottleneck shape")
    regions = plan_regions(plan, lengths)
    for ell, regs in regions.items():
        src = source_stack[ell]
        for r in regs:
            out[ell][:, r.channel, r.start:r.stop] = src[:, r.channel, r.start:r.stop]
    bott_src = np.asarray(source_stack[-1])
    for cell, match in zip(plan.selected, plan.matches):
        if match is None:
            continue
        out[-1][:, cell[0], cell[1]] = bott_src[:, match[0], match[1]]
    return out
