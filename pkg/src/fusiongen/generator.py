"""U-Net shaped denoising autoencoder and fused-trial generation.

The encoder runs three strided temporal convolutions (default strides
5, 5, 2) with depths 8, 16, 32.  The decoder mirrors it with transposed
convolutions, concatenating each mirrored encoder map before the next
up-layer, and ends in a linear stride-1 reconstruction layer.  Inputs are
divided by a fixed scale (the RMS of the training set) so the network works
at unit amplitude regardless of the data's units.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset, Trial
from .fusion import FusionConfig, FusionPlan, fuse_bottleneck, propagate_plan

log = logging.getLogger(__name__)

DEFAULT_STRIDES = (5, 5, 2)
DEFAULT_DEPTHS = (8, 16, 32)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 100
    noise_coefficient: float = 5.0
    seed: int = 0
    strides: tuple = DEFAULT_STRIDES
    depths: tuple = DEFAULT_DEPTHS
    skips: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.noise_coefficient < 0:
            raise ValueError("noise_coefficient must be non-negative")
        if len(self.strides) != 3 or len(self.depths) != 3:
            raise ValueError("the generator has exactly three encoder layers")


@dataclass
class GeneratorModel:
    input_shape: tuple
    strides: tuple
    depths: tuple
    layers: dict
    scale: float = 1.0
    skips: bool = True

    ENCODER = ("enc1", "enc2", "enc3")
    DECODER = ("dec1", "dec2", "dec3", "out")

    @classmethod
    def init(cls, input_shape, strides=DEFAULT_STRIDES, depths=DEFAULT_DEPTHS,
             rng=None, scale=1.0, skips=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        strides = tuple(int(s) for s in strides)
        depths = tuple(int(d) for d in depths)
        d1, d2, d3 = depths
        r1, r2, r3 = strides
        layers = {
            "enc1": nn.ConvLayerParams.init(1, d1, r1, "down", rng),
            "enc2": nn.ConvLayerParams.init(d1, d2, r2, "down", rng),
            "enc3": nn.ConvLayerParams.init(d2, d3, r3, "down", rng),
            "dec1": nn.ConvLayerParams.init(d3, d2, r3, "up", rng),
            "dec2": nn.ConvLayerParams.init(2 * d2 if skips else d2, d1, r2, "up", rng),
            "dec3": nn.ConvLayerParams.init(2 * d1 if skips else d1, d1, r1, "up", rng),
            "out": nn.ConvLayerParams.init(d1, 1, 1, "up", rng),
        }
        return cls(tuple(input_shape), strides, depths, layers, float(scale), bool(skips))

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    @property
    def padded_length(self) -> int:
        T = self.input_shape[1]
        r = self.total_stride
        return -(-T // r) * r

    def layer_lengths(self) -> list:
        T = self.padded_length
        out = []
        for r in self.strides:
            T //= r
            out.append(T)
        return out

    def params(self) -> dict:
        """Flat ``name.kernels`` / ``name.bias`` view onto the live parameter arrays."""
        out = {}
        for name, p in self.layers.items():
            out[f"{name}.kernels"] = p.kernels
            out[f"{name}.bias"] = p.bias
        return out

    def copy(self) -> "GeneratorModel":
        return GeneratorModel(self.input_shape, self.strides, self.depths,
                              {k: v.copy() for k, v in self.layers.items()}, self.scale, self.skips)

    # --------------------------------------------------------------- forward
    # Internal tensors are channels-last (B, C, t, d); the public encode /
    # decode_with_skips speak (d, C, t) feature maps.

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != tuple(self.input_shape):
            raise ValueError(f"input shape {X.shape[1:]} != model input shape {tuple(self.input_shape)}")
        B, C, T = X.shape
        x0 = np.zeros((B, C, self.padded_length, 1))
        x0[:, :, :T, 0] = X / self.scale
        return x0

    def _encode(self, x0):
        cache = {}
        h = x0
        stack = []
        for name in self.ENCODER:
            z = nn.conv_cl(h, self.layers[name])
            cache[name] = (h, z)
            h = nn.relu(z)
            stack.append(h)
        return stack, cache

    def _decode(self, stack):
        cache = {}
        h = stack[-1]
        skips = [stack[1], stack[0], None]
        for name, skip in zip(self.DECODER[:3], skips):
            z = nn.tconv_cl(h, self.layers[name])
            a = nn.relu(z)
            cache[name] = (h, z, a.shape[-1])
            h = np.concatenate([a, skip], axis=-1) if (self.skips and skip is not None) else a
        y = nn.tconv_cl(h, self.layers["out"])
        cache["out"] = (h,)
        return y, cache

    def _decode_backward(self, gy, cache, grads):
        (h,) = cache["out"]
        gh, gW, gb = nn.tconv_cl_backward(h, self.layers["out"], gy)
        grads["out.kernels"] += gW
        grads["out.bias"] += gb
        n_layers = len(self.strides)
        gstack = [0.0] * n_layers
        for i in reversed(range(3)):
            name = self.DECODER[i]
            h_in, z, depth_a = cache[name]
            skip_layer = n_layers - 2 - i  # dec1 takes layer 1, dec2 takes layer 0
            if self.skips and skip_layer >= 0:
                ga, gstack[skip_layer] = gh[..., :depth_a], gh[..., depth_a:]
            else:
                ga = gh
            gz = nn.relu_backward(z, ga)
            gh, gW, gb = nn.tconv_cl_backward(h_in, self.layers[name], gz)
            grads[f"{name}.kernels"] += gW
            grads[f"{name}.bias"] += gb
        gstack[-1] = gh
        return gstack

    def _encode_backward(self, gstack, cache, grads):
        g_next = 0.0
        for i in reversed(range(len(self.ENCODER))):
            name = self.ENCODER[i]
            h_in, z = cache[name]
            gz = nn.relu_backward(z, gstack[i] + g_next)
            g_next, gW, gb = nn.conv_cl_backward(h_in, self.layers[name], gz)
            grads[f"{name}.kernels"] += gW
            grads[f"{name}.bias"] += gb
        return g_next

    def _check_stack(self, stack_cl):
        for s, T_l, d in zip(stack_cl, self.layer_lengths(), self.depths):
            if s.shape[1:] != (self.input_shape[0], T_l, d):
                raise ValueError(f"stack layer shape {s.shape} does not match the model")

    def encode(self, X) -> list:
        """Feature stack for one ``C x T`` trial (or a batch): shallow layer first, bottleneck last.

        Each layer is a ``(d, C, t)`` map, or ``(B, d, C, t)`` for a batch.
        """
        X = np.asarray(X, dtype=np.float64)
        stack, _ = self._encode(self._prepare(X))
        stack = [np.ascontiguousarray(s.transpose(0, 3, 1, 2)) for s in stack]
        return [s[0] for s in stack] if X.ndim == 2 else stack

    def decode_with_skips(self, stack) -> np.ndarray:
        """Reconstruct ``C x T`` (or ``B x C x T``) from a feature stack."""
        single = np.ndim(stack[-1]) == 3
        if single:
            stack = [np.asarray(s)[None] for s in stack]
        stack_cl = [np.ascontiguousarray(np.asarray(s, dtype=np.float64).transpose(0, 2, 3, 1))
                    for s in stack]
        self._check_stack(stack_cl)
        y, _ = self._decode(stack_cl)
        out = y[:, :, :self.input_shape[1], 0] * self.scale
        return out[0] if single else out

    def reconstruct(self, X) -> np.ndarray:
        return self.decode_with_skips(self.encode(X))

    # -------------------------------------------------------------- training

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params().items()}

    def _loss_head(self, y, X_ref):
        T = self.input_shape[1]
        ref = np.asarray(X_ref, dtype=np.float64).reshape(y.shape[0], *self.input_shape) / self.scale
        pred = y[:, :, :T, 0]
        gy = np.zeros_like(y)
        gy[:, :, :T, 0] = nn.mse_backward(pred, ref)
        return nn.mse(pred, ref), gy

    def loss_and_grads(self, X_in, X_target):
        """MSE (in scaled units) between reconstruction of ``X_in`` and ``X_target``, with parameter gradients."""
        stack, ecache = self._encode(self._prepare(X_in))
        y, dcache = self._decode(stack)
        loss, gy = self._loss_head(y, X_target)
        grads = self.zero_grads()
        gstack = self._decode_backward(gy, dcache, grads)
        self._encode_backward(gstack, ecache, grads)
        return loss, grads

    def fused_loss_and_grads(self, X_target, X_source, plan: FusionPlan, X_ref):
        """Loss of the fused reconstruction against ``X_ref`` and its parameter gradients.

        The same plan is applied to every batch item.  Gradients flow into the
        target encoding outside the plan's regions and into the source
        encoding inside them; the plan itself is held fixed.
        """
        st, ct = self._encode(self._prepare(X_target))
        ss, cs = self._encode(self._prepare(X_source))
        to_map = lambda a: a.transpose(0, 3, 1, 2)
        fused = [np.stack(f) for f in zip(*[
            propagate_plan(plan, [to_map(l)[b] for l in st], [to_map(l)[b] for l in ss])
            for b in range(st[0].shape[0])])]
        fused = [np.ascontiguousarray(f.transpose(0, 2, 3, 1)) for f in fused]
        y, dcache = self._decode(fused)
        loss, gy = self._loss_head(y, X_ref)
        grads = self.zero_grads()
        gstack = self._decode_backward(gy, dcache, grads)
        gt = [np.array(np.broadcast_to(g, l.shape)) for g, l in zip(gstack, st)]
        gs = [np.zeros_like(l) for l in ss]
        for ell, regs in plan.layer_regions.items():
            for r in regs:
                sl = (slice(None), r.channel, slice(r.start, r.stop), slice(None))
                gs[ell][sl] += gt[ell][sl]
                gt[ell][sl] = 0.0
        g_bott = gt[-1].copy()
        for cell, match in zip(plan.selected, plan.matches):
            if match is None:
                continue
            gs[-1][:, match[0], match[1], :] += g_bott[:, cell[0], cell[1], :]
            gt[-1][:, cell[0], cell[1], :] = 0.0
        self._encode_backward(gt, ct, grads)
        self._encode_backward(gs, cs, grads)
        return loss, grads


# ------------------------------------------------------------------ training


def add_training_noise(x, noise_coefficient: float, rng: np.random.Generator) -> np.ndarray:
    """``x + sigma * G`` with ``sigma = noise_coefficient / 100 * std(x)`` (one scalar per trial)."""
    x = np.asarray(x, dtype=np.float64)
    if noise_coefficient == 0:
        return x.copy()
    sigma = noise_coefficient / 100.0 * x.std()
    return x + sigma * rng.standard_normal(x.shape)


@dataclass
class TrainResult:
    model: GeneratorModel
    history: list = field(default_factory=list)


def train_dae(ds, cfg: TrainConfig = TrainConfig(), log_every: int = 0) -> TrainResult:
    """Mini-batch Adam training of the denoising autoencoder on aligned trials.

    ``ds`` is a :class:`Dataset` or an array ``(n, C, T)``.  Each epoch
    shuffles the trials, perturbs every input with Gaussian noise and fits
    the clean trial.  Returns the model and the per-epoch mean loss.
    """
    X = ds.X if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("train_dae needs a non-empty (n, C, T) set of trials")
    rng = np.random.default_rng(cfg.seed)
    scale = float(np.sqrt(np.mean(X * X))) or 1.0
    model = GeneratorModel.init(X.shape[1:], cfg.strides, cfg.depths, rng, scale, cfg.skips)
    state = nn.AdamState(lr=cfg.lr)
    params = model.params()
    history = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            clean = X[idx]
            noisy = np.stack([add_training_noise(x, cfg.noise_coefficient, rng) for x in clean])
            loss, grads = model.loss_and_grads(noisy, clean)
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting {start}; "
                    f"try a smaller lr (currently {cfg.lr})")
            nn.adam_step(params, grads, state)
            total += loss * len(idx)
        history.append(total / n)
        if log_every and (epoch + 1) % log_every == 0:
            log.info("epoch %d loss %.6g", epoch + 1, history[-1])
    return TrainResult(model, history)


# --------------------------------------------------------------- generation


def _fuse_stacks(model, target_stack, source_stack, cfg):
    _, plan = fuse_bottleneck(target_stack[-1], source_stack[-1], cfg)
    return propagate_plan(plan, target_stack, source_stack), plan


def generate_trial(model: GeneratorModel, target: Trial, source: Trial,
                   cfg: FusionConfig = FusionConfig()) -> Trial:
    """Decode the target's feature stack after fusing in the source's features."""
    if target.label != source.label:
        raise ValueError(f"label mismatch: target {target.label}, source {source.label}")
    if target.samples.shape != source.samples.shape:
        raise ValueError("target and source shapes differ")
    st = model.encode(target.samples)
    ss = model.encode(source.samples)
    fused, _ = _fuse_stacks(model, st, ss, cfg)
    return target.with_samples(model.decode_with_skips(fused))


def sample_pairs(target_labels, source_labels, n_per_class: int, rng: np.random.Generator,
                 within: bool = False) -> list:
    """Same-class ``(target_index, source_index)`` pairs, ``n_per_class`` per target class.

    In ``within`` mode sources index the target pool and exclude the chosen
    target whenever another same-class trial exists.
    """
    target_labels = np.asarray(target_labels)
    source_labels = np.asarray(target_labels if within else source_labels)
    pairs = []
    for c in np.unique(target_labels):
        t_pool = np.flatnonzero(target_labels == c)
        s_pool = np.flatnonzero(source_labels == c)
        if len(s_pool) == 0:
            raise ValueError(f"no source trials for class {c}")
        for _ in range(n_per_class):
            ti = int(rng.choice(t_pool))
            pool = s_pool[s_pool != ti] if within and len(s_pool) > 1 else s_pool
            pairs.append((ti, int(rng.choice(pool))))
    return pairs


def generate_augmented_set(model: GeneratorModel, targets: Dataset, sources: Dataset | None,
                           n_per_class: int, cfg: FusionConfig = FusionConfig(), seed: int = 0,
                           return_pairs: bool = False):
    """Generate ``n_per_class`` fused trials per target class.

    ``sources=None`` selects within-subject mode, where sources come from the
    remaining target trials.  Each trial gets its own fusion seed drawn from
    ``seed``; generated trials keep the target's label and ids.
    """
    rng = np.random.default_rng(seed)
    within = sources is None
    src = targets if within else sources
    if n_per_class <= 0 or len(targets) == 0:
        out = targets.with_trials([])
        return (out, []) if return_pairs else out
    pairs = sample_pairs(targets.labels, src.labels, n_per_class, rng, within)
    fusion_seeds = rng.integers(0, 2**63 - 1, size=len(pairs))
    t_idx = sorted({p[0] for p in pairs})
    s_idx = sorted({p[1] for p in pairs})
    t_stack = model.encode(targets.X[t_idx])
    s_stack = model.encode(src.X[s_idx])
    t_pos = {i: k for k, i in enumerate(t_idx)}
    s_pos = {i: k for k, i in enumerate(s_idx)}
    fused_all = []
    for (ti, si), fs in zip(pairs, fusion_seeds):
        st = [l[t_pos[ti]] for l in t_stack]
        ss = [l[s_pos[si]] for l in s_stack]
        fused, _ = _fuse_stacks(model, st, ss, FusionConfig(cfg.alpha, int(fs)))
        fused_all.append(fused)
    batch = [np.stack([f[i] for f in fused_all]) for i in range(len(t_stack))]
    recon = model.decode_with_skips(batch)
    trials = [targets.trials[ti].with_samples(x) for (ti, _), x in zip(pairs, recon)]
    out = targets.with_trials(trials)
    return (out, pairs) if return_pairs else out


# -------------------------------------------------------------- persistence


def save_model(model: GeneratorModel, path, history=None) -> None:
    meta = {
        "input_shape": list(model.input_shape),
        "strides": list(model.strides),
        "depths": list(model.depths),
        "scale": model.scale,
        "skips": model.skips,
        "loss_history": [float(v) for v in (history or [])],
    }
    nn.write_weights(path, list(model.layers.items()), meta)


def load_model(path):
    """Returns ``(model, loss_history)``."""
    layers, meta = nn.read_weights(path)
    model = GeneratorModel(tuple(meta["input_shape"]), tuple(meta["strides"]), tuple(meta["depths"]),
                           dict(layers), float(meta["scale"]), bool(meta.get("skips", True)))
    return model, list(meta.get("loss_history", []))
