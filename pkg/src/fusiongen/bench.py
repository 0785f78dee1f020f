"""Few-shot evaluation protocol, spectrum analysis, 2-D projection and result files.

Trials are identified by their index in the dataset handed to the runners.
Every fold records which indices fed alignment, generator training,
augmentation, fusion and classifier fitting, and the run fails with
:class:`LeakageError` if a test index shows up in any of them.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .alignment import DEFAULT_EPSILON_REL, SCOPES, compute_reference, scope_keys
from .augment import BASELINES, AugmentParams, augment_dataset
from .data import Dataset
from .decoding import DEFAULT_N_FILTERS, evaluate_accuracy
from .fusion import FusionConfig
from .generator import TrainConfig, generate_augmented_set, train_dae

log = logging.getLogger(__name__)

MODES = ("within", "cross")
AUGMENTATIONS = ("none", *BASELINES, "fusiongen", *(f"{b}+fusiongen" for b in BASELINES))
CSV_HEADER = ("dataset", "subject", "mode", "trials", "method", "mean_acc", "std_acc", "seed_accs")
HIGH_BAND = (24.0, 32.0)
LOW_BAND = (8.0, 24.0)
DEFAULT_PROFILES = ((5, 1, 1), (5, 2, 1), (5, 5, 2))


class LeakageError(RuntimeError):
    """A test trial reached a fitting step."""


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "within"
    n_train_per_class: int = 5
    augmentation: str = "none"
    n_generated_per_class: int = 20
    repeats: int = 10
    master_seed: int = 0
    alignment_scope: str = "session"
    align: bool = True
    train: TrainConfig = TrainConfig()
    fusion: FusionConfig = FusionConfig()
    augment: AugmentParams = AugmentParams()
    n_filters: int = DEFAULT_N_FILTERS
    generator_pool: str = "union"
    dataset_name: str = "synthetic"
    jobs: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n_train_per_class < 1:
            raise ValueError("n_train_per_class must be at least 1")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.n_generated_per_class < 0:
            raise ValueError("n_generated_per_class must be non-negative")
        if self.augmentation not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {self.augmentation!r}")
        if self.alignment_scope not in SCOPES:
            raise ValueError(f"alignment_scope must be one of {SCOPES}")
        if self.generator_pool not in ("union", "target"):
            raise ValueError("generator_pool must be 'union' or 'target'")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("train", "fusion", "augment"):
            d[k] = {kk: list(v) if isinstance(v, tuple) else v for kk, v in d[k].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        nested = {"train": TrainConfig, "fusion": FusionConfig, "augment": AugmentParams}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                sub = dict(d[key])
                ok = {f.name for f in fields(typ)}
                bad = set(sub) - ok
                if bad:
                    raise ValueError(f"unknown {key} config keys: {', '.join(sorted(bad))}")
                d[key] = typ(**{k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()})
        return cls(**d)


@dataclass(frozen=True)
class Method:
    """One column of a result table: an augmentation and the fusion ratio it uses."""

    name: str
    augmentation: str
    alpha: float | None = None


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    subject: str
    mode: str
    trials: int
    method: str
    accuracies: tuple

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    audits: list = field(default_factory=list)

    def sorted(self) -> "ResultTable":
        key = lambda r: (r.dataset, r.mode, r.trials, r.subject, r.method)  # noqa: E731
        return ResultTable(sorted(self.rows, key=key), list(self.audits))

    def methods(self) -> list:
        return list(dict.fromkeys(r.method for r in self.rows))

    def mean_over_subjects(self, method: str) -> float:
        vals = [r.mean_accuracy for r in self.rows if r.method == method]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.dataset, r.subject, r.mode, r.trials, r.method,
                        repr(r.mean_accuracy), repr(r.std_accuracy),
                        ";".join(repr(float(a)) for a in r.accuracies)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        rd = csv.reader(io.StringIO(text))
        header = next(rd, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = []
        for rec in rd:
            accs = tuple(float(a) for a in rec[7].split(";")) if rec[7] else ()
            rows.append(ResultRow(rec[0], rec[1], rec[2], int(rec[3]), rec[4], accs))
        return cls(rows)

    def to_text(self) -> str:
        """Subjects down, methods across, mean accuracy in percent with two decimals."""
        blocks = []
        groups = {}
        for r in self.rows:
            groups.setdefault((r.dataset, r.mode, r.trials), []).append(r)
        for (dataset, mode, trials), rows in groups.items():
            methods = list(dict.fromkeys(r.method for r in rows))
            subjects = list(dict.fromkeys(r.subject for r in rows))
            cell = {(r.subject, r.method): r.mean_accuracy for r in rows}
            width = max(8, *(len(m) for m in methods))
            lines = [f"{dataset} | {mode}-subject | {trials} trials per class",
                     "Subject".ljust(10) + "".join(m.rjust(width + 2) for m in methods)]
            for s in subjects:
                vals = [cell.get((s, m)) for m in methods]
                lines.append(s.ljust(10) + "".join(
                    ("-" if v is None else f"{100 * v:.2f}").rjust(width + 2) for v in vals))
            avg = [np.mean([cell[(s, m)] for s in subjects if (s, m) in cell]) for m in methods]
            lines.append("Avg".ljust(10) + "".join(f"{100 * v:.2f}".rjust(width + 2) for v in avg))
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + ("\n" if blocks else "")


def emit_results(table: ResultTable, path) -> tuple:
    """Write ``<path>.csv`` and ``<path>.txt`` (``path`` may carry either suffix).

    Returns the two paths written.
    """
    base = Path(path)
    if base.suffix in (".csv", ".txt"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    t = table.sorted()
    csv_path = base.with_suffix(".csv")
    txt_path = base.with_suffix(".txt")
    csv_path.write_text(t.to_csv())
    txt_path.write_text(t.to_text())
    return csv_path, txt_path


# ------------------------------------------------------------------ splits


def split_temporal_indices(labels, n_train_per_class: int):
    """Per class, the first ``n_train_per_class`` positions go to train, the rest to test."""
    if n_train_per_class < 1:
        raise ValueError("n_train_per_class must be at least 1")
    labels = np.asarray(labels)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        train.extend(idx[:n_train_per_class].tolist())
        test.extend(idx[n_train_per_class:].tolist())
    return sorted(train), sorted(test)


def split_temporal(ds: Dataset, n_train_per_class: int):
    """Temporal few-shot split of one subject's dataset into ``(train, test)``."""
    tr, te = split_temporal_indices(ds.labels, n_train_per_class)
    return ds.subset(tr), ds.subset(te)


def subject_indices(ds: Dataset) -> dict:
    out = {}
    for i, t in enumerate(ds.trials):
        out.setdefault(t.subject_id, []).append(i)
    return out


# ------------------------------------------------------------------ seeds


def unit_seeds(master_seed: int, fold: int, repeat: int) -> dict:
    """Independent seeds for one (fold, repeat) unit, fixed by ``master_seed``."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(fold), int(repeat)))
    g, f, a = (int(v) for v in ss.generate_state(3, dtype=np.uint64) >> np.uint64(1))
    return {"generator": g, "fusion": f, "augment": a}


# ------------------------------------------------------------------ alignment


def _fit_alignment(ds: Dataset, fit_idx, scope: str, epsilon_rel=DEFAULT_EPSILON_REL) -> dict:
    keys = scope_keys(ds, scope)
    groups = {}
    for i in fit_idx:
        groups.setdefault(keys[i], []).append(i)
    return {k: compute_reference([ds.trials[i] for i in idx], epsilon_rel) for k, idx in groups.items()}


def _apply_alignment(ds: Dataset, idx, refs: dict, scope: str) -> Dataset:
    keys = scope_keys(ds, scope)
    out = []
    for i in idx:
        k = keys[i]
        if k not in refs:
            # a session unseen in training falls back to its subject's reference
            subj = ds.trials[i].subject_id
            cand = [r for kk, r in refs.items() if isinstance(kk, tuple) and kk[0] == subj]
            if not cand:
                raise ValueError(f"no alignment reference for group {k!r}")
            ref = cand[0]
        else:
            ref = refs[k]
        out.append(ref.apply_trial(ds.trials[i]))
    return ds.with_trials(out)


# ------------------------------------------------------------------ folds


@dataclass
class FoldAudit:
    fold: str
    repeat: int
    test: frozenset
    fit_sets: dict

    def violations(self) -> dict:
        return {name: sorted(ids & self.test) for name, ids in self.fit_sets.items() if ids & self.test}

    @property
    def passed(self) -> bool:
        return not self.violations()


def _effective_filters(ds: Dataset, n_filters: int) -> int:
    C = len(ds.channel_names)
    K = len(ds.class_names)
    return min(n_filters, C if K <= 2 else C * K)


def _fold_specs(ds: Dataset, cfg: ExperimentConfig) -> list:
    """``(name, train_ids, test_ids, source_ids)`` per fold."""
    specs = []
    by_subject = subject_indices(ds)
    labels = ds.labels
    for s, idx in by_subject.items():
        idx = np.asarray(idx)
        tr, te = split_temporal_indices(labels[idx], cfg.n_train_per_class)
        train_ids = idx[tr].tolist()
        test_ids = idx[te].tolist()
        if not test_ids:
            raise ValueError(f"subject {s} has no test trials with {cfg.n_train_per_class} train trials per class")
        if cfg.mode == "within":
            specs.append((s, train_ids, test_ids, []))
        else:
            src = [i for other, ids in by_subject.items() if other != s for i in ids]
            if not src:
                raise ValueError("cross-subject mode needs at least two subjects")
            specs.append((s, train_ids, test_ids, src))
    return specs


def _run_unit(ds: Dataset, cfg: ExperimentConfig, fold_index: int, spec, repeat: int, methods):
    name, train_ids, test_ids, source_ids = spec
    seeds = unit_seeds(cfg.master_seed, fold_index, repeat)
    pool_ids = sorted(source_ids + train_ids)
    fit_sets = {}

    if cfg.align:
        refs = _fit_alignment(ds, pool_ids, cfg.alignment_scope)
        fit_sets["alignment"] = set(pool_ids)
        aligned = dict(zip(pool_ids, _apply_alignment(ds, pool_ids, refs, cfg.alignment_scope).trials))
        test = _apply_alignment(ds, test_ids, refs, cfg.alignment_scope)
    else:
        aligned = {i: ds.trials[i] for i in pool_ids}
        test = ds.subset(test_ids)
    pool = ds.with_trials([aligned[i] for i in pool_ids])
    targets = ds.with_trials([aligned[i] for i in train_ids])
    sources = ds.with_trials([aligned[i] for i in source_ids]) if source_ids else None

    needs_gen = any(m.augmentation.endswith("fusiongen") for m in methods)
    model = None
    if needs_gen and cfg.n_generated_per_class > 0:
        gen_ids = pool_ids if cfg.generator_pool == "union" else train_ids
        gen_set = ds.with_trials([aligned[i] for i in gen_ids])
        model = train_dae(gen_set, replace(cfg.train, seed=seeds["generator"])).model
        fit_sets["generator"] = set(gen_ids)

    n_filters = _effective_filters(ds, cfg.n_filters)
    accs = {}
    for m in methods:
        parts = [pool]
        fit_ids = set(pool_ids)
        aug = m.augmentation
        if aug != "none" and aug != "fusiongen" and cfg.n_generated_per_class > 0:
            base = aug.split("+")[0]
            rng = np.random.default_rng(seeds["augment"])
            parts.append(augment_dataset(pool, base, cfg.n_generated_per_class, rng, cfg.augment))
            fit_sets[f"augment:{m.name}"] = set(pool_ids)
        if aug.endswith("fusiongen") and model is not None:
            alpha = cfg.fusion.alpha if m.alpha is None else m.alpha
            gen, pairs = generate_augmented_set(model, targets, sources, cfg.n_generated_per_class,
                                                FusionConfig(alpha, cfg.fusion.seed), seeds["fusion"],
                                                return_pairs=True)
            src_map = source_ids if sources is not None else train_ids
            fit_sets[f"fusion:{m.name}"] = ({train_ids[t] for t, _ in pairs}
                                           | {src_map[s] for _, s in pairs})
            parts.append(gen)
        train = pool.with_trials([t for p in parts for t in p.trials])
        fit_sets[f"classifier:{m.name}"] = fit_ids
        accs[m.name] = evaluate_accuracy(train, test, n_filters)
    audit = FoldAudit(name, repeat, frozenset(test_ids), fit_sets)
    if not audit.passed:
        raise LeakageError(f"fold {name} repeat {repeat}: test trials used in {audit.violations()}")
    return fold_index, repeat, accs, audit


def _unit_task(args):
    return _run_unit(*args)


def _default_methods(cfg: ExperimentConfig) -> list:
    return [Method(cfg.augmentation, cfg.augmentation)]


def run_experiment(ds: Dataset, cfg: ExperimentConfig, methods=None) -> ResultTable:
    """Run every fold and repeat of ``cfg`` for each method and collect one row per (subject, method).

    Methods evaluated together share the alignment, the trained generator
    and the seeds of each (fold, repeat) unit, so their differences are
    paired.
    """
    methods = list(methods) if methods else _default_methods(cfg)
    for m in methods:
        if m.augmentation not in AUGMENTATIONS:
            raise ValueError(f"unknown augmentation {m.augmentation!r}")
    specs = _fold_specs(ds, cfg)
    tasks = [(ds, cfg, fi, spec, r, methods) for fi, spec in enumerate(specs) for r in range(cfg.repeats)]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_unit_task, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_run_unit(*t))
            log.info("fold %s repeat %d: %s", specs[t[2]][0], t[4],
                     ", ".join(f"{k}={v:.4f}" for k, v in results[-1][2].items()))
    results.sort(key=lambda r: (r[0], r[1]))
    table = ResultTable()
    for fi, spec in enumerate(specs):
        per = [r for r in results if r[0] == fi]
        for m in methods:
            accs = tuple(r[2][m.name] for r in per)
            table.rows.append(ResultRow(cfg.dataset_name, spec[0], cfg.mode, cfg.n_train_per_class,
                                        m.name, accs))
        table.audits.extend(r[3] for r in per)
    return table


def run_within_subject(ds: Dataset, cfg: ExperimentConfig, methods=None) -> ResultTable:
    """Per subject: temporal split, alignment from the train trials, optional augmentation, CSP-LDA."""
    return run_experiment(ds, replace(cfg, mode="within"), methods)


def run_cross_subject(ds: Dataset, cfg: ExperimentConfig, methods=None) -> ResultTable:
    """Leave-one-subject-out: other subjects plus the target's few-shot trials form the train pool."""
    return run_experiment(ds, replace(cfg, mode="cross"), methods)


def alpha_sweep(ds: Dataset, cfg: ExperimentConfig, alphas, include_none: bool = True) -> ResultTable:
    """FusionGen accuracy for several fusion ratios; one generator per (fold, repeat) serves all."""
    methods = [Method("none", "none")] if include_none else []
    methods += [Method(f"fusiongen@{a:g}", "fusiongen", float(a)) for a in alphas]
    return run_experiment(ds, cfg, methods)


# ------------------------------------------------------------------ spectra


def psd(x, sample_rate_hz: float):
    """Welch PSD: Hann windows of one second (or the whole signal if shorter), 50% overlap.

    Works along the last axis; returns ``(freqs, power)`` with power as a
    one-sided density.
    """
    x = np.asarray(x, dtype=np.float64)
    nper = min(int(round(sample_rate_hz)), x.shape[-1])
    return sps.welch(x, fs=sample_rate_hz, window="hann", nperseg=nper, noverlap=nper // 2,
                     detrend="constant", scaling="density", axis=-1)


def band_power(freqs, power, band) -> float:
    lo, hi = band
    sel = (freqs >= lo) & (freqs <= hi)
    df = freqs[1] - freqs[0] if len(freqs) > 1 else 1.0
    return float(np.sum(power[..., sel]) * df)


def compression_spectrum_report(ds: Dataset, stride_profiles=DEFAULT_PROFILES,
                                train_cfg: TrainConfig = TrainConfig(), holdout_per_class: int | None = None,
                                master_seed: int = 0, out_dir=None) -> dict:
    """Train one autoencoder per stride profile and compare held-out spectra.

    The last ``holdout_per_class`` trials of each class (a quarter by
    default) are held out.  For each profile the report holds the mean PSD
    of originals and reconstructions and the fraction of power each band
    keeps; ``high_retention`` uses 24-32 Hz.  With ``out_dir`` the report is
    also written as JSON, text and one SVG plot per profile.
    """
    labels = ds.labels
    counts = np.bincount(labels)
    n_hold = holdout_per_class if holdout_per_class is not None else max(1, int(counts[counts > 0].min()) // 4)
    n_train = int(counts[counts > 0].min()) - n_hold
    if n_train < 1:
        raise ValueError("not enough trials per class for a held-out split")
    tr, te = split_temporal_indices(labels, n_train)
    train, test = ds.subset(tr), ds.subset(te)
    fs = ds.sample_rate_hz
    X_test = test.X
    freqs, p_orig = psd(X_test, fs)
    p_orig_mean = p_orig.mean(axis=(0, 1))
    report = {"sample_rate_hz": fs, "freqs": freqs.tolist(), "original_psd": p_orig_mean.tolist(),
              "high_band": list(HIGH_BAND), "low_band": list(LOW_BAND), "profiles": []}
    for k, strides in enumerate(stride_profiles):
        strides = tuple(int(s) for s in strides)
        seed = unit_seeds(master_seed, k, 0)["generator"]
        cfg = replace(train_cfg, strides=strides, seed=seed)
        res = train_dae(train, cfg)
        recon = res.model.reconstruct(X_test)
        _, p_rec = psd(recon, fs)
        p_rec_mean = p_rec.mean(axis=(0, 1))
        entry = {
            "strides": list(strides),
            "compression": int(np.prod(strides)),
            "final_loss": res.history[-1] if res.history else None,
            "recon_psd": p_rec_mean.tolist(),
            "high_retention": band_power(freqs, p_rec_mean, HIGH_BAND) / band_power(freqs, p_orig_mean, HIGH_BAND),
            "low_retention": band_power(freqs, p_rec_mean, LOW_BAND) / band_power(freqs, p_orig_mean, LOW_BAND),
            "high_low_ratio": band_power(freqs, p_rec_mean, HIGH_BAND) / band_power(freqs, p_rec_mean, LOW_BAND),
        }
        report["profiles"].append(entry)
    if out_dir is not None:
        write_spectrum_report(report, out_dir)
    return report


def spectrum_text(report: dict) -> str:
    lines = ["strides      compression  high_retention  low_retention  high/low"]
    for p in report["profiles"]:
        lines.append(f"{'x'.join(map(str, p['strides'])):<12} {p['compression']:>11d}  "
                     f"{p['high_retention']:>14.4f}  {p['low_retention']:>13.4f}  {p['high_low_ratio']:>8.4f}")
    return "\n".join(lines) + "\n"


def write_spectrum_report(report: dict, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "spectrum_report.json", out / "spectrum_report.txt"]
    written[0].write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    written[1].write_text(spectrum_text(report))
    freqs = np.asarray(report["freqs"])
    for p in report["profiles"]:
        path = out / f"spectrum_{'x'.join(map(str, p['strides']))}.svg"
        plot_spectrum(freqs, np.asarray(report["original_psd"]), np.asarray(p["recon_psd"]),
                      f"{p['compression']}x compression", path)
        written.append(path)
    return written


# ------------------------------------------------------------------ projection


def _vectorized_covariances(trials) -> np.ndarray:
    X = np.stack([getattr(t, "samples", t) for t in trials]).astype(np.float64)
    covs = np.einsum("nct,ndt->ncd", X, X) / X.shape[2]
    iu = np.triu_indices(X.shape[1])
    return covs[:, iu[0], iu[1]]


def project_2d(trials) -> np.ndarray:
    """Principal-component projection of per-trial vectorized covariances, shape ``(n, 2)``.

    Each axis is signed so its largest-magnitude loading is positive.  With
    fewer than two informative directions the missing coordinates are zero.
    """
    if len(trials) == 0:
        return np.zeros((0, 2))
    V = _vectorized_covariances(trials)
    Vc = V - V.mean(axis=0)
    _, s, Wt = np.linalg.svd(Vc, full_matrices=False)
    out = np.zeros((len(V), 2))
    for k in range(min(2, Wt.shape[0])):
        if s[k] <= 1e-12 * max(s[0], 1e-300):
            continue
        w = Wt[k]
        if w[np.argmax(np.abs(w))] < 0:
            w = -w
        out[:, k] = Vc @ w
    return out


# ------------------------------------------------------------------ plots


def _svg_figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_spectrum(freqs, original, recon, title, path) -> None:
    plt = _svg_figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(freqs, np.maximum(original, 1e-300), label="original")
    ax.semilogy(freqs, np.maximum(recon, 1e-300), label="reconstruction")
    ax.axvspan(*HIGH_BAND, color="0.9")
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("power density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_projection(points, groups, path, title="covariance PCA") -> None:
    plt = _svg_figure()
    points = np.asarray(points)
    groups = list(groups)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    for g in dict.fromkeys(groups):
        sel = np.array([x == g for x in groups])
        ax.scatter(points[sel, 0], points[sel, 1], s=14, label=str(g))
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def summarize(table: ResultTable) -> dict:
    """Mean accuracy per method over all rows."""
    return {m: table.mean_over_subjects(m) for m in table.methods()}

