"""Command-line entry point: ``fusiongen <subcommand> [flags]``.

Exit status is 0 on success, 2 for bad flags and 1 for runtime failures,
which print one ``fusiongen: error:`` line on stderr.  Outputs default to
the directory named by ``FUSIONGEN_OUT`` (``fusiongen_out`` when unset).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

OUT_ENV = "FUSIONGEN_OUT"
log = logging.getLogger("fusiongen")


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "fusiongen_out")) / name


def _ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _profiles(text: str) -> tuple:
    return tuple(_ints(p) for p in text.split(";") if p)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


# ------------------------------------------------------------------ commands


def cmd_synth(a) -> None:
    from .data import SynthConfig, save_dataset, synthesize_dataset

    freqs = a.class_freqs or (10.0, 22.0, 12.0, 26.0)[:a.classes]
    cfg = SynthConfig(n_subjects=a.subjects, n_classes=a.classes, trials_per_class=a.trials_per_class,
                      n_channels=a.channels, n_samples=a.samples, sample_rate_hz=a.rate,
                      class_freqs_hz=freqs, mixing_strength=a.mixing, noise_floor=a.noise, seed=a.seed)
    ds = synthesize_dataset(cfg)
    out = a.out or _default_out("synthetic")
    save_dataset(ds, out)
    log.info("wrote %d trials to %s", len(ds), out)


def cmd_preprocess(a) -> None:
    from .data import PreprocessConfig, load_dataset, preprocess_dataset, save_dataset

    cfg = PreprocessConfig(a.band_low, a.band_high, a.rate, a.crop, a.taper)
    out = a.out or _default_out("preprocessed")
    save_dataset(preprocess_dataset(load_dataset(a.data), cfg), out)


def cmd_align(a) -> None:
    from .alignment import align_dataset
    from .data import load_dataset, save_dataset

    ds, refs = align_dataset(load_dataset(a.data), a.scope, a.epsilon_rel)
    out = Path(a.out or _default_out("aligned"))
    save_dataset(ds, out)
    doc = [{"epsilon": r.epsilon, "mean_cov": r.mean_cov.tolist(), "whitener": r.whitener.tolist()}
           for r in refs]
    (out / "alignment.json").write_text(json.dumps({"scope": a.scope, "references": doc}) + "\n")


def cmd_train(a) -> None:
    from .data import load_dataset
    from .generator import TrainConfig, save_model, train_dae

    cfg = TrainConfig(lr=a.lr, batch_size=a.batch_size, epochs=a.epochs, noise_coefficient=a.noise,
                      seed=a.seed, strides=a.strides, depths=a.depths, skips=not a.no_skips)
    res = train_dae(load_dataset(a.data), cfg, log_every=a.log_every)
    out = Path(a.out or _default_out("generator.fgw"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(res.model, out, res.history)
    log.info("wrote %s (%d epochs)", out, len(res.history))


def cmd_generate(a) -> None:
    from .data import load_dataset, save_dataset
    from .fusion import FusionConfig
    from .generator import generate_augmented_set, load_model

    model, _ = load_model(a.model)
    targets = load_dataset(a.data)
    sources = load_dataset(a.sources) if a.sources else None
    gen, pairs = generate_augmented_set(model, targets, sources, a.n_per_class,
                                        FusionConfig(a.alpha, 0), a.seed, return_pairs=True)
    out = Path(a.out or _default_out("generated"))
    save_dataset(gen, out)
    (out / "pairs.json").write_text(json.dumps({"target_source_pairs": pairs}) + "\n")


def cmd_augment(a) -> None:
    from .augment import AugmentParams, ChannelPairMap, augment_dataset
    from .data import load_dataset, save_dataset

    ds = load_dataset(a.data)
    params = AugmentParams(sigma_rel=a.sigma_rel, scale_range=a.scale_range,
                           cut_ratio_range=a.cut_range, fshift_hz_range=a.fshift_range,
                           flip_mode=a.flip_mode)
    pair_map = ChannelPairMap.load(a.pairs, ds.channel_names, ds.class_names) if a.pairs else None
    aug = augment_dataset(ds, a.method, a.n_per_class, np.random.default_rng(a.seed), params, pair_map)
    save_dataset(aug, a.out or _default_out(f"augmented_{a.method}"))


BENCH_KEYS = {"mode": "mode", "trials": "n_train_per_class", "aug": "augmentation",
              "n_generated": "n_generated_per_class", "repeats": "repeats", "seed": "master_seed",
              "scope": "alignment_scope", "n_filters": "n_filters", "jobs": "jobs",
              "dataset_name": "dataset_name", "generator_pool": "generator_pool"}


def _bench_config(a):
    from .bench import ExperimentConfig

    base = {}
    if a.config:
        with open(a.config) as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise ValueError(f"{a.config}: config file must hold a JSON object")
    d = dict(base)
    given = vars(a)
    for flag, key in BENCH_KEYS.items():
        if given.get(flag) is not None:
            d[key] = given[flag]
    if isinstance(d.get("augmentation"), str) and "," in d["augmentation"]:
        d["augmentation"] = d["augmentation"].split(",")[0]
    train = dict(d.get("train", {}))
    for flag, key in (("epochs", "epochs"), ("lr", "lr")):
        if given.get(flag) is not None:
            train[key] = given[flag]
    if train:
        d["train"] = train
    if given.get("alpha") is not None:
        d["fusion"] = {**d.get("fusion", {}), "alpha": given["alpha"]}
    if given.get("no_align"):
        d["align"] = False
    return ExperimentConfig.from_dict(d)


def _bench_data(a, seed: int):
    from .data import SynthConfig, load_dataset, synthesize_dataset

    if a.data:
        return load_dataset(a.data)
    return synthesize_dataset(SynthConfig(n_subjects=3, mixing_strength=0.5, seed=seed))


def cmd_bench(a) -> None:
    from .bench import Method, alpha_sweep, emit_results, run_experiment

    cfg = _bench_config(a)
    ds = _bench_data(a, cfg.master_seed)
    if a.alphas:
        table = alpha_sweep(ds, cfg, a.alphas)
    else:
        augs = a.aug.split(",") if a.aug else [cfg.augmentation]
        table = run_experiment(ds, cfg, [Method(m, m) for m in augs])
    out = Path(a.out or _default_out("bench"))
    out.mkdir(parents=True, exist_ok=True)
    emit_results(table, out / "results.csv")
    audit = {"passed": all(x.passed for x in table.audits), "units": len(table.audits),
             "folds": sorted({x.fold for x in table.audits})}
    (out / "audit.json").write_text(json.dumps(audit, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1) + "\n")
    print(table.sorted().to_text(), end="")
    print(f"leakage audit: {'passed' if audit['passed'] else 'FAILED'} ({audit['units']} runs)")


def cmd_spectrum(a) -> None:
    from .bench import compression_spectrum_report, spectrum_text
    from .data import SynthConfig, load_dataset, synthesize_dataset
    from .generator import TrainConfig

    ds = load_dataset(a.data) if a.data else synthesize_dataset(SynthConfig(seed=a.seed))
    cfg = TrainConfig(epochs=a.epochs, skips=not a.no_skips)
    rep = compression_spectrum_report(ds, a.profiles, cfg, master_seed=a.seed,
                                      out_dir=a.out or _default_out("spectrum"))
    print(spectrum_text(rep), end="")


def cmd_project(a) -> None:
    from .bench import plot_projection, project_2d
    from .data import load_dataset

    ds = load_dataset(a.data)
    pts = project_2d(ds.trials)
    groups = ([ds.class_names[t.label] for t in ds.trials] if a.group_by == "label"
              else [t.subject_id for t in ds.trials])
    out = Path(a.out or _default_out("projection"))
    out.mkdir(parents=True, exist_ok=True)
    lines = ["index,group,x,y"] + [f"{i},{g},{p[0]!r},{p[1]!r}" for i, (g, p) in enumerate(zip(groups, pts))]
    (out / "points.csv").write_text("\n".join(lines) + "\n")
    plot_projection(pts, groups, out / "projection.svg")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusiongen", description="Few-shot EEG augmentation by feature fusion.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth", cmd_synth, "write a synthetic EEG dataset")
    sp.add_argument("--subjects", type=_positive_int, default=1)
    sp.add_argument("--classes", type=_positive_int, default=2)
    sp.add_argument("--trials-per-class", type=_positive_int, default=30)
    sp.add_argument("--channels", type=_positive_int, default=8)
    sp.add_argument("--samples", type=_positive_int, default=500)
    sp.add_argument("--rate", type=float, default=250.0)
    sp.add_argument("--class-freqs", type=_floats, default=None, help="carrier Hz per class, comma-separated")
    sp.add_argument("--mixing", type=float, default=0.3)
    sp.add_argument("--noise", type=float, default=0.3)
    sp.add_argument("--out")

    sp = add("preprocess", cmd_preprocess, "resample, band-pass and crop a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--band-low", type=float, default=8.0)
    sp.add_argument("--band-high", type=float, default=32.0)
    sp.add_argument("--rate", type=float, default=250.0)
    sp.add_argument("--crop", type=float, default=4.0, help="seconds kept from trial onset")
    sp.add_argument("--taper", type=float, default=1.0, help="band-edge ramp width in Hz")
    sp.add_argument("--out")

    sp = add("align", cmd_align, "whiten trial groups to identity mean covariance")
    sp.add_argument("--data", required=True)
    sp.add_argument("--scope", choices=("session", "subject", "global"), default="session")
    sp.add_argument("--epsilon-rel", type=float, default=1e-10)
    sp.add_argument("--out")

    sp = add("train", cmd_train, "train the denoising autoencoder")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--lr", type=float, default=0.01)
    sp.add_argument("--batch-size", type=_positive_int, default=64)
    sp.add_argument("--noise", type=float, default=5.0, help="noise coefficient (percent of trial std)")
    sp.add_argument("--strides", type=_ints, default=(5, 5, 2))
    sp.add_argument("--depths", type=_ints, default=(8, 16, 32))
    sp.add_argument("--no-skips", action="store_true")
    sp.add_argument("--log-every", type=int, default=10)
    sp.add_argument("--out")

    sp = add("generate", cmd_generate, "generate fused trials with a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="fusion targets")
    sp.add_argument("--sources", help="fusion sources (default: the other target trials)")
    sp.add_argument("--n-per-class", type=int, default=20)
    sp.add_argument("--alpha", type=float, default=0.2)
    sp.add_argument("--out")

    sp = add("augment", cmd_augment, "apply a baseline augmentation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--method", required=True,
                    choices=("noise", "scale", "flip", "cut_resize", "fshift", "channel_reflection", "dwt"))
    sp.add_argument("--n-per-class", type=int, default=20)
    sp.add_argument("--sigma-rel", type=float, default=0.05)
    sp.add_argument("--scale-range", type=_floats, default=(0.8, 1.2))
    sp.add_argument("--cut-range", type=_floats, default=(0.7, 0.95))
    sp.add_argument("--fshift-range", type=_floats, default=(-2.0, 2.0))
    sp.add_argument("--flip-mode", choices=("time", "sign"), default="time")
    sp.add_argument("--pairs", help="JSON channel pair map for channel_reflection")
    sp.add_argument("--out")

    sp = sub.add_parser("bench", help="run the few-shot benchmark",
                        description="Run the few-shot benchmark. Flags override --config values.")
    sp.set_defaults(func=cmd_bench)
    sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                    help="log progress to stderr")
    sp.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    sp.add_argument("--config", help="JSON experiment config")
    sp.add_argument("--data", help="dataset directory (default: built-in 3-subject synthetic set)")
    sp.add_argument("--mode", choices=("within", "cross"))
    sp.add_argument("--trials", type=_positive_int, help="train trials per class")
    sp.add_argument("--aug", help="augmentation, or several separated by commas")
    sp.add_argument("--n-generated", type=int, dest="n_generated")
    sp.add_argument("--repeats", type=_positive_int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--alphas", type=_floats, help="run an alpha sweep instead of --aug")
    sp.add_argument("--epochs", type=int, help="generator epochs")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--scope", choices=("session", "subject", "global"))
    sp.add_argument("--no-align", action="store_true")
    sp.add_argument("--n-filters", type=_positive_int, dest="n_filters")
    sp.add_argument("--generator-pool", choices=("union", "target"), dest="generator_pool")
    sp.add_argument("--dataset-name", dest="dataset_name")
    sp.add_argument("--jobs", type=_positive_int)
    sp.add_argument("--out")

    sp = add("spectrum", cmd_spectrum, "compare spectra of reconstructions across compression levels")
    sp.add_argument("--data", help="dataset directory (default: built-in synthetic set)")
    sp.add_argument("--profiles", type=_profiles, default=((5, 1, 1), (5, 2, 1), (5, 5, 2)),
                    help="stride triples separated by ';', e.g. '5,1,1;5,5,2'")
    sp.add_argument("--epochs", type=int, default=100)
    sp.add_argument("--no-skips", action="store_true")
    sp.add_argument("--out")

    sp = add("project", cmd_project, "2-D principal-component view of trial covariances")
    sp.add_argument("--data", required=True)
    sp.add_argument("--group-by", choices=("label", "subject"), default="label")
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        print(f"fusiongen: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
