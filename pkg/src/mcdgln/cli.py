"""Command-line entry point: synth, train, cv, eval, analyze, gradcheck."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, McdglnError, NumericalError

log = logging.getLogger("mcdgln")


def _seed_override(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("MCDGLN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MCDGLN_SEED must be an integer, got {env!r}") from None
    return None


def _run_config(args):
    from .dataio import default_config, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    changes = {}
    seed = _seed_override(args)
    if seed is not None:
        changes["seed"] = seed
    for key in ("epochs", "folds", "ablate"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return cfg.replace(**changes) if changes else cfg


def _load_data(path, cfg):
    from .dataio import load_manifest
    from .trainer import prepare_manifest

    manifest = load_manifest(path)
    cfg.check_series_length(manifest.T)
    return manifest, prepare_manifest(manifest, cfg)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt_metrics(mean, std=None):
    parts = []
    for k, v in mean.items():
        parts.append(f"{k} {v:.3f}" + (f" ± {std[k]:.3f}" if std else ""))
    return ", ".join(parts)


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    from .dataio import generate_synthetic, load_synth_spec

    spec = load_synth_spec(args.spec)
    seed = _seed_override(args)
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    manifest = generate_synthetic(spec, args.out)
    labels = [int(line.split(",")[1]) for line in Path(manifest).read_text().splitlines()[1:]]
    print(f"wrote {manifest}: n={spec.n_subjects} M={spec.M} T={spec.T} "
          f"control={labels.count(0)} case={labels.count(1)}")
    return 0


def cmd_cv(args):
    from .trainer import cross_validate

    cfg = _run_config(args)
    manifest, data = _load_data(args.data, cfg)
    if cfg.folds > len(data):
        raise DataError(f"fold count {cfg.folds} exceeds number of subjects {len(data)}")
    ckpt_dir = None
    if args.checkpoints:
        ckpt_dir = Path(args.checkpoints)
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = cross_validate(data, cfg, jobs=args.jobs, checkpoint_dir=ckpt_dir,
                            extra_config={"data": {"M": manifest.M, "T": manifest.T, "n": len(manifest),
                                                   "K": data.K}})
    for f in report.folds:
        if not all(np.isfinite(f.loss_history)):
            raise NumericalError(f"non-finite loss in fold {f.fold}")
    report.write(args.out)
    print(f"{cfg.folds}-fold CV on {len(data)} subjects ({time.perf_counter() - t0:.1f}s)")
    print(_fmt_metrics(report.mean, report.std))
    print(f"report written to {args.out}")
    return 0


def cmd_train(args):
    from .trainer import metrics, stratified_folds, train_fold
    from .model import predict

    cfg = _run_config(args)
    manifest, data = _load_data(args.data, cfg)
    n_val = int(round(args.val_fraction * len(data)))
    if n_val > 0:
        k = max(2, int(round(1.0 / args.val_fraction)))
        val_idx = stratified_folds(data.labels, k, np.random.SeedSequence([cfg.seed, 0]))[0]
        train_idx = np.setdiff1d(np.arange(len(data)), val_idx)
    else:
        val_idx, train_idx = np.array([], dtype=int), np.arange(len(data))
    params, history = train_fold(data.subset(train_idx), cfg)
    params.save(args.out)
    payload = {"config": cfg.to_dict(), "checkpoint": str(args.out), "loss_history": history,
               "train_subjects": [data.subject_ids[i] for i in train_idx]}
    if len(val_idx):
        val = data.subset(val_idx)
        m = metrics(predict(params, val.dyn, val.sfc, cfg), val.labels)
        payload["validation"] = {**m.as_dict(), "flags": m.flags,
                                 "subjects": [data.subject_ids[i] for i in val_idx]}
        print("validation: " + _fmt_metrics(m.as_dict()))
    print(f"final loss {history[-1]:.4f}; checkpoint written to {args.out}")
    if args.report:
        _write_json(args.report, payload)
    return 0


def _checkpoint_config(params):
    from .dataio import config_from_dict, default_config

    if "config" not in params.meta:
        return default_config()
    return config_from_dict(params.meta["config"])


def cmd_eval(args):
    from .gradcore import ParamSet
    from .model import check_compatible, predict
    from .trainer import metrics

    params = ParamSet.load(args.checkpoint)
    cfg = _checkpoint_config(params)
    manifest, data = _load_data(args.data, cfg)
    check_compatible(params, cfg, data.M, data.K)
    m = metrics(predict(params, data.dyn, data.sfc, cfg), data.labels)
    print(_fmt_metrics(m.as_dict()) + (f" (flags: {', '.join(m.flags)})" if m.flags else ""))
    if args.out:
        _write_json(args.out, {"config": cfg.to_dict(), "checkpoint": str(args.checkpoint),
                               "metrics": m.as_dict(), "flags": m.flags})
    return 0


def cmd_analyze(args):
    from .analysis import abnormal_edges, edge_tests, overlap_stats
    from .gradcore import ParamSet
    from .model import check_compatible, compute_tsfc
    from .trainer import train_fold

    if args.groups != "label":
        raise ConfigError(f"unsupported grouping {args.groups!r}; only 'label' is available")
    if not 0 <= args.alpha <= 1:
        raise ConfigError(f"alpha must be in [0, 1], got {args.alpha}")
    if args.checkpoint:
        params = ParamSet.load(args.checkpoint)
        cfg = _checkpoint_config(params)
        manifest, data = _load_data(args.data, cfg)
        check_compatible(params, cfg, data.M, data.K)
    else:
        cfg = _run_config(args)
        manifest, data = _load_data(args.data, cfg)
        params = None
    groups = [np.flatnonzero(data.labels == c) for c in (0, 1)]
    if any(len(g) < 2 for g in groups):
        raise DataError("analyze needs at least 2 subjects per label")
    if params is None:
        params, _ = train_fold(data, cfg)
    tsfc = compute_tsfc(params, data.dyn, data.sfc, cfg)

    sfc_tests = edge_tests(data.sfc[groups[1]], data.sfc[groups[0]], args.alpha)
    tsfc_tests = edge_tests(tsfc[groups[1]], tsfc[groups[0]], args.alpha)
    sig_s = [r for r in sfc_tests if r.significant]
    sig_t = [r for r in tsfc_tests if r.significant]
    overlap = overlap_stats(sig_s, sig_t)
    payload = {
        "config": cfg.to_dict(),
        "alpha": args.alpha,
        "groups": {"case": int(len(groups[1])), "control": int(len(groups[0]))},
        "sfc": [r.as_dict() for r in sfc_tests],
        "tsfc": [r.as_dict() for r in tsfc_tests],
        "overlap": overlap.as_dict(),
    }
    _write_json(args.out, payload)
    print(f"significant edges at alpha={args.alpha}: sFC {overlap.n_sfc}, tsFC {overlap.n_tsfc}, "
          f"overlap {overlap.overlap}")
    print(f"analysis written to {args.out}")
    return 0


def cmd_gradcheck(args):
    from .checks import GRAD_TOL, run_suite

    if args.size != "toy":
        raise ConfigError(f"unknown gradcheck size {args.size!r}")
    seed = _seed_override(args) or 0
    results = run_suite(seed=seed)
    for name, err in results.items():
        print(f"{name:26s} {err:.3e}")
    worst = max(results.values())
    print(f"max relative error {worst:.3e} (tolerance {GRAD_TOL:g})")
    if worst >= GRAD_TOL:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {GRAD_TOL:g}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="mcdgln", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic two-class cohort")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    def data_cfg(sp):
        sp.add_argument("--data", required=True, help="manifest.csv")
        sp.add_argument("--config", help="key=value run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--ablate", choices=["none", "wea", "hgcn", "ace"])

    s = sub.add_parser("cv", help="k-fold cross-validation")
    data_cfg(s)
    s.add_argument("--folds", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--checkpoints", help="directory for per-fold checkpoints")
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("train", help="single-split training")
    data_cfg(s)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--val-fraction", type=float, default=0.2)
    s.add_argument("--report", help="JSON training report")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="per-edge t-tests on sFC and tsFC")
    data_cfg(s)
    s.add_argument("--groups", default="label")
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--checkpoint")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--size", default="toy")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except McdglnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
