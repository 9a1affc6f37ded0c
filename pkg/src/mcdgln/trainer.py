"""Adam, mini-batch training, stratified k-fold cross-validation and evaluation metrics."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .connectivity import WindowConfig, batch_dynamic_fc, batch_static_fc
from .errors import DataError, NumericalError
from .model import compute_loss, init_params, predict

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "f1", "auroc")


# ---------------------------------------------------------------- data

@dataclass
class Prepared:
    """Parameter-independent inputs, computed once per dataset."""

    dyn: np.ndarray  # (N, K, M, M)
    sfc: np.ndarray  # (N, M, M)
    labels: np.ndarray  # (N,)
    subject_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    @property
    def M(self):
        return self.sfc.shape[-1]

    @property
    def K(self):
        return self.dyn.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        ids = [self.subject_ids[i] for i in idx] if self.subject_ids else []
        return Prepared(self.dyn[idx], self.sfc[idx], self.labels[idx], ids)


def prepare(series_list, labels, cfg, subject_ids=None):
    if not series_list:
        raise DataError("no subjects")
    T = series_list[0].shape[1]
    cfg.check_series_length(T)
    wcfg = WindowConfig(cfg.window_length, cfg.stride)
    return Prepared(batch_dynamic_fc(series_list, wcfg), batch_static_fc(series_list),
                    np.asarray(labels, dtype=np.int64), list(subject_ids or []))


def prepare_manifest(manifest, cfg):
    return prepare(manifest.series, manifest.labels, cfg, manifest.subject_ids)


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise gc.ShapeError("adam_step", params[name].shape, g.shape)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.get(name, 0.0) * self.beta1 + (1.0 - self.beta1) * g
            v = self.v.get(name, 0.0) * self.beta2 + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            params.set(name, params.values(name) - update)


def adam_step(params, grads, state: Adam):
    state.step(params, grads)
    return params, state


# ---------------------------------------------------------------- training

def train_fold(data: Prepared, cfg, seed=None, params=None):
    """Train on ``data``; returns (params, per-epoch mean total loss)."""
    if len(data) < 2:
        raise DataError("training needs at least 2 subjects")
    if len(np.unique(data.labels)) < 2:
        raise DataError("training set contains a single class")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(
        cfg.seed if seed is None else seed)
    init_ss, shuffle_ss = (np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,))
                           for i in (0, 1))
    if params is None:
        params = init_params(cfg, data.M, data.K, init_ss)
    rng = np.random.default_rng(shuffle_ss)
    opt = Adam(lr=cfg.lr)
    history = []
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            params.zero_grad()
            with gc.Tape():
                report, _ = compute_loss(params, data.dyn[idx], data.sfc[idx], data.labels[idx], cfg)
            grads = gc.backward(report.total, params)
            opt.step(params, grads)
            total += report.total.item() * len(idx)
            count += len(idx)
        history.append(total / count)
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    return params, history


# ---------------------------------------------------------------- metrics

def auroc(scores, labels):
    """Mann-Whitney rank statistic; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i:j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_of = np.empty(len(s))
    rank_of[order] = ranks
    u = rank_of[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class Metrics:
    accuracy: float
    precision: float
    f1: float
    auroc: float
    flags: list = field(default_factory=list)

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}


def metrics(scores, labels, threshold=0.5):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValueError(f"metrics: need equal nonempty batches, got {scores.shape} and {labels.shape}")
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    tn = int(np.sum(~pred & ~pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    flags = []
    acc = (tp + tn) / len(labels)
    if tp + fp == 0:
        prec = 0.0
        flags.append("precision_undefined")
    else:
        prec = tp / (tp + fp)
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    if pos.all() or (~pos).all():
        auc = 0.5
        flags.append("auroc_undefined")
    else:
        auc = auroc(scores, labels)
    return Metrics(acc, prec, f1, auc, flags)


# ---------------------------------------------------------------- cross-validation

def stratified_folds(labels, k, seed):
    """Seeded stratified partition of range(n) into k folds (sizes equal up to one)."""
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise DataError(f"fold count must be >= 2, got {k}")
    if n < k:
        raise DataError(f"fold count {k} exceeds number of subjects {n}")
    rng = np.random.default_rng(seed)
    dealt = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    folds = [[] for _ in range(k)]
    for pos, idx in enumerate(dealt):
        folds[pos % k].append(int(idx))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    precision: float
    f1: float
    auroc: float
    loss_history: list
    flags: list = field(default_factory=list)

    def as_dict(self):
        return {
            "fold": self.fold,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "f1": self.f1,
            "auroc": self.auroc,
            "loss_history": list(self.loss_history),
            "flags": list(self.flags),
        }


@dataclass
class MetricsReport:
    folds: list
    config: dict

    @property
    def mean(self):
        return {m: float(np.mean([getattr(f, m) for f in self.folds])) for m in METRIC_NAMES}

    @property
    def std(self):
        return {m: float(np.std([getattr(f, m) for f in self.folds])) for m in METRIC_NAMES}

    def to_dict(self):
        return {
            "config": self.config,
            "folds": [f.as_dict() for f in self.folds],
            "mean": self.mean,
            "std": self.std,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _fold_seed(seed, fold):
    return np.random.SeedSequence([seed, 1000 + fold])


def run_fold(data, cfg, fold, train_idx, val_idx, checkpoint=None):
    params, history = train_fold(data.subset(train_idx), cfg, seed=_fold_seed(cfg.seed, fold))
    val = data.subset(val_idx)
    m = metrics(predict(params, val.dyn, val.sfc, cfg), val.labels)
    if checkpoint:
        params.save(checkpoint)
    return FoldResult(fold, m.accuracy, m.precision, m.f1, m.auroc, history, m.flags)


def _run_fold_star(args):
    return run_fold(*args)


def cross_validate(data: Prepared, cfg, jobs=1, checkpoint_dir=None, extra_config=None):
    folds = stratified_folds(data.labels, cfg.folds, np.random.SeedSequence([cfg.seed, 0]))
    tasks = []
    everything = np.arange(len(data))
    for i, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(everything, val_idx)
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = str(checkpoint_dir / f"fold{i:02d}.ckpt")
        tasks.append((data, cfg, i, train_idx, val_idx, ckpt))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_star, tasks))
    else:
        results = []
        for t in tasks:
            results.append(run_fold(*t))
            log.info("fold %d accuracy %.3f auroc %.3f", t[2], results[-1].accuracy, results[-1].auroc)
    config = dict(cfg.to_dict())
    config.update(extra_config or {})
    return MetricsReport(results, config)
