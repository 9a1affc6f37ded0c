"""Manifests, BOLD CSV ingestion, run configuration and the synthetic cohort generator."""
from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MANIFEST_COLUMNS = ["subject_id", "label", "path"]


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    label: int
    path: Path


@dataclass
class DatasetManifest:
    records: list
    M: int
    T: int
    root: Path
    series: list = field(default_factory=list, repr=False)

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def subject_ids(self):
        return [r.subject_id for r in self.records]

    def __len__(self):
        return len(self.records)


def read_bold(path):
    """One subject's (M, T) matrix from a header-less CSV."""
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read BOLD file {path}: {exc}") from None
    if not np.all(np.isfinite(X)):
        raise DataError(f"non-finite values in {path}")
    return X


def write_bold(path, X):
    np.savetxt(path, X, delimiter=",", fmt="%.17g")


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    root = path.parent
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}, got {header}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no subjects")

    records, seen = [], set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        sid, label, rel = (c.strip() for c in row)
        if sid in seen:
            raise DataError(f"{path}: duplicate subject_id {sid!r}")
        seen.add(sid)
        if label not in ("0", "1"):
            raise DataError(f"{path}: subject {sid} has label {label!r}; expected 0 or 1")
        records.append(SubjectRecord(sid, int(label), root / rel))

    series = []
    shape = None
    for rec in records:
        if not rec.path.is_file():
            raise DataError(f"subject {rec.subject_id}: file not found {rec.path}")
        X = read_bold(rec.path)
        if shape is None:
            shape = X.shape
        elif X.shape != shape:
            raise DataError(f"subject {rec.subject_id}: shape {X.shape[0]}x{X.shape[1]}, "
                            f"expected {shape[0]}x{shape[1]}")
        series.append(X)
    return DatasetManifest(records, shape[0], shape[1], root, series)


def write_manifest(path, records):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in records:
            w.writerow([r.subject_id, r.label, os.path.relpath(r.path, path.parent)])


# ---------------------------------------------------------------- key=value files

def _parse_kv(path):
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value
    return out


def _coerce(cls, key, raw):
    ftype = {f.name: f.type for f in fields(cls)}[key]
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None


# ---------------------------------------------------------------- run configuration

ABLATIONS = ("none", "wea", "hgcn", "ace")


@dataclass(frozen=True)
class RunConfig:
    window_length: int = 30
    stride: int = 10
    wea_layers: int = 3
    hgcn_blocks: int = 3
    hidden: int = 32
    lam: float = 0.1
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    folds: int = 10
    sparsify_q: float = 0.5
    keep_ratio: float = 0.2
    seed: int = 0
    ablate: str = "none"

    def __post_init__(self):
        checks = [
            ("window_length", self.window_length >= 1, ">= 1"),
            ("stride", self.stride >= 1, ">= 1"),
            ("wea_layers", self.wea_layers >= 0, ">= 0"),
            ("hgcn_blocks", self.hgcn_blocks >= 1, ">= 1"),
            ("hidden", self.hidden >= 1, ">= 1"),
            ("lam", self.lam >= 0, ">= 0"),
            ("lr", self.lr > 0, "> 0"),
            ("batch_size", self.batch_size >= 1, ">= 1"),
            ("epochs", self.epochs >= 1, ">= 1"),
            ("folds", self.folds >= 2, ">= 2"),
            ("sparsify_q", 0 <= self.sparsify_q < 1, "in [0, 1)"),
            ("keep_ratio", 0 < self.keep_ratio <= 1, "in (0, 1]"),
            ("ablate", self.ablate in ABLATIONS, f"one of {ABLATIONS}"),
        ]
        for name, ok, rule in checks:
            if not ok:
                raise ConfigError(f"{name} must be {rule}, got {getattr(self, name)!r}")

    def check_series_length(self, T):
        if self.window_length > T:
            raise ConfigError(f"window_length {self.window_length} exceeds series length T={T}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


def default_config():
    return RunConfig()


def config_from_dict(values):
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _coerce(RunConfig, k, v) if isinstance(v, str) else v for k, v in values.items()}
    return RunConfig(**kwargs)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return config_from_dict(_parse_kv(path))


def save_config(path, cfg):
    with open(path, "w") as fh:
        for k, v in cfg.to_dict().items():
            fh.write(f"{k}={v}\n")


# ---------------------------------------------------------------- synthetic cohorts

@dataclass(frozen=True)
class SynthSpec:
    """Two-class Gaussian cohort with block-correlated ROIs.

    ROIs within a module share ``intra_corr_*``. A fixed set of
    ``n_planted`` cross-module ROI pairs carries ``cross_corr_*``; all other
    cross-module pairs are uncorrelated. Independent white noise of variance
    ``noise`` is added to every ROI.
    """

    n_subjects: int = 100
    M: int = 16
    T: int = 200
    modules: tuple = ()
    intra_corr_control: float = 0.5
    intra_corr_case: float = 0.5
    cross_corr_control: float = 0.0
    cross_corr_case: float = 0.2
    n_planted: int = 8
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.modules:
            object.__setattr__(self, "modules", _split_modules(self.M, 4))
        mods = tuple(tuple(int(i) for i in m) for m in self.modules)
        object.__setattr__(self, "modules", mods)
        if self.n_subjects < 2:
            raise ConfigError(f"n_subjects must be >= 2, got {self.n_subjects}")
        if self.M < 2 or self.T < 2:
            raise ConfigError(f"M and T must be >= 2, got M={self.M}, T={self.T}")
        flat = sorted(i for m in mods for i in m)
        if flat != list(range(self.M)):
            raise ConfigError("modules must partition ROIs 0..M-1 disjointly")
        for name in ("intra_corr_control", "intra_corr_case", "cross_corr_control", "cross_corr_case"):
            v = getattr(self, name)
            if not -1 < v < 1:
                raise ConfigError(f"{name} must lie in (-1, 1), got {v}")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if self.n_planted < 0 or self.n_planted > len(self.cross_pairs()):
            raise ConfigError(f"n_planted must be in [0, {len(self.cross_pairs())}], got {self.n_planted}")

    def module_of(self):
        out = np.empty(self.M, dtype=np.int64)
        for k, m in enumerate(self.modules):
            out[list(m)] = k
        return out

    def cross_pairs(self):
        mod = self.module_of()
        return [(u, w) for u in range(self.M) for w in range(u + 1, self.M) if mod[u] != mod[w]]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["modules"] = [list(m) for m in self.modules]
        return d


def _split_modules(M, n):
    n = max(1, min(n, M))
    return tuple(tuple(int(i) for i in chunk) for chunk in np.array_split(np.arange(M), n))


def _parse_modules(raw, M):
    raw = raw.strip()
    if ";" not in raw and "," not in raw:
        return _split_modules(M, int(raw))
    return tuple(tuple(int(i) for i in grp.split(",") if i.strip()) for grp in raw.split(";") if grp.strip())


def synth_spec_from_dict(values):
    known = {f.name for f in fields(SynthSpec)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown synth spec keys: {', '.join(unknown)}")
    kwargs = {}
    for k, v in values.items():
        if k == "modules":
            continue
        kwargs[k] = _coerce(SynthSpec, k, v) if isinstance(v, str) else v
    if "modules" in values:
        raw = values["modules"]
        M = kwargs.get("M", SynthSpec.M)
        try:
            kwargs["modules"] = _parse_modules(raw, M) if isinstance(raw, str) else raw
        except ValueError:
            raise ConfigError(f"modules: cannot parse {raw!r}") from None
    return SynthSpec(**kwargs)


def load_synth_spec(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"synth spec not found: {path}")
    return synth_spec_from_dict(_parse_kv(path))


def planted_edges(spec: SynthSpec):
    """The fixed cross-module pairs whose correlation differs between classes."""
    pairs = spec.cross_pairs()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    idx = np.sort(rng.choice(len(pairs), size=spec.n_planted, replace=False))
    return [pairs[i] for i in idx]


def class_covariance(spec: SynthSpec, label):
    intra = spec.intra_corr_case if label else spec.intra_corr_control
    cross = spec.cross_corr_case if label else spec.cross_corr_control
    mod = spec.module_of()
    C = np.where(mod[:, None] == mod[None, :], intra, 0.0)
    for u, w in planted_edges(spec):
        C[u, w] = C[w, u] = cross
    np.fill_diagonal(C, 1.0)
    return C + spec.noise * np.eye(spec.M)


def generate_synthetic(spec: SynthSpec, out_dir):
    """Write one CSV per subject plus manifest.csv and synth.json; returns the manifest path."""
    chol = {}
    for label in (0, 1):
        try:
            chol[label] = np.linalg.cholesky(class_covariance(spec, label))
        except np.linalg.LinAlgError:
            raise ConfigError(f"class {label} covariance is not positive definite; "
                              "lower the intra/cross correlations or raise the noise") from None

    out_dir = Path(out_dir)
    (out_dir / "bold").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 2]))
    n_case = spec.n_subjects // 2
    labels = np.array([1] * n_case + [0] * (spec.n_subjects - n_case))
    labels = labels[rng.permutation(spec.n_subjects)]
    width = max(4, len(str(spec.n_subjects)))
    records = []
    for i, label in enumerate(labels):
        X = chol[int(label)] @ rng.standard_normal((spec.M, spec.T))
        sid = f"sub-{i + 1:0{width}d}"
        path = out_dir / "bold" / f"{sid}.csv"
        write_bold(path, X)
        records.append(SubjectRecord(sid, int(label), path))
    manifest = out_dir / "manifest.csv"
    write_manifest(manifest, records)
    meta = {"spec": spec.to_dict(), "planted_edges": [list(e) for e in planted_edges(spec)]}
    with open(out_dir / "synth.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
