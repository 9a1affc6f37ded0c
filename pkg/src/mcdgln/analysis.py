"""Per-edge group comparisons on connectivity matrices.

Pooled-variance Student t-tests with two-sided p-values from the regularized
incomplete beta function, abnormal-edge selection and sFC/tsFC overlap counts.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import DataError, ShapeError


@dataclass(frozen=True)
class TTest:
    t: float
    p: float
    df: int
    degenerate: bool = False


@dataclass(frozen=True)
class EdgeTestResult:
    edge: tuple
    t: float
    p: float
    significant: bool
    degenerate: bool = False

    def as_dict(self):
        d = asdict(self)
        d["edge"] = list(self.edge)
        # JSON has no infinity
        if not np.isfinite(self.t):
            d["t"] = "inf" if self.t > 0 else "-inf"
        return d


def t_pvalue(t, df):
    """Two-sided Student-t p-value, I_{df/(df+t^2)}(df/2, 1/2)."""
    t = np.asarray(t, dtype=np.float64)
    df = np.broadcast_to(np.asarray(df, dtype=np.float64), t.shape)
    x = np.where(np.isinf(t), 0.0, df / (df + np.where(np.isinf(t), 0.0, t) ** 2))
    return np.clip(kernels.betainc(df / 2.0, np.full(t.shape, 0.5), x), 0.0, 1.0)


def _pooled_t(a, b):
    """Vectorized over trailing axes: a is (n_a, ...), b is (n_b, ...)."""
    na, nb = a.shape[0], b.shape[0]
    ma, mb = a.mean(axis=0), b.mean(axis=0)
    ssa = ((a - ma) ** 2).sum(axis=0)
    ssb = ((b - mb) ** 2).sum(axis=0)
    df = na + nb - 2
    sp2 = (ssa + ssb) / df
    scale = np.maximum(np.abs(a).max(axis=0), np.abs(b).max(axis=0))
    flat = sp2 <= (1e-14 * np.maximum(scale, 1e-300)) ** 2
    diff = ma - mb
    se = np.sqrt(np.where(flat, 1.0, sp2) * (1.0 / na + 1.0 / nb))
    t = np.where(flat, 0.0, diff / se)
    same = flat & (np.abs(diff) <= 1e-14 * np.maximum(scale, 1e-300))
    degenerate = flat & ~same
    t = np.where(degenerate, np.copysign(np.inf, diff), t)
    p = t_pvalue(t, df)
    p = np.where(same, 1.0, np.where(degenerate, 0.0, p))
    return t, p, df, degenerate


def two_sample_t(group_a, group_b):
    """Student's t with pooled variance and df = n_a + n_b - 2."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError("two_sample_t", a.shape, b.shape, detail="expected 1-D samples")
    if a.size < 2 or b.size < 2:
        raise DataError("two_sample_t needs at least 2 samples per group")
    t, p, df, deg = _pooled_t(a, b)
    return TTest(float(t), float(p), int(df), bool(deg))


def edge_tests(fc_a, fc_b, alpha=0.01):
    """Test every upper-triangle edge between two stacks of (n, M, M) matrices."""
    A = np.asarray(fc_a, dtype=np.float64)
    B = np.asarray(fc_b, dtype=np.float64)
    if A.ndim != 3 or B.ndim != 3 or A.shape[1:] != B.shape[1:] or A.shape[1] != A.shape[2]:
        raise ShapeError("abnormal_edges", A.shape, B.shape)
    if A.shape[0] < 2 or B.shape[0] < 2:
        raise DataError("abnormal_edges needs at least 2 subjects per group")
    M = A.shape[1]
    iu, ju = np.triu_indices(M, 1)
    t, p, _, deg = _pooled_t(A[:, iu, ju], B[:, iu, ju])
    return [EdgeTestResult((int(u), int(w)), float(ti), float(pi), bool(pi < alpha), bool(di))
            for u, w, ti, pi, di in zip(iu, ju, t, p, deg)]


def abnormal_edges(fc_a, fc_b, alpha=0.01):
    """Edges whose group difference is significant at uncorrected level ``alpha``."""
    return [r for r in edge_tests(fc_a, fc_b, alpha) if r.significant]


@dataclass(frozen=True)
class OverlapReport:
    sfc_only: int
    tsfc_only: int
    overlap: int

    @property
    def n_sfc(self):
        return self.sfc_only + self.overlap

    @property
    def n_tsfc(self):
        return self.tsfc_only + self.overlap

    @property
    def retained_fraction(self):
        """Share of sFC-significant edges also significant in tsFC (0 when sFC has none)."""
        return self.overlap / self.n_sfc if self.n_sfc else 0.0

    def as_dict(self):
        return {"sfc_only": self.sfc_only, "tsfc_only": self.tsfc_only, "overlap": self.overlap,
                "retained_fraction": self.retained_fraction}


def _edge_set(items):
    return {tuple(r.edge) if isinstance(r, EdgeTestResult) else tuple(r) for r in items}


def overlap_stats(sig_sfc, sig_tsfc):
    s, t = _edge_set(sig_sfc), _edge_set(sig_tsfc)
    return OverlapReport(len(s - t), len(t - s), len(s & t))
