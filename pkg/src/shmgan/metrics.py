"""Similarity metrics for generated vs real segments.

FID here works on raw signal statistics (no feature network): per pair of
segments it reduces to scalar mean/variance, and a windowed multivariate
form is available for pooled sets.  SSIM is global over the segment.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .signals import Segment


class MetricError(ValueError):
    pass


def _values(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, Segment) else x, dtype=np.float64).ravel()


def _check_pair(x: np.ndarray, g: np.ndarray) -> None:
    if x.size != g.size:
        raise MetricError(f"length mismatch: {x.size} vs {g.size}")
    if x.size < 2:
        raise MetricError("segments need at least 2 samples")


# --------------------------------------------------------------------------
# FID

def fid_pair(x, g) -> float:
    """Scalar Frechet distance between two segments' (mean, variance).

    (mu_x - mu_g)^2 + c_x + c_g - 2 sqrt(c_x c_g), with population variances.
    """
    xv, gv = _values(x), _values(g)
    _check_pair(xv, gv)
    mx, mg = xv.mean(), gv.mean()
    cx, cg = xv.var(), gv.var()
    # the squared form avoids cancellation in c_x + c_g - 2 sqrt(c_x c_g)
    return float((mx - mg) ** 2 + (np.sqrt(cx) - np.sqrt(cg)) ** 2)


def _windows(segs: Sequence, dim: int) -> np.ndarray:
    rows = []
    for s in segs:
        v = _values(s)
        n = v.size // dim
        if n == 0:
            raise MetricError(f"segment of length {v.size} is shorter than dim={dim}")
        rows.append(v[: n * dim].reshape(n, dim))
    return np.concatenate(rows, axis=0)


def _psd_sqrt(c: np.ndarray, tol: float) -> np.ndarray:
    w, v = np.linalg.eigh((c + c.T) / 2)
    scale = max(float(np.abs(w).max()), np.finfo(float).tiny)
    if w.min() < -tol * scale:
        raise MetricError(f"covariance has eigenvalue {w.min():.3e} below tolerance")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(mu_x, cov_x, mu_g, cov_g, tol: float = 1e-8) -> float:
    """||mu_x - mu_g||^2 + Tr(C_x + C_g - 2 (C_x C_g)^(1/2)).

    Tr((C_x C_g)^(1/2)) is taken from the eigenvalues of the symmetric
    matrix C_x^(1/2) C_g C_x^(1/2), which has the same spectrum.
    """
    mu_x, mu_g = np.atleast_1d(mu_x), np.atleast_1d(mu_g)
    cov_x, cov_g = np.atleast_2d(cov_x), np.atleast_2d(cov_g)
    sx = _psd_sqrt(cov_x, tol)
    m = sx @ cov_g @ sx
    try:
        w = np.linalg.eigvalsh((m + m.T) / 2)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"eigensolve failed: {exc}") from exc
    scale = max(float(np.abs(w).max()), np.finfo(float).tiny)
    if w.min() < -tol * scale:
        raise MetricError(f"product spectrum has eigenvalue {w.min():.3e} below tolerance")
    tr_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = mu_x - mu_g
    return float(diff @ diff + np.trace(cov_x) + np.trace(cov_g) - 2.0 * tr_sqrt)


def fid_multivariate(x_set: Sequence, g_set: Sequence, dim: int) -> float:
    """FID of two sets, each segment cut into dim-length windows used as observations."""
    if dim < 1:
        raise MetricError("dim must be >= 1")
    xs, gs = _windows(x_set, dim), _windows(g_set, dim)
    if xs.shape[0] < 2 or gs.shape[0] < 2:
        raise MetricError("need at least two windows per set")
    mu_x, mu_g = xs.mean(axis=0), gs.mean(axis=0)
    cx = np.atleast_2d(np.cov(xs, rowvar=False, ddof=0))
    cg = np.atleast_2d(np.cov(gs, rowvar=False, ddof=0))
    return max(frechet_distance(mu_x, cx, mu_g, cg), 0.0)


def paired_fid(gen: Sequence, real: Sequence, rng: np.random.Generator | None = None,
               all_pairs: bool = False) -> list["Score"]:
    """FID of each generated segment against one random real segment (or all of them)."""
    if not gen or not real:
        raise MetricError("both pools must be non-empty")
    if all_pairs:
        return [Score(fid_pair(r, g), i, j) for i, g in enumerate(gen) for j, r in enumerate(real)]
    if rng is None:
        raise MetricError("random pairing needs an rng")
    picks = rng.integers(0, len(real), size=len(gen))
    return [Score(fid_pair(real[j], g), i, int(j)) for i, (g, j) in enumerate(zip(gen, picks))]


# --------------------------------------------------------------------------
# SSIM

def ssim(x, g, k1: float = 0.01, k2: float = 0.03, range_mode: str = "union",
         constants: str = "squared") -> float:
    """Global structural similarity of two equal-length segments.

    ``range_mode`` picks the dynamic range L: ``"union"`` (max - min over both
    segments), ``"reference"`` (of ``x`` only) or a fixed float.
    ``constants="squared"`` uses c = (k L)^2; ``"product"`` uses c = k L.
    """
    xv, gv = _values(x), _values(g)
    _check_pair(xv, gv)
    if range_mode == "union":
        lo, hi = min(xv.min(), gv.min()), max(xv.max(), gv.max())
        dyn = hi - lo
    elif range_mode == "reference":
        dyn = xv.max() - xv.min()
    else:
        dyn = float(range_mode)
    if dyn == 0:
        if np.array_equal(xv, gv):
            return 1.0
        raise MetricError("dynamic range is zero but segments differ")
    if constants == "squared":
        c1, c2 = (k1 * dyn) ** 2, (k2 * dyn) ** 2
    elif constants == "product":
        c1, c2 = k1 * dyn, k2 * dyn
    else:
        raise ValueError(f"unknown constants form {constants!r}")
    mx, mg = xv.mean(), gv.mean()
    dx, dg = xv - mx, gv - mg
    vx, vg, cov = (dx @ dx) / xv.size, (dg @ dg) / gv.size, (dx @ dg) / xv.size
    val = (2 * mx * mg + c1) * (2 * cov + c2) / ((mx * mx + mg * mg + c1) * (vx + vg + c2))
    return float(val)


def ssim_matrix(xs: Sequence, gs: Sequence, k1: float = 0.01, k2: float = 0.03,
                constants: str = "squared") -> np.ndarray:
    """``out[i, j] = ssim(xs[i], gs[j])`` with the union dynamic range, vectorised."""
    a = np.stack([_values(x) for x in xs])
    b = np.stack([_values(g) for g in gs])
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"length mismatch: {a.shape[1]} vs {b.shape[1]}")
    n = a.shape[1]
    if n < 2:
        raise MetricError("segments need at least 2 samples")
    dyn = np.maximum(a.max(1)[:, None], b.max(1)[None, :]) - np.minimum(a.min(1)[:, None], b.min(1)[None, :])
    if constants == "squared":
        c1, c2 = (k1 * dyn) ** 2, (k2 * dyn) ** 2
    elif constants == "product":
        c1, c2 = k1 * dyn, k2 * dyn
    else:
        raise ValueError(f"unknown constants form {constants!r}")
    ma, mb = a.mean(1), b.mean(1)
    da, db = a - ma[:, None], b - mb[:, None]
    va, vb = (da * da).sum(1) / n, (db * db).sum(1) / n
    cov = da @ db.T / n
    mm = ma[:, None] * mb[None, :]
    num = (2 * mm + c1) * (2 * cov + c2)
    den = (ma[:, None] ** 2 + mb[None, :] ** 2 + c1) * (va[:, None] + vb[None, :] + c2)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    # zero dynamic range means both rows are the same constant
    out[dyn == 0] = 1.0
    return out


# --------------------------------------------------------------------------
# distributions and reports

@dataclass
class Score:
    value: float
    gen_index: int
    real_index: int


@dataclass
class BoxStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    whisker_low: float
    whisker_high: float
    outliers: list[float] = field(default_factory=list)


def box_stats(values: Sequence[float]) -> BoxStats:
    """Quartiles by linear interpolation; whiskers at the extreme points within 1.5 IQR."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise MetricError("box_stats needs at least one value")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = v[(v < lo_fence) | (v > hi_fence)]
    return BoxStats(float(v[0]), float(q1), float(med), float(q3), float(v[-1]),
                    float(min(inside.min(), q1)), float(max(inside.max(), q3)),
                    [float(o) for o in outliers])


@dataclass
class Histogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def masses(self) -> np.ndarray:
        if self.widths.size == 1 and self.widths[0] == 0:
            return np.ones(1)
        return self.density * self.widths

    def mode(self) -> float:
        i = int(np.argmax(self.density))
        return float((self.edges[i] + self.edges[i + 1]) / 2)


def histogram_pdf(values: Sequence[float], bins: int = 30) -> Histogram:
    """Equal-width density histogram over [min, max]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise MetricError("histogram needs at least one value")
    if bins < 1:
        raise MetricError("bins must be >= 1")
    if v.min() == v.max():
        # single degenerate bin carrying all mass
        return Histogram(np.array([v[0], v[0]]), np.array([np.inf]))
    counts, edges = np.histogram(v, bins=bins, range=(v.min(), v.max()))
    return Histogram(edges, counts / (v.size * np.diff(edges)))


def kde_pdf(values: Sequence[float], grid: np.ndarray | None = None, points: int = 200):
    """Gaussian KDE with Silverman's bandwidth, evaluated on ``grid``."""
    from scipy.stats import gaussian_kde

    v = np.asarray(values, dtype=np.float64).ravel()
    if grid is None:
        pad = 0.1 * (v.max() - v.min() or 1.0)
        grid = np.linspace(v.min() - pad, v.max() + pad, points)
    if v.size < 2 or np.all(v == v[0]):
        raise MetricError("KDE needs at least two distinct values")
    return grid, gaussian_kde(v, bw_method="silverman")(grid)


@dataclass
class EvalReport:
    name: str
    scores: list[Score]
    threshold: float | None = None
    bins: int = 30

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.scores])

    @property
    def duplicates(self) -> list[Score]:
        if self.threshold is None:
            return []
        return [s for s in self.scores if s.value > self.threshold]

    def histogram(self) -> Histogram:
        return histogram_pdf(self.values, self.bins)

    def summary(self) -> dict:
        v = self.values
        out = {"name": self.name, "count": int(v.size), "mean": float(v.mean()),
               "median": float(np.median(v)), "variance": float(v.var()),
               "pdf_mode": self.histogram().mode(), "min": float(v.min()), "max": float(v.max())}
        if self.threshold is not None:
            out["threshold"] = self.threshold
            out["duplicate_count"] = len(self.duplicates)
            out["verdict"] = "no duplicates" if not self.duplicates else "duplicates found"
        out["box"] = asdict(box_stats(v))
        return out

    def write(self, directory, stem: str | None = None) -> list[Path]:
        """Score table CSV, histogram CSV and a JSON summary."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.name
        paths = [directory / f"{stem}_scores.csv", directory / f"{stem}_pdf.csv",
                 directory / f"{stem}_summary.json"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gen_index", "real_index", "value"])
            for s in self.scores:
                w.writerow([s.gen_index, s.real_index, repr(s.value)])
        h = self.histogram()
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "density", "mass"])
            for lo, hi, d, m in zip(h.edges[:-1], h.edges[1:], h.density, h.masses):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d)), repr(float(m))])
        paths[2].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return paths


def creativity_report(gen: Sequence, real: Sequence, threshold: float = 0.8,
                      bins: int = 30, **ssim_kw) -> EvalReport:
    """SSIM of every (generated, real) pair; pairs above ``threshold`` are duplicates."""
    if not gen or not real:
        raise MetricError("creativity report needs non-empty pools")
    m = ssim_matrix(real, gen, **ssim_kw)
    scores = [Score(float(m[j, i]), i, j) for i in range(len(gen)) for j in range(len(real))]
    return EvalReport("creativity", scores, threshold, bins)


def diversity_report(gen: Sequence, threshold: float = 0.8, bins: int = 30, **ssim_kw) -> EvalReport:
    """SSIM over distinct unordered pairs within the generated pool."""
    if len(gen) < 2:
        raise MetricError("diversity report needs at least two segments")
    m = ssim_matrix(gen, gen, **ssim_kw)
    iu, ju = np.triu_indices(len(gen), k=1)
    scores = [Score(float(m[i, j]), int(i), int(j)) for i, j in zip(iu, ju)]
    return EvalReport("diversity", scores, threshold, bins)


def fid_report(gen: Sequence, real: Sequence, rng: np.random.Generator | None = None,
               all_pairs: bool = False, bins: int = 30) -> EvalReport:
    return EvalReport("fid", paired_fid(gen, real, rng, all_pairs), None, bins)
