"""Statistics over per-example curvature reports.

Empirical CDFs of edge curvatures, exact areas under those CDFs,
negative-edge fractions, and grouped tables comparing robust and
nonrobust examples across perturbation budgets.  Everything here is pure,
deterministic aggregation; file output goes through :mod:`nricci.data_io`.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from nricci import data_io

# Analytic upper bound of the curvature; used as the default right
# integration bound.
KAPPA_UPPER_BOUND = 1.0

AVERAGE_LABEL = "all"


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous empirical distribution function.

    ``values`` holds the sorted distinct sample values and ``cum`` the
    cumulative fraction of the sample at or below each one; ``cum[-1]``
    is exactly 1.
    """

    values: np.ndarray
    cum: np.ndarray
    n: int

    def __post_init__(self):
        if self.values.size == 0:
            raise ValueError("empirical CDF needs a nonempty sample")
        if self.values.size != self.cum.size:
            raise ValueError("values and cumulative fractions must align")
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("CDF values must be strictly increasing")
        if np.any(np.diff(self.cum) <= 0) or self.cum[-1] != 1.0:
            raise ValueError("cumulative fractions must increase to 1")

    def evaluate(self, x: float) -> float:
        """Fraction of the sample at or below ``x``."""
        idx = int(np.searchsorted(self.values, x, side="right")) - 1
        return float(self.cum[idx]) if idx >= 0 else 0.0

    def __call__(self, x: float) -> float:
        return self.evaluate(x)


def empirical_cdf(values: Sequence[float]) -> EmpiricalCdf:
    """Build the empirical CDF of a nonempty sample."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("cannot build a CDF from an empty sample")
    if not np.all(np.isfinite(arr)):
        raise ValueError("CDF sample contains non-finite values")
    distinct, counts = np.unique(arr, return_counts=True)
    cum = np.cumsum(counts, dtype=np.float64) / arr.size
    cum[-1] = 1.0
    return EmpiricalCdf(values=distinct, cum=cum, n=int(arr.size))


def auc_cdf(cdf: EmpiricalCdf, lo: float, hi: float) -> float:
    """Exact integral of the CDF step function over ``[lo, hi]``.

    Sample mass below ``lo`` raises the step height over the whole
    interval, so a sample entirely below ``lo`` integrates to ``hi - lo``.
    """
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("integration bounds must be finite")
    if lo >= hi:
        raise ValueError(f"invalid integration bounds: lo={lo} >= hi={hi}")
    inside = cdf.values[(cdf.values > lo) & (cdf.values < hi)]
    xs = np.concatenate([[lo], inside, [hi]])
    idx = np.searchsorted(cdf.values, xs[:-1], side="right") - 1
    heights = np.where(idx >= 0, cdf.cum[np.clip(idx, 0, None)], 0.0)
    return float(np.sum(heights * np.diff(xs)))


def negative_fraction(source) -> float:
    """Fraction of defined edges with negative curvature.

    Accepts a curvature report (anything with a ``kappa`` array of the
    defined edges) or a bare sequence of curvature values.
    """
    kappas = getattr(source, "kappa", source)
    arr = np.asarray(kappas, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("negative fraction of an empty report is undefined")
    return float(np.count_nonzero(arr < 0.0) / arr.size)


@dataclass(frozen=True)
class AucRow:
    """One line of a grouped AUC table.

    ``label`` is a digit class or :data:`AVERAGE_LABEL` for the
    over-labels average; ``mean_auc`` is ``None`` when the group was
    empty (an N/A row).  Integration bounds travel with every row so
    that only identically-integrated numbers get compared.
    """

    setup: str
    label: str
    eps: float
    mean_auc: Optional[float]
    group_size: int
    lo: float
    hi: float

    def __post_init__(self):
        if (self.mean_auc is None) != (self.group_size == 0):
            raise ValueError("mean AUC must be N/A exactly for empty groups")
        if self.mean_auc is not None:
            width = self.hi - self.lo
            if not (-1e-12 <= self.mean_auc <= width + 1e-12):
                raise ValueError(
                    f"AUC {self.mean_auc} outside [0, {width}] for bounds "
                    f"[{self.lo}, {self.hi}]"
                )

    @property
    def is_na(self) -> bool:
        return self.mean_auc is None


GroupSamples = Mapping[Tuple[str, float], Sequence[np.ndarray]]


def default_bounds(samples: GroupSamples) -> Tuple[float, float]:
    """Shared integration bounds for one table: the minimum curvature
    observed across every compared group, up to the analytic maximum."""
    lo = np.inf
    for arrs in samples.values():
        for arr in arrs:
            arr = np.asarray(arr, dtype=np.float64)
            if arr.size:
                lo = min(lo, float(arr.min()))
    if not np.isfinite(lo):
        raise ValueError(
            "cannot derive integration bounds: every group is empty"
        )
    return lo, KAPPA_UPPER_BOUND


def group_auc_table(
    setup: str,
    samples: GroupSamples,
    bounds: Optional[Tuple[float, float]] = None,
) -> List[AucRow]:
    """Per-(label, ε) mean AUC rows plus an over-labels average per ε.

    ``samples`` maps ``(label, eps)`` to the per-example curvature
    samples of that group; an empty sequence marks a group with no
    qualifying examples and produces an N/A row.  All rows share one
    pair of integration bounds (default: :func:`default_bounds`).
    """
    lo, hi = bounds if bounds is not None else default_bounds(samples)
    if lo >= hi:
        raise ValueError(f"invalid integration bounds: lo={lo} >= hi={hi}")

    eps_values = sorted({eps for _, eps in samples})
    rows: List[AucRow] = []
    for eps in eps_values:
        label_means: List[float] = []
        total = 0
        for label, _ in sorted(k for k in samples if k[1] == eps):
            arrs = samples[(label, eps)]
            if len(arrs) == 0:
                rows.append(AucRow(setup, str(label), eps, None, 0, lo, hi))
                continue
            aucs = [auc_cdf(empirical_cdf(arr), lo, hi) for arr in arrs]
            mean = float(np.mean(aucs))
            rows.append(AucRow(setup, str(label), eps, mean, len(arrs), lo, hi))
            label_means.append(mean)
            total += len(arrs)
        if label_means:
            avg = float(np.mean(label_means))
            rows.append(AucRow(setup, AVERAGE_LABEL, eps, avg, total, lo, hi))
        else:
            rows.append(AucRow(setup, AVERAGE_LABEL, eps, None, 0, lo, hi))
    return rows


def group_negative_fraction_table(
    setup: str, samples: GroupSamples
) -> List[AucRow]:
    """Same grouping as :func:`group_auc_table` but the statistic is the
    mean negative-curvature fraction; bounds are fixed to [0, 1] since a
    fraction needs no integration range."""
    rows: List[AucRow] = []
    for eps in sorted({eps for _, eps in samples}):
        label_means: List[float] = []
        total = 0
        for label, _ in sorted(k for k in samples if k[1] == eps):
            arrs = samples[(label, eps)]
            if len(arrs) == 0:
                rows.append(AucRow(setup, str(label), eps, None, 0, 0.0, 1.0))
                continue
            fracs = [negative_fraction(arr) for arr in arrs]
            mean = float(np.mean(fracs))
            rows.append(AucRow(setup, str(label), eps, mean, len(arrs), 0.0, 1.0))
            label_means.append(mean)
            total += len(arrs)
        if label_means:
            avg = float(np.mean(label_means))
            rows.append(AucRow(setup, AVERAGE_LABEL, eps, avg, total, 0.0, 1.0))
        else:
            rows.append(AucRow(setup, AVERAGE_LABEL, eps, None, 0, 0.0, 1.0))
    return rows


# ---------------------------------------------------------------------------
# CSV emission


def write_cdf_csv(cdf: EmpiricalCdf, path) -> None:
    """Dump a CDF as (kappa, cumulative) steps, one distinct value per row."""
    rows = [(float(v), float(c)) for v, c in zip(cdf.values, cdf.cum)]
    data_io.write_csv(path, ["kappa", "cumulative"], rows)


_TABLE_HEADER = ["setup", "label", "eps", "value", "group_size", "lo", "hi"]


def write_table_csv(rows: Sequence[AucRow], path) -> None:
    """Write AUC or negative-fraction rows; empty groups print NA."""
    out = []
    for r in rows:
        value = "NA" if r.mean_auc is None else r.mean_auc
        out.append((r.setup, r.label, r.eps, value, r.group_size, r.lo, r.hi))
    data_io.write_csv(path, _TABLE_HEADER, out)


def read_table_csv(path) -> List[AucRow]:
    header, raw = data_io.read_csv(path)
    if header != _TABLE_HEADER:
        raise ValueError(f"unexpected table header in {path}: {header}")
    rows = []
    for rec in raw:
        setup, label, eps, value, size, lo, hi = rec
        mean = None if value == "NA" else float(value)
        rows.append(
            AucRow(setup, label, float(eps), mean, int(size), float(lo), float(hi))
        )
    return rows


def average_rows(rows: Sequence[AucRow]) -> Dict[float, AucRow]:
    """The over-labels average row per ε from a table, keyed by ε."""
    return {r.eps: r for r in rows if r.label == AVERAGE_LABEL}
