"""Evaluation statistics: per-region error metrics with their weighted
aggregates, the Ljung-Box randomness partition, KL divergence between
demand distributions, and the Gini concentration coefficient.

Metric conventions (per region, over the test window, smoothing c):

  rmse    sqrt(mean((pred - truth)^2))
  nrmse   rmse / sqrt(mean(truth^2)); undefined when truth is all zero
  mape    mean(|pred - truth| / (truth + c))
  smape1  mean(|pred - truth| / (truth + pred + c))
  smape2  sum(|pred - truth|) / sum(|truth + pred|); undefined when the
          denominator is zero

Undefined values are carried as NaN plus an explicit flag and excluded
from aggregates, with the excluded weight mass reported, never silently
zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from .errors import DataError, RangeError, ShapeError
from .tensor import format_value

METRIC_NAMES = ("rmse", "nrmse", "mape", "smape1", "smape2")


@dataclass(frozen=True)
class RegionSeries:
    region: tuple[int, int]
    truth: np.ndarray
    pred: np.ndarray

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.truth, dtype=np.float64).ravel()
        p = np.ascontiguousarray(self.pred, dtype=np.float64).ravel()
        if t.shape != p.shape:
            raise ShapeError(f"truth length {t.size} != prediction length {p.size}")
        if t.size == 0:
            raise RangeError("empty region series")
        if np.any(t < 0):
            raise DataError("truth series must be nonnegative")
        object.__setattr__(self, "truth", t)
        object.__setattr__(self, "pred", p)


@dataclass(frozen=True)
class RegionMetrics:
    rmse: float
    nrmse: float
    mape: float
    smape1: float
    smape2: float
    undefined: tuple[str, ...] = ()

    def value(self, name: str) -> float:
        if name not in METRIC_NAMES:
            raise ShapeError(f"unknown metric {name!r}")
        return getattr(self, name)


def region_metrics(rs: RegionSeries, c: float = 1.0) -> RegionMetrics:
    x = rs.truth
    xh = rs.pred
    n = x.size
    err = xh - x
    rmse = float(np.sqrt(np.sum(err * err) / n))
    undefined = []
    sumsq = float(np.sum(x * x))
    if sumsq == 0.0:
        nrmse = float("nan")
        undefined.append("nrmse")
    else:
        nrmse = rmse / float(np.sqrt(sumsq / n))
    mape = float(np.sum(np.abs(err) / (x + c)) / n)
    smape1 = float(np.sum(np.abs(err) / (x + xh + c)) / n)
    denom2 = float(np.sum(np.abs(x + xh)))
    if denom2 == 0.0:
        smape2 = float("nan")
        undefined.append("smape2")
    else:
        smape2 = float(np.sum(np.abs(err))) / denom2
    return RegionMetrics(rmse, nrmse, mape, smape1, smape2, tuple(undefined))


# --- weights and aggregation ------------------------------------------


@dataclass(frozen=True)
class Weights:
    alpha: np.ndarray  # [rows, cols], nonnegative, sums to 1

    def __post_init__(self) -> None:
        a = np.ascontiguousarray(self.alpha, dtype=np.float64)
        if a.ndim != 2:
            raise ShapeError(f"weights must be a matrix, got rank {a.ndim}")
        if np.any(a < 0):
            raise DataError("weights must be nonnegative")
        if abs(float(a.sum()) - 1.0) > 1e-12:
            raise DataError(f"weights must sum to 1, got {a.sum()!r}")
        object.__setattr__(self, "alpha", a)


def demand_weights(cube, t_lo: int, t_hi: int) -> Weights:
    """Each region's share of total demand over [t_lo, t_hi)."""
    window = cube.counts[:, :, t_lo:t_hi]
    totals = window.sum(axis=2)
    grand = float(totals.sum())
    if grand <= 0.0:
        raise DataError(f"no demand in [{t_lo}, {t_hi}); cannot form weights")
    return Weights(totals / grand)


@dataclass(frozen=True)
class AggregateResult:
    values: dict
    excluded_mass: dict  # metric -> alpha mass of excluded regions
    excluded_regions: dict  # metric -> tuple of regions


def aggregate(metrics_by_region: dict, weights: Weights, mode: str) -> AggregateResult:
    """Combine per-region metrics. mode "plain" is the arithmetic mean
    over regions where the metric is defined; mode "weighted" is the
    alpha-weighted sum renormalized over the defined regions."""
    if mode not in ("plain", "weighted"):
        raise ShapeError(f"unknown aggregation mode {mode!r}")
    if not metrics_by_region:
        raise DataError("no regions to aggregate")
    values = {}
    excluded_mass = {}
    excluded_regions = {}
    for name in METRIC_NAMES:
        entries = []
        dropped = []
        for region in sorted(metrics_by_region):
            m = metrics_by_region[region].value(name)
            if np.isnan(m):
                dropped.append(region)
            else:
                entries.append((region, m))
        if not entries:
            raise DataError(f"metric {name} is undefined in every region")
        if mode == "plain":
            values[name] = float(np.sum([m for _, m in entries]) / len(entries))
        else:
            alpha = weights.alpha
            mass = float(np.sum([alpha[r] for r, _ in entries]))
            if mass <= 0.0:
                raise DataError(f"all weight mass excluded for metric {name}")
            values[name] = float(np.sum([alpha[r] * m for r, m in entries]) / mass)
        excluded_mass[name] = float(np.sum([weights.alpha[r] for r in dropped])) \
            if dropped else 0.0
        excluded_regions[name] = tuple(dropped)
    return AggregateResult(values, excluded_mass, excluded_regions)


# --- randomness partition ---------------------------------------------


def autocorrelations(series: np.ndarray, h: int) -> np.ndarray:
    """Sample autocorrelations at lags 1..h (biased normalization)."""
    x = np.ascontiguousarray(series, dtype=np.float64).ravel()
    n = x.size
    centered = x - x.mean()
    denom = float(np.sum(centered * centered))
    if denom == 0.0:
        raise DataError("zero-variance series has no autocorrelations")
    rho = np.empty(h)
    for k in range(1, h + 1):
        rho[k - 1] = float(np.sum(centered[k:] * centered[:-k])) / denom
    return rho


def ljung_box(series, h: int = 20):
    """Portmanteau statistic Q = n(n+2) sum_k rho_k^2/(n-k) and its
    chi-square upper-tail p value with h degrees of freedom."""
    x = np.ascontiguousarray(series, dtype=np.float64).ravel()
    n = x.size
    if h < 1:
        raise RangeError(f"lag count must be >= 1, got {h}")
    if n <= h:
        raise RangeError(f"series length {n} must exceed lag count {h}")
    rho = autocorrelations(x, h)
    q = float(n * (n + 2) * np.sum(rho * rho / (n - np.arange(1, h + 1))))
    p = float(gammaincc(h / 2.0, q / 2.0))
    return q, p


@dataclass(frozen=True)
class Partition:
    g1: tuple  # non-random regions (p <= alpha)
    g2: tuple  # random regions (p > alpha)
    degenerate: tuple  # zero-variance regions, assigned to g2 and flagged

    def label(self, region) -> str:
        return "G1" if region in set(self.g1) else "G2"


def region_pvalues(cube, t_lo: int, t_hi: int, h: int = 20) -> dict:
    """Ljung-Box p value per region over [t_lo, t_hi); NaN marks a
    zero-variance series, where the statistic does not exist."""
    pvalues = {}
    rows, cols = cube.counts.shape[:2]
    for i in range(rows):
        for j in range(cols):
            series = cube.counts[i, j, t_lo:t_hi]
            if float(np.var(series)) == 0.0:
                pvalues[(i, j)] = float("nan")
            else:
                pvalues[(i, j)] = ljung_box(series, h)[1]
    return pvalues


def classify_regions(cube, t_lo: int, t_hi: int, h: int = 20,
                     alpha: float = 0.05) -> Partition:
    """Ljung-Box partition of the grid: p <= alpha means the region's
    series shows structure (G1); p > alpha means it is indistinguishable
    from noise (G2). Zero-variance series go to G2, flagged."""
    g1 = []
    g2 = []
    degenerate = []
    for region, p in region_pvalues(cube, t_lo, t_hi, h).items():
        if np.isnan(p):
            g2.append(region)
            degenerate.append(region)
        elif p <= alpha:
            g1.append(region)
        else:
            g2.append(region)
    return Partition(tuple(g1), tuple(g2), tuple(degenerate))


# --- distribution comparisons -----------------------------------------


def kl_divergence(truth, pred, bin_width: float = 1.0, eps: float = 1e-9) -> float:
    """KL divergence D(P||Q) between the value histograms of the two
    series, binned over their union support with additive smoothing eps
    per bin, natural log."""
    t = np.ascontiguousarray(truth, dtype=np.float64).ravel()
    p = np.ascontiguousarray(pred, dtype=np.float64).ravel()
    if t.size == 0 or p.size == 0:
        raise RangeError("empty series")
    if bin_width <= 0:
        raise RangeError(f"bin width must be > 0, got {bin_width}")
    lo = np.floor(min(t.min(), p.min()) / bin_width)
    hi = np.floor(max(t.max(), p.max()) / bin_width) + 1
    edges = np.arange(lo, hi + 1) * bin_width
    ph, _ = np.histogram(t, bins=edges)
    qh, _ = np.histogram(p, bins=edges)
    pd = ph.astype(np.float64) + eps
    qd = qh.astype(np.float64) + eps
    pd /= pd.sum()
    qd /= qd.sum()
    return float(np.sum(pd * np.log(pd / qd)))


def gini(region_totals) -> float:
    """Concentration of demand over regions: 1 minus twice the area under
    the Lorenz curve, by trapezoids over the ascending-sorted totals."""
    totals = np.ascontiguousarray(region_totals, dtype=np.float64).ravel()
    if np.any(totals < 0):
        raise DataError("region totals must be nonnegative")
    grand = float(totals.sum())
    if grand <= 0.0:
        raise DataError("all-zero totals have no concentration measure")
    n = totals.size
    shares = np.sort(totals) / grand
    lorenz = np.concatenate([[0.0], np.cumsum(shares)])
    return float(1.0 - np.sum((lorenz[1:] + lorenz[:-1]) / n))


# --- full evaluation --------------------------------------------------


@dataclass
class EvalReport:
    regions: dict  # (i, j) -> RegionMetrics
    weights: Weights
    partition: Partition
    plain: AggregateResult
    weighted: AggregateResult
    global_rmse: float
    partition_weighted: dict = field(default_factory=dict)  # label -> values dict


def evaluate_predictions(cube, ts, preds, train_lo: int, train_hi: int,
                         c: float = 1.0, h: int = 20) -> EvalReport:
    """Score a prediction stack against the cube.

    ts are the predicted time indices, preds is [len(ts), rows, cols].
    Weights and the G1/G2 partition come from the training window
    [train_lo, train_hi); metrics from the predicted indices.
    """
    ts = np.asarray(ts, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.float64)
    rows, cols = cube.counts.shape[:2]
    if preds.shape != (ts.size, rows, cols):
        raise ShapeError(f"predictions {preds.shape} do not match "
                         f"{(ts.size, rows, cols)}")
    if ts.size == 0:
        raise RangeError("no predicted time indices")

    weights = demand_weights(cube, train_lo, train_hi)
    partition = classify_regions(cube, train_lo, train_hi, h)
    truth = cube.counts[:, :, ts]  # [rows, cols, n]

    metrics = {}
    for i in range(rows):
        for j in range(cols):
            rs = RegionSeries((i, j), truth[i, j], preds[:, i, j])
            metrics[(i, j)] = region_metrics(rs, c)

    plain = aggregate(metrics, weights, "plain")
    weighted = aggregate(metrics, weights, "weighted")
    err = (preds - np.moveaxis(truth, 2, 0)).ravel()
    global_rmse = float(np.sqrt(np.sum(err * err) / err.size))

    # per-partition weighted values, metric by metric so one undefined
    # metric does not drop the whole partition block
    partition_weighted = {}
    for label, members in (("G1", partition.g1), ("G2", partition.g2)):
        values = {}
        for name in METRIC_NAMES:
            pairs = [(r, metrics[r].value(name)) for r in members]
            pairs = [(r, m) for r, m in pairs if not np.isnan(m)]
            mass = float(np.sum([weights.alpha[r] for r, _ in pairs])) if pairs else 0.0
            if mass <= 0.0:
                continue
            values[name] = float(np.sum([weights.alpha[r] * m
                                         for r, m in pairs]) / mass)
        if values:
            partition_weighted[label] = values
    return EvalReport(metrics, weights, partition, plain, weighted,
                      global_rmse, partition_weighted)


def format_eval_report(report: EvalReport) -> str:
    """Sectioned delimited text; every number goes through format_value,
    so equal reports are equal bytes."""
    lines = ["# regions"]
    lines.append("i j alpha rmse nrmse mape smape1 smape2 label flags")
    for (i, j) in sorted(report.regions):
        m = report.regions[(i, j)]
        flags = ",".join(m.undefined) if m.undefined else "-"
        lines.append(" ".join([
            str(i), str(j), format_value(report.weights.alpha[i, j]),
            format_value(m.rmse), format_value(m.nrmse), format_value(m.mape),
            format_value(m.smape1), format_value(m.smape2),
            report.partition.label((i, j)), flags,
        ]))
    lines.append("# aggregate")
    for mode, agg in (("plain", report.plain), ("weighted", report.weighted)):
        lines.append(" ".join([mode] + [format_value(agg.values[n])
                                        for n in METRIC_NAMES]))
    lines.append(f"global_rmse {format_value(report.global_rmse)}")
    for name in METRIC_NAMES:
        excluded = report.weighted.excluded_regions[name]
        if excluded:
            lines.append(f"excluded {name} {format_value(report.weighted.excluded_mass[name])} "
                         f"{len(excluded)}")
    lines.append("# partition")
    for label, members in (("G1", report.partition.g1), ("G2", report.partition.g2)):
        mass = float(np.sum([report.weights.alpha[r] for r in members])) if members else 0.0
        lines.append(f"{label} count {len(members)} alpha {format_value(mass)}")
        values = report.partition_weighted.get(label)
        if values:
            lines.append(" ".join([label, "weighted"]
                                  + [format_value(values.get(n, float("nan")))
                                     for n in METRIC_NAMES]))
    if report.partition.degenerate:
        lines.append(f"degenerate {len(report.partition.degenerate)}")
    return "\n".join(lines) + "\n"
