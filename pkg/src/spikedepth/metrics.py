"""Depth error metrics, per-interval accuracy, and pooled report assembly.

Metrics are computed from additive sums (``MetricSums``) so that reports
from several samples pool over the union of their pixels rather than
averaging per-sample values.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._accel import USE_NUMBA, njit

TABLE_COLUMNS = ("abs_rel", "rmse", "sq_rel", "rmse_log", "a1", "a2", "a3")
TABLE_HEADER = ("Abs_Rel", "RMSE", "Sq_Rel", "RMSE_log", "a1", "a2", "a3")
THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)
DEFAULT_BIN_EDGES = (0.0, 25.0, 50.0, 100.0, 200.0)


@dataclass
class MetricSums:
    n: int = 0
    abs_rel: float = 0.0
    sq_err: float = 0.0
    sq_rel: float = 0.0
    log_sq: float = 0.0
    a1: int = 0
    a2: int = 0
    a3: int = 0

    def __add__(self, other: "MetricSums") -> "MetricSums":
        return MetricSums(*(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__))


@dataclass
class MetricsReport:
    abs_rel: float
    rmse: float
    sq_rel: float
    rmse_log: float
    a1: float
    a2: float
    a3: float
    valid_pixels: int
    sums: MetricSums = field(repr=False, default_factory=MetricSums)

    @classmethod
    def from_sums(cls, s: MetricSums) -> "MetricsReport":
        if s.n == 0:
            raise ValueError("no valid pixels")
        n = s.n
        return cls(s.abs_rel / n, math.sqrt(s.sq_err / n), s.sq_rel / n, math.sqrt(s.log_sq / n),
                   s.a1 / n, s.a2 / n, s.a3 / n, n, s)

    def row(self) -> list[float]:
        return [getattr(self, c) for c in TABLE_COLUMNS]

    def to_dict(self) -> dict:
        d = {c: getattr(self, c) for c in TABLE_COLUMNS}
        d["valid_pixels"] = self.valid_pixels
        return d


# -- kernels -----------------------------------------------------------------


@njit
def _sums_numba(pred, gt, valid):
    n = 0
    abs_rel = 0.0
    sq_err = 0.0
    sq_rel = 0.0
    log_sq = 0.0
    a1 = 0
    a2 = 0
    a3 = 0
    t1 = 1.25
    t2 = 1.25 ** 2
    t3 = 1.25 ** 3
    for i in range(pred.size):
        if not valid[i]:
            continue
        d = gt[i]
        p = pred[i]
        e = d - p
        n += 1
        abs_rel += abs(e) / d
        sq_err += e * e
        sq_rel += e * e / d
        lg = math.log(p) - math.log(d)
        log_sq += lg * lg
        r = max(p / d, d / p)
        if r < t1:
            a1 += 1
        if r < t2:
            a2 += 1
        if r < t3:
            a3 += 1
    return n, abs_rel, sq_err, sq_rel, log_sq, a1, a2, a3


def _sums_numpy(pred, gt, valid):
    p = pred[valid]
    d = gt[valid]
    e = d - p
    r = np.maximum(p / d, d / p)
    lg = np.log(p) - np.log(d)
    return (int(p.size), float(np.sum(np.abs(e) / d)), float(np.sum(e * e)), float(np.sum(e * e / d)),
            float(np.sum(lg * lg)), int(np.sum(r < THRESHOLDS[0])), int(np.sum(r < THRESHOLDS[1])),
            int(np.sum(r < THRESHOLDS[2])))


def _prepare(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = np.isfinite(gt)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise ValueError("empty validity mask")
    if np.any(gt[valid] <= 0) or np.any(~(pred[valid] > 0)):
        raise ValueError("depths must be positive at valid pixels")
    return pred, gt, valid


def metric_sums(pred, gt, mask=None, *, use_numba: bool | None = None) -> MetricSums:
    pred, gt, valid = _prepare(pred, gt, mask)
    if use_numba is None:
        use_numba = USE_NUMBA
    kernel = _sums_numba if use_numba else _sums_numpy
    out = kernel(np.ascontiguousarray(pred).ravel(), np.ascontiguousarray(gt).ravel(),
                 np.ascontiguousarray(valid).ravel())
    return MetricSums(*out)


def compute_metrics(pred, gt, mask=None, *, use_numba: bool | None = None) -> MetricsReport:
    """Abs_Rel, RMSE, Sq_Rel, RMSE_log and a1..a3 over valid pixels.

    Valid pixels have finite GT (and ``mask`` set, if given). The accuracy
    test is strict: ``max(p/d, d/p) < 1.25**j``.
    """
    return MetricsReport.from_sums(metric_sums(pred, gt, mask, use_numba=use_numba))


def assemble_report(reports) -> MetricsReport:
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    total = MetricSums()
    for r in reports:
        total = total + r.sums
    return MetricsReport.from_sums(total)


# -- per-interval accuracy -------------------------------------------------------


@dataclass
class IntervalReport:
    bin_edges: list
    counts: list
    empty: list
    accuracy: dict  # branch -> list of {a1, a2, a3} or None for empty bins
    valid_pixels: int

    def to_rows(self):
        for branch, bins in self.accuracy.items():
            for i, acc in enumerate(bins):
                lo, hi = self.bin_edges[i], self.bin_edges[i + 1]
                row = {"branch": branch, "bin_lo": lo, "bin_hi": hi, "count": self.counts[i]}
                row.update(acc if acc is not None else {"a1": None, "a2": None, "a3": None})
                yield row


def default_bin_edges(d_max: float) -> list:
    return [e for e in DEFAULT_BIN_EDGES if e < d_max] + [float(d_max)]


def interval_accuracy(preds: dict, gt, bin_edges, mask=None) -> IntervalReport:
    """a1/a2/a3 per branch within GT-depth bins ``[e_i, e_{i+1})``.

    The last bin is closed on the right. Every valid GT depth must fall
    inside ``[edges[0], edges[-1]]`` so the bins partition the valid set.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.isfinite(gt)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    if not valid.any():
        raise ValueError("no valid pixels")
    g = gt[valid]
    if g.min() < edges[0] or g.max() > edges[-1]:
        raise ValueError(f"valid depths span [{g.min()}, {g.max()}], outside the bin edges")
    idx = np.searchsorted(edges, gt, side="right") - 1
    idx = np.where(gt == edges[-1], edges.size - 2, idx)
    nbins = edges.size - 1
    counts, empty = [], []
    accuracy = {name: [] for name in preds}
    for b in range(nbins):
        in_bin = valid & (idx == b)
        c = int(in_bin.sum())
        counts.append(c)
        empty.append(c == 0)
        for name, pred in preds.items():
            if c == 0:
                accuracy[name].append(None)
                continue
            s = metric_sums(pred, gt, in_bin)
            accuracy[name].append({"a1": s.a1 / s.n, "a2": s.a2 / s.n, "a3": s.a3 / s.n})
    return IntervalReport(edges.tolist(), counts, empty, accuracy, int(valid.sum()))


def merge_interval_reports(reports) -> IntervalReport:
    """Pixel-weighted merge of interval reports that share bin edges."""
    reports = list(reports)
    first = reports[0]
    nb = len(first.counts)
    counts = [sum(r.counts[b] for r in reports) for b in range(nb)]
    accuracy = {}
    for name in first.accuracy:
        bins = []
        for b in range(nb):
            if counts[b] == 0:
                bins.append(None)
                continue
            acc = {}
            for key in ("a1", "a2", "a3"):
                acc[key] = sum(r.accuracy[name][b][key] * r.counts[b] for r in reports if r.counts[b]) / counts[b]
            bins.append(acc)
        accuracy[name] = bins
    return IntervalReport(first.bin_edges, counts, [c == 0 for c in counts], accuracy,
                         sum(r.valid_pixels for r in reports))


# -- formatting ------------------------------------------------------------------


def format_table(rows: dict) -> str:
    """Fixed-width table, one row per named report, columns in TABLE_HEADER order."""
    name_w = max([6] + [len(k) for k in rows])
    lines = [f"{'Branch':<{name_w}} " + " ".join(f"{h:>9}" for h in TABLE_HEADER)]
    for name, rep in rows.items():
        lines.append(f"{name:<{name_w}} " + " ".join(f"{v:>9.4f}" for v in rep.row()))
    return "\n".join(lines) + "\n"


def report_records(rows: dict) -> str:
    return "".join(json.dumps({"branch": k, **v.to_dict()}, sort_keys=True) + "\n" for k, v in rows.items())


def interval_csv(report: IntervalReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["branch", "bin_lo", "bin_hi", "count", "a1", "a2", "a3"])
    w.writeheader()
    for row in report.to_rows():
        w.writerow(row)
    return buf.getvalue()


def report_to_dict(report: MetricsReport) -> dict:
    d = report.to_dict()
    d["sums"] = asdict(report.sums)
    return d


def report_from_dict(d: dict) -> MetricsReport:
    return MetricsReport.from_sums(MetricSums(**d["sums"]))
