"""View-synthesis and map-reconstruction metrics.

Per-frame metrics compare ray depths and synthesized clouds against the real
scan; map metrics compare clouds stitched over all test frames. Nearest
neighbors run through a KD-tree; tests pin the results against a brute-force
O(n*m) oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import MetricError
from .io import PointCloud

ACC_THRESHOLD = 0.2  # meters; depth accuracy / F-score threshold


@dataclass(frozen=True)
class MetricsReport:
    frame_id: int
    dep_err: float | None
    dep_acc: float | None
    cd: float | None
    f_score: float | None
    valid_fraction: float


@dataclass(frozen=True)
class MapReport:
    acc: float
    comp: float
    map_cd: float
    map_f: float


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    return pts.reshape(-1, 3)


def depth_metrics(pred: np.ndarray, truth: np.ndarray, tau: float = ACC_THRESHOLD):
    """Mean |error| and accuracy at tau over valid (non-NaN) predictions.

    Returns (dep_err, dep_acc, valid_fraction); the first two are None when
    no prediction is valid. The accuracy bound is closed (err <= tau counts).
    """
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise MetricError("prediction/truth ray counts differ")
    valid = np.isfinite(pred)
    if pred.size == 0:
        return None, None, 0.0
    frac = float(valid.mean())
    if not np.any(valid):
        return None, None, 0.0
    err = np.abs(pred[valid] - truth[valid])
    return float(err.mean()), float((err <= tau).mean()), frac


def nn_distances(query: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Euclidean distance from each query point to its nearest target point."""
    return cKDTree(target).query(query)[0]


def chamfer(a, b) -> tuple[float, float, float]:
    """Directional mean NN distances and their arithmetic mean.

    cd = (mean_{p in a} min_q ||p-q|| + mean_{q in b} min_p ||q-p||) / 2.
    """
    pa, pb = _points(a), _points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise MetricError("chamfer distance of an empty cloud is undefined")
    d_ab = float(nn_distances(pa, pb).mean())
    d_ba = float(nn_distances(pb, pa).mean())
    return d_ab, d_ba, 0.5 * (d_ab + d_ba)


def f_score(a, b, tau: float = ACC_THRESHOLD) -> float:
    """Harmonic mean of precision/recall under a closed NN-distance threshold."""
    pa, pb = _points(a), _points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise MetricError("F-score of an empty cloud is undefined")
    precision = float((nn_distances(pa, pb) <= tau).mean())
    recall = float((nn_distances(pb, pa) <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def map_metrics(reconstructed, real, tau: float = ACC_THRESHOLD) -> MapReport:
    """Map-level accuracy/completion/CD/F between stitched clouds."""
    acc, comp, cd = chamfer(reconstructed, real)
    return MapReport(acc=acc, comp=comp, map_cd=cd, map_f=f_score(reconstructed, real, tau))


def frame_report(frame_id, pred_depths, truth_depths, pred_cloud, real_cloud, tau=ACC_THRESHOLD):
    dep_err, dep_acc, frac = depth_metrics(pred_depths, truth_depths, tau)
    if len(_points(pred_cloud)) > 0 and len(_points(real_cloud)) > 0:
        _, _, cd = chamfer(pred_cloud, real_cloud)
        f = f_score(pred_cloud, real_cloud, tau)
    else:
        cd, f = None, None
    return MetricsReport(frame_id, dep_err, dep_acc, cd, f, frac)


def _fmt(value) -> str:
    return "nan" if value is None else f"{value:.6f}"


def aggregate_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Column-wise mean over frames, skipping frames where a metric is absent."""

    def mean_of(attr):
        vals = [getattr(r, attr) for r in reports if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else None

    return MetricsReport(
        frame_id=-1,
        dep_err=mean_of("dep_err"),
        dep_acc=mean_of("dep_acc"),
        cd=mean_of("cd"),
        f_score=mean_of("f_score"),
        valid_fraction=float(np.mean([r.valid_fraction for r in reports])) if reports else 0.0,
    )


def write_metrics_csv(path, reports: list[MetricsReport]) -> MetricsReport:
    """One row per frame plus an aggregate row; returns the aggregate."""
    agg = aggregate_reports(reports)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "dep_err", "dep_acc_02", "cd", "f_02", "valid_fraction"])
        for r in reports:
            writer.writerow(
                [r.frame_id, _fmt(r.dep_err), _fmt(r.dep_acc), _fmt(r.cd), _fmt(r.f_score), _fmt(r.valid_fraction)]
            )
        writer.writerow(
            ["aggregate", _fmt(agg.dep_err), _fmt(agg.dep_acc), _fmt(agg.cd), _fmt(agg.f_score), _fmt(agg.valid_fraction)]
        )
    return agg


def write_map_csv(path, report: MapReport) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["acc", "comp", "map_cd", "map_f_02"])
        writer.writerow([_fmt(report.acc), _fmt(report.comp), _fmt(report.map_cd), _fmt(report.map_f)])


def format_table(reports: list[MetricsReport], map_report: MapReport | None = None) -> str:
    """Human-readable summary for standard output."""
    lines = [f"{'frame':>9} {'dep_err':>9} {'acc@0.2':>9} {'cd':>9} {'f@0.2':>9} {'valid':>7}"]
    agg = aggregate_reports(reports)
    for r in reports + [agg]:
        name = "aggregate" if r.frame_id < 0 else str(r.frame_id)
        lines.append(
            f"{name:>9} {_fmt(r.dep_err):>9} {_fmt(r.dep_acc):>9} "
            f"{_fmt(r.cd):>9} {_fmt(r.f_score):>9} {r.valid_fraction:>7.3f}"
        )
    if map_report is not None:
        lines.append(
            f"map: acc={map_report.acc:.6f} comp={map_report.comp:.6f} "
            f"cd={map_report.map_cd:.6f} f@0.2={map_report.map_f:.6f}"
        )
    return "\n".join(lines)
