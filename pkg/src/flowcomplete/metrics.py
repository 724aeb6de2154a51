"""Evaluation protocol: reported chamfer distance, bird's-eye-view
Jensen-Shannon divergence, and voxel occupancy IoU.

The chamfer metric is the mean-distance reporting variant in meters (the
summed-squared form drives training, not evaluation). JSD uses natural
log, so values live in [0, ln 2]. Reports serialize to flat key-value
text and parse back losslessly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import as_cloud, bev_histogram, chamfer_distance_mean, voxelize

DEFAULT_BEV_RESOLUTION = 0.5
DEFAULT_BEV_EXTENT = (-50.0, 50.0, -50.0, 50.0)
DEFAULT_IOU_RESOLUTIONS = (0.5, 0.2, 0.1)


@dataclass(frozen=True)
class MetricConfig:
    bev_resolution: float = DEFAULT_BEV_RESOLUTION
    bev_extent: tuple = DEFAULT_BEV_EXTENT
    iou_resolutions: tuple = DEFAULT_IOU_RESOLUTIONS
    voxel_origin: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EvalReport:
    """One prediction/ground-truth comparison."""
    cd_m: float
    jsd: float
    voxel_iou: dict = field(default_factory=dict)
    wall_time_s: float = 0.0


def eval_chamfer(pred, gt) -> float:
    """Symmetric mean nearest-neighbor distance in meters."""
    return chamfer_distance_mean(pred, gt)


def eval_bev_jsd(pred, gt, resolution: float = DEFAULT_BEV_RESOLUTION,
                 extent=DEFAULT_BEV_EXTENT) -> float:
    """Jensen-Shannon divergence of the two BEV occupancy histograms.

    Natural log; empty bins contribute nothing (0 * log 0 := 0). Raises if
    either cloud has no point inside the extent, since its histogram has
    no mass to normalize.
    """
    hp = bev_histogram(pred, resolution, extent)
    hq = bev_histogram(gt, resolution, extent)
    for name, hist in (("pred", hp), ("gt", hq)):
        if hist.counts.sum() == 0:
            raise ValueError(f"no {name} points inside evaluation extent")
    p = hp.counts.ravel() / hp.counts.sum()
    q = hq.counts.ravel() / hq.counts.sum()
    m = 0.5 * (p + q)
    pm = p > 0
    qm = q > 0
    kl_p = float(np.sum(p[pm] * np.log(p[pm] / m[pm])))
    kl_q = float(np.sum(q[qm] * np.log(q[qm] / m[qm])))
    return 0.5 * (kl_p + kl_q)


def eval_voxel_iou(pred, gt, resolution: float,
                   origin=(0.0, 0.0, 0.0)) -> float:
    """Intersection over union of the occupied voxel sets."""
    gt_cells = voxelize(gt, resolution, origin).occupied
    if not gt_cells:
        raise ValueError("empty cloud in voxel IoU")
    pred_cells = voxelize(pred, resolution, origin).occupied
    union = pred_cells | gt_cells
    return len(pred_cells & gt_cells) / len(union)


def evaluate(pred, gt, config: MetricConfig = MetricConfig()) -> EvalReport:
    """All metrics for one (pred, gt) pair, plus the wall time spent."""
    pred = as_cloud(pred)
    gt = as_cloud(gt)
    start = time.perf_counter()
    cd = eval_chamfer(pred, gt)
    jsd = eval_bev_jsd(pred, gt, config.bev_resolution, config.bev_extent)
    iou = {
        res: eval_voxel_iou(pred, gt, res, config.voxel_origin)
        for res in config.iou_resolutions
    }
    return EvalReport(cd_m=cd, jsd=jsd, voxel_iou=iou,
                      wall_time_s=time.perf_counter() - start)


def format_report(report: EvalReport) -> str:
    """Flat `key = value` text; float repr keeps full precision."""
    lines = [
        f"cd_m = {report.cd_m!r}",
        f"jsd = {report.jsd!r}",
    ]
    for res in sorted(report.voxel_iou, reverse=True):
        lines.append(f"voxel_iou@{res!r} = {report.voxel_iou[res]!r}")
    lines.append(f"wall_time_s = {report.wall_time_s!r}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    """Inverse of format_report."""
    values = {}
    iou = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        try:
            number = float(value.strip())
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad number {value.strip()!r}") from exc
        if key.startswith("voxel_iou@"):
            iou[float(key[len("voxel_iou@"):])] = number
        else:
            values[key] = number
    missing = {"cd_m", "jsd"} - values.keys()
    if missing:
        raise ValueError(f"report missing keys: {sorted(missing)}")
    return EvalReport(
        cd_m=values["cd_m"],
        jsd=values["jsd"],
        voxel_iou=iou,
        wall_time_s=values.get("wall_time_s", 0.0),
    )


def format_table(rows) -> str:
    """Aligned summary of labeled reports plus their column means.

    rows: iterable of (label, EvalReport). Column order mirrors the usual
    reporting layout: CD, JSD, then IoU from coarse to fine.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no reports to tabulate")
    resolutions = sorted(
        {res for _, rep in rows for res in rep.voxel_iou}, reverse=True
    )
    header = ["case", "cd[m]", "jsd"] + [f"iou@{res:g}m" for res in resolutions]

    def cells(label, rep):
        out = [label, f"{rep.cd_m:.6f}", f"{rep.jsd:.6f}"]
        out += [
            f"{rep.voxel_iou[res]:.4f}" if res in rep.voxel_iou else "-"
            for res in resolutions
        ]
        return out

    body = [cells(label, rep) for label, rep in rows]
    mean = EvalReport(
        cd_m=float(np.mean([rep.cd_m for _, rep in rows])),
        jsd=float(np.mean([rep.jsd for _, rep in rows])),
        voxel_iou={
            res: float(np.mean([rep.voxel_iou[res] for _, rep in rows
                                if res in rep.voxel_iou]))
            for res in resolutions
        },
    )
    body.append(cells("mean", mean))
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in [header] + body]
    return "\n".join(lines) + "\n"
