"""Overlap and surface-distance statistics for binary segmentations.

Dice measures voxel overlap; the average symmetric surface distance (ASD)
measures boundary agreement in physical millimetres.  A surface voxel is a
foreground voxel with at least one 6-connected background neighbour, where
the volume border counts as background.  ASD averages the Euclidean
point-to-set distances from each surface to the other:

    mean = (sum_p d(p, S_gt) + sum_g d(g, S_pred)) / (|S_pred| + |S_gt|)

and the reported max is the largest distance in either direction.  Surface
distances are undefined for empty masks; such cases raise UndefinedMetric so
reports can exclude and flag them instead of averaging a fabricated number.

Cohort aggregation uses population standard deviation and defines the median
of an even count as the mean of the two middle values.  The cohort ASD "max"
column is the maximum over per-case mean ASD values.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractViolation, UndefinedMetric
from .tensor import Tensor
from .volume import VolumeGrid


def _mask_of(volume):
    values = volume.values if isinstance(volume, VolumeGrid) else np.asarray(volume)
    if values.ndim != 3:
        raise ContractViolation(f"masks must be 3-d, got {values.ndim}-d")
    bad = ~np.isin(values, (0, 1))
    if bad.any():
        raise ContractViolation("masks must be binary")
    return values.astype(bool)


def _check_aligned(pred, gt):
    if isinstance(pred, VolumeGrid) and isinstance(gt, VolumeGrid):
        if pred.extents != gt.extents:
            raise ContractViolation(
                f"extent mismatch: {pred.extents} vs {gt.extents}"
            )
        if pred.spacing != gt.spacing:
            raise ContractViolation(
                f"spacing mismatch: {pred.spacing} vs {gt.spacing}"
            )
    elif np.shape(pred) != np.shape(gt):
        raise ContractViolation(f"extent mismatch: {np.shape(pred)} vs {np.shape(gt)}")


def binarize(prob_map, threshold):
    """Threshold a probability map; values equal to the threshold map to 1."""
    if not 0.0 < threshold < 1.0:
        raise ContractViolation(f"threshold must lie in (0, 1), got {threshold}")
    if isinstance(prob_map, VolumeGrid):
        values = (prob_map.values >= threshold).astype(np.float32)
        return VolumeGrid(values, prob_map.spacing, prob_map.origin, kind="label")
    arr = prob_map.data if isinstance(prob_map, Tensor) else np.asarray(prob_map)
    return (arr >= threshold).astype(np.float32)


def dice(pred, gt):
    """Overlap coefficient 2|P&G| / (|P|+|G|); 1.0 when both are empty."""
    _check_aligned(pred, gt)
    p = _mask_of(pred)
    g = _mask_of(gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def surface_voxels(mask):
    """Coordinates of foreground voxels facing background, in (z, y, x) order."""
    m = _mask_of(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1, 1:-1]
        & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1]
        & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2]
        & padded[1:-1, 1:-1, 2:]
    )
    return np.argwhere(m & ~interior)


def asd(pred, gt):
    """Average and maximum symmetric surface distance in millimetres."""
    _check_aligned(pred, gt)
    spacing = pred.spacing if isinstance(pred, VolumeGrid) else (1.0, 1.0, 1.0)
    sp = surface_voxels(pred)
    sg = surface_voxels(gt)
    if len(sp) == 0 or len(sg) == 0:
        raise UndefinedMetric(
            "surface distance undefined: "
            + ("prediction" if len(sp) == 0 else "ground truth")
            + " mask is empty"
        )
    sp_mm = sp.astype(np.float64) * spacing
    sg_mm = sg.astype(np.float64) * spacing
    d_pg = cKDTree(sg_mm).query(sp_mm)[0]
    d_gp = cKDTree(sp_mm).query(sg_mm)[0]
    mean = (d_pg.sum() + d_gp.sum()) / (len(d_pg) + len(d_gp))
    return {"mean_mm": float(mean), "max_mm": float(max(d_pg.max(), d_gp.max()))}


@dataclass
class CaseMetrics:
    case: str
    dice: float
    asd_mean_mm: float
    asd_max_mm: float


@dataclass
class MetricsReport:
    per_case: list
    asd_stats: dict
    dice_stats: dict
    flagged: list = field(default_factory=list)


def evaluate_case(case_id, pred, gt):
    """Compute one per-case row; propagates UndefinedMetric for empty masks."""
    d = dice(pred, gt)
    surf = asd(pred, gt)
    return CaseMetrics(str(case_id), d, surf["mean_mm"], surf["max_mm"])


def _population_stats(values):
    v = np.asarray(values, np.float64)
    n = len(v)
    srt = np.sort(v)
    median = float(srt[n // 2]) if n % 2 else float((srt[n // 2 - 1] + srt[n // 2]) / 2)
    return float(v.mean()), float(v.std()), median


def cohort_report(cases, flagged=()):
    """Aggregate per-case rows into cohort statistics."""
    cases = list(cases)
    if not cases:
        raise ContractViolation("cohort report requires at least one case")
    asd_means = [c.asd_mean_mm for c in cases]
    dices = [c.dice for c in cases]
    a_mean, a_std, a_median = _population_stats(asd_means)
    d_mean, d_std, d_median = _population_stats(dices)
    return MetricsReport(
        per_case=cases,
        asd_stats={"mean": a_mean, "std": a_std, "max": max(asd_means), "median": a_median},
        dice_stats={"mean": d_mean, "std": d_std, "min": min(dices), "median": d_median},
        flagged=list(flagged),
    )


def format_report(report):
    """Render per-case rows plus cohort summary rows as tab-separated text."""
    lines = ["case\tdice\tasd_mean_mm\tasd_max_mm"]
    for c in report.per_case:
        lines.append(f"{c.case}\t{c.dice:.6f}\t{c.asd_mean_mm:.6f}\t{c.asd_max_mm:.6f}")
    a, d = report.asd_stats, report.dice_stats
    lines.append("")
    lines.append("cohort\tmean\tstd\tmax\tmedian")
    lines.append(
        f"asd_mm\t{a['mean']:.6f}\t{a['std']:.6f}\t{a['max']:.6f}\t{a['median']:.6f}"
    )
    lines.append("cohort\tmean\tstd\tmin\tmedian")
    lines.append(
        f"dice\t{d['mean']:.6f}\t{d['std']:.6f}\t{d['min']:.6f}\t{d['median']:.6f}"
    )
    if report.flagged:
        lines.append("")
        lines.append("flagged (excluded, undefined surface distance)")
        for case_id in report.flagged:
            lines.append(str(case_id))
    return "\n".join(lines) + "\n"
