"""Segmentation evaluation: Dice, IoU, VOE, Hausdorff distance, pixel
accuracy, and batch aggregation (mean / median / IQR).

Empty-mask conventions, chosen so batch reports stay total:
  - both masks empty: Dice = IoU = 1, VOE = 0, HD = 0 (perfect agreement);
  - ground truth empty: per-class accuracy PA_c is undefined and reported
    as NaN (aggregates skip missing values);
  - hausdorff() itself refuses empty masks; only the batch report applies
    the both-empty convention.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .validation import check_mask, check_same_shape


@dataclass
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


def _counts(gt, pred):
    gt = check_mask(gt, name="gt")
    pred = check_mask(pred, name="pred")
    check_same_shape(gt, pred, name_a="gt", name_b="pred")
    gtb = gt.astype(bool)
    prb = pred.astype(bool)
    tp = int(np.logical_and(gtb, prb).sum())
    fp = int(np.logical_and(~gtb, prb).sum())
    fn = int(np.logical_and(gtb, ~prb).sum())
    tn = gt.size - tp - fp - fn
    return ConfusionCounts(tp, tn, fp, fn)


def overlap_metrics(gt, pred):
    """(dice, iou, voe) over foreground pixels; both-empty counts as perfect."""
    c = _counts(gt, pred)
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0, 1.0, 0.0
    dice = 2.0 * c.tp / denom
    union = c.tp + c.fp + c.fn
    iou = c.tp / union if union else 1.0
    return dice, iou, 1.0 - iou


def hausdorff(gt, pred):
    """Symmetric Hausdorff distance between foreground pixel centers.

    max over both directions of the farthest nearest-neighbor distance,
    in pixels.  Computed with an exact Euclidean distance transform, which
    matches brute-force pairwise search bit for bit.
    """
    gt = check_mask(gt, name="gt")
    pred = check_mask(pred, name="pred")
    check_same_shape(gt, pred, name_a="gt", name_b="pred")
    if not gt.any() or not pred.any():
        raise ValueError("HD undefined for empty masks")
    # distance_transform_edt gives, per pixel, the distance to the nearest
    # zero; feeding the complement yields distance to the nearest foreground
    d_to_pred = distance_transform_edt(pred == 0)
    d_to_gt = distance_transform_edt(gt == 0)
    return float(max(d_to_pred[gt.astype(bool)].max(), d_to_gt[pred.astype(bool)].max()))


def pixel_accuracy(gt, pred):
    """(PA, PA_c, ConfusionCounts); PA_c is NaN when gt has no foreground."""
    c = _counts(gt, pred)
    pa = (c.tp + c.tn) / c.total
    pos = c.tp + c.fn
    pa_c = c.tp / pos if pos else float("nan")
    return pa, pa_c, c


@dataclass
class MetricsReport:
    per_image: list        # dicts with image, dice, hd, iou, pa, pa_c, voe
    aggregates: dict       # metric -> {mean, median, iqr}

    CSV_COLUMNS = ("image", "dice", "hd", "iou", "pa", "pa_c", "voe")

    def to_csv(self, path):
        with open(path, "w", encoding="ascii") as fh:
            fh.write(",".join(self.CSV_COLUMNS) + "\n")
            for row in self.per_image:
                cells = [str(row["image"])]
                for key in self.CSV_COLUMNS[1:]:
                    v = row[key]
                    cells.append("" if v != v else f"{v:.6f}")  # NaN -> empty cell
                fh.write(",".join(cells) + "\n")

    def table(self):
        lines = ["metric      mean    median  iqr"]
        for key in self.CSV_COLUMNS[1:]:
            agg = self.aggregates[key]
            lines.append(
                f"{key:<10}  {agg['mean']:<6.4f}  {agg['median']:<6.4f}  {agg['iqr']:<6.4f}"
            )
        return "\n".join(lines)


def _aggregate(values):
    vals = np.asarray([v for v in values if v == v], dtype=np.float64)
    if vals.size == 0:
        nan = float("nan")
        return {"mean": nan, "median": nan, "iqr": nan}
    return {
        "mean": float(vals.mean()),
        "median": float(np.percentile(vals, 50, method="lower")),
        "iqr": float(np.percentile(vals, 75) - np.percentile(vals, 25)),
    }


def evaluate_report(pairs, names=None):
    """Per-image metrics plus aggregates for a list of (gt, pred) masks."""
    if not pairs:
        raise ValueError("need at least one (gt, pred) pair")
    names = names if names is not None else [str(i) for i in range(len(pairs))]
    rows = []
    for name, (gt, pred) in zip(names, pairs):
        dice, iou, voe = overlap_metrics(gt, pred)
        gt_any = np.asarray(gt).any()
        pred_any = np.asarray(pred).any()
        if gt_any and pred_any:
            hd = hausdorff(gt, pred)
        elif not gt_any and not pred_any:
            hd = 0.0
        else:
            hd = float("nan")
        pa, pa_c, _ = pixel_accuracy(gt, pred)
        rows.append(
            {"image": name, "dice": dice, "hd": hd, "iou": iou, "pa": pa, "pa_c": pa_c, "voe": voe}
        )
    aggregates = {
        key: _aggregate([r[key] for r in rows]) for key in MetricsReport.CSV_COLUMNS[1:]
    }
    return MetricsReport(rows, aggregates)
