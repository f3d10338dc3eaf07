"""Cell-level heatmap evaluation and classifier metrics.

Points are scored as the mean rectified relevance inside a disc around
the annotation; region annotations score as single structures (mean over
the polygon interior). ROC/AUC uses the rank statistic with midrank tie
handling, which equals the trapezoidal integral of the threshold-swept
curve and gives exactly 0.5 on constant heatmaps.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import substream
from .geometry import disc_pixels, polygon_is_simple, polygon_mask

POINT_CLASSES = ("cancer", "non-cancer", "excluded")
POSITIVE_CLASS = "cancer"


@dataclass
class PointAnnotation:
    x: float
    y: float
    cls: str


@dataclass
class RegionAnnotation:
    cls: str
    polygon: list  # [(x, y), ...]


@dataclass
class AnnotationSet:
    tile_id: str
    width: int
    height: int
    points: list = field(default_factory=list)
    regions: list = field(default_factory=list)

    def validate(self):
        for p in self.points:
            if p.cls not in POINT_CLASSES:
                raise ValueError(f"unknown point class '{p.cls}'")
            if not (0 <= p.x < self.width and 0 <= p.y < self.height):
                raise ValueError(
                    f"point ({p.x}, {p.y}) outside tile "
                    f"{self.width}x{self.height}"
                )
        for reg in self.regions:
            pts = np.asarray(reg.polygon, dtype=float)
            if (pts[:, 0].min() < 0 or pts[:, 1].min() < 0
                    or pts[:, 0].max() >= self.width
                    or pts[:, 1].max() >= self.height):
                raise ValueError(f"region '{reg.cls}' outside tile bounds")
            if not polygon_is_simple(reg.polygon):
                raise ValueError(f"region '{reg.cls}' polygon self-intersects")
        return self


def save_annotations(ann: AnnotationSet, path) -> Path:
    doc = {
        "tile_id": ann.tile_id,
        "width": ann.width,
        "height": ann.height,
        "points": [{"x": p.x, "y": p.y, "class": p.cls} for p in ann.points],
        "regions": [
            {"class": r.cls, "polygon": [[float(x), float(y)] for x, y in r.polygon]}
            for r in ann.regions
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_annotations(path) -> AnnotationSet:
    doc = json.loads(Path(path).read_text())
    return AnnotationSet(
        tile_id=doc["tile_id"],
        width=doc["width"],
        height=doc["height"],
        points=[PointAnnotation(p["x"], p["y"], p["class"])
                for p in doc["points"]],
        regions=[RegionAnnotation(r["class"],
                                  [tuple(v) for v in r["polygon"]])
                 for r in doc["regions"]],
    ).validate()


def _map_values(m):
    return m.values if hasattr(m, "values") else np.asarray(m)


def cell_scores(heatmap, ann: AnnotationSet, radius_px: float,
                include_points: bool = True,
                include_regions: bool = True) -> list:
    """Per-annotation mean rectified relevance.

    Returns [(score, class), ...]: one entry per non-excluded point (class
    "cancer"/"non-cancer") and one per region annotation (its region
    class). Negative relevance is clipped to zero before averaging.
    """
    values = _map_values(heatmap)
    if values.shape != (ann.height, ann.width):
        raise ValueError(
            f"heatmap shape {values.shape} does not match annotation tile "
            f"{ann.height}x{ann.width}"
        )
    if radius_px <= 0:
        raise ValueError("radius_px must be > 0")
    rect = np.maximum(values, 0.0)
    out = []
    if include_points:
        for p in ann.points:
            if p.cls == "excluded":
                continue
            rows, cols = disc_pixels(p.x, p.y, radius_px, ann.height, ann.width)
            if rows.size == 0:
                raise ValueError(
                    f"empty disc at ({p.x}, {p.y}) with radius {radius_px}"
                )
            out.append((float(rect[rows, cols].mean()), p.cls))
    if include_regions:
        for reg in ann.regions:
            mask = polygon_mask(reg.polygon, ann.height, ann.width)
            if not mask.any():
                raise ValueError(
                    f"region '{reg.cls}' rasterizes to zero pixels"
                )
            out.append((float(rect[mask].mean()), reg.cls))
    return out


@dataclass
class RocCurve:
    points: list  # [(fpr, tpr), ...] starting at (0,0), ending at (1,1)
    auc: float
    n_pos: int
    n_neg: int


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    xs = x[order]
    i = 0
    while i < len(xs):
        j = i
        while j < len(xs) and xs[j] == xs[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def roc(scores_with_classes) -> RocCurve:
    """ROC over scored annotations; "cancer" entries are the positives.

    AUC is the tie-corrected Mann-Whitney statistic, identical to the
    trapezoidal integral of the returned curve.
    """
    scores = np.array([s for s, _ in scores_with_classes], dtype=np.float64)
    labels = np.array([c == POSITIVE_CLASS for _, c in scores_with_classes])
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("single-class input: need >= 1 positive and >= 1 negative")
    ranks = _midranks(scores)
    auc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    points = [(0.0, 0.0)]
    for t in np.unique(scores)[::-1]:
        sel = scores >= t
        points.append((
            float(sel[~labels].sum() / n_neg),
            float(sel[labels].sum() / n_pos),
        ))
    return RocCurve(points=points, auc=float(auc), n_pos=n_pos, n_neg=n_neg)


def trapezoid_auc(curve: RocCurve) -> float:
    """Direct trapezoidal integral of the stored curve (cross-check)."""
    fpr = np.array([p[0] for p in curve.points])
    tpr = np.array([p[1] for p in curve.points])
    return float((np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0).sum())


def random_baseline_auc(ann: AnnotationSet, runs: int, seed: int,
                        radius_px: float = 25.0):
    """Mean and standard deviation of AUC over uniformly random heatmaps."""
    if runs < 2:
        raise ValueError("runs must be >= 2")
    aucs = []
    for i in range(runs):
        rng = substream(seed, "random-baseline", i)
        hm = rng.random((ann.height, ann.width), dtype=np.float64)
        aucs.append(roc(cell_scores(hm, ann, radius_px)).auc)
    aucs = np.asarray(aucs)
    return float(aucs.mean()), float(aucs.std())


def classifier_metrics(predictions, labels) -> dict:
    """Confusion matrix and per-class / support-weighted F1.

    predictions, labels: equal-length binary vectors (1 = cancer).
    """
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.shape != true.shape:
        raise ValueError("predictions and labels differ in length")
    if not (np.isin(pred, (0, 1)).all() and np.isin(true, (0, 1)).all()):
        raise ValueError("labels must be binary (0/1)")
    conf = np.zeros((2, 2), dtype=int)  # rows = true, cols = predicted
    for t, p in zip(true, pred):
        conf[t, p] += 1
    precision, recall, f1, support = {}, {}, {}, {}
    for c in (0, 1):
        tp = conf[c, c]
        psum = conf[:, c].sum()
        tsum = conf[c, :].sum()
        precision[c] = tp / psum if psum else 0.0
        recall[c] = tp / tsum if tsum else 0.0
        denom = precision[c] + recall[c]
        f1[c] = 2 * precision[c] * recall[c] / denom if denom else 0.0
        support[c] = int(tsum)
    n = conf.sum()
    weighted = sum(support[c] / n * f1[c] for c in (0, 1))
    return {
        "confusion": conf,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": support,
        "weighted_f1": float(weighted),
        "accuracy": float(np.trace(conf) / n),
    }


def center_mass_profile(maps, side_fractions):
    """Share of absolute relevance inside centered squares.

    For each fraction f, returns the mean over maps of
    sum|R| inside the centered square with side f*W (and f*H) divided by
    sum|R| over the whole map. Also returns the pixelwise mean |R| map.
    An identically-zero map contributes its area ratio (neutral value).
    """
    maps = [_map_values(m) for m in maps]
    if not maps:
        raise ValueError("center_mass_profile needs a non-empty set of maps")
    h, w = maps[0].shape
    for m in maps[1:]:
        if m.shape != (h, w):
            raise ValueError("maps must share dimensions")
    fractions = list(side_fractions)
    if any(not 0 < f <= 1 for f in fractions):
        raise ValueError("side fractions must lie in (0, 1]")
    mean_abs = np.mean([np.abs(m) for m in maps], axis=0)
    profile = {}
    for f in fractions:
        sh, sw = max(1, round(f * h)), max(1, round(f * w))
        top, left = (h - sh) // 2, (w - sw) // 2
        vals = []
        for m in maps:
            a = np.abs(m)
            total = a.sum()
            if total == 0:
                vals.append(sh * sw / (h * w))
            else:
                vals.append(float(a[top : top + sh, left : left + sw].sum() / total))
        profile[f] = float(np.mean(vals))
    return profile, mean_abs


def class_average_heatmap(maps, predicted_classes, target_class) -> np.ndarray:
    """Pixelwise mean of the signed maps whose prediction matches."""
    chosen = [_map_values(m) for m, c in zip(maps, predicted_classes)
              if c == target_class]
    if not chosen:
        raise ValueError(
            f"no heatmaps with predicted class {target_class!r}"
        )
    return np.mean(chosen, axis=0)


def region_relevance_comparison(maps_biased, maps_unbiased, annotations) -> list:
    """Mean rectified relevance per region under two models.

    maps_biased, maps_unbiased and annotations are aligned per tile.
    Returns one row per region: dict with tile, region index/class, area
    in pixels and the two means.
    """
    rows = []
    for hm_a, hm_b, ann in zip(maps_biased, maps_unbiased, annotations):
        a = np.maximum(_map_values(hm_a), 0.0)
        b = np.maximum(_map_values(hm_b), 0.0)
        for shape, name in ((a.shape, "biased"), (b.shape, "unbiased")):
            if shape != (ann.height, ann.width):
                raise ValueError(
                    f"{name} map shape {shape} does not match tile "
                    f"{ann.height}x{ann.width}"
                )
        for idx, reg in enumerate(ann.regions):
            mask = polygon_mask(reg.polygon, ann.height, ann.width)
            if not mask.any():
                raise ValueError(f"region '{reg.cls}' outside tile")
            rows.append({
                "tile": ann.tile_id,
                "region": idx,
                "class": reg.cls,
                "area_px": int(mask.sum()),
                "mean_biased": float(a[mask].mean()),
                "mean_unbiased": float(b[mask].mean()),
            })
    return rows
