"""Synthetic histology-like image generation with ground-truth annotations.

Scenes imitate an H&E palette: pale pink background, cells drawn as
anti-aliased ellipses (purple nucleus inside a lighter cytoplasm ring),
necrosis as mottled pink blobs without nuclei. Tumor nuclei are larger,
darker and more irregular than normal nuclei; the size ranges are kept
disjoint so the two classes stay learnable.

Everything is a pure function of (config, seed): per-patch RNG streams
derive from (seed, patch index), so output bytes are reproducible and
independent of generation order.
"""

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from ._rng import substream
from .geometry import polygon_mask
from .evaluation import (AnnotationSet, PointAnnotation, RegionAnnotation,
                         save_annotations)
from .nn.ops import upsample_bilinear
from .render import read_png, write_png

REGION_CLASSES = ("necrosis", "vessel", "artifact")

# a hue inside the H&E pink-purple gamut, hardly visible on the background
DEFAULT_ARTIFACT_COLOR = (186, 124, 176)


@dataclass(frozen=True)
class SynthConfig:
    patch_size: int = 64
    cells_per_patch: tuple = (3, 7)        # total cells, inclusive range
    tumor_cells_per_patch: tuple = (1, 3)  # in cancer-labeled patches
    normal_radius: tuple = (3.0, 4.5)
    tumor_radius: tuple = (5.5, 8.0)
    normal_color: tuple = (0.46, 0.32, 0.62)
    tumor_color: tuple = (0.26, 0.13, 0.42)
    normal_irregularity: float = 0.06
    tumor_irregularity: float = 0.28
    cytoplasm_color: tuple = (0.86, 0.64, 0.76)
    background: tuple = (0.91, 0.84, 0.89)
    necrosis_color: tuple = (0.87, 0.70, 0.74)
    necrosis_fraction: float = 0.0         # share of patches with a blob
    necrosis_radius: tuple = (8.0, 14.0)
    grain: float = 0.012
    case_size: int = 30

    def validate(self):
        if self.patch_size < 16:
            raise ValueError("patch_size must be >= 16")
        if min(self.cells_per_patch) < 0 or self.necrosis_fraction < 0:
            raise ValueError("densities must be >= 0")
        if self.normal_radius[1] >= self.tumor_radius[0]:
            raise ValueError(
                "tumor and normal nucleus size ranges must be disjoint "
                f"(normal up to {self.normal_radius[1]}, tumor from "
                f"{self.tumor_radius[0]})"
            )
        return self

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ManifestItem:
    image: str
    label: str        # "cancer" | "no-cancer"
    split: str        # "train" | "test"
    annotations: str
    case: int


@dataclass
class DatasetManifest:
    items: list
    config_hash: str
    seed: int
    class_counts: dict
    variant: str = "standard"
    root: Path = None

    def split_items(self, split: str) -> list:
        return [it for it in self.items if it.split == split]

    def resolve(self, relpath: str) -> Path:
        return (self.root / relpath) if self.root else Path(relpath)

    def validate(self):
        counts = {"cancer": 0, "no-cancer": 0}
        cases = {"train": set(), "test": set()}
        for it in self.items:
            counts[it.label] += 1
            cases[it.split].add(it.case)
            if self.root and not self.resolve(it.image).exists():
                raise ValueError(f"missing image file {it.image}")
        if counts != self.class_counts:
            raise ValueError(
                f"class_counts {self.class_counts} do not match items {counts}"
            )
        overlap = cases["train"] & cases["test"]
        if overlap:
            raise ValueError(f"cases appear in both splits: {sorted(overlap)}")
        return self


def save_manifest(manifest: DatasetManifest, path) -> Path:
    doc = {
        "config_hash": manifest.config_hash,
        "seed": manifest.seed,
        "variant": manifest.variant,
        "class_counts": manifest.class_counts,
        "items": [asdict(it) for it in manifest.items],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    return DatasetManifest(
        items=[ManifestItem(**it) for it in doc["items"]],
        config_hash=doc["config_hash"],
        seed=doc["seed"],
        class_counts=doc["class_counts"],
        variant=doc.get("variant", "standard"),
        root=path.parent,
    )


def load_image_tensor(manifest: DatasetManifest, item: ManifestItem) -> np.ndarray:
    """(3, h, w) float32 in [0, 1] for one manifest item."""
    img = read_png(manifest.resolve(item.image))
    return np.ascontiguousarray(
        img.astype(np.float32).transpose(2, 0, 1) / 255.0)


# --- scene rendering -------------------------------------------------------

def _background(rng, h, w, tint, cfg):
    img = np.empty((h, w, 3))
    img[:] = tint
    gh, gw = max(2, h // 8), max(2, w // 8)
    for c in range(3):
        low = rng.normal(0.0, 1.0, (gh, gw))
        img[:, :, c] += 0.02 * upsample_bilinear(low, h, w)
    img += rng.normal(0.0, cfg.grain, (h, w, 3))
    return img


def _blend(img, y0, y1, x0, x1, coverage, color, alpha):
    a = (coverage * alpha)[:, :, None]
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1 - a) + np.asarray(color) * a


def _ellipse_coverage(h, w, y0, y1, x0, x1, cx, cy, a, b, theta,
                      wobble_amp, wobble_freq, wobble_phase):
    ys = np.arange(y0, y1)[:, None] - cy
    xs = np.arange(x0, x1)[None, :] - cx
    ur = xs * np.cos(theta) + ys * np.sin(theta)
    vr = -xs * np.sin(theta) + ys * np.cos(theta)
    d = np.sqrt((ur / a) ** 2 + (vr / b) ** 2)
    psi = np.arctan2(vr, ur)
    boundary = 1.0 + wobble_amp * np.sin(wobble_freq * psi + wobble_phase)
    edge = 1.2 / min(a, b)
    return np.clip((boundary - d) / edge + 0.5, 0.0, 1.0)


def _paint_cell(img, rng, cx, cy, radius, nucleus_color, irregularity, cfg):
    h, w = img.shape[:2]
    theta = rng.uniform(0, np.pi)
    ecc = rng.uniform(0.75, 0.95) if irregularity > 0.15 else rng.uniform(0.85, 1.0)
    a, b = radius, radius * ecc
    freq = rng.integers(3, 7)
    phase = rng.uniform(0, 2 * np.pi)
    shade = rng.uniform(-0.04, 0.04)
    color = tuple(np.clip(np.asarray(nucleus_color) + shade, 0, 1))

    cyto_r = radius * 1.9
    reach = cyto_r * (1 + irregularity) + 2
    y0, y1 = max(0, int(cy - reach)), min(h, int(cy + reach) + 1)
    x0, x1 = max(0, int(cx - reach)), min(w, int(cx + reach) + 1)
    if y0 >= y1 or x0 >= x1:
        return
    cov = _ellipse_coverage(h, w, y0, y1, x0, x1, cx, cy, cyto_r,
                            cyto_r * ecc, theta, irregularity * 0.5, freq, phase)
    _blend(img, y0, y1, x0, x1, cov, cfg.cytoplasm_color, 0.45)
    cov = _ellipse_coverage(h, w, y0, y1, x0, x1, cx, cy, a, b, theta,
                            irregularity, freq, phase)
    _blend(img, y0, y1, x0, x1, cov, color, 0.92)


def _necrosis_blob(rng, h, w, cfg):
    """Blob polygon + painted mask; returns (polygon, mask)."""
    r = rng.uniform(*cfg.necrosis_radius)
    margin = r * 1.4 + 1
    cx = rng.uniform(margin, w - margin)
    cy = rng.uniform(margin, h - margin)
    k = 16
    angles = np.linspace(0, 2 * np.pi, k, endpoint=False)
    radii = r * (1 + 0.3 * rng.uniform(-1, 1, k))
    # smooth the radial noise so the polygon stays simple
    radii = (radii + np.roll(radii, 1) + np.roll(radii, -1)) / 3.0
    poly = [(cx + rr * np.cos(t), cy + rr * np.sin(t))
            for rr, t in zip(radii, angles)]
    poly = [(float(np.clip(x, 0, w - 1)), float(np.clip(y, 0, h - 1)))
            for x, y in poly]
    return poly, polygon_mask(poly, h, w)


def _paint_necrosis(img, rng, mask, cfg):
    h, w = img.shape[:2]
    gh, gw = max(2, h // 6), max(2, w // 6)
    blotch = 0.05 * upsample_bilinear(rng.normal(0, 1, (gh, gw)), h, w)
    color = np.clip(np.asarray(cfg.necrosis_color) + blotch[:, :, None], 0, 1)
    a = mask[:, :, None] * 0.9
    img[:] = img * (1 - a) + color * a


def _place_cells(rng, h, w, specs, forbidden_mask, center_fixed=None):
    """Rejection-sample non-overlapping cell centers.

    specs: list of (radius, kind). center_fixed pins the first spec to the
    exact scene center. Returns [(x, y, radius, kind), ...].
    """
    placed = []
    for idx, (radius, kind) in enumerate(specs):
        if idx == 0 and center_fixed is not None:
            placed.append((center_fixed[0], center_fixed[1], radius, kind))
            continue
        margin = radius * 1.6 + 1
        for _ in range(60):
            x = rng.uniform(margin, w - margin)
            y = rng.uniform(margin, h - margin)
            if forbidden_mask is not None and forbidden_mask[int(y), int(x)]:
                continue
            if center_fixed is not None:
                d_c = np.hypot(x - center_fixed[0], y - center_fixed[1])
                if d_c < min(h, w) / 4:
                    continue  # distractors stay away from the center cell
            if all(np.hypot(x - px, y - py) >= 0.95 * (radius + pr)
                   for px, py, pr, _ in placed):
                placed.append((x, y, radius, kind))
                break
    return placed


def render_scene(rng, height, width, n_tumor, n_normal, cfg: SynthConfig,
                 base_tint=None, n_necrosis=0, center_cell=None):
    """Render one scene. Returns (uint8 image, points, regions).

    center_cell: None, "tumor" or "normal" - pins one cell of that type to
    the exact scene center (the center-rule datasets use this).
    """
    tint = cfg.background if base_tint is None else base_tint
    img = _background(rng, height, width, tint, cfg)
    regions = []
    necrosis_mask = None
    for _ in range(n_necrosis):
        poly, mask = _necrosis_blob(rng, height, width, cfg)
        _paint_necrosis(img, rng, mask, cfg)
        regions.append(RegionAnnotation("necrosis", poly))
        necrosis_mask = mask if necrosis_mask is None else (necrosis_mask | mask)

    specs = []
    if center_cell is not None:
        radius_range = (cfg.tumor_radius if center_cell == "tumor"
                        else cfg.normal_radius)
        specs.append((rng.uniform(*radius_range), center_cell))
    specs += [(rng.uniform(*cfg.tumor_radius), "tumor") for _ in range(n_tumor)]
    specs += [(rng.uniform(*cfg.normal_radius), "normal") for _ in range(n_normal)]
    center = ((width - 1) / 2.0, (height - 1) / 2.0) if center_cell else None
    cells = _place_cells(rng, height, width, specs, necrosis_mask,
                         center_fixed=center)

    points = []
    for x, y, radius, kind in cells:
        if kind == "tumor":
            _paint_cell(img, rng, x, y, radius, cfg.tumor_color,
                        cfg.tumor_irregularity, cfg)
            points.append(PointAnnotation(round(x, 2), round(y, 2), "cancer"))
        else:
            _paint_cell(img, rng, x, y, radius, cfg.normal_color,
                        cfg.normal_irregularity, cfg)
            points.append(PointAnnotation(round(x, 2), round(y, 2), "non-cancer"))
    img8 = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8)
    return img8, points, regions


# --- dataset generation ----------------------------------------------------

def _case_tint(seed, case_id, cfg):
    rng = substream(seed, "case", case_id)
    return tuple(np.clip(np.asarray(cfg.background)
                         + rng.uniform(-0.02, 0.02, 3), 0, 1))


def _split_cases(case_list, seed):
    """Deterministically pick ~20% of the case ids as the test cases."""
    case_ids = sorted(set(case_list))
    order = substream(seed, "split").permutation(len(case_ids))
    n_test = max(1, round(0.2 * len(case_ids)))
    return {case_ids[i] for i in order[:n_test]}


def _write_items(out_dir, seed, cfg, scenes, variant, force_split=None):
    """scenes: list of (label, image, points, regions, case)."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    test_cases = _split_cases([s[4] for s in scenes], seed)
    items = []
    counts = {"cancer": 0, "no-cancer": 0}
    for i, (label, img, points, regions, case) in enumerate(scenes):
        stem = f"patch_{i:05d}"
        write_png(img, out_dir / "images" / f"{stem}.png")
        ann = AnnotationSet(tile_id=stem, width=img.shape[1],
                            height=img.shape[0], points=points,
                            regions=regions)
        save_annotations(ann, out_dir / "annotations" / f"{stem}.json")
        split = force_split or ("test" if case in test_cases else "train")
        items.append(ManifestItem(
            image=f"images/{stem}.png", label=label, split=split,
            annotations=f"annotations/{stem}.json", case=case))
        counts[label] += 1
    manifest = DatasetManifest(items=items, config_hash=cfg.hash(), seed=seed,
                               class_counts=counts, variant=variant,
                               root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def gen_dataset(cfg: SynthConfig, n_patches: int, tumor_fraction: float,
                seed: int, out_dir) -> DatasetManifest:
    """Deterministic labeled patch dataset.

    round(n_patches * tumor_fraction) patches contain at least one tumor
    cell and are labeled cancer; the rest hold normal cells only. Splits
    are 80/20 and disjoint by synthetic case.
    """
    cfg.validate()
    if n_patches < 2:
        raise ValueError("n_patches must be >= 2")
    if not 0 < tumor_fraction < 1:
        raise ValueError("tumor_fraction must lie in (0, 1)")
    n_cancer = round(n_patches * tumor_fraction)
    wants_tumor = np.array([True] * n_cancer
                           + [False] * (n_patches - n_cancer))
    wants_tumor = wants_tumor[substream(seed, "labels").permutation(n_patches)]

    scenes = []
    p = cfg.patch_size
    for i in range(n_patches):
        rng = substream(seed, "patch", i)
        case = i // cfg.case_size
        tint = _case_tint(seed, case, cfg)
        n_cells = int(rng.integers(cfg.cells_per_patch[0],
                                   cfg.cells_per_patch[1] + 1))
        if wants_tumor[i] and n_cells > 0:
            n_tumor = int(rng.integers(cfg.tumor_cells_per_patch[0],
                                       cfg.tumor_cells_per_patch[1] + 1))
            n_tumor = min(max(n_tumor, 1), n_cells)
        else:
            n_tumor = 0
        n_necrosis = int(rng.random() < cfg.necrosis_fraction)
        img, points, regions = render_scene(
            rng, p, p, n_tumor, n_cells - n_tumor, cfg, base_tint=tint,
            n_necrosis=n_necrosis)
        # the label follows the content: cancer iff a tumor cell is present
        label = ("cancer" if any(pt.cls == "cancer" for pt in points)
                 else "no-cancer")
        scenes.append((label, img, points, regions, case))
    return _write_items(out_dir, seed, cfg, scenes, "standard")


def make_center_bias_dataset(cfg: SynthConfig, n: int, seed: int, out_dir,
                             tumor_fraction: float = 0.5) -> DatasetManifest:
    """Dataset whose label depends only on the cell at the exact center.

    Every patch carries one center cell that decides the label plus
    distractor cells of both types placed off-center, so the tumor-presence
    rule does not hold here by design.
    """
    cfg.validate()
    if n < 2:
        raise ValueError("n must be >= 2")
    n_cancer = round(n * tumor_fraction)
    labels = np.array(["cancer"] * n_cancer + ["no-cancer"] * (n - n_cancer))
    labels = labels[substream(seed, "labels").permutation(n)]
    scenes = []
    p = cfg.patch_size
    for i in range(n):
        rng = substream(seed, "patch", i)
        case = i // cfg.case_size
        tint = _case_tint(seed, case, cfg)
        center_kind = "tumor" if labels[i] == "cancer" else "normal"
        n_extra = int(rng.integers(2, 5))
        n_extra_tumor = int(rng.integers(0, n_extra + 1))
        img, points, regions = render_scene(
            rng, p, p, n_extra_tumor, n_extra - n_extra_tumor, cfg,
            base_tint=tint, center_cell=center_kind)
        scenes.append((str(labels[i]), img, points, regions, case))
    return _write_items(out_dir, seed, cfg, scenes, "center-rule")


def gen_tiles(cfg: SynthConfig, n_tiles: int, tile_size: int, seed: int,
              out_dir, necrosis_per_tile: int = 0,
              cell_density: float = 1.0) -> DatasetManifest:
    """Evaluation tiles with scattered cells of both classes.

    Cell counts scale with tile area relative to the training patch size;
    all tiles land in the test split.
    """
    cfg.validate()
    if tile_size < cfg.patch_size:
        raise ValueError("tile_size must be >= patch_size")
    area_scale = (tile_size / cfg.patch_size) ** 2 * cell_density
    scenes = []
    for i in range(n_tiles):
        rng = substream(seed, "tile", i)
        tint = _case_tint(seed, 10_000 + i, cfg)
        mean_cells = 0.5 * (cfg.cells_per_patch[0] + cfg.cells_per_patch[1])
        n_cells = max(4, int(round(mean_cells * area_scale)))
        n_tumor = max(2, int(round(n_cells * 0.35)))
        img, points, regions = render_scene(
            rng, tile_size, tile_size, n_tumor, n_cells - n_tumor, cfg,
            base_tint=tint, n_necrosis=necrosis_per_tile)
        scenes.append(("cancer" if any(pt.cls == "cancer" for pt in points)
                       else "no-cancer", img, points, regions, 10_000 + i))
    return _write_items(out_dir, seed, cfg, scenes, "tiles", force_split="test")


# --- bias injectors --------------------------------------------------------

def inject_corner_artifact(image: np.ndarray, size: int = 5,
                           color=DEFAULT_ARTIFACT_COLOR) -> np.ndarray:
    """Replace the top-left size x size square with a single color."""
    img = np.asarray(image)
    if img.shape[0] < size or img.shape[1] < size:
        raise ValueError(
            f"image {img.shape[:2]} smaller than artifact {size}x{size}"
        )
    out = img.copy()
    out[:size, :size] = np.asarray(color, dtype=img.dtype)
    return out


def corrupt_manifest(manifest: DatasetManifest, out_dir, label: str = "cancer",
                     size: int = 5, color=DEFAULT_ARTIFACT_COLOR,
                     splits=("train", "test")) -> DatasetManifest:
    """Copy a dataset, stamping the corner artifact onto every patch of the
    given label in the given splits."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "annotations").mkdir(parents=True, exist_ok=True)
    items = []
    for it in manifest.items:
        img = read_png(manifest.resolve(it.image))
        if it.label == label and it.split in splits:
            img = inject_corner_artifact(img, size=size, color=color)
        write_png(img, out_dir / it.image)
        (out_dir / it.annotations).write_text(
            manifest.resolve(it.annotations).read_text())
        items.append(ManifestItem(**asdict(it)))
    out = DatasetManifest(items=items, config_hash=manifest.config_hash,
                          seed=manifest.seed,
                          class_counts=dict(manifest.class_counts),
                          variant=f"{manifest.variant}+corner", root=out_dir)
    save_manifest(out, out_dir / "manifest.json")
    return out


def exclude_class(manifest: DatasetManifest, region_class: str):
    """Drop every training patch containing a region of the given class.

    The test split stays untouched. Returns (filtered manifest, number of
    dropped training patches).
    """
    if region_class not in REGION_CLASSES:
        raise ValueError(
            f"unknown region class '{region_class}' "
            f"(known: {', '.join(REGION_CLASSES)})"
        )
    kept, dropped = [], 0
    for it in manifest.items:
        if it.split == "train":
            doc = json.loads(manifest.resolve(it.annotations).read_text())
            if any(r["class"] == region_class for r in doc["regions"]):
                dropped += 1
                continue
        kept.append(it)
    counts = {"cancer": 0, "no-cancer": 0}
    for it in kept:
        counts[it.label] += 1
    out = DatasetManifest(items=kept, config_hash=manifest.config_hash,
                          seed=manifest.seed, class_counts=counts,
                          variant=f"{manifest.variant}-no-{region_class}",
                          root=manifest.root)
    return out, dropped
