"""Pixel-wise relevance heatmaps for small convolutional networks.

Forward/backward passes with trace capture, relevance propagation via the
epsilon and alpha-beta rules, coarse baselines (probability map,
Grad-CAM), tile stitching and rendering, cell-level ROC evaluation, a
synthetic histology generator with bias injectors, and an SGD trainer.
"""

from .nn import (
    ForwardTrace,
    Model,
    ModelError,
    backward,
    forward,
    load_model,
    save_model,
    softmax_probs,
)
from .lrp import (
    Heatmap,
    RuleConfig,
    channel_collapse,
    lrp,
    read_heatmap,
    relevance_conservation,
    relevance_pass,
    write_heatmap,
)
from .baselines import CoarseMap, gradcam, probability_map
from .tiling import PatchGrid, TileHeatmap, normalize, plan_grid, stitch
from .render import render
from .evaluation import (
    AnnotationSet,
    RocCurve,
    cell_scores,
    center_mass_profile,
    class_average_heatmap,
    classifier_metrics,
    load_annotations,
    random_baseline_auc,
    region_relevance_comparison,
    roc,
    save_annotations,
)
from .datagen import (
    DatasetManifest,
    SynthConfig,
    exclude_class,
    gen_dataset,
    gen_tiles,
    inject_corner_artifact,
    load_manifest,
    make_center_bias_dataset,
)
from .training import TrainConfig, augment, reference_model, sample_batch, train

__version__ = "0.1.0"
