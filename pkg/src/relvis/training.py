"""Minibatch SGD training with fixed class sampling ratios.

Protocol: k-fold cross validation picks the early-stopping epoch e* with
the lowest mean validation loss, then the model retrains on the full
training split for e* epochs. Batches hold a fixed share of cancer
samples (oversampling the minority class with replacement when its pool
runs short). The learning rate drops by 10x every 10 epochs. Everything
is deterministic given the seed.
"""

import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from ._rng import substream
from .datagen import DatasetManifest, load_image_tensor
from .nn import layers as L
from .nn.model import Model, backward, forward, init_weights
from .nn.ops import softmax

LABEL_TO_INDEX = {"no-cancer": 0, "cancer": 1}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10      # epochs
    batch_size: int = 128
    max_epochs: int = 50
    sampling_ratio: float = 0.5   # cancer share per batch
    augment_translate: bool = True
    augment_rotate: bool = True
    translate_px: int = 6
    folds: int = 3                # 1 = skip CV, train max_epochs directly
    seed: int = 0

    def validate(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        k = round(self.sampling_ratio * self.batch_size)
        if k < 1 or self.batch_size - k < 1:
            raise ValueError(
                f"sampling_ratio {self.sampling_ratio} with batch "
                f"{self.batch_size} leaves a class with zero samples"
            )
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        return self

    def lr_at(self, epoch: int) -> float:
        """Learning rate in force during `epoch` (1-based)."""
        steps = (epoch - 1) // self.lr_decay_every
        return self.learning_rate / (self.lr_decay_factor ** steps)


def save_train_config(cfg: TrainConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(asdict(cfg), indent=1))
    return path


def load_train_config(path) -> TrainConfig:
    return TrainConfig(**json.loads(Path(path).read_text())).validate()


def reference_model(input_size: int = 64, channels: int = 3,
                    classes: int = 2, seed: int = 0) -> Model:
    """Small desk-scale net exercising every relevance-relevant layer kind:
    conv/relu/maxpool, a two-branch concat block, another conv, global
    average pooling and the dense classifier head."""
    specs = [
        L.conv2d("conv1", L.INPUT, 16, kernel=5, padding=2),
        L.relu("relu1", "conv1"),
        L.maxpool("pool1", "relu1", kernel=2),
        L.conv2d("branch_a", "pool1", 8, kernel=1),
        L.relu("branch_a_relu", "branch_a"),
        L.conv2d("branch_b", "pool1", 8, kernel=3, padding=1),
        L.relu("branch_b_relu", "branch_b"),
        L.concat("merge", ("branch_a_relu", "branch_b_relu")),
        L.conv2d("conv2", "merge", 32, kernel=3, padding=1),
        L.relu("relu2", "conv2"),
        L.global_avgpool("gap", "relu2"),
        L.dense("logits", "gap", classes),
    ]
    shape = (channels, input_size, input_size)
    return Model(layers=init_weights(specs, shape, seed), input_shape=shape,
                 class_count=classes, name="reference-cnn", seed=seed)


def sample_batch(pool, ratio: float, batch_size: int, rng) -> list:
    """Indices for one batch at the given cancer share.

    pool: list of (index, label_index) pairs. Draws round(ratio*batch)
    cancer samples and the remainder non-cancer, with replacement only
    when a class pool is smaller than its quota.
    """
    cancer = [i for i, y in pool if y == 1]
    other = [i for i, y in pool if y == 0]
    if not cancer or not other:
        raise ValueError("empty class pool: need samples of both classes")
    n_cancer = round(ratio * batch_size)
    n_other = batch_size - n_cancer
    picks = []
    for src, count in ((cancer, n_cancer), (other, n_other)):
        sel = rng.choice(len(src), size=count, replace=count > len(src))
        picks.extend(src[int(j)] for j in sel)
    return picks


def augment(image: np.ndarray, translate: bool, rotate: bool, rng,
            translate_px: int = 6) -> np.ndarray:
    """Random translation (crop from a reflect-padded canvas) and rotation
    by a multiple of 90 degrees. image: (c, h, w)."""
    out = image
    if translate and translate_px > 0:
        c, h, w = out.shape
        pad = translate_px
        canvas = np.pad(out, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        dy = int(rng.integers(0, 2 * pad + 1))
        dx = int(rng.integers(0, 2 * pad + 1))
        out = canvas[:, dy : dy + h, dx : dx + w]
    if rotate:
        k = int(rng.integers(0, 4))
        if k:
            out = np.rot90(out, k=k, axes=(1, 2))
    return np.ascontiguousarray(out)


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits.

    logits: (b, k, 1, 1); targets: (b,) int class indices.
    """
    b = logits.shape[0]
    z = logits[:, :, 0, 0].astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(b), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(b), targets] -= 1.0
    grad = (grad / b)[:, :, None, None].astype(np.float32)
    return float(loss), grad


def _load_split(manifest: DatasetManifest, split: str):
    items = manifest.split_items(split)
    images = [load_image_tensor(manifest, it) for it in items]
    labels = np.array([LABEL_TO_INDEX[it.label] for it in items], dtype=int)
    return images, labels


def _sgd_epoch(weights, model_template, images, labels, cfg, lr, rng,
               aug_rng):
    pool = list(zip(range(len(images)), labels.tolist()))
    n_batches = max(1, int(np.ceil(len(pool) / cfg.batch_size)))
    model = _with_weights(model_template, weights)
    losses = []
    for _ in range(n_batches):
        idx = sample_batch(pool, cfg.sampling_ratio, cfg.batch_size, rng)
        batch = np.stack([
            augment(images[i], cfg.augment_translate, cfg.augment_rotate,
                    aug_rng, cfg.translate_px)
            for i in idx
        ])
        targets = labels[idx]
        logits, trace = forward(model, batch, capture=True)
        loss, grad = cross_entropy(logits, targets)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss}")
        grads = backward(model, trace, grad)
        for name, g in grads.params.items():
            weights[name]["w"] -= lr * g["w"].astype(np.float32)
            weights[name]["b"] -= lr * g["b"].astype(np.float32)
        model = _with_weights(model_template, weights)
        losses.append(loss)
    return float(np.mean(losses))


def _with_weights(model: Model, weights) -> Model:
    specs = []
    for layer in model.layers:
        if layer.name in weights:
            specs.append(replace(layer, weights=weights[layer.name]["w"],
                                 bias=weights[layer.name]["b"]))
        else:
            specs.append(layer)
    return Model(layers=specs, input_shape=model.input_shape,
                 class_count=model.class_count, name=model.name,
                 seed=model.seed, metadata=dict(model.metadata))


def _init_weight_dict(model: Model):
    return {
        l.name: {"w": l.weights.copy(), "b": l.bias.copy()}
        for l in model.layers if l.has_params
    }


def evaluate_loss(model: Model, images, labels, batch_size: int = 64) -> float:
    """Mean cross-entropy over a fixed set, no augmentation."""
    total, count = 0.0, 0
    for lo in range(0, len(images), batch_size):
        batch = np.stack(images[lo : lo + batch_size])
        targets = labels[lo : lo + batch_size]
        logits, _ = forward(model, batch)
        loss, _ = cross_entropy(logits, targets)
        total += loss * len(targets)
        count += len(targets)
    return total / count


def predict(model: Model, images, batch_size: int = 64) -> np.ndarray:
    preds = []
    for lo in range(0, len(images), batch_size):
        logits, _ = forward(model, np.stack(images[lo : lo + batch_size]))
        preds.append(logits[:, :, 0, 0].argmax(axis=1))
    return np.concatenate(preds)


@dataclass
class TrainResult:
    model: Model
    best_epoch: int
    log: list = field(default_factory=list)  # dict rows

    def write_log(self, path) -> Path:
        path = Path(path)
        lines = ["epoch,fold,train_loss,val_loss,lr"]
        for row in self.log:
            lines.append("{epoch},{fold},{train_loss:.6f},{val_loss},{lr:.2e}"
                         .format(**row))
        path.write_text("\n".join(lines) + "\n")
        return path


def train(model: Model, manifest: DatasetManifest, cfg: TrainConfig) -> TrainResult:
    """Two-stage protocol: CV for the early-stopping epoch, then a full
    retrain. Returns the trained model and the per-epoch metrics log."""
    cfg.validate()
    images, labels = _load_split(manifest, "train")
    if len(set(labels.tolist())) < 2:
        raise ValueError("training split must contain both classes")
    if cfg.max_epochs == 0:
        return TrainResult(model=model, best_epoch=0, log=[])

    log = []
    if cfg.folds >= 2:
        fold_of = _fold_assignment(manifest, cfg)
        val_curves = np.zeros((cfg.folds, cfg.max_epochs))
        for fold in range(cfg.folds):
            tr = [i for i in range(len(images)) if fold_of[i] != fold]
            va = [i for i in range(len(images)) if fold_of[i] == fold]
            if not va or len(set(labels[tr].tolist())) < 2:
                raise ValueError(f"fold {fold} leaves an unusable split")
            w = _init_weight_dict(model)
            rng = substream(cfg.seed, "sampling", fold)
            aug_rng = substream(cfg.seed, "augment", fold)
            for epoch in range(1, cfg.max_epochs + 1):
                lr = cfg.lr_at(epoch)
                tl = _sgd_epoch(w, model, [images[i] for i in tr], labels[tr],
                                cfg, lr, rng, aug_rng)
                vl = evaluate_loss(_with_weights(model, w),
                                   [images[i] for i in va], labels[va])
                val_curves[fold, epoch - 1] = vl
                log.append({"epoch": epoch, "fold": fold, "train_loss": tl,
                            "val_loss": f"{vl:.6f}", "lr": lr})
        best_epoch = int(val_curves.mean(axis=0).argmin()) + 1
    else:
        best_epoch = cfg.max_epochs

    w = _init_weight_dict(model)
    rng = substream(cfg.seed, "sampling", "full")
    aug_rng = substream(cfg.seed, "augment", "full")
    for epoch in range(1, best_epoch + 1):
        lr = cfg.lr_at(epoch)
        tl = _sgd_epoch(w, model, images, labels, cfg, lr, rng, aug_rng)
        log.append({"epoch": epoch, "fold": "full", "train_loss": tl,
                    "val_loss": "", "lr": lr})
    trained = _with_weights(model, w)
    trained.metadata["trained_epochs"] = best_epoch
    return TrainResult(model=trained, best_epoch=best_epoch, log=log)


def _fold_assignment(manifest: DatasetManifest, cfg: TrainConfig):
    """Fold id per training item, grouped by case (cases never straddle
    folds, mirroring the case-disjoint train/test split)."""
    items = manifest.split_items("train")
    case_ids = sorted({it.case for it in items})
    order = substream(cfg.seed, "folds").permutation(len(case_ids))
    fold_of_case = {case_ids[j]: int(i % cfg.folds)
                    for i, j in enumerate(order)}
    return [fold_of_case[it.case] for it in items]
