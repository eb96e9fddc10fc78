"""Joint regression+classification training of the extractor stack.

Each module learns by predicting nine segment statistics (regression) and
the source class (classification) from its features; the two loss terms are
added with unit weight, with the mean-squared term summed over the nine
statistics per sample. Levels train sequentially from the bottom; inputs
for a level are assembled through the already-trained levels below, whose
parameters are never touched again. After all scheduled levels finish,
``finalize`` discards the task heads, switches every module to eval mode,
and stamps a version derived from the weights.

Regression targets are z-scored per statistic over the training split so
no single statistic dominates the squared error; the constants persist with
the stack because extraction-time consumers of the targets need the same
scale.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from . import hierarchy, nn
from .hierarchy import ExtractorStack, Resolution

__all__ = [
    "TrainingError",
    "TrainConfig",
    "LevelDataset",
    "regression_targets",
    "joint_loss",
    "build_level_dataset",
    "train_level",
    "train_stack",
    "train_transient",
    "finalize",
    "K_TARGETS",
]

K_TARGETS = 9
K_TRANSIENT = 2  # min and max magnitude amplitude
TRANSIENT_CLASS_COUNT = 4


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    val_fraction: float = 0.1
    class_count: int = 4

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise TrainingError("lr/batch_size/epochs must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise TrainingError("val_fraction must be in [0, 1)")


@dataclass
class LevelDataset:
    """Assembled module inputs with raw regression targets and class labels."""

    inputs: np.ndarray   # (N, D, L)
    targets: np.ndarray  # (N, K), unnormalized
    labels: np.ndarray   # (N,)

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.targets.shape[0] != n or self.labels.shape[0] != n:
            raise TrainingError("inputs/targets/labels row counts differ")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def regression_targets(segments: np.ndarray) -> np.ndarray:
    """Nine per-segment statistics: mean, std, min, max, range, slope,
    lag-1 autocorrelation, normalized skewness, zero fraction.

    Degenerate segments get 0 for autocorrelation and skewness instead of
    NaN. Slope is the least-squares trend per step.
    """
    x = np.asarray(segments, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n, length = x.shape
    if length < 2:
        raise TrainingError(f"segments need at least 2 points, got {length}")
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    lo = x.min(axis=1)
    hi = x.max(axis=1)
    centered = x - mean[:, None]
    t = np.arange(length) - (length - 1) / 2.0
    slope = centered @ t / (t @ t)
    denom = (centered * centered).sum(axis=1)
    num = (centered[:, :-1] * centered[:, 1:]).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        autocorr = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
        m3 = (centered ** 3).mean(axis=1)
        skew = np.where(std > 0, m3 / np.where(std > 0, std, 1.0) ** 3, 0.0)
    zero_frac = (x == 0).mean(axis=1)
    return np.column_stack(
        [mean, std, lo, hi, hi - lo, slope, autocorr, skew, zero_frac])


def joint_loss(features: np.ndarray, reg_head: nn.Linear, clf_head: nn.Linear,
               targets: np.ndarray, labels: np.ndarray):
    """Mean over the batch of (summed squared regression error + cross-entropy).

    Returns (loss, dfeatures, parts); head parameter gradients accumulate in
    the heads, dfeatures is the gradient to push through the module, and
    parts holds the separate mse/ce means.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    reg_out = reg_head.forward(features)
    clf_out = clf_head.forward(features)
    mse_each, dmse = nn.mse_loss(reg_out, targets)
    ce_each, dce = nn.softmax_cross_entropy(clf_out, labels)
    loss = float((mse_each + ce_each).mean())
    if not np.isfinite(loss):
        raise FloatingPointError("joint loss is not finite")
    dfeat = reg_head.backward(dmse / n) + clf_head.backward(dce / n)
    return loss, dfeat, {"mse": float(mse_each.mean()),
                         "ce": float(ce_each.mean())}


def build_level_dataset(stack: ExtractorStack, level: Resolution,
                        batches, config: TrainConfig) -> LevelDataset:
    """Assemble one level's training set from raw series batches.

    Batches already at the module's feed resolution become raw-channel
    inputs; lower-resolution batches are carried up through the trained
    levels below (requiring those levels trained). Batches at or above the
    module's own duration are skipped. Targets come from the value channel;
    the batch label is broadcast to its segments.
    """
    feed = hierarchy.input_resolution(level)
    chain = hierarchy.STEADY_CHAIN
    inputs, targets, labels = [], [], []
    for batch in batches:
        res = batch.resolution
        if res not in chain or chain.index(res) > chain.index(feed):
            continue
        if batch.label is None:
            raise TrainingError("training batches need class labels")
        if res != feed:
            needed = hierarchy.MODULE_LEVELS[
                hierarchy.MODULE_LEVELS.index(hierarchy.next_level(res)):
                hierarchy.MODULE_LEVELS.index(level)]
            missing = [l.key for l in needed if l.key not in stack.trained]
            if missing:
                raise TrainingError(
                    f"{level.key} needs features from untrained level(s) "
                    f"{missing}; train bottom-up first")
        li = hierarchy.assemble_input(stack, batch.values, res, level)
        inputs.append(li.data)
        targets.append(regression_targets(li.data[:, -1, :]))
        labels.append(np.full(li.segments, batch.label, dtype=np.int64))
    if not inputs:
        raise TrainingError(
            f"no batches usable for the {level.key} level (feed is {feed.key})")
    return LevelDataset(np.concatenate(inputs), np.concatenate(targets),
                        np.concatenate(labels))


def _emit(line, log, echo):
    if echo:
        print(line, file=sys.stdout)
    if log is not None:
        log.write(line + "\n")


def _run_training(module, dataset: LevelDataset, config: TrainConfig,
                  level_key: str, level_index: int, k_targets: int,
                  class_count: int, log=None, echo=False):
    """Shared Adam loop over one module with fresh task heads.

    Returns (history, reg_head, clf_head, (target_mu, target_sd)).
    Everything downstream of the seed is deterministic: fixed split, fixed
    shuffle stream, fixed batch order.
    """
    if dataset.labels.size and dataset.labels.max() >= class_count:
        raise TrainingError(
            f"label {dataset.labels.max()} outside class count {class_count}")
    feature_dim = module.layers[-1].out_features
    head_rng = np.random.default_rng([config.seed, level_index, 1])
    reg_head = nn.Linear(feature_dim, k_targets, rng=head_rng)
    clf_head = nn.Linear(feature_dim, class_count, rng=head_rng)

    split_rng = np.random.default_rng([config.seed, level_index, 2])
    perm = split_rng.permutation(dataset.n)
    n_val = int(round(config.val_fraction * dataset.n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise TrainingError("empty training split")

    mu = dataset.targets[train_idx].mean(axis=0)
    sd = dataset.targets[train_idx].std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    norm_targets = (dataset.targets - mu) / sd

    params = [a for _, a in module.named_params()]
    params += [reg_head.params["w"], reg_head.params["b"],
               clf_head.params["w"], clf_head.params["b"]]
    opt = nn.Adam(params, lr=config.lr, betas=config.betas)
    shuffle_rng = np.random.default_rng([config.seed, level_index, 3])

    history = []
    for epoch in range(config.epochs):
        module.train()
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        mse_sum = ce_sum = 0.0
        for start in range(0, order.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            module.zero_grad()
            reg_head.zero_grad()
            clf_head.zero_grad()
            feats = module.forward(dataset.inputs[idx])
            loss, dfeat, parts = joint_loss(
                feats, reg_head, clf_head, norm_targets[idx],
                dataset.labels[idx])
            module.backward(dfeat)
            grads = [g for _, g in module.named_grads()]
            grads += [reg_head.grads["w"], reg_head.grads["b"],
                      clf_head.grads["w"], clf_head.grads["b"]]
            opt.step(grads)
            mse_sum += parts["mse"] * idx.size
            ce_sum += parts["ce"] * idx.size

        module.eval()
        if val_idx.size:
            feats = module.forward(dataset.inputs[val_idx])
            logits = clf_head.eval().forward(feats)
            accuracy = float((logits.argmax(axis=1) ==
                              dataset.labels[val_idx]).mean())
            clf_head.train()
        else:
            accuracy = float("nan")
        record = {"epoch": epoch, "mse": mse_sum / order.size,
                  "ce": ce_sum / order.size, "accuracy": accuracy}
        history.append(record)
        _emit(f"{level_key} epoch={epoch} mse={record['mse']:.6f} "
              f"ce={record['ce']:.6f} accuracy={accuracy:.4f}", log, echo)
    return history, reg_head, clf_head, (mu, sd)


def train_level(stack: ExtractorStack, level: Resolution,
                dataset: LevelDataset, config: TrainConfig,
                log=None, echo=False):
    """Train one steady-state module jointly; lower levels stay untouched."""
    module = stack.module_for(level)
    if stack.frozen:
        raise TrainingError("stack is finalized; build a new one to retrain")
    expected = (dataset.inputs.shape[1], dataset.inputs.shape[2])
    want = (stack.config.input_channels,
            hierarchy.input_resolution(level).seg_len)
    if expected != want:
        raise TrainingError(
            f"{level.key} inputs must be (N, {want[0]}, {want[1]}), "
            f"got (N, {expected[0]}, {expected[1]})")
    history, reg_head, clf_head, norm = _run_training(
        module, dataset, config, level.key,
        hierarchy.MODULE_LEVELS.index(level), K_TARGETS,
        config.class_count, log, echo)
    stack.target_norm[level.key] = norm
    stack.heads[level.key] = (reg_head, clf_head)
    stack.trained.add(level.key)
    return history


def train_stack(stack: ExtractorStack, batches, config: TrainConfig,
                log=None, echo=False):
    """Sequential bottom-up training over every level in the stack."""
    histories = {}
    for level in stack.levels:
        dataset = build_level_dataset(stack, level, batches, config)
        histories[level.key] = train_level(stack, level, dataset, config,
                                           log, echo)
    return histories


def train_transient(stack: ExtractorStack, tset, config: TrainConfig,
                    log=None, echo=False):
    """Train the transient module on fault class + amplitude targets."""
    if stack.transient_module is None:
        raise TrainingError("stack was built without a transient module")
    if stack.frozen:
        raise TrainingError("stack is finalized; build a new one to retrain")
    values = np.asarray(tset.values, dtype=np.float64)
    if values.ndim != 3 or values.shape[1:] != (hierarchy.TRANSIENT_CHANNELS,
                                                hierarchy.TRANSIENT_LEN):
        raise TrainingError(
            f"transient samples must be (N, {hierarchy.TRANSIENT_CHANNELS}, "
            f"{hierarchy.TRANSIENT_LEN}), got {values.shape}")
    targets = np.column_stack([tset.amp_min, tset.amp_max])
    dataset = LevelDataset(values, targets, np.asarray(tset.labels))
    history, reg_head, clf_head, norm = _run_training(
        stack.transient_module, dataset, config, "transient", 100,
        K_TRANSIENT, TRANSIENT_CLASS_COUNT, log, echo)
    stack.target_norm["transient"] = norm
    stack.heads["transient"] = (reg_head, clf_head)
    stack.trained.add("transient")
    return history


def finalize(stack: ExtractorStack) -> ExtractorStack:
    """Discard task heads, freeze, switch to eval, stamp the version."""
    if stack.frozen:
        return stack
    missing = [l.key for l in stack.levels if l.key not in stack.trained]
    if stack.transient_module is not None and "transient" not in stack.trained:
        missing.append("transient")
    if missing:
        raise TrainingError(f"cannot finalize with untrained level(s) {missing}")
    stack.heads.clear()
    stack.eval_all()
    stack.version = stack.compute_version()
    stack.frozen = True
    return stack
