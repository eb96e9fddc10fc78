"""Multi-resolution extractor stack: input assembly, traversal, transient path.

Levels are named by the duration of the features a module emits, following
the convention that the "hourly" module is the one that turns twelve 5-minute
points into one hourly feature row. The segment length each module consumes
is a property of the data resolution one step below it:

    data resolution   points per unit      module consuming it
    5-minute          12 per hour          hourly
    hourly            24 per day           daily
    daily             31 per month, padded monthly
    monthly           12 per year          yearly

A module input is a (segments, D, L) tensor. At the entry level the raw
series occupies the last channel and the feature channels are zero; above
that, the previous level's feature rows fill the first channels and their
per-segment means fill the last one. The last channel therefore always holds
the value sequence at the module's native duration, which is also where
per-segment means and regression targets come from.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import nn

__all__ = [
    "Resolution",
    "STEADY_CHAIN",
    "MODULE_LEVELS",
    "HierarchyError",
    "LevelInput",
    "FeatureSet",
    "StackConfig",
    "ExtractorStack",
    "next_level",
    "prev_level",
    "build_input",
    "level_mean",
    "extract_at",
    "extract_hierarchical",
    "assemble_input",
    "extract_transient",
    "build_steady_module",
    "build_transient_module",
]

TRANSIENT_LEN = 960
TRANSIENT_CHANNELS = 3


class HierarchyError(ValueError):
    pass


class Resolution(enum.Enum):
    """Data resolutions and feature durations.

    ``seg_len`` is the number of points at this resolution forming one unit
    of the next duration up (None where no module consumes this resolution).
    ``per_hour`` is defined for sub-daily sampling rates only. TEN_MIN exists
    for ingestion and resampling; it is not part of the module chain.
    """

    FIVE_MIN = ("5min", 12, 12)
    TEN_MIN = ("10min", None, 6)
    HOURLY = ("hourly", 24, 1)
    DAILY = ("daily", 31, None)
    MONTHLY = ("monthly", 12, None)
    YEARLY = ("yearly", None, None)
    TRANSIENT = ("transient", TRANSIENT_LEN, None)

    def __init__(self, key, seg_len, per_hour):
        self.key = key
        self.seg_len = seg_len
        self.per_hour = per_hour

    @classmethod
    def from_key(cls, key: str) -> "Resolution":
        for res in cls:
            if res.key == key:
                return res
        raise HierarchyError(f"unknown resolution {key!r}; "
                             f"expected one of {[r.key for r in cls]}")


STEADY_CHAIN = (Resolution.FIVE_MIN, Resolution.HOURLY, Resolution.DAILY,
                Resolution.MONTHLY, Resolution.YEARLY)
# Levels that have a module, named by the duration of their output features.
MODULE_LEVELS = STEADY_CHAIN[1:]


def _chain_index(res: Resolution) -> int:
    try:
        return STEADY_CHAIN.index(res)
    except ValueError:
        raise HierarchyError(
            f"{res.key} is not part of the steady-state chain") from None


def next_level(res: Resolution) -> Resolution:
    i = _chain_index(res)
    if i + 1 >= len(STEADY_CHAIN):
        raise HierarchyError(f"no level above {res.key}")
    return STEADY_CHAIN[i + 1]


def prev_level(res: Resolution) -> Resolution:
    i = _chain_index(res)
    if i == 0:
        raise HierarchyError(f"no level below {res.key}")
    return STEADY_CHAIN[i - 1]


def input_resolution(level: Resolution) -> Resolution:
    """The data resolution a module at ``level`` consumes."""
    if level not in MODULE_LEVELS:
        raise HierarchyError(f"no module emits {level.key} features")
    return prev_level(level)


@dataclass
class LevelInput:
    """Assembled module input: (segments, D, L) with provenance."""

    data: np.ndarray
    level: Resolution
    provenance: str  # "from_raw" | "from_features"

    @property
    def segments(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def length(self) -> int:
        return self.data.shape[2]


@dataclass
class FeatureSet:
    """Extracted feature rows tagged with their duration and extractor."""

    rows: np.ndarray
    resolution: Resolution
    version: str = "unversioned"

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class StackConfig:
    """Architecture knobs shared by every steady-state module."""

    feature_dim: int = 7
    channels: int = 32
    blocks: int = 2
    head: str = "flatten"  # or "gap"
    transient_dim: int = 2048
    class_count: int = 4

    @property
    def input_channels(self) -> int:
        # carried features plus the mean/raw channel
        return self.feature_dim + 1

    def to_dict(self) -> dict:
        return {"feature_dim": self.feature_dim, "channels": self.channels,
                "blocks": self.blocks, "head": self.head,
                "transient_dim": self.transient_dim,
                "class_count": self.class_count}

    @classmethod
    def from_dict(cls, d: dict) -> "StackConfig":
        return cls(**d)


def build_steady_module(level: Resolution, config: StackConfig,
                        rng: np.random.Generator) -> nn.Sequential:
    """Convolutional body plus feature head for one steady-state level."""
    seg_len = input_resolution(level).seg_len
    c = config.channels
    layers = [
        nn.Conv1d(config.input_channels, c, 3, padding=1, rng=rng),
        nn.BatchNorm1d(c),
        nn.ReLU(),
    ]
    layers += [nn.ResidualBlock(c, rng=rng) for _ in range(config.blocks)]
    if config.head == "flatten":
        layers += [nn.Flatten(), nn.Linear(c * seg_len, config.feature_dim, rng=rng)]
    elif config.head == "gap":
        layers += [nn.GlobalAvgPool1d(), nn.Linear(c, config.feature_dim, rng=rng)]
    else:
        raise HierarchyError(f"unknown head {config.head!r}")
    return nn.Sequential(*layers)


def build_transient_module(config: StackConfig,
                           rng: np.random.Generator) -> nn.Sequential:
    """Strided conv stack for 3-channel 960-point transient windows."""
    c = config.channels
    layers = [nn.Conv1d(TRANSIENT_CHANNELS, c, 3, padding=1, rng=rng),
              nn.BatchNorm1d(c), nn.ReLU()]
    length = TRANSIENT_LEN
    for _ in range(4):  # 960 -> 480 -> 240 -> 120 -> 60
        layers += [nn.Conv1d(c, c, 3, stride=2, padding=1, rng=rng),
                   nn.BatchNorm1d(c), nn.ReLU()]
        length = (length + 1) // 2
    layers += [nn.Flatten(), nn.Linear(c * length, config.transient_dim, rng=rng)]
    return nn.Sequential(*layers)


class ExtractorStack:
    """Per-level modules plus shared config, version, and training state.

    Built untrained; the training module attaches task heads, trains levels
    bottom-up, and ``finalize`` freezes everything and stamps a version
    derived from the weights. Extraction calls never mutate the stack.
    """

    def __init__(self, config: StackConfig, seed: int = 0,
                 levels=(Resolution.HOURLY, Resolution.DAILY),
                 transient: bool = False):
        levels = tuple(levels)
        for lvl in levels:
            if lvl not in MODULE_LEVELS:
                raise HierarchyError(f"no module emits {lvl.key} features")
        idx = sorted(MODULE_LEVELS.index(l) for l in levels)
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise HierarchyError(
                "stack levels must be contiguous in the resolution order")
        self.config = config
        self.seed = seed
        self.levels = tuple(sorted(levels, key=MODULE_LEVELS.index))
        self.modules: dict[Resolution, nn.Sequential] = {}
        for lvl in self.levels:
            rng = np.random.default_rng([seed, MODULE_LEVELS.index(lvl)])
            self.modules[lvl] = build_steady_module(lvl, config, rng)
        self.transient_module = None
        if transient:
            rng = np.random.default_rng([seed, 100])
            self.transient_module = build_transient_module(config, rng)
        # per-level z-score constants for regression targets, set by training
        self.target_norm: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.trained: set[str] = set()
        self.heads: dict[str, tuple] = {}
        self.version = "unversioned"
        self.frozen = False

    def has_level(self, level: Resolution) -> bool:
        return level in self.modules

    def module_for(self, level: Resolution) -> nn.Sequential:
        if level not in self.modules:
            raise HierarchyError(
                f"stack has no module for {level.key} "
                f"(available: {[l.key for l in self.levels]})")
        return self.modules[level]

    def eval_all(self):
        for mod in self.modules.values():
            mod.eval()
        if self.transient_module is not None:
            self.transient_module.eval()
        return self

    def iter_weight_arrays(self):
        """All persistent arrays in deterministic order: params then buffers,
        per level, then transient."""
        for lvl in self.levels:
            mod = self.modules[lvl]
            for name, arr in mod.named_params():
                yield f"{lvl.key}/{name}", arr
            for name, arr in mod.named_buffers():
                yield f"{lvl.key}/{name}", arr
        if self.transient_module is not None:
            for name, arr in self.transient_module.named_params():
                yield f"transient/{name}", arr
            for name, arr in self.transient_module.named_buffers():
                yield f"transient/{name}", arr

    def compute_version(self) -> str:
        h = hashlib.sha256()
        meta = {"config": self.config.to_dict(),
                "levels": [l.key for l in self.levels],
                "transient": self.transient_module is not None,
                "target_norm": {k: [v[0].tolist(), v[1].tolist()]
                                for k, v in sorted(self.target_norm.items())}}
        h.update(json.dumps(meta, sort_keys=True).encode())
        for name, arr in self.iter_weight_arrays():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


def _pad_groups(flat, group_lengths, seg_len, width):
    """Zero-pad consecutive groups of rows up to seg_len each.

    ``flat`` is (total, width); returns (n_groups, seg_len, width). Padding
    appends zeros after each group's rows, so unpadded positions are
    untouched.
    """
    if sum(group_lengths) != flat.shape[0]:
        raise HierarchyError(
            f"group lengths sum to {sum(group_lengths)}, "
            f"have {flat.shape[0]} rows")
    out = np.zeros((len(group_lengths), seg_len, width))
    pos = 0
    for g, glen in enumerate(group_lengths):
        if not 1 <= glen <= seg_len:
            raise HierarchyError(
                f"group length {glen} outside [1, {seg_len}]")
        out[g, :glen] = flat[pos:pos + glen]
        pos += glen
    return out


def build_input(level: Resolution, features: np.ndarray | None = None,
                means: np.ndarray | None = None,
                raw: np.ndarray | None = None,
                group_lengths=None,
                feature_dim: int = 7) -> LevelInput:
    """Assemble the (segments, D, L) input for the module at ``level``.

    Exactly one source must be given: ``raw`` (series at the resolution
    below ``level``; 1-D or (N, T), cut into segments of that resolution's
    length) or ``features`` with their per-segment ``means`` from the level
    below. The raw series or the mean sequence lands in the last channel.

    ``group_lengths`` handles calendar months shorter than 31 days: each
    group is zero-padded to the segment length. Without it, lengths must
    divide exactly, except that a single short month (28..30 daily values)
    is padded automatically.
    """
    seg_len = input_resolution(level).seg_len
    if (features is None) == (raw is None):
        raise HierarchyError("provide exactly one of features or raw")

    if raw is not None:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim == 1:
            raw = raw[None, :]
        if raw.ndim != 2:
            raise HierarchyError(f"raw series must be 1-D or 2-D, got {raw.ndim}-D")
        n_series, t = raw.shape
        if group_lengths is not None:
            segs = _pad_groups(raw.reshape(-1, 1), list(group_lengths),
                               seg_len, 1)[:, :, 0]
        elif t % seg_len == 0:
            segs = raw.reshape(n_series * (t // seg_len), seg_len)
        elif seg_len == 31 and n_series == 1 and 28 <= t < 31:
            segs = _pad_groups(raw.reshape(-1, 1), [t], seg_len, 1)[:, :, 0]
        else:
            raise HierarchyError(
                f"series length {t} is not divisible by the {level.key} "
                f"segment length {seg_len}")
        data = np.zeros((segs.shape[0], feature_dim + 1, seg_len))
        data[:, -1, :] = segs
        return LevelInput(data, level, "from_raw")

    features = np.asarray(features, dtype=np.float64)
    if means is None:
        raise HierarchyError("features require their per-segment means")
    means = np.asarray(means, dtype=np.float64).reshape(-1)
    if features.ndim != 2:
        raise HierarchyError(f"features must be 2-D, got shape {features.shape}")
    if features.shape[0] != means.shape[0]:
        raise HierarchyError(
            f"{features.shape[0]} feature rows but {means.shape[0]} means")
    stacked = np.concatenate([features, means[:, None]], axis=1)
    n = stacked.shape[0]
    if group_lengths is not None:
        grouped = _pad_groups(stacked, list(group_lengths), seg_len,
                              stacked.shape[1])
    elif n % seg_len == 0:
        grouped = stacked.reshape(n // seg_len, seg_len, stacked.shape[1])
    elif seg_len == 31 and 28 <= n < 31:
        grouped = _pad_groups(stacked, [n], seg_len, stacked.shape[1])
    else:
        raise HierarchyError(
            f"{n} feature rows do not divide into {level.key} "
            f"segments of {seg_len}")
    return LevelInput(grouped.transpose(0, 2, 1), level, "from_features")


def level_mean(level_input: LevelInput) -> np.ndarray:
    """Per-segment mean of the value channel (always the last one)."""
    if level_input.segments == 0:
        raise HierarchyError("cannot take means of an empty input")
    return level_input.data[:, -1, :].mean(axis=1)


def extract_at(stack: ExtractorStack, level: Resolution,
               level_input: LevelInput) -> FeatureSet:
    """Run one module over assembled input; one feature row per segment."""
    module = stack.module_for(level)
    module.eval()
    rows = module.forward(level_input.data)
    if not np.all(np.isfinite(rows)):
        raise HierarchyError(f"{level.key} module produced non-finite features")
    return FeatureSet(rows, level, stack.version)


def _unwrap_series(x, data_resolution):
    if hasattr(x, "values") and hasattr(x, "resolution"):
        return np.asarray(x.values, dtype=np.float64), x.resolution
    if data_resolution is None:
        raise HierarchyError(
            "pass a SeriesBatch or provide data_resolution for a bare array")
    return np.asarray(x, dtype=np.float64), data_resolution


def extract_hierarchical(stack: ExtractorStack, x, target: Resolution,
                         entry: Resolution | None = None,
                         data_resolution: Resolution | None = None) -> FeatureSet:
    """Traverse modules from the entry level to ``target`` duration.

    ``x`` is raw data at some chain resolution (a SeriesBatch or an array
    plus ``data_resolution``). ``entry`` names the first module applied and
    defaults to the level right above the data; when given it must match,
    since a module only consumes data one step below itself. Each round
    assembles the input (features plus means above the bottom), extracts,
    and carries per-segment means upward, stopping at ``target``.
    """
    values, data_res = _unwrap_series(x, data_resolution)
    if values.ndim == 1:
        values = values[None, :]
    expected_entry = next_level(data_res)
    if entry is None:
        entry = expected_entry
    elif entry != expected_entry:
        raise HierarchyError(
            f"{data_res.key} data enters at the {expected_entry.key} module, "
            f"not {entry.key}")
    e, t = MODULE_LEVELS.index(entry), MODULE_LEVELS.index(target)
    if e > t:
        raise HierarchyError(
            f"entry {entry.key} is above target {target.key}")
    path = MODULE_LEVELS[e:t + 1]
    for lvl in path:
        if not stack.has_level(lvl):
            raise HierarchyError(
                f"stack is missing the {lvl.key} module needed for "
                f"{entry.key}->{target.key} extraction")

    feats, _, _ = _traverse(stack, values, path)
    return feats


def _traverse(stack, values, path):
    """Run build_input/extract_at up ``path``; returns the last level's
    features, means, and assembled input."""
    per_series = values.shape[1]
    feats = None
    means = None
    li = None
    for lvl in path:
        seg_len = input_resolution(lvl).seg_len
        if per_series % seg_len != 0 or per_series < seg_len:
            raise HierarchyError(
                f"each series carries {per_series} {input_resolution(lvl).key} "
                f"units; the {lvl.key} module needs a multiple of {seg_len}")
        if feats is None:
            li = build_input(lvl, raw=values, feature_dim=stack.config.feature_dim)
        else:
            li = build_input(lvl, features=feats.rows, means=means,
                             feature_dim=stack.config.feature_dim)
        feats = extract_at(stack, lvl, li)
        means = level_mean(li)
        per_series //= seg_len
    return feats, means, li


def assemble_input(stack: ExtractorStack, values: np.ndarray,
                   data_resolution: Resolution,
                   level: Resolution) -> LevelInput:
    """Build the ``level`` module's input from data at or below its feed.

    Data already at the resolution the module consumes becomes a raw input;
    lower-resolution data is first carried up through the intervening
    modules and arrives as features plus means.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    feed = input_resolution(level)
    if data_resolution == feed:
        return build_input(level, raw=values,
                           feature_dim=stack.config.feature_dim)
    if _chain_index(data_resolution) > _chain_index(feed):
        raise HierarchyError(
            f"{data_resolution.key} data is above the {level.key} module's "
            f"{feed.key} feed")
    e, t = MODULE_LEVELS.index(next_level(data_resolution)), MODULE_LEVELS.index(feed)
    feats, means, _ = _traverse(stack, values, MODULE_LEVELS[e:t + 1])
    return build_input(level, features=feats.rows, means=means,
                       feature_dim=stack.config.feature_dim)


def extract_transient(stack: ExtractorStack, x) -> FeatureSet:
    """Feature rows for 3-channel transient windows of length 960."""
    if stack.transient_module is None:
        raise HierarchyError("stack has no transient module")
    values = np.asarray(x.values if hasattr(x, "values") else x,
                        dtype=np.float64)
    if values.ndim == 2:
        values = values[None, :, :]
    if values.ndim != 3 or values.shape[1:] != (TRANSIENT_CHANNELS, TRANSIENT_LEN):
        raise HierarchyError(
            f"transient input must be (N, {TRANSIENT_CHANNELS}, "
            f"{TRANSIENT_LEN}), got {values.shape}")
    stack.transient_module.eval()
    rows = stack.transient_module.forward(values)
    if not np.all(np.isfinite(rows)):
        raise HierarchyError("transient module produced non-finite features")
    return FeatureSet(rows, Resolution.TRANSIENT, stack.version)
