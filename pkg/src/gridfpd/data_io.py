"""Dataset ingestion, windowing, resampling, synthesis, and stack persistence.

CSV datasets travel with a small JSON manifest (path, resolution,
value_column, timestamp_column, label, normalization, night_window) so a
file is always interpreted the same way. Synthetic generators produce
seeded desk-scale stand-ins for the four steady-state source classes plus
3-channel transient windows. Stack persistence is a self-contained binary
container with a trailing CRC so round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import hierarchy
from .hierarchy import ExtractorStack, Resolution, StackConfig

__all__ = [
    "DataIOError",
    "SeriesBatch",
    "TransientSet",
    "CLASS_LABELS",
    "TRANSIENT_CLASSES",
    "load_manifest",
    "load_csv",
    "save_dataset",
    "resample",
    "downsample_mean",
    "synth_solar",
    "synth_wind",
    "synth_load",
    "synth_ev",
    "synth_by_kind",
    "synth_transient",
    "save_stack",
    "load_stack",
]

# fixed class taxonomy for the steady-state corpus
CLASS_LABELS = {"solar": 0, "wind": 1, "load": 2, "ev": 3}
TRANSIENT_CLASSES = ("none", "sag", "swell", "freq_dip")

# seconds per interval, used for timestamp regularity and synthesis
INTERVAL_SECONDS = {
    Resolution.FIVE_MIN: 300,
    Resolution.TEN_MIN: 600,
    Resolution.HOURLY: 3600,
    Resolution.DAILY: 86400,
    Resolution.MONTHLY: 86400 * 30,
}
# natural window size per resolution: a day of sub-daily data, a month of
# daily data, a year of monthly data, an hour of 10-minute ramp data
WINDOW_POINTS = {
    Resolution.FIVE_MIN: 288,
    Resolution.TEN_MIN: 6,
    Resolution.HOURLY: 24,
    Resolution.DAILY: 31,
    Resolution.MONTHLY: 12,
}
DEFAULT_NIGHT_WINDOW = (22, 5)
_CSV_START = "2001-01-01 00:00:00"

_MAGIC = b"GFPDSTK\x01"
_FORMAT_VERSION = 1


class DataIOError(ValueError):
    pass


@dataclass
class SeriesBatch:
    """N fixed-length windows of one source at one resolution."""

    values: np.ndarray  # (N, T)
    resolution: Resolution
    label: int | None = None
    source: str | None = None
    normalization: str = "per_sample_max"
    night_window: tuple[int, int] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[None, :]
        if self.values.ndim != 2:
            raise DataIOError(f"values must be (N, T), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataIOError("series values must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "SeriesBatch":
        return SeriesBatch(values, self.resolution, self.label, self.source,
                           self.normalization, self.night_window)


@dataclass
class TransientSet:
    """3-channel transient windows with fault labels and amplitude targets."""

    values: np.ndarray  # (N, 3, 960)
    labels: np.ndarray  # (N,) index into TRANSIENT_CLASSES
    amp_min: np.ndarray
    amp_max: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _normalize(values: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return values
    if mode == "per_sample_max":
        peaks = np.abs(values).max(axis=1, keepdims=True)
        peaks[peaks == 0] = 1.0
        return values / peaks
    if mode == "per_dataset_max":
        peak = np.abs(values).max()
        return values / peak if peak > 0 else values
    raise DataIOError(f"unknown normalization mode {mode!r}")


# ---------------------------------------------------------------------------
# manifests and CSV

def load_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataIOError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    manifest.setdefault("timestamp_column", "timestamp")
    manifest.setdefault("value_column", "value")
    manifest.setdefault("normalization", "per_sample_max")
    manifest.setdefault("label", None)
    manifest.setdefault("night_window", None)
    if "path" not in manifest or "resolution" not in manifest:
        raise DataIOError("manifest requires 'path' and 'resolution' keys")
    # data path is relative to the manifest file
    data_path = Path(manifest["path"])
    if not data_path.is_absolute():
        manifest["path"] = str(path.parent / data_path)
    return manifest


def load_csv(manifest) -> tuple[SeriesBatch, int]:
    """Read a manifest-described CSV into fixed windows.

    Returns the batch and the number of excluded rows (unparseable values
    plus any trailing partial window); exclusions are never silent.
    """
    if not isinstance(manifest, dict):
        manifest = load_manifest(manifest)
    res = Resolution.from_key(manifest["resolution"])
    path = Path(manifest["path"])
    if not path.exists():
        raise DataIOError(f"data file not found: {path}")
    frame = pd.read_csv(path, float_precision="round_trip")
    for col in (manifest["timestamp_column"], manifest["value_column"]):
        if col not in frame.columns:
            raise DataIOError(f"column {col!r} missing from {path}")

    stamps = pd.to_datetime(frame[manifest["timestamp_column"]], errors="coerce")
    vals = pd.to_numeric(frame[manifest["value_column"]], errors="coerce")
    good = stamps.notna() & vals.notna() & np.isfinite(vals.to_numpy(dtype=float))
    dropped = int((~good).sum())
    stamps, vals = stamps[good], vals[good].to_numpy(dtype=np.float64)
    if len(vals) == 0:
        raise DataIOError(f"no usable rows in {path} ({dropped} dropped)")

    interval = INTERVAL_SECONDS[res]
    diffs = stamps.diff().dropna().dt.total_seconds().to_numpy()
    if len(diffs):
        ratio = diffs / interval
        # gaps from dropped rows are fine; off-grid stamps are not
        if np.any(ratio < 0.99) or np.any(np.abs(ratio - np.round(ratio)) > 0.01):
            raise DataIOError(
                f"timestamps in {path} are not on a {interval}s grid")

    window = WINDOW_POINTS[res]
    n_windows = len(vals) // window
    if n_windows == 0:
        raise DataIOError(
            f"{len(vals)} rows are fewer than one {res.key} window ({window})")
    tail = len(vals) - n_windows * window
    dropped += tail
    values = vals[: n_windows * window].reshape(n_windows, window)
    values = _normalize(values, manifest["normalization"])
    night = manifest.get("night_window")
    batch = SeriesBatch(values, res, manifest.get("label"),
                        manifest.get("source"), manifest["normalization"],
                        tuple(night) if night else None)
    return batch, dropped


def save_dataset(batch: SeriesBatch, csv_path, manifest_path=None) -> dict:
    """Write windows as a timestamped CSV plus its manifest.

    Timestamps restart from a fixed origin so identical batches produce
    byte-identical files. Values are printed with %.17g (round-trip exact).
    """
    csv_path = Path(csv_path)
    interval = INTERVAL_SECONDS[batch.resolution]
    flat = batch.values.reshape(-1)
    stamps = pd.date_range(_CSV_START, periods=flat.size,
                           freq=pd.Timedelta(seconds=interval))
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("timestamp,value\n")
        for ts, v in zip(stamps, flat):
            fh.write(f"{ts},{v:.17g}\n")
    manifest = {
        "path": csv_path.name,
        "resolution": batch.resolution.key,
        "timestamp_column": "timestamp",
        "value_column": "value",
        # values are already normalized on disk; do not renormalize on load
        "normalization": "none",
        "label": batch.label,
        "source": batch.source,
        "night_window": list(batch.night_window) if batch.night_window else None,
    }
    if manifest_path is None:
        manifest_path = csv_path.with_suffix(".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# resolution changes

_UPSAMPLE_RATIOS = {
    (Resolution.TEN_MIN, Resolution.FIVE_MIN): 2,
    (Resolution.HOURLY, Resolution.FIVE_MIN): 12,
}


def resample(batch: SeriesBatch, to: Resolution) -> SeriesBatch:
    """Upsample by linear interpolation; endpoints held at the tail.

    Output has ratio times as many points; output index j maps to input
    position j/ratio, so every original point is reproduced exactly on its
    grid and the final fractional positions hold the last value.
    """
    pair = (batch.resolution, to)
    if pair not in _UPSAMPLE_RATIOS:
        supported = ", ".join(f"{a.key}->{b.key}" for a, b in _UPSAMPLE_RATIOS)
        raise DataIOError(
            f"unsupported resample {pair[0].key}->{pair[1].key} "
            f"(supported: {supported})")
    ratio = _UPSAMPLE_RATIOS[pair]
    n, t = batch.values.shape
    xp = np.arange(t, dtype=np.float64)
    x = np.arange(t * ratio, dtype=np.float64) / ratio
    x = np.minimum(x, t - 1.0)
    out = np.empty((n, t * ratio))
    for i in range(n):
        out[i] = np.interp(x, xp, batch.values[i])
    new = batch.with_values(out)
    new.resolution = to
    return new


def downsample_mean(batch: SeriesBatch, to: Resolution) -> SeriesBatch:
    """Block means to a coarser sub-daily resolution (exact divisors only)."""
    src, dst = batch.resolution, to
    if src.per_hour is None or dst.per_hour is None or src.per_hour <= dst.per_hour:
        raise DataIOError(f"cannot downsample {src.key} to {dst.key}")
    if src.per_hour % dst.per_hour:
        raise DataIOError(f"{src.key} does not divide into {dst.key}")
    ratio = src.per_hour // dst.per_hour
    n, t = batch.values.shape
    if t % ratio:
        raise DataIOError(f"window length {t} not divisible by {ratio}")
    out = batch.values.reshape(n, t // ratio, ratio).mean(axis=2)
    new = batch.with_values(out)
    new.resolution = to
    return new


# ---------------------------------------------------------------------------
# synthetic steady-state sources

def _day_hours(resolution: Resolution):
    if resolution.per_hour is None:
        raise DataIOError(
            f"synthetic day profiles need a sub-daily resolution, "
            f"got {resolution.key}")
    ppd = 24 * resolution.per_hour
    return np.arange(ppd) / resolution.per_hour, ppd


def _ar1(rng, n, phi, init=0.0):
    noise = rng.standard_normal(n) * np.sqrt(1.0 - phi * phi)
    out = np.empty(n)
    prev = init
    for i in range(n):
        prev = phi * prev + noise[i]
        out[i] = prev
    return out


def _ar1_circular(rng, n, phi):
    """AR(1) texture that is stationary on a circle of length n.

    White noise filtered with the AR transfer function on the n-point
    circle, scaled to unit marginal variance. Wrapping the result (any
    rotation) leaves its distribution unchanged, so windows built from it
    stay seam-free under circular shifts.
    """
    white = np.fft.fft(rng.standard_normal(n))
    gain = 1.0 / (1.0 - phi * np.exp(-2j * np.pi * np.arange(n) / n))
    return np.fft.ifft(white * gain).real * np.sqrt(1.0 - phi * phi)


def synth_solar(days: int, resolution: Resolution = Resolution.FIVE_MIN,
                seed: int = 0) -> SeriesBatch:
    """Clear-sky half-sinusoid with seeded cloud attenuation; exact night zeros."""
    if days < 1:
        raise DataIOError("need at least one day")
    rng = np.random.default_rng([seed, CLASS_LABELS["solar"]])
    hours, ppd = _day_hours(resolution)
    daylight = (hours >= 6.5) & (hours <= 19.5)
    base = np.zeros(ppd)
    # vectorized sin can dip a few ulp below zero right at the endpoints
    base[daylight] = np.maximum(
        np.sin(np.pi * (hours[daylight] - 6.5) / 13.0), 0.0)
    # cloud cover drifts slowly (hours-scale) so solar stays smooth at the
    # 5-minute step; depth varies day to day
    phi_cloud = np.exp(-1.0 / (8.0 * resolution.per_hour))
    values = np.zeros((days, ppd))
    for d in range(days):
        clouds = _ar1(rng, ppd, phi_cloud, init=rng.standard_normal())
        depth = rng.uniform(0.1, 0.5)
        # squared squash keeps the attenuation differentiable in the cloud
        # state, so there is no extra per-step roughness at clear moments
        attenuation = 1.0 - depth * clouds * clouds / (1.0 + clouds * clouds)
        scale = rng.uniform(0.7, 1.0)
        values[d] = base * attenuation * scale
    values = _normalize(values, "per_sample_max")
    return SeriesBatch(values, resolution, CLASS_LABELS["solar"], "solar",
                       night_window=DEFAULT_NIGHT_WINDOW)


def synth_wind(days: int, resolution: Resolution = Resolution.FIVE_MIN,
               seed: int = 0) -> SeriesBatch:
    """Smoothed autoregressive wind power with a firm diurnal anchor.

    Two AR components carry the texture: a 90-minute time constant for the
    weather and a 15-minute one for turbulence, both generated per day on a
    circle so every window is seam-free under rotation. A per-day level
    draw keeps calm and windy days in the mix.
    """
    if days < 1:
        raise DataIOError("need at least one day")
    rng = np.random.default_rng([seed, CLASS_LABELS["wind"]])
    hours, ppd = _day_hours(resolution)
    step_min = 60.0 / resolution.per_hour
    slow = np.empty(days * ppd)
    fast = np.empty(days * ppd)
    for day in range(days):
        sl = slice(day * ppd, (day + 1) * ppd)
        level = rng.standard_normal()
        slow[sl] = 0.5 * level + 0.6 * _ar1_circular(
            rng, ppd, np.exp(-step_min / 90.0))
        fast[sl] = _ar1_circular(rng, ppd, np.exp(-step_min / 15.0))
    power = 1.0 / (1.0 + np.exp(-(1.0 * slow - 0.2)))
    power = power * (1.0 + 0.2 * fast)
    # the two-harmonic diurnal anchor ties the profile to clock time firmly
    # enough that phase misalignment moves daily features further than the
    # day-to-day weather variation it competes with
    diurnal = (1.0 + 0.5 * np.sin(2.0 * np.pi * (hours - 9.0) / 24.0)
               + 0.15 * np.sin(4.0 * np.pi * (hours - 3.0) / 24.0))
    values = np.clip(power.reshape(days, ppd) * diurnal[None, :], 0.0, None)
    values = _normalize(values, "per_sample_max")
    return SeriesBatch(values, resolution, CLASS_LABELS["wind"], "wind")


def synth_load(days: int, resolution: Resolution = Resolution.FIVE_MIN,
               seed: int = 0) -> SeriesBatch:
    """Double-peak demand profile; weekends flatten the morning peak."""
    if days < 1:
        raise DataIOError("need at least one day")
    rng = np.random.default_rng([seed, CLASS_LABELS["load"]])
    hours, ppd = _day_hours(resolution)
    morning = np.exp(-0.5 * ((hours - 8.5) / 1.6) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.0) / 2.2) ** 2)
    values = np.empty((days, ppd))
    for d in range(days):
        weekend = d % 7 >= 5
        profile = 0.42 + (0.16 if weekend else 0.30) * morning + 0.38 * evening
        wobble = 1.0 + 0.05 * _ar1(rng, ppd, 0.9)
        values[d] = profile * wobble * rng.uniform(0.85, 1.0)
    values = np.clip(values, 0.05, None)
    values = _normalize(values, "per_sample_max")
    return SeriesBatch(values, resolution, CLASS_LABELS["load"], "load")


def synth_ev(days: int, resolution: Resolution = Resolution.FIVE_MIN,
             seed: int = 0) -> SeriesBatch:
    """Charging-station profile: strong evening peak, lumpy sessions,
    small nonzero overnight draw."""
    if days < 1:
        raise DataIOError("need at least one day")
    rng = np.random.default_rng([seed, CLASS_LABELS["ev"]])
    hours, ppd = _day_hours(resolution)
    evening = np.exp(-0.5 * ((hours - 19.5) / 2.1) ** 2)
    midday = np.exp(-0.5 * ((hours - 12.5) / 2.8) ** 2)
    values = np.empty((days, ppd))
    for d in range(days):
        lumps = 1.0 / (1.0 + np.exp(-2.2 * _ar1(rng, ppd, 0.88)))
        profile = 0.05 + 0.95 * evening + 0.30 * midday
        values[d] = profile * (0.35 + 0.65 * lumps) + rng.uniform(0.01, 0.04)
    values = _normalize(values, "per_sample_max")
    return SeriesBatch(values, resolution, CLASS_LABELS["ev"], "ev")


_SYNTH_FUNCS = {"solar": synth_solar, "wind": synth_wind,
                "load": synth_load, "ev": synth_ev}


def synth_by_kind(kind: str, days: int,
                  resolution: Resolution = Resolution.FIVE_MIN,
                  seed: int = 0) -> SeriesBatch:
    if kind not in _SYNTH_FUNCS:
        raise DataIOError(
            f"unknown kind {kind!r}; expected one of {sorted(_SYNTH_FUNCS)}")
    return _SYNTH_FUNCS[kind](days, resolution, seed)


def synth_transient(n: int, seed: int = 0,
                    fault_mix=TRANSIENT_CLASSES) -> TransientSet:
    """Per-unit (magnitude, phase, frequency) windows with injected events."""
    if n < 1:
        raise DataIOError("need at least one sample")
    fault_mix = tuple(fault_mix)
    if not fault_mix:
        raise DataIOError("fault mix must not be empty")
    for name in fault_mix:
        if name not in TRANSIENT_CLASSES:
            raise DataIOError(f"unknown fault type {name!r}")
    rng = np.random.default_rng([seed, 9000])
    length = hierarchy.TRANSIENT_LEN
    values = np.empty((n, 3, length))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        kind = fault_mix[int(rng.integers(len(fault_mix)))]
        labels[i] = TRANSIENT_CLASSES.index(kind)
        mag = 1.0 + 0.004 * rng.standard_normal(length)
        phase = 0.02 * _ar1(rng, length, 0.99)
        freq = 1.0 + 0.0004 * rng.standard_normal(length)
        if kind != "none":
            start = int(rng.integers(120, 720))
            dur = int(rng.integers(60, 241))
            window = slice(start, start + dur)
            ramp = np.minimum(1.0, np.minimum(
                np.arange(dur) / 12.0, (dur - 1 - np.arange(dur)) / 12.0))
            if kind == "sag":
                depth = rng.uniform(0.2, 0.7)
                mag[window] -= depth * ramp
            elif kind == "swell":
                rise = rng.uniform(0.1, 0.4)
                mag[window] += rise * ramp
            else:  # freq_dip
                dip = rng.uniform(0.01, 0.05)
                freq[window] -= dip * ramp
                mag[window] -= 0.02 * ramp
        values[i, 0] = np.clip(mag, 0.0, 1.5)
        values[i, 1] = phase
        values[i, 2] = freq
    amp_min = values[:, 0, :].min(axis=1)
    amp_max = values[:, 0, :].max(axis=1)
    return TransientSet(values, labels, amp_min, amp_max)


# ---------------------------------------------------------------------------
# stack persistence

def save_stack(stack: ExtractorStack, path) -> None:
    """Write a finalized stack as a CRC-protected binary artifact."""
    if not stack.frozen:
        raise DataIOError("stack must be finalized before saving")
    arrays = list(stack.iter_weight_arrays())
    meta = {
        "format_version": _FORMAT_VERSION,
        "config": stack.config.to_dict(),
        "levels": [l.key for l in stack.levels],
        "transient": stack.transient_module is not None,
        "seed": stack.seed,
        "version": stack.version,
        "trained": sorted(stack.trained),
        "target_norm": {k: [v[0].tolist(), v[1].tolist()]
                        for k, v in sorted(stack.target_norm.items())},
        "arrays": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in arrays],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    body = struct.pack("<I", _FORMAT_VERSION)
    body += struct.pack("<I", len(meta_bytes)) + meta_bytes
    for _, arr in arrays:
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(_MAGIC + body + struct.pack("<I", crc))


def load_stack(path) -> ExtractorStack:
    path = Path(path)
    if not path.exists():
        raise DataIOError(f"artifact not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(_MAGIC) + 12 or blob[: len(_MAGIC)] != _MAGIC:
        raise DataIOError(f"{path} is not a stack artifact (bad magic)")
    body, crc_bytes = blob[len(_MAGIC):-4], blob[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise DataIOError(f"{path} failed its checksum; artifact corrupted")
    version = struct.unpack_from("<I", body, 0)[0]
    if version > _FORMAT_VERSION:
        raise DataIOError(
            f"{path} uses format version {version}; this build reads up to "
            f"{_FORMAT_VERSION}")
    meta_len = struct.unpack_from("<I", body, 4)[0]
    meta = json.loads(body[8 : 8 + meta_len].decode("utf-8"))

    config = StackConfig.from_dict(meta["config"])
    levels = tuple(Resolution.from_key(k) for k in meta["levels"])
    stack = ExtractorStack(config, seed=meta["seed"], levels=levels,
                           transient=meta["transient"])
    offset = 8 + meta_len
    declared = {a["name"]: a["shape"] for a in meta["arrays"]}
    for name, arr in stack.iter_weight_arrays():
        if name not in declared:
            raise DataIOError(f"artifact missing weights for {name}")
        if list(arr.shape) != declared[name]:
            raise DataIOError(
                f"shape mismatch for {name}: artifact {declared[name]}, "
                f"architecture {list(arr.shape)}")
        count = arr.size * 8
        if offset + count > len(body):
            raise DataIOError("artifact truncated inside weight payload")
        arr[...] = np.frombuffer(
            body, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
        offset += count
    stack.target_norm = {
        k: (np.asarray(v[0], dtype=np.float64), np.asarray(v[1], dtype=np.float64))
        for k, v in meta["target_norm"].items()}
    stack.trained = set(meta["trained"])
    stack.version = meta["version"]
    stack.frozen = True
    stack.eval_all()
    return stack
