"""Seeded, parameterized perturbations of scenario window sets.

Each operation maps a window batch to a disturbed copy and is a pure
function of (input, alpha, seed).  A zero level is always the exact
identity: callers get a bitwise-equal copy, never a re-noised one.  Inputs
may be bare (N, T) arrays or SeriesBatch objects; batches come back as
batches with their metadata intact.

The module also houses the ramp-rate labeler with its two threshold
scenarios and the level grids used by the standard benchmark sweep.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .linalg import batch_cov, batch_mean

__all__ = [
    "CATEGORIES",
    "Disturbance",
    "FIG2_GRIDS",
    "KINDS",
    "RampLabel",
    "SOLAR_GRIDS",
    "apply",
    "contamination",
    "error_accumulate",
    "gaussian_noise",
    "gaussian_smooth",
    "missing_data",
    "moment_matched_fabricate",
    "nighttime_violation",
    "period_offset",
    "ramp_category",
    "ramp_label",
    "time_shift",
]

KINDS = (
    "gaussian_noise",
    "missing_data",
    "contamination",
    "gaussian_smooth",
    "error_accumulate",
    "time_shift",
    "period_offset",
    "nighttime_violation",
    "moment_matched_fabricate",
)

# Benchmark level grids. The first six form the standard sweep preset;
# the two solar checks run on hour-valued levels.
FIG2_GRIDS = {
    "gaussian_noise": (0.0, 0.16, 1.6, 4.0),
    "missing_data": (0.0, 0.1, 0.25, 0.5),
    "contamination": (0.0, 0.25, 0.5, 0.75),
    "gaussian_smooth": (0.0, 10.0, 20.0, 30.0),
    "error_accumulate": (0.0, 0.005, 0.01, 0.03),
    "time_shift": (0.0, 40.0, 60.0, 80.0),
}
SOLAR_GRIDS = {
    "period_offset": (0.0, 2.0, 4.0),
    "nighttime_violation": (0.0, 2.0, 3.0),
}

# Offset added to the per-kind seed stream so disturbance draws never
# collide with generator or training streams built from the same seed.
_STREAM_BASE = 200

DEFAULT_NIGHT_WINDOW = (22, 5)
_FABRICATE_RIDGE_RTOL = 1e-8


@dataclass
class Disturbance:
    """One disturbance application: kind, level, seed, optional donor set."""

    kind: str
    alpha: float
    seed: int = 0
    auxiliary: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(
                "unknown disturbance kind %r; expected one of %s"
                % (self.kind, ", ".join(KINDS))
            )


def _rng(kind: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAM_BASE + KINDS.index(kind)])


def _unwrap(x):
    """Return (values array, rebuild) for a SeriesBatch or bare array."""
    if hasattr(x, "with_values"):
        return np.asarray(x.values, dtype=np.float64), x.with_values
    arr = np.asarray(x, dtype=np.float64)
    return arr, lambda v: v


def _resolution_of(x, resolution):
    res = resolution if resolution is not None else getattr(x, "resolution", None)
    if res is None:
        raise ValueError(
            "this disturbance needs resolution metadata; pass a SeriesBatch "
            "or the resolution argument"
        )
    return res


def gaussian_noise(x, alpha: float, seed: int = 0):
    """Add i.i.d. N(0, alpha) noise; alpha is the variance."""
    if alpha < 0:
        raise ValueError("noise variance must be >= 0, got %r" % alpha)
    values, rebuild = _unwrap(x)
    if alpha == 0:
        return rebuild(values.copy())
    rng = _rng("gaussian_noise", seed)
    return rebuild(values + np.sqrt(alpha) * rng.standard_normal(values.shape))


def missing_data(x, alpha: float, seed: int = 0):
    """Zero out floor(alpha * T) positions per sample, uniform w/o replacement."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("missing fraction must lie in [0, 1], got %r" % alpha)
    values, rebuild = _unwrap(x)
    t = values.shape[-1]
    k = int(np.floor(alpha * t))
    if k == 0:
        return rebuild(values.copy())
    rng = _rng("missing_data", seed)
    flat = values.reshape(-1, t).copy()
    # one uniform draw per row, argsort -> k distinct positions per row
    order = np.argsort(rng.random(flat.shape), axis=1)[:, :k]
    np.put_along_axis(flat, order, 0.0, axis=1)
    return rebuild(flat.reshape(values.shape))


def contamination(x, donor, alpha: float, seed: int = 0,
                  point_level: bool = False):
    """Replace floor(alpha * N) whole samples of ``x`` with donor samples.

    With ``point_level=True`` the replacement instead swaps floor(alpha * T)
    positions per sample for the same positions of a donor sample.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("contamination fraction must lie in [0, 1], got %r" % alpha)
    values, rebuild = _unwrap(x)
    donor_values, _ = _unwrap(donor)
    if donor_values.shape[1:] != values.shape[1:]:
        raise ValueError(
            "donor window shape %s does not match input %s"
            % (donor_values.shape[1:], values.shape[1:])
        )
    out = values.copy()
    rng = _rng("contamination", seed)
    n = values.shape[0]
    if point_level:
        t = values.shape[-1]
        k = int(np.floor(alpha * t))
        if k == 0:
            return rebuild(out)
        rows = rng.integers(0, donor_values.shape[0], size=n)
        for i in range(n):
            pos = rng.choice(t, size=k, replace=False)
            out[i, ..., pos] = donor_values[rows[i], ..., pos]
        return rebuild(out)
    k = int(np.floor(alpha * n))
    if k == 0:
        return rebuild(out)
    targets = rng.choice(n, size=k, replace=False)
    sources = rng.choice(donor_values.shape[0], size=k,
                         replace=donor_values.shape[0] < k)
    out[np.sort(targets)] = donor_values[sources]
    return rebuild(out)


def gaussian_smooth(x, alpha: float):
    """Convolve each sample with a Gaussian of standard deviation alpha.

    Kernel truncated at 4 sigma, reflective boundary. No seed: the
    operation is deterministic.
    """
    if alpha < 0:
        raise ValueError("smoothing sigma must be >= 0, got %r" % alpha)
    values, rebuild = _unwrap(x)
    if alpha == 0:
        return rebuild(values.copy())
    return rebuild(
        gaussian_filter1d(values, sigma=alpha, axis=-1, mode="reflect",
                          truncate=4.0)
    )


def error_accumulate(x, alpha: float, seed: int = 0):
    """Scale each sample by a multiplicative random walk.

    Factors eps_t ~ N(1, alpha^2) (alpha is the standard deviation)
    accumulate as E_t = E_{t-1} * eps_t from E_0 = 1, so the first point
    of every sample is left untouched and later points drift.
    """
    if alpha < 0:
        raise ValueError("factor standard deviation must be >= 0, got %r" % alpha)
    values, rebuild = _unwrap(x)
    if alpha == 0:
        return rebuild(values.copy())
    rng = _rng("error_accumulate", seed)
    t = values.shape[-1]
    eps = rng.normal(1.0, alpha, size=values.shape[:-1] + (t - 1,))
    factors = np.concatenate(
        [np.ones(values.shape[:-1] + (1,)), np.cumprod(eps, axis=-1)], axis=-1
    )
    return rebuild(values * factors)


def time_shift(x, alpha: int):
    """Circular forward shift by ``alpha`` positions along time."""
    shift = int(alpha)
    if shift != alpha:
        raise ValueError("shift must be a whole number of intervals, got %r" % alpha)
    values, rebuild = _unwrap(x)
    t = values.shape[-1]
    if not 0 <= shift < t:
        raise ValueError("shift must satisfy 0 <= alpha < T=%d, got %d" % (t, shift))
    if shift == 0:
        return rebuild(values.copy())
    return rebuild(np.roll(values, shift, axis=-1))


def period_offset(x, alpha_hours: float, *, resolution=None):
    """Circular forward shift by a whole number of hours."""
    if alpha_hours < 0:
        raise ValueError("hour offset must be >= 0, got %r" % alpha_hours)
    res = _resolution_of(x, resolution)
    if res.per_hour is None:
        raise ValueError("resolution %r has no per-hour interval count" % res.key)
    k = alpha_hours * res.per_hour
    if k != int(k):
        raise ValueError(
            "offset of %r hours is not a whole number of %s intervals"
            % (alpha_hours, res.key)
        )
    return time_shift(x, int(k))


def nighttime_violation(x, alpha_hours: float, seed: int = 0, *,
                        resolution=None, night_window=None,
                        low: float = 0.2, high: float = 0.8):
    """Force solar output during night hours.

    For each sample-day, ``alpha_hours`` contiguous hours inside the night
    window are overwritten with uniform(low, high) fractions of that day's
    daytime peak. The block position is seeded per sample-day. Samples must
    span whole days.
    """
    alpha = int(alpha_hours)
    if alpha != alpha_hours or alpha < 0:
        raise ValueError("violated hours must be a count >= 0, got %r" % alpha_hours)
    res = _resolution_of(x, resolution)
    if res.per_hour is None:
        raise ValueError("resolution %r has no per-hour interval count" % res.key)
    night = night_window or getattr(x, "night_window", None) or DEFAULT_NIGHT_WINDOW
    night_len = (night[1] - night[0]) % 24
    if night_len == 0:
        raise ValueError("night window %r is empty" % (night,))
    if alpha > night_len:
        raise ValueError(
            "cannot violate %d hours; the night window %r spans %d"
            % (alpha, night, night_len)
        )
    values, rebuild = _unwrap(x)
    if alpha == 0:
        return rebuild(values.copy())
    per_hour = res.per_hour
    day_len = 24 * per_hour
    if values.shape[-1] % day_len:
        raise ValueError(
            "samples of length %d do not span whole days of %d points"
            % (values.shape[-1], day_len)
        )
    night_hours = [(night[0] + i) % 24 for i in range(night_len)]
    night_mask = np.zeros(day_len, dtype=bool)
    for h in night_hours:
        night_mask[h * per_hour:(h + 1) * per_hour] = True
    rng = _rng("nighttime_violation", seed)
    out = values.reshape(-1, values.shape[-1] // day_len, day_len).copy()
    for i in range(out.shape[0]):
        for d in range(out.shape[1]):
            day = out[i, d]
            peak = day[~night_mask].max()
            if peak <= 0:
                raise ValueError(
                    "sample %d day %d has no positive daytime values" % (i, d)
                )
            start = int(rng.integers(0, night_len - alpha + 1))
            for h in night_hours[start:start + alpha]:
                sl = slice(h * per_hour, (h + 1) * per_hour)
                day[sl] = peak * rng.uniform(low, high, size=per_hour)
    return rebuild(out.reshape(values.shape))


def moment_matched_fabricate(x, seed: int = 0):
    """Sample a new batch from the Gaussian fitted to the raw windows.

    The fabricated set matches the input's raw mean and covariance by
    construction while carrying none of its higher-order temporal
    structure. Requires N >= T + 1 so the covariance is estimable; a
    degenerate covariance gets a relative diagonal ridge (warned).
    """
    values, rebuild = _unwrap(x)
    flat = values.reshape(values.shape[0], -1)
    n, t = flat.shape
    if n < t + 1:
        raise ValueError(
            "need at least T+1=%d samples to fit a %d-dim covariance, got %d"
            % (t + 1, t, n)
        )
    mean = batch_mean(flat)
    cov = batch_cov(flat)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        ridge = _FABRICATE_RIDGE_RTOL * float(np.trace(cov))
        warnings.warn(
            "window covariance is degenerate (min eigenvalue %.3e); ridge "
            "%.3e added before sampling" % (vals.min(), ridge),
            RuntimeWarning,
            stacklevel=2,
        )
        vals, vecs = np.linalg.eigh(cov + ridge * np.eye(t))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    rng = _rng("moment_matched_fabricate", seed)
    fab = mean + rng.standard_normal((n, t)) @ root.T
    return rebuild(fab.reshape(values.shape))


# ------------------------------------------------------------ ramp labels

CATEGORIES = (
    "strong_down",
    "moderate_down",
    "mild_down",
    "neutral",
    "mild_up",
    "moderate_up",
    "strong_up",
)

# Scenario -> magnitudes (a, b, c): neutral is [-a, a], mild (a, b],
# moderate (b, c], strong beyond c; mirrored with half-open intervals on
# the down side so every rate lands in exactly one category.
_THRESHOLDS = {1: (0.25, 0.33, 0.50), 2: (0.10, 0.20, 0.30)}


@dataclass(frozen=True)
class RampLabel:
    category: str
    scenario: int


def ramp_category(rates, scenario: int) -> np.ndarray:
    """Vectorized Table of ramp categories: rates -> indices into CATEGORIES."""
    if scenario not in _THRESHOLDS:
        raise ValueError("scenario must be 1 or 2, got %r" % scenario)
    a, b, c = _THRESHOLDS[scenario]
    r = np.asarray(rates, dtype=np.float64)
    conds = [
        r < -c,
        (r >= -c) & (r < -b),
        (r >= -b) & (r < -a),
        (r >= -a) & (r <= a),
        (r > a) & (r <= b),
        (r > b) & (r <= c),
        r > c,
    ]
    idx = np.select(conds, np.arange(7), default=-1)
    if np.any(idx < 0):
        raise AssertionError("ramp thresholds failed to cover a rate")
    return idx


def ramp_label(window, p_max: float, scenario: int) -> RampLabel:
    """Label a six-value 10-minute window by its normalized ramp rate.

    The rate is (last - first) / p_max over the 50-minute span.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.shape != (6,):
        raise ValueError("window must hold exactly 6 values, got shape %s" % (w.shape,))
    if p_max <= 0:
        raise ValueError("p_max must be positive, got %r" % p_max)
    rate = (w[5] - w[0]) / p_max
    idx = int(ramp_category(rate, scenario))
    return RampLabel(CATEGORIES[idx], scenario)


def apply(x, dist: Disturbance, *, resolution=None):
    """Dispatch one Disturbance record onto a window set."""
    kind = dist.kind
    if kind == "gaussian_noise":
        return gaussian_noise(x, dist.alpha, dist.seed)
    if kind == "missing_data":
        return missing_data(x, dist.alpha, dist.seed)
    if kind == "contamination":
        if dist.auxiliary is None:
            raise ValueError("contamination needs an auxiliary donor dataset")
        return contamination(x, dist.auxiliary, dist.alpha, dist.seed)
    if kind == "gaussian_smooth":
        return gaussian_smooth(x, dist.alpha)
    if kind == "error_accumulate":
        return error_accumulate(x, dist.alpha, dist.seed)
    if kind == "time_shift":
        return time_shift(x, dist.alpha)
    if kind == "period_offset":
        return period_offset(x, dist.alpha, resolution=resolution)
    if kind == "nighttime_violation":
        return nighttime_violation(x, dist.alpha, dist.seed,
                                   resolution=resolution)
    return moment_matched_fabricate(x, dist.seed)
