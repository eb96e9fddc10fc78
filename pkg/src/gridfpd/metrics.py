"""Distribution distances over feature sets and raw scenario windows.

The central quantity is the squared Frechet distance between Gaussian
summaries of two sample sets,

    d2 = ||m1 - m2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)),

evaluated through the stable cross-trace path in ``linalg``.  The sample
based estimators (kernel MMD, CRPS, energy score, paired MAPE) operate on
the raw vectors directly; their conventions are documented per function
because several of them admit more than one textbook form.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .linalg import LinalgError, batch_cov, batch_mean, cross_sqrt_trace

__all__ = [
    "GaussianEmbedding",
    "MapeResult",
    "MetricReport",
    "METRIC_KEYS",
    "crps",
    "crps_batch",
    "energy_score",
    "evaluate_pair",
    "fit_gaussian",
    "fpd",
    "js_gaussian",
    "kl_gaussian",
    "mape_paired",
    "median_pairwise_distance",
    "mmd",
    "raw_frechet",
]

# Results mathematically >= 0 may round slightly negative; the roundoff
# grows with the magnitude of the terms that cancel, so the collapse
# window is NEAR_ZERO times the positive-term scale (at least 1). A value
# below the window is an error, never silently clipped.
NEAR_ZERO = 1e-8

# fpd cancels tr(S1)+tr(S2) against 2 tr((S1 S2)^(1/2)); the square root
# amplifies eigensolver roundoff by 1/(2 sqrt(lam)) at small eigenvalues,
# so its window is wider. Identical embeddings short-circuit to exact 0.
FPD_NEG_RTOL = 1e-6

# Relative diagonal boost applied to a covariance that fails a Cholesky
# factorization before it is inverted or log-det'ed.
RIDGE_RTOL = 1e-10

# Pair denominators with magnitude below this are excluded from MAPE.
MAPE_EPS = 1e-8

# Fixed registry of report keys; MetricReport rejects anything else.
METRIC_KEYS = (
    "fpd",
    "js",
    "mmd_rbf",
    "mmd_linear",
    "crps",
    "energy",
    "mape",
    "raw_frechet",
)

_SUBSAMPLE_STREAM = 17


@dataclass
class GaussianEmbedding:
    """Gaussian summary of a sample set: mean vector, covariance, count."""

    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mean.ndim != 1:
            raise ValueError("mean must be a vector, got ndim=%d" % self.mean.ndim)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(
                "covariance shape %s does not match mean dimension %d"
                % (self.cov.shape, d)
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(z) -> GaussianEmbedding:
    """Fit mean and (1/N-normalized) covariance to rows of ``z``.

    ``z`` is an (n, d) sample matrix with n >= 2.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("expected an (n, d) sample matrix, got ndim=%d" % z.ndim)
    return GaussianEmbedding(batch_mean(z), batch_cov(z), count=z.shape[0])


def _check_dims(g1: GaussianEmbedding, g2: GaussianEmbedding, op: str):
    if g1.dim != g2.dim:
        raise ValueError(
            "%s: embedding dimensions differ (%d vs %d)" % (op, g1.dim, g2.dim)
        )


def _clip_near_zero(value: float, op: str, scale: float = 1.0,
                    rtol: float = NEAR_ZERO) -> float:
    allowance = rtol * max(1.0, scale)
    if value < 0.0:
        if value <= -allowance:
            raise LinalgError(
                "%s evaluated to %.6e; magnitude exceeds the roundoff "
                "allowance %.1e" % (op, value, allowance)
            )
        return 0.0
    return value


def fpd(g1: GaussianEmbedding, g2: GaussianEmbedding) -> float:
    """Squared Frechet distance between two Gaussian embeddings.

    ||m1 - m2||^2 + tr(S1) + tr(S2) - 2 tr((S1 S2)^(1/2)).  Symmetric,
    nonnegative, zero iff the embeddings coincide; coinciding embeddings
    return exactly 0.0.
    """
    _check_dims(g1, g2, "fpd")
    if np.array_equal(g1.mean, g2.mean) and np.array_equal(g1.cov, g2.cov):
        return 0.0
    dm = g1.mean - g2.mean
    scale = (float(dm @ dm) + float(np.trace(g1.cov))
             + float(np.trace(g2.cov)))
    value = scale - 2.0 * cross_sqrt_trace(g1.cov, g2.cov)
    return _clip_near_zero(value, "fpd", scale, FPD_NEG_RTOL)


def _ensure_invertible(mat: np.ndarray, label: str) -> np.ndarray:
    """Return ``mat`` or a ridge-boosted copy that factors as SPD."""
    try:
        np.linalg.cholesky(mat)
        return mat
    except np.linalg.LinAlgError:
        pass
    ridge = RIDGE_RTOL * float(np.trace(mat))
    if ridge > 0.0:
        boosted = mat + ridge * np.eye(mat.shape[0])
        try:
            np.linalg.cholesky(boosted)
        except np.linalg.LinAlgError:
            pass
        else:
            warnings.warn(
                "%s is numerically singular; ridge %.3e added to its diagonal"
                % (label, ridge),
                RuntimeWarning,
                stacklevel=3,
            )
            return boosted
    raise LinalgError("%s is singular beyond ridge regularization" % label)


def kl_gaussian(g1: GaussianEmbedding, g2: GaussianEmbedding) -> float:
    """Closed-form KL divergence KL(g1 || g2) between Gaussians.

    0.5 [tr(S2^-1 S1) + (m2-m1)^T S2^-1 (m2-m1) - d + log det S2 / det S1].
    Near-singular covariances get a relative diagonal ridge (warned); a
    covariance that stays singular raises LinalgError.
    """
    _check_dims(g1, g2, "kl_gaussian")
    d = g1.dim
    s1 = _ensure_invertible(g1.cov, "first covariance")
    s2 = _ensure_invertible(g2.cov, "second covariance")
    dm = g2.mean - g1.mean
    trace_term = float(np.trace(np.linalg.solve(s2, s1)))
    quad = float(dm @ np.linalg.solve(s2, dm))
    _, logdet1 = np.linalg.slogdet(s1)
    _, logdet2 = np.linalg.slogdet(s2)
    value = 0.5 * (trace_term + quad - d + logdet2 - logdet1)
    scale = 0.5 * (trace_term + quad + d + abs(logdet2) + abs(logdet1))
    return _clip_near_zero(value, "kl_gaussian", scale)


def js_gaussian(g1: GaussianEmbedding, g2: GaussianEmbedding) -> float:
    """Symmetrized divergence through the moment-averaged midpoint.

    The midpoint M is the Gaussian with mean (m1+m2)/2 and covariance
    (S1+S2)/2 (a moment approximation of the mixture, not the mixture
    itself); the result is (KL(g1||M) + KL(g2||M)) / 2, exactly symmetric
    in its arguments.
    """
    _check_dims(g1, g2, "js_gaussian")
    mid = GaussianEmbedding(
        0.5 * (g1.mean + g2.mean), 0.5 * (g1.cov + g2.cov)
    )
    return 0.5 * kl_gaussian(g1, mid) + 0.5 * kl_gaussian(g2, mid)


def median_pairwise_distance(*sets) -> float:
    """Median Euclidean distance over distinct pairs of the pooled rows.

    Standard bandwidth heuristic for the RBF kernel; falls back to 1.0
    when every pooled row coincides.
    """
    pooled = np.vstack([np.asarray(z, dtype=np.float64) for z in sets])
    if pooled.shape[0] < 2:
        return 1.0
    dists = cdist(pooled, pooled)
    iu = np.triu_indices(pooled.shape[0], k=1)
    med = float(np.median(dists[iu]))
    return med if med > 0.0 else 1.0


def mmd(z1, z2, kernel: str = "rbf", bandwidth: float | None = None,
        include_mean_term: bool = True) -> float:
    """Kernel maximum mean discrepancy with an additive mean-gap term.

    The default estimator is

        ||m1 - m2||^2 + (1/n^2) sum_ij k(x_i, x_j)
                      + (1/n^2) sum_ij k(y_i, y_j)
                      - (2/n^2) sum_ij k(x_i, y_j)

    with the diagonal included in every double sum and a single common n.
    ``include_mean_term=False`` drops the leading squared mean gap, which
    recovers the textbook (biased) MMD^2 estimator.  Kernels: ``rbf`` with
    k(x, y) = exp(-||x-y||^2 / (2 h^2)), h defaulting to the median
    pairwise distance of the pooled rows, and ``linear`` with k(x, y) =
    x.y.  Unequal set sizes are rejected.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.ndim != 2 or z2.ndim != 2:
        raise ValueError("mmd expects (n, d) sample matrices")
    if z1.shape[1] != z2.shape[1]:
        raise ValueError(
            "mmd: feature dimensions differ (%d vs %d)" % (z1.shape[1], z2.shape[1])
        )
    if z1.shape[0] != z2.shape[0]:
        raise ValueError(
            "mmd requires equally sized sets (got %d and %d); subsample the "
            "larger set to the smaller size first" % (z1.shape[0], z2.shape[0])
        )
    if kernel == "rbf":
        if bandwidth is None:
            bandwidth = median_pairwise_distance(z1, z2)
        if bandwidth <= 0.0:
            raise ValueError("rbf bandwidth must be positive")
        denom = 2.0 * bandwidth * bandwidth
        k11 = np.exp(-cdist(z1, z1, "sqeuclidean") / denom)
        k22 = np.exp(-cdist(z2, z2, "sqeuclidean") / denom)
        k12 = np.exp(-cdist(z1, z2, "sqeuclidean") / denom)
    elif kernel == "linear":
        k11 = z1 @ z1.T
        k22 = z2 @ z2.T
        k12 = z1 @ z2.T
    else:
        raise ValueError("unknown kernel %r (choose 'rbf' or 'linear')" % kernel)
    value = float(k11.mean() + k22.mean() - 2.0 * k12.mean())
    if include_mean_term:
        dm = z1.mean(axis=0) - z2.mean(axis=0)
        value += float(dm @ dm)
    return value


def _sorted_abs_mean(sorted_cols: np.ndarray) -> np.ndarray:
    """E|X - X'| per column (diagonal included) from ascending columns."""
    m = sorted_cols.shape[0]
    weights = (2.0 * np.arange(m) - m + 1.0)[:, None]
    return (sorted_cols * weights).sum(axis=0) * (2.0 / (m * m))


def crps(ensemble, observation) -> float:
    """Continuous ranked probability score, averaged over time steps.

    ``ensemble`` holds one sample per row, (m, t) against an observation
    series of length t (a 1-D ensemble scores a scalar observation).  Per
    step the empirical estimator E|X - y| - 0.5 E|X - X'| is used, with
    the self-expectation running over all ordered pairs including i = j.
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    if ens.ndim == 1:
        ens = ens[:, None]
    if ens.ndim != 2:
        raise ValueError("ensemble must be (members, steps)")
    obs = np.atleast_1d(np.asarray(observation, dtype=np.float64))
    if obs.ndim != 1 or obs.shape[0] != ens.shape[1]:
        raise ValueError(
            "observation length %s does not match ensemble steps %d"
            % (obs.shape, ens.shape[1])
        )
    if ens.shape[0] < 2:
        raise ValueError("ensemble needs at least 2 members, got %d" % ens.shape[0])
    e_obs = np.abs(ens - obs[None, :]).mean(axis=0)
    e_self = _sorted_abs_mean(np.sort(ens, axis=0))
    return float((e_obs - 0.5 * e_self).mean())


def crps_batch(ensemble_windows, observation_windows) -> float:
    """Mean CRPS of an ensemble of windows against each observed window.

    Column t of ``ensemble_windows`` acts as the forecast ensemble for
    step t; the score is averaged over every row of
    ``observation_windows`` and over steps.  Equivalent to looping
    ``crps`` over observations but shares the per-step sort.
    """
    ens = _window_matrix(ensemble_windows)
    obs = _window_matrix(observation_windows)
    if ens.shape[1] != obs.shape[1]:
        raise ValueError(
            "window lengths differ (%d vs %d)" % (ens.shape[1], obs.shape[1])
        )
    m = ens.shape[0]
    if m < 2:
        raise ValueError("ensemble needs at least 2 members, got %d" % m)
    srt = np.sort(ens, axis=0)
    e_self = _sorted_abs_mean(srt)
    total = 0.0
    for t in range(srt.shape[1]):
        col = srt[:, t]
        pref = np.concatenate(([0.0], np.cumsum(col)))
        y = obs[:, t]
        c = np.searchsorted(col, y, side="right")
        below = pref[c]
        e_obs = (y * c - below + (pref[-1] - below) - y * (m - c)) / m
        total += float((e_obs - 0.5 * e_self[t]).mean())
    return total / srt.shape[1]


def energy_score(z1, z2) -> float:
    """Energy distance E||X-Y|| - 0.5 E||X-X'|| - 0.5 E||Y-Y'||.

    Self-expectations include the zero diagonal, so identical sets score
    exactly 0.  Each set needs at least 2 rows.
    """
    z1 = _window_matrix(z1)
    z2 = _window_matrix(z2)
    if z1.shape[1] != z2.shape[1]:
        raise ValueError(
            "energy_score: dimensions differ (%d vs %d)" % (z1.shape[1], z2.shape[1])
        )
    if z1.shape[0] < 2 or z2.shape[0] < 2:
        raise ValueError("energy_score needs at least 2 samples per set")
    cross = cdist(z1, z2).mean()
    self1 = cdist(z1, z1).mean()
    self2 = cdist(z2, z2).mean()
    return float(cross - 0.5 * self1 - 0.5 * self2)


@dataclass
class MapeResult:
    """Paired MAPE with the zero-denominator exclusion audit."""

    value: float
    used: int
    excluded: int


def mape_paired(x1, x2, pairing: str = "index", seed=None,
                eps: float = MAPE_EPS) -> MapeResult:
    """Mean absolute percentage error over matched sample pairs.

    Pairs rows of ``x1`` with rows of ``x2`` either positionally
    (``index``) or through a seeded permutation (``random``), then
    averages |a - b| / |a| over every retained point.  Points with
    |a| < eps are excluded from the average and counted; an entirely
    excluded input raises.
    """
    a = _window_matrix(x1)
    b = _window_matrix(x2)
    if a.shape != b.shape:
        raise ValueError(
            "mape_paired needs matching shapes, got %s and %s" % (a.shape, b.shape)
        )
    if pairing == "random":
        rng = np.random.default_rng(seed)
        b = b[rng.permutation(a.shape[0])]
    elif pairing != "index":
        raise ValueError("pairing must be 'index' or 'random', got %r" % pairing)
    denom = np.abs(a)
    keep = denom >= eps
    excluded = int(np.count_nonzero(~keep))
    if not keep.any():
        raise ValueError(
            "every denominator is below eps=%g; the percentage error is "
            "undefined on this pair" % eps
        )
    value = float((np.abs(a - b)[keep] / denom[keep]).mean())
    return MapeResult(value=value, used=int(keep.sum()), excluded=excluded)


def _window_matrix(x) -> np.ndarray:
    """Coerce a window batch (or SeriesBatch) to a 2-D (n, flat) matrix."""
    values = getattr(x, "values", x)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError("expected a batch of windows, got ndim=%d" % arr.ndim)
    return arr.reshape(arr.shape[0], -1)


def raw_frechet(x1, x2) -> float:
    """Squared Frechet distance fitted directly on flattened raw windows.

    Bypasses feature extraction entirely: moments beyond mean and
    covariance of the raw vectors are invisible to this metric.
    """
    a = _window_matrix(x1)
    b = _window_matrix(x2)
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            "raw_frechet: window lengths differ (%d vs %d)" % (a.shape[1], b.shape[1])
        )
    return fpd(fit_gaussian(a), fit_gaussian(b))


@dataclass
class MetricReport:
    """Bundle of named metric values plus run provenance.

    ``values`` keys must come from METRIC_KEYS and every value must be
    finite.  Serializes to a flat JSON object: metric keys in registry
    order, then config_hash, seed and the dataset identifiers.
    """

    values: dict
    config_hash: str = ""
    seed: int = 0
    datasets: tuple = ("", "")

    def __post_init__(self):
        clean = {}
        for key, val in self.values.items():
            if key not in METRIC_KEYS:
                raise ValueError("unknown metric key %r" % key)
            val = float(val)
            if not np.isfinite(val):
                raise ValueError("metric %r is not finite: %r" % (key, val))
            clean[key] = val
        self.values = clean
        self.datasets = tuple(str(d) for d in self.datasets)

    def to_dict(self) -> dict:
        out = {k: self.values[k] for k in METRIC_KEYS if k in self.values}
        out["config_hash"] = self.config_hash
        out["seed"] = int(self.seed)
        out["datasets"] = list(self.datasets)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        raw = json.loads(text)
        values = {k: raw[k] for k in METRIC_KEYS if k in raw}
        return cls(
            values=values,
            config_hash=raw.get("config_hash", ""),
            seed=raw.get("seed", 0),
            datasets=tuple(raw.get("datasets", ("", ""))),
        )


def _equalize(a: np.ndarray, b: np.ndarray, rng) -> tuple:
    """Subsample the larger of two row sets to the smaller one's size."""
    if a.shape[0] == b.shape[0]:
        return a, b
    n = min(a.shape[0], b.shape[0])
    if a.shape[0] > n:
        a = a[np.sort(rng.choice(a.shape[0], size=n, replace=False))]
    else:
        b = b[np.sort(rng.choice(b.shape[0], size=n, replace=False))]
    return a, b


def evaluate_pair(features1, features2, windows1, windows2, *, seed: int = 0,
                  bandwidth: float | None = None, config_hash: str = "",
                  datasets: tuple = ("", "")) -> MetricReport:
    """Compute the full metric registry between two scenario sets.

    Feature matrices feed the Gaussian metrics and MMD; raw windows feed
    CRPS, energy score, MAPE and the raw-space Frechet distance.  MMD and
    MAPE need equally sized sets, so the larger side is subsampled with a
    seeded draw; MAPE uses the seeded random pairing.
    """
    f1 = np.asarray(features1, dtype=np.float64)
    f2 = np.asarray(features2, dtype=np.float64)
    w1 = _window_matrix(windows1)
    w2 = _window_matrix(windows2)
    g1 = fit_gaussian(f1)
    g2 = fit_gaussian(f2)
    rng = np.random.default_rng([seed, _SUBSAMPLE_STREAM])
    f1s, f2s = _equalize(f1, f2, rng)
    w1s, w2s = _equalize(w1, w2, rng)
    values = {
        "fpd": fpd(g1, g2),
        "js": js_gaussian(g1, g2),
        "mmd_rbf": mmd(f1s, f2s, kernel="rbf", bandwidth=bandwidth),
        "mmd_linear": mmd(f1s, f2s, kernel="linear"),
        "crps": crps_batch(w1, w2),
        "energy": energy_score(w1, w2),
        "mape": mape_paired(w1s, w2s, pairing="random", seed=seed).value,
        "raw_frechet": raw_frechet(w1, w2),
    }
    return MetricReport(
        values=values, config_hash=config_hash, seed=seed, datasets=datasets
    )
