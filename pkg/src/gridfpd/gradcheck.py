"""Finite-difference verification of layer and loss gradients.

Every analytic gradient in :mod:`gridfpd.nn` is compared against central
differences with step 1e-4. The relative-error measure is

    rel(a, n) = |a - n| / max(|a|, |n|, 1)

which behaves like absolute error near zero and like relative error for
large entries. A check passes when every compared entry satisfies
rel <= 1e-4.

ReLU makes the probe loss piecewise linear, and batchnorm centers
pre-activations at zero, so occasionally a probe straddles a kink where the
central difference is invalid (it returns the average of the two one-sided
slopes, not either slope). Those entries are detected, not tolerated: an
entry is skipped only when the measured slope jump |d+ - d-| exceeds what
the tolerance could absorb AND the analytic/central mismatch is no larger
than that jump (the kink signature: mismatch = jump / 2). A genuinely wrong
gradient at a smooth point shows a large mismatch against a near-zero jump
and still fails. A check with more than half its entries skipped fails
outright.

``run_suite`` repeats the standard battery across seeds and is what the
``gradcheck`` CLI command executes.
"""

from __future__ import annotations

import numpy as np

from . import nn

__all__ = ["CheckResult", "check_layer", "check_loss", "run_suite", "DEFAULT_SEEDS"]

FD_STEP = 1e-4
TOL = 1e-4
DEFAULT_SEEDS = 25


class CheckResult:
    """Outcome of one gradient comparison."""

    def __init__(self, name, max_rel_err, passed, skipped=0, total=0):
        self.name = name
        self.max_rel_err = max_rel_err
        self.passed = passed
        self.skipped = skipped
        self.total = total

    def __repr__(self):
        status = "ok" if self.passed else "FAIL"
        extra = f", kink_skipped={self.skipped}/{self.total}" if self.skipped else ""
        return f"CheckResult({self.name}: {status}, max_rel_err={self.max_rel_err:.3e}{extra})"


def _rel_err(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)


def _fd_compare(name, analytic, array, loss_fn):
    """Central-difference check of d(loss)/d(array) against ``analytic``.

    ``array`` is perturbed in place entry by entry; ``loss_fn()`` re-evaluates
    the scalar probe loss at the current values.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    l0 = loss_fn()
    flat = array.reshape(-1)
    aflat = analytic.reshape(-1)
    max_err = 0.0
    skipped = 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + FD_STEP
        lp = loss_fn()
        flat[i] = orig - FD_STEP
        lm = loss_fn()
        flat[i] = orig
        central = (lp - lm) / (2.0 * FD_STEP)
        a = aflat[i]
        scale = max(abs(a), abs(central), 1.0)
        err = abs(a - central) / scale
        if err > TOL:
            jump = abs((lp - l0) - (l0 - lm)) / FD_STEP
            if jump > TOL * scale and abs(a - central) <= jump:
                skipped += 1  # probe crossed a relu kink; comparison invalid
                continue
        max_err = max(max_err, err)
    passed = max_err <= TOL and skipped <= flat.size // 2
    return CheckResult(name, max_err, passed, skipped, flat.size)


def check_layer(layer, x, rng, corrupt=None):
    """Check d(loss)/d(input) and d(loss)/d(params) for one layer.

    The probe loss is a fixed random weighting of the layer output, run in
    training mode. ``corrupt`` optionally names a parameter whose analytic
    gradient gets perturbed before comparison; used to prove the checker
    can fail.
    """
    layer.train()
    x = np.asarray(x, dtype=np.float64)
    y = layer.forward(x)
    weights = rng.standard_normal(y.shape)
    layer.zero_grad()
    layer.forward(x)
    dx = layer.backward(weights.copy())

    def loss_fn():
        return float((layer.forward(x) * weights).sum())

    name = type(layer).__name__
    results = [_fd_compare(f"{name}.input", dx, x, loss_fn)]
    grads = dict(layer.named_grads())
    for pname, p in layer.named_params():
        g = grads[pname].copy()
        if corrupt is not None and corrupt in pname:
            g = g + 0.5
        results.append(_fd_compare(f"{name}.{pname}", g, p, loss_fn))
    return results


def check_loss(kind, rng):
    """Check the logits/prediction gradient of a loss function."""
    if kind == "cross_entropy":
        x = rng.standard_normal((4, 5))
        labels = rng.integers(0, 5, size=4)
        _, analytic = nn.softmax_cross_entropy(x, labels)

        def loss_fn():
            losses, _ = nn.softmax_cross_entropy(x, labels)
            return float(losses.sum())
    elif kind == "mse":
        x = rng.standard_normal((4, 6))
        target = rng.standard_normal((4, 6))
        _, analytic = nn.mse_loss(x, target)

        def loss_fn():
            losses, _ = nn.mse_loss(x, target)
            return float(losses.sum())
    else:
        raise ValueError(f"unknown loss kind: {kind}")
    return [_fd_compare(f"loss.{kind}", analytic, x, loss_fn)]


def _battery(seed, corrupt=None):
    """One full pass over every layer type at small shapes."""
    rng = np.random.default_rng(seed)
    results = []

    conv = nn.Conv1d(3, 4, 3, padding=1, rng=rng)
    results += check_layer(conv, rng.standard_normal((2, 3, 7)), rng, corrupt)

    convs = nn.Conv1d(3, 4, 3, stride=2, padding=1, rng=rng)
    results += check_layer(convs, rng.standard_normal((2, 3, 8)), rng, corrupt)

    bn = nn.BatchNorm1d(3)
    bn.params["gamma"] = rng.uniform(0.5, 1.5, size=3)
    bn.params["beta"] = rng.standard_normal(3)
    results += check_layer(bn, rng.standard_normal((3, 3, 5)), rng, corrupt)

    # Shift entries away from zero so no unit sits on the relu kink.
    relu = nn.ReLU()
    x = rng.standard_normal((2, 3, 6))
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    results += check_layer(relu, x, rng, corrupt)

    lin = nn.Linear(5, 4, rng=rng)
    results += check_layer(lin, rng.standard_normal((3, 5)), rng, corrupt)

    flat = nn.Flatten()
    results += check_layer(flat, rng.standard_normal((2, 3, 4)), rng, corrupt)

    gap = nn.GlobalAvgPool1d()
    results += check_layer(gap, rng.standard_normal((2, 3, 6)), rng, corrupt)

    block = nn.ResidualBlock(3, rng=rng)
    results += check_layer(block, rng.standard_normal((2, 3, 6)), rng, corrupt)

    proj_block = nn.ResidualBlock(2, 4, rng=rng)
    results += check_layer(proj_block, rng.standard_normal((2, 2, 6)), rng, corrupt)

    seq = nn.Sequential(
        nn.Conv1d(2, 3, 3, padding=1, rng=rng),
        nn.BatchNorm1d(3),
        nn.ReLU(),
        nn.Flatten(),
        nn.Linear(3 * 5, 4, rng=rng),
    )
    results += check_layer(seq, rng.standard_normal((2, 2, 5)), rng, corrupt)

    results += check_loss("cross_entropy", rng)
    results += check_loss("mse", rng)
    return results


def run_suite(seeds=DEFAULT_SEEDS, corrupt=None, report=None):
    """Run the battery across ``seeds`` seeds; return (all_passed, results).

    ``report``, when given, is called with each CheckResult as it is
    produced (the CLI uses this for line-by-line output).
    """
    all_results = []
    ok = True
    for seed in range(seeds):
        for res in _battery(seed, corrupt=corrupt):
            res.name = f"seed{seed}:{res.name}"
            all_results.append(res)
            ok = ok and res.passed
            if report is not None:
                report(res)
    return ok, all_results
