"""Command-line front end: dataset synthesis, stack training, metric
evaluation, disturbance application, benchmark sweeps, and the gradient
self-check.

Every command writes a JSON report embedding the tool version, the
effective configuration and its hash, the seed, and sha256 checksums of
the input files. The report's ``generated_at`` field is the only place a
timestamp appears, so rerunning a command with the same flags reproduces
every other output byte for byte.

Flags may also be supplied through a JSON config file (``--config``); a
flag given on the command line wins over the same key in the file. The
``GRIDFPD_MODEL`` environment variable supplies the default model path
for ``evaluate`` and ``benchmark``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import (__version__, data_io, disturbances, gradcheck, hierarchy,
               metrics, training)
from .hierarchy import Resolution

ENV_MODEL = "GRIDFPD_MODEL"

_GENERATORS = {
    "ev": data_io.synth_ev,
    "load": data_io.synth_load,
    "solar": data_io.synth_solar,
    "wind": data_io.synth_wind,
}
# generators lay windows over clock days, so they only cover sub-daily grids
_SYNTH_RESOLUTIONS = ("5min", "10min", "hourly")
_METRIC_ALIASES = {"mmd": "mmd_rbf"}
_BENCHMARK_METRICS = ("fpd", "js", "mmd_rbf")

# disturbance level domains, checked before any data is touched
_ALPHA_DOMAINS = {
    "gaussian_noise": (lambda a: a >= 0, "a variance >= 0"),
    "missing_data": (lambda a: 0 <= a <= 1, "a fraction in [0, 1]"),
    "contamination": (lambda a: 0 <= a <= 1, "a fraction in [0, 1]"),
    "gaussian_smooth": (lambda a: a >= 0, "a standard deviation >= 0"),
    "error_accumulate": (lambda a: a >= 0, "a standard deviation >= 0"),
    "time_shift": (lambda a: float(a) == int(a), "a whole number of steps"),
    "period_offset": (lambda a: a >= 0, "an hour count >= 0"),
    "nighttime_violation": (lambda a: a >= 0, "an hour count >= 0"),
    "moment_matched_fabricate": (lambda a: True, "ignored"),
}


class UsageError(Exception):
    """Bad flags or config; reported with exit code 2 before any work."""


# ---------------------------------------------------------------------------
# report plumbing


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _build_report(command: str, cfg: dict, inputs, body: dict) -> dict:
    doc = {
        "tool": "gridfpd",
        "tool_version": __version__,
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": cfg.get("seed"),
        "input_checksums": {str(p): _sha256(p) for p in inputs},
    }
    doc.update(body)
    # the one and only timestamp field
    doc["generated_at"] = datetime.now(timezone.utc).isoformat()
    return doc


def _write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# flag handling


def _effective(args) -> dict:
    """Merge config-file values under the flags and return the run config.

    A key present in the file fills in only flags the user did not pass;
    unknown keys are rejected so typos never pass silently.
    """
    merged = dict(args.defaults)
    overrides = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        try:
            overrides = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(overrides, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(overrides) - set(merged))
        if unknown:
            raise UsageError(
                f"unknown config key(s) {unknown} for '{args.command}' "
                f"(known: {sorted(merged)})")
    cfg = {}
    for key, default in merged.items():
        value = getattr(args, key)
        if value is None:
            value = overrides.get(key, default)
        cfg[key] = value
        setattr(args, key, value)
    for key in args.required:
        if cfg[key] is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
    return cfg


def _resolution(key: str) -> Resolution:
    try:
        return Resolution.from_key(key)
    except hierarchy.HierarchyError as exc:
        raise UsageError(str(exc))


def _parse_levels(spec: str):
    return tuple(_resolution(part.strip()) for part in spec.split(","))


def _parse_metrics(spec, default):
    if spec is None:
        return tuple(default)
    keys = []
    for raw in spec.split(","):
        name = _METRIC_ALIASES.get(raw.strip(), raw.strip())
        if name not in metrics.METRIC_KEYS:
            raise UsageError(
                f"unknown metric {raw.strip()!r}; choose from "
                f"{', '.join(metrics.METRIC_KEYS)}")
        if name not in keys:
            keys.append(name)
    if not keys:
        raise UsageError("empty metric selection")
    return tuple(keys)


def _check_alpha(kind: str, alpha: float) -> None:
    good, wording = _ALPHA_DOMAINS[kind]
    if not good(alpha):
        raise UsageError(f"{kind} needs {wording}; got {alpha!r}")


def _load_batch(manifest_path):
    """Load one dataset; returns (batch, [files that fed it])."""
    manifest = data_io.load_manifest(manifest_path)
    batch, dropped = data_io.load_csv(manifest)
    if dropped:
        print(f"note: {dropped} row(s) of {manifest['path']} excluded",
              file=sys.stderr)
    return batch, [Path(manifest_path), Path(manifest["path"])]


def _model_path(args) -> str:
    model = args.model if args.model is not None else os.environ.get(ENV_MODEL)
    if not model:
        raise UsageError(
            f"no model given; pass --model or set {ENV_MODEL}")
    return model


def _default_donor(batch, seed: int):
    """Synthesize a contamination donor shaped like ``batch``.

    Uses a different source kind so the donor actually contaminates; only
    day-shaped windows can be synthesized on the fly.
    """
    kind = "wind" if batch.source == "solar" else "solar"
    res = batch.resolution
    if res.per_hour is None or batch.t != res.per_hour * 24:
        raise UsageError(
            "contamination needs --donor for non-daily windows")
    return _GENERATORS[kind](batch.n, resolution=res, seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _effective(args)
    if args.kind not in _GENERATORS:
        raise UsageError(f"unknown kind {args.kind!r}; choose from "
                         f"{', '.join(sorted(_GENERATORS))}")
    if args.resolution not in _SYNTH_RESOLUTIONS:
        raise UsageError(f"unsupported resolution {args.resolution!r}; "
                         f"choose from {', '.join(_SYNTH_RESOLUTIONS)}")
    if int(args.days) < 1:
        raise UsageError("--days must be at least 1")
    out = Path(args.out if args.out is not None else f"{args.kind}.csv")
    cfg["out"] = str(out)
    batch = _GENERATORS[args.kind](int(args.days),
                                   resolution=_resolution(args.resolution),
                                   seed=int(args.seed))
    data_io.save_dataset(batch, out)
    manifest_path = out.with_suffix(".manifest.json")
    doc = _build_report("synth", cfg, [], {
        "outputs": [str(out), str(manifest_path)],
    })
    _write_json(out.with_suffix(".report.json"), doc)
    print(f"wrote {out}: {batch.n} x {batch.t} {batch.resolution.key} windows")
    return 0


def cmd_train(args) -> int:
    cfg = _effective(args)
    levels = _parse_levels(args.levels)
    try:
        train_cfg = training.TrainConfig(
            lr=float(args.lr), batch_size=int(args.batch_size),
            epochs=int(args.epochs), seed=int(args.seed),
            val_fraction=float(args.val_fraction),
            class_count=int(args.class_count))
    except training.TrainingError as exc:
        raise UsageError(str(exc))
    batches, inputs = [], []
    for path in args.data:
        batch, files = _load_batch(path)
        batches.append(batch)
        inputs.extend(files)
    stack = hierarchy.ExtractorStack(
        hierarchy.StackConfig(class_count=int(args.class_count)),
        seed=int(args.seed), levels=levels)
    histories = training.train_stack(stack, batches, train_cfg, echo=True)
    training.finalize(stack)
    out = Path(args.out)
    data_io.save_stack(stack, out)
    history_path = Path(args.history) if args.history is not None \
        else out.with_suffix(".history.csv")
    with open(history_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level,epoch,mse,ce,accuracy\n")
        for level in levels:
            for rec in histories[level.key]:
                fh.write(f"{level.key},{rec['epoch']},{rec['mse']:.17g},"
                         f"{rec['ce']:.17g},{rec['accuracy']:.17g}\n")
    doc = _build_report("train", cfg, inputs, {
        "outputs": [str(out), str(history_path)],
        "model_version": stack.version,
    })
    _write_json(out.with_suffix(".report.json"), doc)
    print(f"saved {out} (version {stack.version})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _effective(args)
    cfg["model"] = _model_path(args)
    keys = _parse_metrics(args.metrics, metrics.METRIC_KEYS)
    stack = data_io.load_stack(cfg["model"])
    batch_a, files_a = _load_batch(args.a)
    batch_b, files_b = _load_batch(args.b)
    if args.resample_to is not None:
        to = _resolution(args.resample_to)
        batch_a = data_io.resample(batch_a, to)
        batch_b = data_io.resample(batch_b, to)
    target = _resolution(args.target) if args.target is not None \
        else stack.levels[-1]
    feats_a = hierarchy.extract_hierarchical(stack, batch_a, target).rows
    feats_b = hierarchy.extract_hierarchical(stack, batch_b, target).rows
    report = metrics.evaluate_pair(
        feats_a, feats_b, batch_a.values, batch_b.values,
        seed=int(args.seed), config_hash=_config_hash(cfg),
        datasets=(str(args.a), str(args.b)))
    doc = _build_report("evaluate", cfg,
                        [Path(cfg["model"]), *files_a, *files_b], {
        "metrics": {k: report.values[k] for k in keys},
        "target": target.key,
        "model_version": stack.version,
    })
    if args.out is not None:
        _write_json(args.out, doc)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(doc, indent=2))
    return 0


def _disturb_once(batch, kind, alpha, seed, donor, csv_path):
    aux = donor if kind == "contamination" else None
    dist = disturbances.Disturbance(kind, alpha, seed, aux)
    disturbed = disturbances.apply(batch, dist)
    data_io.save_dataset(disturbed, csv_path)
    manifest_path = Path(csv_path).with_suffix(".manifest.json")
    note = json.loads(manifest_path.read_text(encoding="utf-8"))
    note["disturbance"] = {"kind": kind, "alpha": alpha, "seed": seed}
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(note, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [str(csv_path), str(manifest_path)]


def cmd_disturb(args) -> int:
    cfg = _effective(args)
    single = args.kind is not None or args.alpha is not None
    if single and args.preset is not None:
        raise UsageError("--preset replaces --kind/--alpha; give one or "
                         "the other")
    if not single and args.preset is None:
        raise UsageError("need --kind with --alpha, or --preset")
    if args.preset is not None and args.preset != "fig2":
        raise UsageError(f"unknown preset {args.preset!r}; only 'fig2'")
    if single:
        if args.kind is None or args.alpha is None:
            raise UsageError("--kind and --alpha go together")
        if args.kind not in disturbances.KINDS:
            raise UsageError(f"unknown disturbance {args.kind!r}; choose "
                             f"from {', '.join(disturbances.KINDS)}")
        _check_alpha(args.kind, float(args.alpha))
        plan = [(args.kind, float(args.alpha))]
    else:
        plan = [(kind, alpha) for kind, grid in disturbances.FIG2_GRIDS.items()
                for alpha in grid]

    batch, inputs = _load_batch(args.data)
    seed = int(args.seed)
    donor = None
    if any(kind == "contamination" for kind, _ in plan):
        if args.donor is not None:
            donor, donor_files = _load_batch(args.donor)
            inputs.extend(donor_files)
        else:
            donor = _default_donor(batch, seed)

    out_dir = Path(args.out_dir if args.out_dir is not None else ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for kind, alpha in plan:
        if single and args.out is not None:
            csv_path = Path(args.out)
        else:
            csv_path = out_dir / f"{kind}_a{alpha:g}.csv"
        outputs.extend(_disturb_once(batch, kind, alpha, seed, donor,
                                     csv_path))
    report_path = Path(outputs[0]).with_suffix(".report.json") if single \
        else out_dir / "report.json"
    _write_json(report_path,
                _build_report("disturb", cfg, inputs, {"outputs": outputs}))
    print(f"wrote {len(outputs) // 2} disturbed dataset(s)")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _effective(args)
    cfg["model"] = _model_path(args)
    if args.preset != "fig2":
        raise UsageError(f"unknown preset {args.preset!r}; only 'fig2'")
    keys = _parse_metrics(args.metrics, _BENCHMARK_METRICS)
    stack = data_io.load_stack(cfg["model"])
    batch, inputs = _load_batch(args.data)
    inputs.insert(0, Path(cfg["model"]))
    seed = int(args.seed)
    donor = None
    if args.donor is not None:
        donor, donor_files = _load_batch(args.donor)
        inputs.extend(donor_files)
    else:
        donor = _default_donor(batch, seed)
    target = _resolution(args.target) if args.target is not None \
        else stack.levels[-1]

    out_dir = Path(args.out_dir)
    parts_dir = out_dir / "parts"
    parts_dir.mkdir(parents=True, exist_ok=True)
    base = hierarchy.extract_hierarchical(stack, batch, target).rows

    rows, failure = [], None
    for kind, grid in disturbances.FIG2_GRIDS.items():
        for alpha in grid:
            tag = f"{kind}_a{alpha:g}"
            try:
                aux = donor if kind == "contamination" else None
                disturbed = disturbances.apply(
                    batch, disturbances.Disturbance(kind, alpha, seed, aux))
                feats = hierarchy.extract_hierarchical(
                    stack, disturbed, target).rows
                pair = metrics.evaluate_pair(
                    base, feats, batch.values, disturbed.values, seed=seed,
                    config_hash=_config_hash(cfg),
                    datasets=(str(args.data), tag))
                values = {k: pair.values[k] for k in keys}
            except Exception as exc:  # abort, but keep what already ran
                failure = {"disturbance": kind, "alpha": alpha,
                           "error": str(exc)}
                break
            _write_json(parts_dir / f"{tag}.json", {
                "disturbance": kind, "alpha": alpha, "seed": seed,
                "metrics": values,
            })
            rows.extend((kind, alpha, key, value, seed)
                        for key, value in values.items())
        if failure is not None:
            break

    rows.sort(key=lambda r: (r[0], r[1], metrics.METRIC_KEYS.index(r[2])))
    table_path = out_dir / "table.csv"
    with open(table_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("disturbance,alpha,metric,value,seed\n")
        for kind, alpha, key, value, row_seed in rows:
            fh.write(f"{kind},{alpha:.17g},{key},{value:.17g},{row_seed}\n")
    doc = _build_report("benchmark", cfg, inputs, {
        "status": "failed" if failure else "ok",
        "failure": failure,
        "row_count": len(rows),
        "target": target.key,
        "model_version": stack.version,
        "outputs": [str(table_path), str(parts_dir)],
    })
    _write_json(out_dir / "report.json", doc)
    if failure is not None:
        print(f"error: {failure['disturbance']} a={failure['alpha']}: "
              f"{failure['error']} (partial table kept)", file=sys.stderr)
        return 1
    print(f"wrote {table_path}: {len(rows)} rows")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _effective(args)
    if int(args.seeds) < 1:
        raise UsageError("--seeds must be at least 1")
    failures = []

    def watch(res):
        if not res.passed:
            failures.append(res)
            print(f"FAIL {res.name} max_rel_err={res.max_rel_err:.3e}")

    ok, results = gradcheck.run_suite(seeds=int(args.seeds),
                                      corrupt=args.corrupt_param,
                                      report=watch)
    worst = max(results, key=lambda r: r.max_rel_err)
    print(f"gradcheck: {sum(r.passed for r in results)}/{len(results)} "
          f"checks passed; worst {worst.name} "
          f"max_rel_err={worst.max_rel_err:.3e}")
    if args.report is not None:
        doc = _build_report("gradcheck", cfg, [], {
            "seed": int(args.seeds),
            "passed": ok,
            "checks": [{"name": r.name, "max_rel_err": r.max_rel_err,
                        "passed": r.passed, "skipped": r.skipped,
                        "total": r.total} for r in results],
        })
        _write_json(args.report, doc)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON",
                        help="JSON file of flag values; explicit flags win")
    return common


def _register(sub, name, func, help_text, defaults, required=()):
    parser = sub.add_parser(name, help=help_text, parents=[_common()])
    parser.set_defaults(func=func, defaults=defaults, required=required,
                        command=name)
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridfpd",
        description="Scenario-distance toolkit for power-grid time series")
    parser.add_argument("--version", action="version",
                        version=f"gridfpd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = _register(sub, "synth", cmd_synth, "generate a synthetic dataset", {
        "kind": None, "days": 30, "resolution": "5min", "seed": 0,
        "out": None,
    }, required=("kind",))
    p.add_argument("--kind", choices=sorted(_GENERATORS))
    p.add_argument("--days", type=int)
    p.add_argument("--resolution", choices=_SYNTH_RESOLUTIONS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="CSV path (default <kind>.csv)")

    p = _register(sub, "train", cmd_train,
                  "train and save an extractor stack", {
        "data": None, "levels": "hourly,daily", "epochs": 20, "lr": 1e-3,
        "batch_size": 64, "val_fraction": 0.1, "class_count": 4, "seed": 0,
        "out": "stack.gfpd", "history": None,
    }, required=("data",))
    p.add_argument("--data", nargs="+", metavar="MANIFEST")
    p.add_argument("--levels", help="comma list, bottom first")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--class-count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="model artifact path")
    p.add_argument("--history", help="loss-history CSV path")

    p = _register(sub, "evaluate", cmd_evaluate,
                  "compare two datasets through a trained stack", {
        "model": None, "a": None, "b": None, "metrics": None,
        "target": None, "resample_to": None, "seed": 0, "out": None,
    }, required=("a", "b"))
    p.add_argument("--model", help=f"stack artifact (default ${ENV_MODEL})")
    p.add_argument("--a", metavar="MANIFEST")
    p.add_argument("--b", metavar="MANIFEST")
    p.add_argument("--metrics", help="comma list (default: all)")
    p.add_argument("--target", help="duration level (default: stack top)")
    p.add_argument("--resample-to",
                   help="upsample both datasets before extraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path (default: stdout)")

    p = _register(sub, "disturb", cmd_disturb,
                  "write disturbed copies of a dataset", {
        "data": None, "kind": None, "alpha": None, "preset": None,
        "seed": 0, "donor": None, "out": None, "out_dir": None,
    }, required=("data",))
    p.add_argument("--data", metavar="MANIFEST")
    p.add_argument("--kind", choices=disturbances.KINDS)
    p.add_argument("--alpha", type=float, help="disturbance level")
    p.add_argument("--preset", choices=("fig2",),
                   help="sweep the standard six-kind level grid")
    p.add_argument("--seed", type=int)
    p.add_argument("--donor", metavar="MANIFEST",
                   help="contamination source dataset")
    p.add_argument("--out", help="output CSV (single disturbance)")
    p.add_argument("--out-dir", help="output directory (default: .)")

    p = _register(sub, "benchmark", cmd_benchmark,
                  "disturbance-sweep metric table for one dataset", {
        "model": None, "data": None, "preset": "fig2", "metrics": None,
        "target": None, "seed": 0, "donor": None, "out_dir": "benchmark",
    }, required=("data",))
    p.add_argument("--model", help=f"stack artifact (default ${ENV_MODEL})")
    p.add_argument("--data", metavar="MANIFEST")
    p.add_argument("--preset", choices=("fig2",))
    p.add_argument("--metrics",
                   help=f"comma list (default: {','.join(_BENCHMARK_METRICS)})")
    p.add_argument("--target", help="duration level (default: stack top)")
    p.add_argument("--seed", type=int)
    p.add_argument("--donor", metavar="MANIFEST",
                   help="contamination source dataset")
    p.add_argument("--out-dir")

    p = _register(sub, "gradcheck", cmd_gradcheck,
                  "finite-difference check of every layer's gradients", {
        "seeds": 25, "report": None, "corrupt_param": None,
    })
    p.add_argument("--seeds", type=int, help="number of random repetitions")
    p.add_argument("--report", help="write per-check JSON here")
    p.add_argument("--corrupt-param", metavar="NAME",
                   help="testing hook: corrupt the named parameter gradient")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (data_io.DataIOError, hierarchy.HierarchyError,
            training.TrainingError, ValueError, ArithmeticError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
