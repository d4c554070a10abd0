"""Command-line harness: generate, fit, evaluate, benchmark, predict.

Exit codes are a stable scripting contract: 0 success, 1 runtime
failure, 2 usage or validation error.  Every artifact is accompanied by
the configuration and seeds needed to regenerate it, either embedded
(benchmark reports) or as a ``<out>.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, baselines, datagen, ecm, metrics
from .core import (
    CausalPopError,
    Dataset,
    ValidationError,
    load_csv,
    save_csv,
    train_test_split,
)

log = logging.getLogger("causalpop")

METHODS = ("ecm", "lr1", "lr2", "lrz", "ref")
TABLE_ORDER = ("ref", "lr1", "lr2", "lrz", "ecm")


# ---------------------------------------------------------------------------
# benchmark specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkSpec:
    """Everything one multi-trial comparison run needs."""

    methods: tuple[str, ...]
    trials: int
    synthetic: datagen.SyntheticConfig | None
    data_path: str | None
    train_frac: float
    base_seed: int
    alpha: float
    l2: float
    ecm_options: dict
    report_path: str
    table_path: str | None

    def __post_init__(self):
        if not self.methods:
            raise ValidationError("at least one method required")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValidationError(f"unknown methods: {sorted(unknown)}")
        if self.trials < 1:
            raise ValidationError("trials must be >= 1")
        if not 0.0 < self.train_frac < 1.0:
            raise ValidationError("train_frac must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha must lie in (0, 1)")
        if (self.synthetic is None) == (self.data_path is None):
            raise ValidationError("specify exactly one data source: 'synthetic' or 'path'")


def _load_structured(path: Path) -> dict:
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        with path.open("rb") as fh:
            return tomllib.load(fh)
    return json.loads(path.read_text(encoding="utf-8"))


def load_benchmark_spec(path: str | Path) -> BenchmarkSpec:
    path = Path(path)
    obj = _load_structured(path)
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: spec must be a table/object")
    data = obj.get("data", {})
    synthetic = None
    if "synthetic" in data:
        synthetic = datagen.config_from_dict(data["synthetic"])
    outputs = obj.get("outputs", {})
    if "report" not in outputs:
        raise ValidationError(f"{path}: outputs.report path is required")
    return BenchmarkSpec(
        methods=tuple(obj.get("methods", list(METHODS))),
        trials=int(obj.get("trials", 20)),
        synthetic=synthetic,
        data_path=data.get("path"),
        train_frac=float(obj.get("train_frac", 0.7)),
        base_seed=int(obj.get("base_seed", 0)),
        alpha=float(obj.get("alpha", 0.05)),
        l2=float(obj.get("l2", baselines.DEFAULT_L2)),
        ecm_options=dict(obj.get("ecm", {})),
        report_path=outputs["report"],
        table_path=outputs.get("table"),
    )


def spec_to_dict(spec: BenchmarkSpec) -> dict:
    return {
        "methods": list(spec.methods),
        "trials": spec.trials,
        "data": (
            {"synthetic": datagen.config_to_dict(spec.synthetic)}
            if spec.synthetic is not None
            else {"path": spec.data_path}
        ),
        "train_frac": spec.train_frac,
        "base_seed": spec.base_seed,
        "alpha": spec.alpha,
        "l2": spec.l2,
        "ecm": spec.ecm_options,
        "outputs": {"report": spec.report_path, "table": spec.table_path},
    }


def _ecm_config(spec: BenchmarkSpec, seed: int) -> ecm.EcmConfig:
    opts = dict(spec.ecm_options)
    opts.setdefault("seed", seed)
    opts["seed"] = int(opts["seed"])
    return ecm.EcmConfig(**opts)


def _trial_scores(method: str, train: Dataset, test: Dataset,
                  spec: BenchmarkSpec, seed: int) -> np.ndarray:
    if method == "ecm":
        model, _, _ = ecm.fit(train, _ecm_config(spec, seed))
        return np.asarray(ecm.estimate_ite(test.x, model))
    if method == "ref":
        if test.oracle is None:
            raise ValidationError("method 'ref' needs oracle columns in the data")
        return test.oracle.tau
    bm = baselines.fit_baseline(train, method, spec.l2)
    return np.asarray(baselines.baseline_ite(bm, test.x))


def run_benchmark(spec: BenchmarkSpec) -> dict:
    """Run all trials and assemble the report dictionary.

    Per-trial failures are recorded and skipped; the summary statistics
    and significance tests use the surviving trials.
    """
    t_start = time.perf_counter()
    file_data = None
    if spec.data_path is not None:
        file_data = load_csv(spec.data_path)

    seeds = [spec.base_seed + i for i in range(spec.trials)]
    values = {m: {"auuc": {}, "pehe": {}} for m in spec.methods}
    failures = {m: {} for m in spec.methods}

    for i, seed in enumerate(seeds):
        if spec.synthetic is not None:
            data = datagen.generate(datagen.with_seed(spec.synthetic, seed))
        else:
            data = file_data
        train, test = train_test_split(data, spec.train_frac, seed)
        for m in spec.methods:
            try:
                scores = _trial_scores(m, train, test, spec, seed)
                values[m]["auuc"][i] = metrics.auuc(scores, test.t, test.y)
                if test.oracle is not None:
                    values[m]["pehe"][i] = metrics.pehe(test.oracle.tau, scores)
            except CausalPopError as exc:
                log.warning("trial %d method %s failed: %s", i, m, exc)
                failures[m][i] = str(exc)
        log.info("trial %d/%d done", i + 1, spec.trials)

    def summarize(vals: list[float]) -> tuple[float, float]:
        if not vals:
            return float("nan"), float("nan")
        mean = float(np.mean(vals))
        std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else 0.0
        return mean, std

    methods_report = {}
    for m in spec.methods:
        auucs = [values[m]["auuc"][i] for i in sorted(values[m]["auuc"])]
        pehes = [values[m]["pehe"][i] for i in sorted(values[m]["pehe"])]
        auuc_mean, auuc_std = summarize(auucs)
        entry = {
            "auuc": auucs,
            "auuc_mean": auuc_mean,
            "auuc_std": auuc_std,
            "failures": {str(k): v for k, v in failures[m].items()},
        }
        if pehes:
            pehe_mean, pehe_std = summarize(pehes)
            entry["pehe"] = pehes
            entry["pehe_mean"] = pehe_mean
            entry["pehe_std"] = pehe_std
        methods_report[m] = entry

    wilcoxon = {}
    if "ecm" in spec.methods:
        for m in spec.methods:
            if m == "ecm":
                continue
            wilcoxon[m] = {}
            for metric in ("pehe", "auuc"):
                shared = sorted(set(values["ecm"][metric]) & set(values[m][metric]))
                if len(shared) < 2:
                    continue
                aa = np.array([values["ecm"][metric][i] for i in shared])
                bb = np.array([values[m][metric][i] for i in shared])
                stat, p, sig = metrics.wilcoxon_signed_rank(aa, bb, spec.alpha)
                wilcoxon[m][metric] = {"statistic": stat, "p": p, "significant": sig}

    report = {
        "package_version": __version__,
        "spec": spec_to_dict(spec),
        "seeds": seeds,
        "methods": methods_report,
        "wilcoxon_vs_ecm": wilcoxon,
        "notes": [
            "pehe requires oracle effect columns and is omitted otherwise",
            "lrz effect estimates assume balanced arms; its pehe is reported "
            "for completeness but is not calibrated to the effect scale",
        ],
        "timing": {"total_seconds": time.perf_counter() - t_start},
    }
    return report


def format_table(report: dict) -> str:
    """Fixed-width methods-by-metrics table with significance stars."""
    methods = report["methods"]
    alpha = report["spec"]["alpha"]
    rows = []
    for m in TABLE_ORDER:
        if m not in methods:
            continue
        e = methods[m]
        star = {"pehe": " ", "auuc": " "}
        for metric in star:
            w = report["wilcoxon_vs_ecm"].get(m, {}).get(metric)
            if w and w["significant"]:
                star[metric] = "*"
        if "pehe_mean" in e:
            pehe_txt = f"{e['pehe_mean']:.4f} +/- {e['pehe_std']:.4f} {star['pehe']}"
        else:
            pehe_txt = "."
        auuc_txt = f"{e['auuc_mean']:.2f} +/- {e['auuc_std']:.2f} {star['auuc']}"
        rows.append((m, pehe_txt, auuc_txt))
    w0 = max(6, *(len(r[0]) for r in rows))
    w1 = max(10, *(len(r[1]) for r in rows))
    lines = [f"{'method':<{w0}}  {'PEHE':<{w1}}  AUUC",
             "-" * (w0 + w1 + 24)]
    for name, pehe_txt, auuc_txt in rows:
        lines.append(f"{name:<{w0}}  {pehe_txt:<{w1}}  {auuc_txt}")
    lines.append(f"* significantly different from ecm (Wilcoxon, alpha={alpha:g})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _sidecar(path: str | Path, payload: dict) -> None:
    meta = {"package_version": __version__, **payload}
    _write_json(meta, str(path) + ".meta.json")


def cmd_generate(args) -> int:
    cfg = datagen.load_config(args.config)
    if args.seed is not None:
        cfg = datagen.with_seed(cfg, args.seed)
    data = datagen.generate(cfg)
    save_csv(data, args.out)
    _sidecar(args.out, {"command": "generate", "config": datagen.config_to_dict(cfg)})
    log.info("wrote %d rows to %s", data.n, args.out)
    return 0


def _load_dataset(path: str) -> Dataset:
    if not Path(path).exists():
        raise ValidationError(f"dataset file not found: {path}")
    return load_csv(path)


def cmd_fit(args) -> int:
    data = _load_dataset(args.data)
    options: dict = {"method": args.method, "data": args.data}
    if args.method == "ecm":
        cfg = ecm.EcmConfig(
            max_iters=args.max_iters,
            tol=args.tol,
            cov_reg=args.cov_reg,
            min_pi=args.min_pi,
            ite_mode=args.ite_mode,
            seed=args.seed if args.seed is not None else 0,
        )
        model, _, trace = ecm.fit(data, cfg)
        ecm.save_model(model, args.out)
        trace_path = args.trace_out or str(Path(args.out).with_suffix("")) + ".trace.csv"
        ecm.save_trace_csv(trace, trace_path)
        options["ecm"] = {
            "max_iters": cfg.max_iters, "tol": cfg.tol, "cov_reg": cfg.cov_reg,
            "min_pi": cfg.min_pi, "ite_mode": cfg.ite_mode.value, "seed": cfg.seed,
        }
        log.info("ecm fit: %d iterations, elbo=%.6f, converged=%s",
                 model.meta.iters, model.meta.elbo, model.meta.converged)
    else:
        bm = baselines.fit_baseline(data, args.method, args.l2)
        baselines.save_baseline(bm, args.out)
        options["l2"] = args.l2
        log.info("%s fit on %d rows", args.method, data.n)
    _sidecar(args.out, {"command": "fit", "options": options})
    return 0


def _load_any_model(path: str):
    if not Path(path).exists():
        raise ValidationError(f"model file not found: {path}")
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    kind = obj.get("kind")
    if kind == "ecm":
        return ecm.model_from_dict(obj)
    if kind in set(k.value for k in baselines.BaselineKind):
        return baselines.baseline_from_dict(obj)
    raise ValidationError(f"{path}: unknown model kind {kind!r}")


def _model_scores(model, data: Dataset) -> np.ndarray:
    if isinstance(model, baselines.BaselineModel):
        return np.asarray(baselines.baseline_ite(model, data.x))
    return np.asarray(ecm.estimate_ite(data.x, model))


def cmd_evaluate(args) -> int:
    data = _load_dataset(args.data)
    model = _load_any_model(args.model)
    scores = _model_scores(model, data)
    curve = metrics.uplift_curve(scores, data.t, data.y)
    result = {
        "package_version": __version__,
        "data": args.data,
        "model": args.model,
        "model_kind": "ecm" if not isinstance(model, baselines.BaselineModel) else model.kind.value,
        "n": data.n,
        "d": data.d,
        "auuc": curve.auuc,
    }
    if data.oracle is not None:
        result["pehe"] = metrics.pehe(data.oracle.tau, scores)
        if not isinstance(model, baselines.BaselineModel):
            predicted = ecm.predict_counterfactuals(data, model)
            actual = np.where(data.t == 1, data.oracle.y0, data.oracle.y1)
            result["counterfactual_accuracy"] = float((predicted == actual).mean())
    if args.curve_out:
        metrics.save_uplift_csv(curve, args.curve_out)
        result["curve_csv"] = args.curve_out
    _write_json(result, args.report)
    log.info("auuc=%.4f%s", curve.auuc,
             f", pehe={result['pehe']:.4f}" if "pehe" in result else "")
    return 0


def cmd_benchmark(args) -> int:
    spec = load_benchmark_spec(args.spec)
    if args.seed is not None:
        spec = BenchmarkSpec(**{**spec.__dict__, "base_seed": args.seed})
    report = run_benchmark(spec)
    _write_json(report, spec.report_path)
    table = format_table(report)
    if spec.table_path:
        Path(spec.table_path).write_text(table + "\n", encoding="utf-8")
    if not args.quiet:
        print(table)
    log.info("report written to %s", spec.report_path)
    return 0


def cmd_predict(args) -> int:
    data = _load_dataset(args.data)
    model = _load_any_model(args.model)
    scores = _model_scores(model, data)
    is_ecm = not isinstance(model, baselines.BaselineModel)
    lines = ["row,ite,y_counterfactual" if is_ecm else "row,ite"]
    cf = ecm.predict_counterfactuals(data, model) if is_ecm else None
    for i in range(data.n):
        if is_ecm:
            lines.append(f"{i},{format(scores[i], '.17g')},{int(cf[i])}")
        else:
            lines.append(f"{i},{format(scores[i], '.17g')}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    _sidecar(args.out, {"command": "predict", "data": args.data, "model": args.model})
    log.info("wrote predictions for %d rows to %s", data.n, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(),
                           "logger": record.name,
                           "msg": record.getMessage()})


def _setup_logging(args) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if args.json_logs:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("causalpop")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="causalpop",
        description="Causal-population mixture fitting, baselines, and benchmarks",
    )
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed from configs/specs")
    p.add_argument("--quiet", action="store_true", help="suppress informational output")
    p.add_argument("--json-logs", action="store_true", help="emit logs as JSON lines")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic dataset from a config file")
    g.add_argument("--config", required=True, help="generator config (.json or .toml)")
    g.add_argument("--out", required=True, help="output dataset CSV")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a model on a dataset CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--method", required=True, choices=["ecm", "lr1", "lr2", "lrz"])
    f.add_argument("--out", required=True, help="output model JSON")
    f.add_argument("--trace-out", help="fit-trace CSV path (ecm only)")
    f.add_argument("--max-iters", type=int, default=200)
    f.add_argument("--tol", type=float, default=1e-6)
    f.add_argument("--cov-reg", type=float, default=1e-6)
    f.add_argument("--min-pi", type=float, default=1e-8)
    f.add_argument("--ite-mode", choices=[m.value for m in ecm.IteMode],
                   default=ecm.IteMode.MODEL_CONSISTENT.value)
    f.add_argument("--l2", type=float, default=baselines.DEFAULT_L2,
                   help="ridge strength for the logistic baselines")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="score a model on a dataset and write a report")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--report", required=True, help="output report JSON")
    e.add_argument("--curve-out", help="also export the uplift curve CSV")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", help="run a multi-trial comparison from a spec file")
    b.add_argument("--spec", required=True, help="benchmark spec (.json or .toml)")
    b.set_defaults(func=cmd_benchmark)

    pr = sub.add_parser("predict", help="per-row effect and counterfactual predictions")
    pr.add_argument("--data", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", required=True, help="output CSV")
    pr.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    _setup_logging(args)
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 2
    except CausalPopError as exc:
        log.error("%s", exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
