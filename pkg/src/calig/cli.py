"""Command line: train, explain, benchmark, render, profile.

Exit codes: 0 success, 2 usage (bad flags or paths), 3 I/O or data format,
4 numeric divergence, 5 a benchmark acceptance check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from calig import __version__
from calig.attribution.baselines import METHODS, score_tokens
from calig.attribution.io import result_to_dict
from calig.attribution.pipeline import AttributionConfig, AttributionConfigError, explain
from calig.data import DatasetError, RationaleExample, read_jsonl, write_jsonl
from calig.encoder.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from calig.encoder.model import ConfigError, EncoderConfig, InputError, forward
from calig.encoder.train import TrainHyperparams, TrainingDivergence, train_synthetic
from calig.evaluation.benchmark import RANDOM, BenchmarkConfig, run_benchmark
from calig.evaluation.protocol import (
    DEFAULT_METHODS,
    ProtocolConfig,
    aggregate,
    directional_checks,
    run_seed,
)
from calig.evaluation.synthetic import SyntheticConfig, generate_synthetic, split
from calig.render import attribution_caption, render_heatmap

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4
EXIT_ACCEPTANCE = 5

logger = logging.getLogger("calig")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    output_dir: str
    model_path: Optional[str] = None
    dataset_path: Optional[str] = None
    attribution: AttributionConfig = AttributionConfig()
    seed: int = 0
    num_repeats: int = 10
    methods: tuple = ()
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attribution"] = self.attribution.to_dict()
        d["methods"] = list(self.methods)
        d["version"] = __version__
        return d


# --- helpers ------------------------------------------------------------------


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _existing_file(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required for this command")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} path {path!r} does not exist or is not a file")
    return p


def _parse_range(text: Optional[str]) -> Optional[tuple]:
    if text is None:
        return None
    try:
        start, stop = (int(part) for part in text.split(":"))
    except ValueError:
        raise UsageError(f"--layers expects START:STOP (half-open block range), got {text!r}") from None
    return (start, stop)


def _parse_int_list(text: str, flag: str) -> tuple:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from None
    if not values:
        raise UsageError(f"{flag} must not be empty")
    return values


def _run_config(args, methods=()) -> RunConfig:
    attribution = AttributionConfig(
        target_class=args.target_class,
        steps=args.steps,
        lam=args.lam,
        normalization=args.norm,
        rollout_range=_parse_range(args.layers),
    )
    options = {k: v for k, v in sorted(vars(args).items()) if k not in _SHARED and not callable(v)}
    return RunConfig(
        command=args.command,
        output_dir=args.out,
        model_path=args.model,
        dataset_path=args.data,
        attribution=attribution,
        seed=args.seed,
        num_repeats=args.repeats,
        methods=tuple(methods),
        options=options,
    )


_SHARED = {"command", "out", "model", "data", "steps", "lam", "norm", "layers", "target_class", "seed", "repeats", "method", "handler"}


# --- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.data is not None:
        train = read_jsonl(_existing_file(args.data, "data"))
        heldout = read_jsonl(_existing_file(args.heldout, "heldout")) if args.heldout else None
    else:
        data = generate_synthetic(SyntheticConfig(n_examples=args.n_examples, seq_len=args.seq_len, seed=args.seed))
        train, heldout = split(data, args.n_train)
        write_jsonl(train, out / "train.jsonl")
        write_jsonl(heldout, out / "test.jsonl")
    rc = _run_config(args)
    width = max(len(ex.token_ids) for ex in train)
    config = EncoderConfig(max_seq_len=max(width, 2), num_layers=args.num_layers)
    hp = TrainHyperparams(epochs=args.epochs, seed=args.seed)
    result = train_synthetic(config, train, hp, heldout=heldout)
    meta = {"run_config": rc.to_dict(), "seed": args.seed, "train_accuracy": result.train_accuracy, "heldout_accuracy": result.heldout_accuracy}
    save_checkpoint(result.model, out / "model.ckpt", metadata=meta)
    _write_json(
        out / "train_log.json",
        {**meta, "hyperparams": hp.to_dict(), "encoder": config.to_dict(), "loss_history": result.loss_history},
    )
    print(f"train accuracy {result.train_accuracy:.4f}")
    if result.heldout_accuracy is not None:
        print(f"held-out accuracy {result.heldout_accuracy:.4f}")
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return EXIT_OK


def _examples_for_explain(args) -> list[RationaleExample]:
    if args.tokens is not None:
        ids = _parse_int_list(args.tokens, "--tokens")
        return [RationaleExample(id="input", token_ids=ids, label=0)]
    examples = read_jsonl(_existing_file(args.data, "data"))
    return examples[: args.limit] if args.limit is not None else examples


def cmd_explain(args) -> int:
    model_path = _existing_file(args.model, "model")
    if args.tokens is None:
        _existing_file(args.data, "data")
    model = load_checkpoint(model_path)
    if args.method and len(args.method) > 1:
        raise UsageError("explain takes a single --method")
    method = args.method[0] if args.method else "calig"
    rc = _run_config(args, methods=(method,))
    cfg = rc.attribution.validate(model)
    out = Path(args.out)
    for ex in _examples_for_explain(args):
        trace = forward(model, ex.token_ids)
        extra = {"run_config": rc.to_dict(), "seed": args.seed, "example_id": ex.id, "method": method}
        if method in ("calig", "caig_last"):
            if method == "caig_last":
                L = model.config.num_layers
                cfg_m = replace(cfg, rollout_range=(L - 1, L))
            else:
                cfg_m = cfg
            result = explain(model, ex.token_ids, cfg_m, trace=trace)
            doc = result_to_dict(result, include_fused=args.include_fused, extra=extra)
        else:
            c = trace.predicted_class if cfg.target_class is None else cfg.target_class
            scores = score_tokens(method, model, trace.token_ids, c, cfg, trace=trace)
            special = (trace.token_ids == model.config.cls_token_id) | (trace.token_ids == model.config.pad_token_id)
            doc = {
                "format": "calig.scores/1",
                "model_fingerprint": model.fingerprint(),
                "config": cfg.to_dict(),
                "target_class": int(c),
                "token_ids": [int(t) for t in trace.token_ids],
                "special_positions": [int(i) for i in special.nonzero()[0]],
                "logits": trace.logits.tolist(),
                "token_scores": scores.tolist(),
                **extra,
            }
        stem = _safe_name(ex.id)
        _write_json(out / f"{stem}.json", doc)
        _write_text(out / f"{stem}.html", _heatmap_from_doc(doc))
        print(f"{ex.id}: class {doc['target_class']}, wrote {out / (stem + '.json')} and .html")
    return EXIT_OK


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name) or "example"


def _heatmap_from_doc(doc: dict) -> str:
    special = set(doc.get("special_positions", []))
    n = len(doc["token_scores"])
    caption = f"method={doc.get('method', 'calig')} class={doc['target_class']} " + attribution_caption(doc.get("config", {}))
    return render_heatmap(
        doc["token_scores"],
        tokens=doc.get("token_ids"),
        caption=caption,
        special=[i in special for i in range(n)],
        title=f"Token attribution: {doc.get('example_id', '')}".rstrip(": "),
        meta={"run_config": doc.get("run_config"), "seed": doc.get("seed"), "model_fingerprint": doc.get("model_fingerprint")},
    )


def cmd_render(args) -> int:
    path = _existing_file(args.input, "input")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path}: not valid JSON ({err})") from None
    if "token_scores" not in doc or "target_class" not in doc:
        raise DatasetError(f"{path}: not an attribution document")
    target = Path(args.out) / (path.stem + ".html")
    _write_text(target, _heatmap_from_doc(doc))
    print(f"wrote {target}")
    return EXIT_OK


def _benchmark_methods(args) -> tuple:
    if not args.method:
        return DEFAULT_METHODS
    methods = tuple(dict.fromkeys(args.method))
    return methods if RANDOM in methods else methods + (RANDOM,)


def _write_report(report, directory: Path, extra: dict) -> None:
    # Wall times go to their own file so report.json stays bitwise reproducible.
    doc = report.to_dict()
    runtime = doc.pop("runtime")
    _write_json(directory / "report.json", {**doc, **extra})
    _write_json(directory / "runtime.json", {"seconds_per_method": runtime, **extra})
    _write_text(directory / "report.csv", report.to_csv())


def _aggregate_csv(agg: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "method", "metric", "p_or_mode", "mean", "std", "n"])
    for r in agg["per_seed"]:
        writer.writerow([r["seed"], r["method"], r["metric"], r["key"], repr(r["mean"]), repr(r["std"]), r["n"]])
    for r in agg["rows"]:
        writer.writerow(["all", r["method"], r["metric"], r["key"], repr(r["mean"]), repr(r["std"]), r["n"]])
    return buf.getvalue()


def cmd_benchmark(args) -> int:
    methods = _benchmark_methods(args)
    rc = _run_config(args, methods=methods)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    if not metrics or set(metrics) - {"f1", "auc"}:
        raise UsageError(f"--metrics must list f1 and/or auc, got {args.metrics!r}")
    bench = BenchmarkConfig(attribution=rc.attribution, seed=args.seed, metrics=metrics)
    out = Path(args.out)
    stamp = {"run_config": rc.to_dict(), "seed": args.seed}

    if args.model is not None:
        model = load_checkpoint(_existing_file(args.model, "model"))
        dataset = read_jsonl(_existing_file(args.data, "data"))
        if args.limit is not None:
            dataset = dataset[: args.limit]
        rc.attribution.validate(model)
        report = run_benchmark(model, dataset, methods, bench)
        _write_report(report, out, stamp)
        checks = directional_checks(
            {"rows": report.rows, "accuracy": [], "per_seed": [], "failures": report.failures}
        )
    else:
        if args.data is not None:
            raise UsageError("--data without --model is ambiguous; the repeated protocol generates its own data")
        seeds = tuple(range(args.seed, args.seed + args.repeats))
        protocol = ProtocolConfig(
            seeds=seeds,
            train=TrainHyperparams(epochs=args.epochs),
            eval_limit=args.limit,
            benchmark=bench,
            methods=methods,
        )
        runs = []
        for seed in seeds:
            run = run_seed(protocol, seed)
            _write_report(run.report, out / f"seed_{seed}", {**stamp, "seed": seed, "heldout_accuracy": run.heldout_accuracy})
            print(f"seed {seed}: held-out accuracy {run.heldout_accuracy:.4f}, {len(run.report.failures)} failures")
            runs.append(run)
        agg = aggregate(runs)
        checks = directional_checks(agg, protocol.min_accuracy)
        _write_json(out / "aggregate.json", {**agg, **stamp, "protocol": protocol.to_dict(), "checks": [asdict(c) for c in checks]})
        _write_text(out / "aggregate.csv", _aggregate_csv(agg))
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ACCEPTANCE


def cmd_profile(args) -> int:
    from calig.evaluation.profiling import fit_report, profile_grid

    layer_grid = _parse_int_list(args.layers_grid, "--layers-grid")
    step_grid = _parse_int_list(args.steps_grid, "--steps-grid")
    rc = _run_config(args)
    rows = profile_grid(
        layer_grid=layer_grid,
        step_grid=step_grid,
        fixed_layers=layer_grid[0],
        fixed_steps=rc.attribution.steps,
        seed=args.seed,
        repeats=args.timing_repeats,
        attribution=replace(rc.attribution, rollout_range=None),
    )
    out = Path(args.out)
    lines = ["num_layers,steps,method,seconds"] + [f"{r.num_layers},{r.steps},{r.method},{r.seconds!r}" for r in rows]
    _write_text(out / "profile.csv", "\n".join(lines) + "\n")
    fits = fit_report(rows, fixed_layers=layer_grid[0], fixed_steps=rc.attribution.steps)
    _write_json(out / "profile_fit.json", {**fits, "run_config": rc.to_dict(), "seed": args.seed})
    print(f"time vs layers: R^2 = {fits['vs_layers']['r2']:.4f}")
    print(f"time vs steps:  R^2 = {fits['vs_steps']['r2']:.4f}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("--model", help="checkpoint path")
    common.add_argument("--data", help="JSONL dataset path")
    common.add_argument("--steps", type=int, default=50, help="IG interpolation steps m")
    common.add_argument("--lambda", dest="lam", type=float, default=1.0, help="fusion weight in [0, 1]")
    common.add_argument("--norm", choices=("symmetric_minmax", "l1"), default="symmetric_minmax")
    common.add_argument("--layers", help="half-open rollout block range START:STOP (default all blocks)")
    common.add_argument("--class", dest="target_class", type=int, help="target class (default: predicted)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--repeats", type=int, default=10, help="number of seeds for the repeated benchmark")
    common.add_argument("--method", action="append", choices=sorted(METHODS), help="attribution method (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="calig", description="Context-aware layer-wise integrated gradients.")
    parser.add_argument("--version", action="version", version=f"calig {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train an encoder (synthetic task unless --data)")
    p.add_argument("--heldout", help="JSONL held-out set used with --data")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--n-examples", type=int, default=2500)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--seq-len", type=int, default=32)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("explain", parents=[common], help="attribute inputs and write JSON plus HTML heatmaps")
    p.add_argument("--tokens", help="comma-separated token ids instead of --data")
    p.add_argument("--limit", type=int, help="explain only the first N examples")
    p.add_argument("--include-fused", action="store_true", help="store per-block fused matrices")
    p.set_defaults(handler=cmd_explain)

    p = sub.add_parser("benchmark", parents=[common], help="token-F1 and perturbation AUC reports")
    p.add_argument("--metrics", default="f1,auc", help="comma-separated subset of f1,auc")
    p.add_argument("--limit", type=int, help="evaluate only the first N held-out examples per seed")
    p.add_argument("--epochs", type=int, default=3)
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("render", parents=[common], help="heatmap from an attribution JSON document")
    p.add_argument("input", help="attribution JSON written by explain")
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser("profile", parents=[common], help="timing of CA-LIG over depth and steps")
    p.add_argument("--layers-grid", default="2,4,6,8")
    p.add_argument("--steps-grid", default="25,50,100")
    p.add_argument("--timing-repeats", type=int, default=3)
    p.set_defaults(handler=cmd_profile)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.steps < 1 or not 0.0 <= args.lam <= 1.0 or args.repeats < 1:
            raise UsageError("--steps and --repeats must be positive and --lambda must lie in [0, 1]")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.handler(args)
    except UsageError as err:
        print(f"calig: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (AttributionConfigError, ConfigError, InputError) as err:
        print(f"calig: invalid input: {err}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as err:
        print(f"calig: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, DatasetError, CheckpointError) as err:
        print(f"calig: I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
