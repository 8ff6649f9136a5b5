"""Command-line interface: synth -> debias -> train -> audit -> report.

Exit codes: 0 success, 1 hard error, 2 audit written but with undefined
(missing) metric values.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import scipy

from fairgap import __version__
from fairgap._io import atomic_write_text
from fairgap.corpus import CorpusError, Dataset, Gender, load_jsonl, save_jsonl, split
from fairgap.debias import CfWeight, CompositionOrder, DebiasPlan, Method, apply_plan
from fairgap.metrics import (
    ALL_KINDS,
    DEFAULT_CONFIDENCE_BUCKETS,
    BiasReport,
    ReportOptions,
    bias_report,
    rows_to_csv,
)
from fairgap.model import (
    BowModel,
    TrainConfig,
    Which,
    adjust_gender_weights,
    build_vocab,
    load_model,
    save_model,
    train,
)
from fairgap.perturb import GenderLexicon, detect_gender, load_lexicon, perturb
from fairgap.synth import SynthConfig, generate

log = logging.getLogger("fairgap")

EXIT_OK, EXIT_ERROR, EXIT_MISSING = 0, 1, 2


@dataclass
class RunManifest:
    command: list[str]
    config_digest: str
    seeds: dict[str, int]
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    status: dict[str, Any] = field(default_factory=dict)
    started: float = field(default_factory=time.time)

    def write(self, path: Path) -> None:
        doc = {
            "command": self.command,
            "config_digest": self.config_digest,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "status": self.status,
            "versions": {
                "fairgap": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "wall_time_s": round(time.time() - self.started, 3),
        }
        atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _manifest(args: argparse.Namespace, argv: Sequence[str], config: Any = None) -> RunManifest:
    cfg = config if config is not None else {k: v for k, v in vars(args).items() if k != "func"}
    return RunManifest(["fairgap", *argv], digest(cfg), {"seed": args.seed})


def _manifest_path(args: argparse.Namespace, command: str) -> Path:
    return Path(args.out_dir) / f"{command}.manifest.json"


def _out_path(args: argparse.Namespace, given: str | None, default: str) -> Path:
    return Path(given) if given else Path(args.out_dir) / default


def _classes(value: str | None) -> list[str] | None:
    return [c.strip() for c in value.split(",")] if value else None


def _lexicon(args: argparse.Namespace) -> GenderLexicon:
    return load_lexicon(args.lexicon)


def _class_index(dataset_classes: Sequence[str], value: str | None) -> int | None:
    if value is None:
        return None
    if value in dataset_classes:
        return list(dataset_classes).index(value)
    try:
        idx = int(value)
    except ValueError:
        raise CorpusError(f"unknown class {value!r}; classes are {list(dataset_classes)}") from None
    if not 0 <= idx < len(dataset_classes):
        raise CorpusError(f"class index {idx} out of range")
    return idx


def _buckets(value: str | None):
    if value is None:
        return None
    if value == "default":
        return DEFAULT_CONFIDENCE_BUCKETS
    edges = [float(x) for x in value.split(",")]
    if len(edges) < 2 or edges != sorted(edges):
        raise ValueError("--buckets needs increasing edges, e.g. 0.5,0.85,0.95,1.0")
    return tuple(zip(edges[:-1], edges[1:]))


def _write_report(report: BiasReport, json_path: Path, csv_path: Path, manifest_name: str) -> None:
    doc = report.to_json_dict()
    doc["metadata"]["manifest"] = manifest_name
    atomic_write_text(json_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    atomic_write_text(csv_path, report.to_csv())


def _summary(report: BiasReport, fmt: str) -> str:
    if fmt == "csv":
        return report.to_csv()
    return json.dumps(
        {"rms": {k.value: v for k, v in report.rms.items()}, "accuracy": report.accuracy, "auc": report.auc,
         "missing": len(report.missing())},
        sort_keys=True,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(l2=args.l2, max_iters=args.max_iters, tolerance=args.tolerance, seed=args.seed)


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args, argv) -> int:
    config = SynthConfig.from_json(args.config)
    if args.seed_override is not None:
        config = SynthConfig.from_dict({**config.to_dict(), "seed": args.seed_override})
    out = _out_path(args, args.out, "corpus.jsonl")
    dataset = generate(config)
    save_jsonl(dataset, out)
    m = _manifest(args, argv, config.to_dict())
    m.seeds = {"synth": config.seed}
    m.inputs, m.outputs = [str(args.config)], [str(out)]
    m.write(_manifest_path(args, "synth"))
    print(f"wrote {len(dataset)} documents ({', '.join(dataset.class_names)}) to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_perturb(args, argv) -> int:
    lexicon = _lexicon(args)
    for line_no, line in enumerate(sys.stdin, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"stdin line {line_no}: malformed JSON ({exc.msg})") from None
        text = record["text"]
        if args.target == "flip":
            current = Gender.parse(record.get("gender"))
            if not current.is_binary:
                current = detect_gender(text, lexicon)[0]
            if not current.is_binary:
                sys.stdout.write(json.dumps(record, ensure_ascii=False) + "\n")
                continue
            target = current.opposite
        else:
            target = Gender(args.target)
        record["text"] = perturb(text, target, lexicon)[0]
        record["gender"] = target.value
        sys.stdout.write(json.dumps(record, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_debias(args, argv) -> int:
    dataset = load_jsonl(args.input, _classes(args.classes))
    plan = DebiasPlan(Method(args.method), CompositionOrder(args.order), CfWeight(args.cf_weight), args.seed)
    out = _out_path(args, args.out, f"train.{plan.method.value}.jsonl")
    result = apply_plan(dataset, plan, _lexicon(args))
    save_jsonl(result, out)
    m = _manifest(args, argv)
    m.inputs, m.outputs = [str(args.input)], [str(out)]
    m.write(_manifest_path(args, "debias"))
    print(f"{plan.name}: {len(dataset)} -> {len(result)} documents, wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args, argv) -> int:
    dataset = load_jsonl(args.input, _classes(args.classes))
    vocab = build_vocab(dataset, args.min_frequency)
    model = train(dataset, vocab, _train_config(args))
    out = _out_path(args, args.out, "model.json")
    save_model(model, out)
    m = _manifest(args, argv)
    m.inputs, m.outputs = [str(args.input)], [str(out)]
    m.status = {k: model.meta[k] for k in ("iterations", "final_loss", "converged")}
    m.write(_manifest_path(args, "train"))
    print(f"trained on {len(dataset)} documents, |V|={len(vocab)}, "
          f"{model.meta['iterations']} iterations, wrote {out}", file=sys.stderr)
    return EXIT_OK


def cmd_adjust(args, argv) -> int:
    model = load_model(args.model)
    adjusted = adjust_gender_weights(model, args.w, Which(args.which), _lexicon(args))
    out = _out_path(args, args.out, "model.adjusted.json")
    save_model(adjusted, out)
    m = _manifest(args, argv)
    m.inputs, m.outputs = [str(args.model)], [str(out)]
    m.write(_manifest_path(args, "adjust-weights"))
    return EXIT_OK


def _audit(model: BowModel, dataset: Dataset, lexicon: GenderLexicon, args, metadata: dict) -> BiasReport:
    options = ReportOptions(
        positive_class=_class_index(dataset.class_names, args.positive_class),
        confidence_buckets=_buckets(args.buckets),
        workers=args.workers,
        metadata=metadata,
    )
    return bias_report(model, dataset, lexicon, options)


def _load_eval(path: str, model: BowModel) -> Dataset:
    try:
        return load_jsonl(path, model.classes)
    except CorpusError as exc:
        raise CorpusError(f"dataset classes do not match model classes {list(model.classes)}: {exc}") from None


def cmd_audit(args, argv) -> int:
    model = load_model(args.model)
    dataset = _load_eval(args.data, model)
    report = _audit(model, dataset, _lexicon(args), args,
                    {"model": str(args.model), "dataset": str(args.data), "seed": args.seed})
    json_path = _out_path(args, args.out_json, "report.json")
    csv_path = _out_path(args, args.out_csv, "report.csv")
    manifest_path = _manifest_path(args, "audit")
    _write_report(report, json_path, csv_path, manifest_path.name)
    m = _manifest(args, argv)
    m.inputs, m.outputs = [str(args.model), str(args.data)], [str(json_path), str(csv_path)]
    m.status = {"missing": len(report.missing())}
    m.write(manifest_path)
    print(_summary(report, args.format))
    return EXIT_MISSING if report.has_missing else EXIT_OK


def _parse_grid(value: str) -> list[float]:
    return [float(x) for x in value.split(",") if x.strip()]


def cmd_sweep(args, argv) -> int:
    lexicon = _lexicon(args)
    if args.model:
        model = load_model(args.model)
    elif args.train:
        train_set = load_jsonl(args.train, _classes(args.classes))
        model = train(train_set, build_vocab(train_set, args.min_frequency), _train_config(args))
    else:
        raise CorpusError("sweep needs --model or --train")
    dataset = _load_eval(args.data, model)
    columns = ["w", "metric", "class", "value", "support_f", "support_m"]
    rows = []
    missing = False
    for w in _parse_grid(args.w_grid):
        report = _audit(adjust_gender_weights(model, w, Which(args.which), lexicon), dataset, lexicon, args, {})
        missing = missing or report.has_missing
        rows.extend({"w": w, **row} for row in report.csv_rows())
    out = _out_path(args, args.out, "sweep.csv")
    atomic_write_text(out, rows_to_csv(rows, columns))
    m = _manifest(args, argv)
    m.inputs = [p for p in (args.model, args.train, args.data) if p]
    m.outputs = [str(out)]
    m.write(_manifest_path(args, "sweep"))
    print(f"wrote {len(rows)} rows to {out}", file=sys.stderr)
    return EXIT_MISSING if missing else EXIT_OK


# -- pipeline ---------------------------------------------------------------------


def _plan_from_config(entry: dict[str, Any], seed: int) -> DebiasPlan:
    return DebiasPlan(
        Method(entry.get("method", "none")),
        CompositionOrder(entry.get("order", CompositionOrder.RESAMPLE_THEN_CDA.value)),
        CfWeight(entry.get("cf_weight", CfWeight.UNIT.value)),
        int(entry.get("seed", seed)),
    )


def _plan_slug(plan: DebiasPlan) -> str:
    return plan.name.replace("[", "_").replace("]", "")


def _pipeline_data(config: dict[str, Any], seed: int) -> tuple[Dataset, Dataset]:
    source = config["dataset"]
    if "synth" in source:
        data = generate(SynthConfig.from_dict({"seed": seed, **source["synth"]}))
    elif "train" in source and "test" in source:
        classes = source.get("classes")
        train_set = load_jsonl(source["train"], classes)
        return train_set, load_jsonl(source["test"], train_set.class_names)
    elif "path" in source:
        data = load_jsonl(source["path"], source.get("classes"))
    else:
        raise CorpusError("pipeline dataset needs 'synth', 'path', or 'train' and 'test'")
    train_set, _val, test_set = split(data, tuple(config.get("split", (0.7, 0.1, 0.2))), seed)
    return train_set, test_set


def cmd_pipeline(args, argv) -> int:
    config_path = Path(args.config)
    config = json.loads(config_path.read_text(encoding="utf-8"))
    out_dir = Path(args.out_dir)
    seed = int(config.get("seed", args.seed))
    manifest = RunManifest(["fairgap", *argv], digest(config), {"seed": seed}, inputs=[str(config_path)])
    manifest_path = out_dir / "pipeline.manifest.json"
    plans = [_plan_from_config(p, seed) for p in config.get("plans", [])]
    if not plans:
        manifest.status = {"plans": {}}
        manifest.write(manifest_path)
        return EXIT_OK

    lexicon = load_lexicon(config.get("lexicon", args.lexicon))
    train_set, test_set = _pipeline_data(config, seed)
    save_jsonl(train_set, out_dir / "data" / "train.jsonl")
    save_jsonl(test_set, out_dir / "data" / "test.jsonl")
    manifest.outputs += [str(out_dir / "data" / "train.jsonl"), str(out_dir / "data" / "test.jsonl")]

    tcfg = config.get("train", {})
    train_config = TrainConfig(
        l2=tcfg.get("l2", 1e-3),
        max_iters=tcfg.get("max_iters", 5000),
        tolerance=tcfg.get("tolerance", 1e-8),
        seed=seed,
    )
    mcfg = config.get("metrics", {})
    pc = mcfg.get("positive_class")
    options = ReportOptions(
        positive_class=None if pc is None else _class_index(test_set.class_names, str(pc)),
        confidence_buckets=_buckets(mcfg.get("confidence_buckets")),
        metadata={"manifest": manifest_path.name},
    )

    slugs: list[str] = []
    for plan in plans:
        slug = _plan_slug(plan)
        slugs.append(slug if slug not in slugs else f"{slug}-{len(slugs)}")

    def run(plan: DebiasPlan, slug: str) -> tuple[str, BiasReport | None, str | None]:
        plan_dir = out_dir / "plans" / slug
        try:
            debiased = apply_plan(train_set, plan, lexicon)
            save_jsonl(debiased, plan_dir / "train.jsonl")
            model = train(debiased, build_vocab(debiased, tcfg.get("min_frequency", 1)), train_config)
            save_model(model, plan_dir / "model.json")
            opts = ReportOptions(options.positive_class, options.confidence_buckets, 1,
                                 {**options.metadata, "plan": plan.name, "seed": plan.seed})
            report = bias_report(model, test_set, lexicon, opts)
            _write_report(report, plan_dir / "report.json", plan_dir / "report.csv", manifest_path.name)
            return slug, report, None
        except Exception as exc:  # a failed plan must not abort the others
            log.warning("plan %s failed: %s", slug, exc)
            return slug, None, f"{type(exc).__name__}: {exc}"

    workers = max(1, int(config.get("workers", args.workers)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, plans, slugs))
    else:
        results = [run(p, s) for p, s in zip(plans, slugs)]

    rows = []
    status = {}
    for plan, (slug, report, error) in zip(plans, results):
        if report is None:
            status[slug] = {"status": "failed", "error": error}
            continue
        status[slug] = {"status": "completed", "missing": len(report.missing())}
        manifest.outputs += [str(out_dir / "plans" / slug / n) for n in ("train.jsonl", "model.json", "report.json", "report.csv")]
        for kind in ALL_KINDS:
            if kind in report.rms:
                rows.append({"plan": slug, "metric": f"rms_{kind.value}", "value": report.rms[kind]})
        rows.append({"plan": slug, "metric": "accuracy", "value": report.accuracy})
        if report.auc is not None:
            rows.append({"plan": slug, "metric": "auc", "value": report.auc})
    comparison = out_dir / "comparison.csv"
    atomic_write_text(comparison, rows_to_csv(rows, ["plan", "metric", "value"]))
    manifest.outputs.append(str(comparison))
    manifest.status = {"plans": status}
    manifest.write(manifest_path)
    failed = [s for s, v in status.items() if v["status"] == "failed"]
    if failed:
        print(f"plans failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--lexicon", help="lexicon TSV (default: $FAIRGAP_LEXICON or the shipped lexicon)")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="stdout summary format")
    common.add_argument("-v", "--verbose", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--l2", type=float, default=1e-3)
    training.add_argument("--max-iters", type=int, default=5000)
    training.add_argument("--tolerance", type=float, default=1e-8)
    training.add_argument("--min-frequency", type=int, default=1)
    training.add_argument("--classes", help="comma-separated class names, in index order")

    auditing = argparse.ArgumentParser(add_help=False)
    auditing.add_argument("--positive-class", help="class name or index for PPR gaps and AUC")
    auditing.add_argument("--buckets", help="'default' or comma-separated confidence edges")
    auditing.add_argument("--workers", type=int, default=1)

    parser = argparse.ArgumentParser(prog="fairgap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fairgap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--synth-seed", dest="seed_override", type=int, help="override the config's seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("perturb", parents=[common], help="gender-intervene JSONL from stdin to stdout")
    p.add_argument("--target", choices=("female", "male", "flip"), required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("debias", parents=[common], help="apply a pre-processing debiaser")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--classes")
    p.add_argument("--method", choices=[m.value for m in Method], required=True)
    p.add_argument("--order", choices=[o.value for o in CompositionOrder],
                   default=CompositionOrder.RESAMPLE_THEN_CDA.value)
    p.add_argument("--cf-weight", choices=[c.value for c in CfWeight], default=CfWeight.UNIT.value)
    p.set_defaults(func=cmd_debias)

    p = sub.add_parser("train", parents=[common, training], help="train a bag-of-words model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adjust-weights", parents=[common], help="scale gender-token weights")
    p.add_argument("--model", required=True)
    p.add_argument("--w", type=float, required=True)
    p.add_argument("--which", choices=[w.value for w in Which], default="both")
    p.add_argument("--out")
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("audit", parents=[common, auditing], help="statistical and causal gap report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", parents=[common, training, auditing], help="gaps over a grid of gender-weight scales")
    p.add_argument("--data", required=True, help="evaluation JSONL")
    p.add_argument("--model")
    p.add_argument("--train", help="train a model on this JSONL when --model is absent")
    p.add_argument("--w-grid", default="-3,-1,0,1,2,3,5")
    p.add_argument("--which", choices=[w.value for w in Which], default="both")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pipeline", parents=[common, auditing], help="run a full experiment from a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, argv)
    except (CorpusError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"fairgap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
