"""Operator surface: one JSON config per run plus command-line overrides.

Subcommands: synth, augment, train, eval, inspect. Exit codes: 0 success,
2 configuration, 3 file, 4 transport, 5 record validation, 1 anything else.
All randomness flows from the top-level "seed"; submodule seeds default to
it and may be overridden per section.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .datastore import (
    file_digest,
    mix_and_split,
    MixSpec,
    read_dataset,
    read_pairs,
    write_dataset,
)
from .encoder import EncoderConfig, load_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    FileFormatError,
    GenerationFormatError,
    ToolkitError,
    TransportError,
)
from .evalkit import (
    Embedder,
    benchmark_from_triplets,
    evaluate_retrieval,
    evaluate_sts,
    granularity_stats,
    inspect_weights,
    pooling_ablation,
    sts_pairs,
)
from .synth import HttpBackendConfig, HttpChatBackend, MockChatBackend, augment_pairs, synthesize_dataset
from .trainer import TrainConfig, train

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_FILE = 3
EXIT_TRANSPORT = 4
EXIT_VALIDATION = 5

CONFIG_VERSION = 1


def load_config(path: str, overrides: list[str] | None = None) -> dict:
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    if config.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {config.get('version')!r}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} crosses a non-object value")
        node[leaf] = value
    config.setdefault("seed", 0)
    return config


def build_backend(config: dict):
    section = dict(config.get("backend", {"kind": "mock"}))
    kind = section.pop("kind", "mock")
    if kind == "mock":
        section.setdefault("seed", config["seed"])
        return MockChatBackend(**section)
    if kind == "http":
        try:
            return HttpChatBackend(HttpBackendConfig(**section))
        except TypeError as exc:
            raise ConfigError(f"bad http backend settings: {exc}") from None
    raise ConfigError(f"backend.kind must be 'mock' or 'http', got {kind!r}")


def build_train_config(config: dict) -> TrainConfig:
    enc_section = dict(config.get("encoder", {}))
    enc_section.setdefault("seed", config["seed"])
    enc_section.setdefault("max_seq_len", 128)
    try:
        encoder = EncoderConfig(**enc_section)
    except TypeError as exc:
        raise ConfigError(f"bad encoder settings: {exc}") from None
    section = dict(config.get("train", {}))
    section.pop("dataset", None)
    section.setdefault("seed", config["seed"])
    section.setdefault("schedule_seed", config["seed"])
    try:
        return TrainConfig(encoder=encoder, **section).validate()
    except TypeError as exc:
        raise ConfigError(f"bad train settings: {exc}") from None


def _require(config: dict, section: str, key: str):
    value = config.get(section, {}).get(key)
    if value in (None, ""):
        raise ConfigError(f"config is missing {section}.{key}")
    return value


def cmd_synth(args) -> int:
    config = load_config(args.config, args.set)
    section = config.get("synth", {})
    n = args.n if args.n is not None else section.get("n")
    if n is None:
        raise ConfigError("config is missing synth.n")
    out_path = args.out or section.get("out_path")
    if not out_path:
        raise ConfigError("config is missing synth.out_path")
    backend = build_backend(config)
    triplets, report = synthesize_dataset(
        backend,
        n=int(n),
        seed=int(section.get("seed", config["seed"])),
        category_mix=section.get("category_mix"),
        num_levels=int(section.get("num_levels", 4)),
        language=section.get("language", "English"),
        tasks_per_category=int(section.get("tasks_per_category", 12)),
    )
    if report.accepted == 0:
        raise GenerationFormatError("zero_accepted", "no valid triplets were generated")
    count = write_dataset(triplets, out_path)
    summary = {"config": config, "report": report.to_dict(), "out_path": str(out_path)}
    Path(str(out_path) + ".report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {count} records to {out_path}")
    print(f"accepted={report.accepted} rejected={report.to_dict()['rejected']}")
    return EXIT_OK


def cmd_augment(args) -> int:
    config = load_config(args.config, args.set)
    section = config.get("augment", {})
    pairs_path = args.pairs or section.get("pairs_path")
    if not pairs_path:
        raise ConfigError("config is missing augment.pairs_path")
    out_path = args.out or section.get("out_path")
    if not out_path:
        raise ConfigError("config is missing augment.out_path")
    pairs, skipped = read_pairs(pairs_path, strict=bool(section.get("strict", False)))
    backend = build_backend(config)
    triplets, report = augment_pairs(backend, pairs, num_levels=int(section.get("num_levels", 4)))
    count = write_dataset(triplets, out_path)
    if skipped:
        print(f"skipped pair lines: {skipped}")
    print(f"wrote {count} retrieval_augmented records to {out_path}")
    print(f"accepted={report.accepted} rejected={report.to_dict()['rejected']}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    dataset = args.dataset or config.get("train", {}).get("dataset")
    if not dataset:
        raise ConfigError("config is missing train.dataset")
    out_dir = args.out_dir or config.get("out_dir")
    if not out_dir:
        raise ConfigError("config is missing out_dir")
    cfg = build_train_config(config)
    triplets, skipped = read_dataset(dataset, strict=False, num_levels=cfg.num_levels)
    if skipped:
        print(f"skipped dataset lines: {skipped}")
    model, manifest = train(cfg, triplets, out_dir=out_dir, dataset_digest=file_digest(dataset))
    print(f"trained {cfg.total_steps} steps; final loss {manifest.loss_log[-1][2]:.6f}")
    print(f"manifest: {Path(out_dir) / 'manifest.json'}")
    print(f"checkpoint: {manifest.final_checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config, args.set)
    section = config.get("eval", {})
    dataset = args.dataset or section.get("dataset")
    if not dataset:
        raise ConfigError("config is missing eval.dataset")
    mode = args.mode or section.get("mode", "benchmark")
    triplets, skipped = read_dataset(dataset, strict=False, num_levels=int(section.get("num_levels", 4)))
    if skipped:
        print(f"skipped dataset lines: {skipped}")
    if not triplets:
        raise ConfigError(f"eval dataset {dataset} holds no valid records")

    report: dict = {"mode": mode, "dataset": str(dataset), "config": config}
    if mode == "ablation":
        poolings = section.get("poolings", ["mean", "last", "ata"])
        spec = MixSpec(
            inputs=[(str(dataset), 1.0)],
            seed=int(section.get("seed", config["seed"])),
            train_fraction=0.75,
            eval_fraction=0.25,
            num_levels=int(section.get("num_levels", 4)),
        )
        train_set, eval_set = mix_and_split(spec)
        rows = pooling_ablation(build_train_config(config), poolings, train_set, eval_set)
        report["rows"] = rows
        header = sorted(rows[0])
        print("\t".join(header))
        for row in rows:
            print("\t".join(f"{row[k]:.4f}" if isinstance(row[k], float) else str(row[k]) for k in header))
    else:
        checkpoint = args.checkpoint or section.get("checkpoint")
        if not checkpoint:
            raise ConfigError("config is missing eval.checkpoint")
        model = load_checkpoint(checkpoint)
        embedder = Embedder(
            model,
            pooling=section.get("pooling", config.get("train", {}).get("pooling", "ata")),
            direction=section.get("direction", config.get("train", {}).get("ata_direction", "incoming")),
        )
        stats = granularity_stats(triplets, embedder)
        report["granularity"] = stats.rows()
        if mode == "benchmark":
            task = benchmark_from_triplets(triplets)
            metrics = evaluate_retrieval(embedder, task, ks=(1, 10))
            metrics["spearman"] = evaluate_sts(embedder, sts_pairs(triplets))
            report["metrics"] = metrics
            for name in sorted(metrics):
                print(f"{name}\t{metrics[name]:.4f}")
        elif mode != "granularity":
            raise ConfigError(f"eval.mode must be benchmark, granularity, or ablation, got {mode!r}")
        print(stats.as_text())

    out_dir = args.out_dir or config.get("out_dir")
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        out_file = Path(out_dir) / f"eval_{mode}.json"
        out_file.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"report: {out_file}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = load_checkpoint(args.checkpoint)
    report = inspect_weights(model, args.text, direction=args.direction)
    print(report.as_text(include_attention=args.attention))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.total_steps=100")

    p = sub.add_parser("synth", help="generate a synthetic multi-granularity dataset")
    add_common(p)
    p.add_argument("--n", type=int, help="number of triplets to generate")
    p.add_argument("--out", help="output dataset path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="regenerate negatives for a (query, positive) pair file")
    add_common(p)
    p.add_argument("--pairs", help="input pair file")
    p.add_argument("--out", help="output dataset path")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="run curriculum contrastive training")
    add_common(p)
    p.add_argument("--dataset", help="training dataset path")
    p.add_argument("--out-dir", help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the desk benchmark")
    add_common(p)
    p.add_argument("--checkpoint", help="encoder checkpoint path")
    p.add_argument("--dataset", help="evaluation dataset path")
    p.add_argument("--mode", choices=("benchmark", "granularity", "ablation"))
    p.add_argument("--out-dir", help="where to write the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="per-token anchor weights for a text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--direction", choices=("incoming", "literal"), default="incoming")
    p.add_argument("--attention", action="store_true", help="also print the summed attention map")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileFormatError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except GenerationFormatError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
