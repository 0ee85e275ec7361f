#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
方面中心潜在树工具命令行
提供训练、评估、树归纳、距离/根一致性分析、剪枝评估、自检、数据统计与合成语料生成

退出码：0 成功；1 输入/配置/快照错误；2 数值错误或训练中止；3 自检失败
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from aclt_model import ACLTModel
from autodiff_core import NumericalError, ParamStore
from classifier_training import TrainConfig, evaluate, summarize_runs, train
from data_io import (DataValidationError, EmbeddingTable, Instance, dump_jsonl, load_embeddings, load_jsonl,
                     load_lexicon, split, stats_frame, vocabulary)
from embedding_cache import cache_from_env
from model_store import check_compatible, load_snapshot, save_snapshot
from run_config import REFERENCE_DEFAULTS, ConfigError, ModelConfig, RunConfig, env_log_level, load_environment
from synthetic_corpus import DEFAULT_LEXICON, generate_corpus
from tree_tools import (Arborescence, distance_report, read_tree_dump, root_consistency,
                        root_consistency_frame, trees_from_parse, write_tree_dump)
from verify_suite import VerifySuite, first_failure
from worker_pool import InstancePool

logger = logging.getLogger("arbolatent")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    """参数错误时以退出码 1 结束"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# 公共辅助
# ---------------------------------------------------------------------------

@dataclass
class LoadedModel:
    config: RunConfig
    model_config: ModelConfig
    table: EmbeddingTable
    params: ParamStore

    def model(self) -> ACLTModel:
        return ACLTModel(self.model_config, self.table, self.params, alpha=self.config["train.alpha"])


def _pairs(values: Optional[List[str]], flag: str) -> Dict[str, str]:
    """把重复的 NAME=PATH 参数解析为有序字典"""
    out: Dict[str, str] = {}
    for item in values or []:
        if "=" not in item:
            raise ConfigError(f"{flag} expects NAME=PATH, got '{item}'")
        name, path = item.split("=", 1)
        out[name.strip()] = path.strip()
    return out


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = RunConfig.parse_overrides(getattr(args, "set", None) or [])
    if getattr(args, "alpha", None) is not None:
        overrides["train.alpha"] = args.alpha
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
    return RunConfig.load(getattr(args, "config", None), overrides)


def _embedding_file_dimension(path: str) -> int:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if parts:
                return len(parts) - 1
    raise DataValidationError(f"{path}: embedding file is empty")


def _build_table(config: RunConfig, instances: Sequence[Instance],
                 embeddings: Optional[str]) -> Tuple[RunConfig, EmbeddingTable]:
    """词向量文件的维度覆盖 embedding.dim；表裁剪到语料词汇"""
    seed, lowercase = config["train.seed"], config["data.lowercase"]
    if embeddings:
        dim = _embedding_file_dimension(embeddings)
        if dim != config["embedding.dim"]:
            logger.info("📐 embedding.dim 由词向量文件决定: %d", dim)
            config = config.with_overrides({"embedding.dim": dim})
        table = load_embeddings(embeddings, dim, seed=seed, lowercase=lowercase, cache=cache_from_env())
        return config, table.restrict(vocabulary(instances))
    table = EmbeddingTable.from_instances(instances, config["embedding.dim"], seed=seed, lowercase=lowercase)
    return config, table


def _load_model(path: str, set_pairs: Optional[List[str]] = None) -> LoadedModel:
    snapshot = load_snapshot(path)
    config = snapshot.run_config()
    if set_pairs:
        config = config.with_overrides(RunConfig.parse_overrides(set_pairs))
    model_config = ModelConfig.from_run_config(config)
    check_compatible(snapshot, model_config)
    return LoadedModel(config, model_config, snapshot.table(), snapshot.params)


def _induce_trees(loaded: LoadedModel, instances: Sequence[Instance],
                  pool: InstancePool) -> List[Tuple[Arborescence, Any]]:
    model = loaded.model()
    return pool.map_ordered(model.induce, instances)


def _write_json(path: Optional[str], payload: Dict[str, Any]) -> None:
    if not path:
        return
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
        f.write("\n")
    logger.info("📝 已写出: %s", path)


def _write_xlsx(path: Optional[str], sheets: Dict[str, pd.DataFrame]) -> None:
    if not path:
        return
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name[:31])
    logger.info("📊 已导出表格: %s", path)


# ---------------------------------------------------------------------------
# 子命令
# ---------------------------------------------------------------------------

def _train_once(config: RunConfig, train_set: List[Instance], dev_set: List[Instance],
                embeddings: Optional[str], out: str, log_path: str, pool: InstancePool):
    config, table = _build_table(config, train_set + dev_set, embeddings)
    model_config = ModelConfig.from_run_config(config)
    result = train(train_set, dev_set, table, TrainConfig.from_run_config(config), model_config,
                   pool=pool, config_digest=config.digest())
    save_snapshot(out, result.params, table.words, config, config["train.seed"], result.best_epoch,
                  extra={"dev_report": result.best_report.to_dict()})
    with open(log_path, "w", encoding="utf-8") as f:
        for record in result.log:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return config, result


def cmd_train(args: argparse.Namespace) -> int:
    """训练模型，写出快照与逐 epoch JSONL 日志"""
    config = _resolve_config(args)
    train_set = load_jsonl(args.train)
    if args.dev:
        dev_set = load_jsonl(args.dev)
    elif args.split_seed is not None:
        train_set, dev_set = split(train_set, config["data.dev_fraction"], args.split_seed)
    else:
        raise ConfigError("either --dev or --split-seed is required")

    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [config["train.seed"]]
    reports = []
    with InstancePool() as pool:
        for seed in seeds:
            run_config = config.with_overrides({"train.seed": seed})
            out = f"{args.out}.seed{seed}" if args.seeds else args.out
            log_path = (f"{args.log}.seed{seed}" if args.seeds else args.log) if args.log else f"{out}.log.jsonl"
            run_config, result = _train_once(run_config, train_set, dev_set, args.embeddings, out, log_path, pool)
            print(f"seed {seed}  best epoch {result.best_epoch}")
            print(result.best_report.to_text())
            reports.append(result.best_report)

    if args.seeds:
        summary = summarize_runs(reports)
        frame = pd.DataFrame(summary).T[["mean", "mad", "runs"]]
        print(frame.to_string(float_format=lambda x: f"{x:.4f}"))
        _write_json(f"{args.out}.summary.json", {"config": config.to_dict(), "seeds": seeds, "summary": summary})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    loaded = _load_model(args.model, args.set)
    dataset = load_jsonl(args.data)
    with InstancePool() as pool:
        report = evaluate(loaded.params, dataset, loaded.table, loaded.model_config, pool)
    print(report.to_text())
    _write_json(args.out, {"config": loaded.config.to_dict(), "report": report.to_dict()})
    _write_xlsx(args.xlsx, {"metrics": report.to_frame()})
    return EXIT_OK


def cmd_induce(args: argparse.Namespace) -> int:
    """解码方面中心树并写出树文件（未给 --out 时写到标准输出）"""
    loaded = _load_model(args.model, args.set)
    dataset = load_jsonl(args.data)
    with InstancePool() as pool:
        induced = _induce_trees(loaded, dataset, pool)
    blocks = [(inst, tree, marginals.Pr) for inst, (tree, marginals) in zip(dataset, induced)]
    count = write_tree_dump(args.out or sys.stdout, blocks, loaded.config.to_dict())
    logger.info("🌳 已写出 %d 棵树", count)
    return EXIT_OK


def _trees_by_source(sources: List[str], models: Dict[str, str], dumps: Dict[str, str],
                     dataset: Sequence[Instance], pool: InstancePool,
                     configs: Dict[str, Any]) -> Dict[str, List[Optional[Arborescence]]]:
    trees: Dict[str, List[Optional[Arborescence]]] = {}
    for source in sources:
        if source in models:
            loaded = _load_model(models[source])
            configs[source] = loaded.config.to_dict()
            trees[source] = [tree for tree, _ in _induce_trees(loaded, dataset, pool)]
        elif source in dumps:
            by_id = {block.id: block.tree for block in read_tree_dump(dumps[source])}
            trees[source] = [by_id.get(inst.id) for inst in dataset]
        elif source == "parser":
            trees[source] = trees_from_parse(dataset)
        else:
            raise ConfigError(f"source '{source}' needs --model {source}=PATH or --trees {source}=PATH")
    return trees


def cmd_analyze_distance(args: argparse.Namespace) -> int:
    """观点词到方面词的平均跳数（越低越好）"""
    sources = [s.strip() for s in args.sources.split(",") if s.strip()]
    if not sources:
        raise ConfigError("--sources names no tree source")
    reference = args.reference or ("mtt" if "mtt" in sources else sources[0])
    if reference not in sources:
        raise ConfigError(f"--reference '{reference}' is not one of --sources {sources}")
    dataset = load_jsonl(args.data)
    lexicon = load_lexicon(args.lexicon)
    configs: Dict[str, Any] = {}
    with InstancePool() as pool:
        trees = _trees_by_source(sources, _pairs(args.model, "--model"), _pairs(args.trees, "--trees"),
                                 dataset, pool, configs)
    report = distance_report(dataset, trees, lexicon, top_k=args.top_k)
    print(report.to_text())

    shortening = {s: report.shortening(reference, s) for s in sources if s != reference}
    for source, value in shortening.items():
        shown = "n/a" if value is None else f"{100.0 * value:+.1f}%"
        print(f"{source} vs {reference}: {shown} shorter")
    payload = report.to_dict()
    payload.update({"config": configs, "reference": reference, "shortening": shortening})
    _write_json(args.out, payload)
    _write_xlsx(args.xlsx, {"distance": report.pivot(), "rows": report.to_frame()})
    return EXIT_OK


def cmd_analyze_roots(args: argparse.Namespace) -> int:
    """根是否落在方面词区间内的统计"""
    dataset = load_jsonl(args.data)
    models, dumps = _pairs(args.model, "--model"), _pairs(args.trees, "--trees")
    sources = list(models) + [s for s in dumps if s not in models]
    if args.include_parser:
        sources.append("parser")
    if not sources:
        raise ConfigError("give at least one --model, --trees or --include-parser")
    configs: Dict[str, Any] = {}
    with InstancePool() as pool:
        trees = _trees_by_source(sources, models, dumps, dataset, pool, configs)
    results = {source: root_consistency(dataset, trees[source]) for source in sources}
    frame = root_consistency_frame(results)
    print(frame.to_string(float_format=lambda x: f"{x:.2f}"))
    _write_json(args.out, {"config": configs, "results": {s: r.to_dict() for s, r in results.items()}})
    _write_xlsx(args.xlsx, {"roots": frame})
    return EXIT_OK


def cmd_prune_eval(args: argparse.Namespace) -> int:
    """同一快照在不剪枝与 k 阶剪枝下各评估一次"""
    dataset = load_jsonl(args.data)
    full = _load_model(args.model, (args.set or []) + ["prune.k=null"])
    pruned = _load_model(args.model, (args.set or []) + [f"prune.k={args.k}"])
    with InstancePool() as pool:
        base = evaluate(full.params, dataset, full.table, full.model_config, pool)
        kept = evaluate(pruned.params, dataset, pruned.table, pruned.model_config, pool)
    print("no pruning")
    print(base.to_text())
    print(f"\nk = {args.k}")
    print(kept.to_text())
    _write_json(args.out, {"config": pruned.config.to_dict(), "k": args.k,
                           "no_prune": base.to_dict(), "pruned": kept.to_dict()})
    _write_xlsx(args.xlsx, {"no_prune": base.to_frame(), f"k{args.k}": kept.to_frame()})
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    suite = VerifySuite(max_n=args.max_n, seed=args.seed, progress_callback=logger.info)
    results = suite.run()
    for result in results:
        print(result.line())
    failed = first_failure(results)
    if failed is not None:
        print(f"verification failed: {failed.name}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    """各数据集的极性统计；--reference-defaults 显示原始超参数表"""
    if not args.data and not args.reference_defaults:
        raise ConfigError("give --data files and/or --reference-defaults")
    sheets: Dict[str, pd.DataFrame] = {}
    payload: Dict[str, Any] = {}
    if args.data:
        datasets = {Path(p).stem: load_jsonl(p) for p in args.data}
        frame = stats_frame(datasets)
        print(frame.to_string())
        sheets["stats"] = frame
        payload["stats"] = frame.to_dict(orient="index")
    if args.reference_defaults:
        defaults = pd.Series(REFERENCE_DEFAULTS, name="value").to_frame()
        print(defaults.to_string())
        sheets["reference_defaults"] = defaults
        payload["reference_defaults"] = dict(REFERENCE_DEFAULTS)
    _write_json(args.out, payload)
    _write_xlsx(args.xlsx, sheets)
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    dataset = load_jsonl(args.data)
    fraction = args.dev_fraction if args.dev_fraction is not None else RunConfig()["data.dev_fraction"]
    train_set, dev_set = split(dataset, fraction, args.seed)
    print(stats_frame({"train": train_set, "dev": dev_set}).to_string())
    if args.write:
        dump_jsonl(train_set, f"{args.write}.train.jsonl")
        dump_jsonl(dev_set, f"{args.write}.dev.jsonl")
        logger.info("✂️ 已写出 %s.train.jsonl / %s.dev.jsonl", args.write, args.write)
    return EXIT_OK


def cmd_make_synthetic(args: argparse.Namespace) -> int:
    lexicon = load_lexicon(args.lexicon) if args.lexicon else DEFAULT_LEXICON
    corpus = generate_corpus(args.n, args.seed, lexicon)
    dump_jsonl(corpus, args.out)
    if args.lexicon_out:
        with open(args.lexicon_out, "w", encoding="utf-8") as f:
            json.dump(lexicon.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
    print(stats_frame({Path(args.out).stem: corpus}).to_string())
    return EXIT_OK


# ---------------------------------------------------------------------------
# 参数解析
# ---------------------------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config with dotted keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arbolatent", description="aspect-centric latent tree toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True, help="training JSONL")
    p.add_argument("--dev", help="dev JSONL")
    p.add_argument("--split-seed", type=int, help="carve dev from --train with this seed")
    p.add_argument("--embeddings", help="pretrained vectors, 'word v1 ... vd' per line")
    _add_config_flags(p)
    p.add_argument("--alpha", type=float, help="shorthand for --set train.alpha=...")
    p.add_argument("--seed", type=int, help="shorthand for --set train.seed=...")
    p.add_argument("--seeds", help="comma-separated seeds, one run each")
    p.add_argument("--out", default="model.snap", help="snapshot path")
    p.add_argument("--log", help="epoch log path (default <out>.log.jsonl)")
    p.set_defaults(handler=cmd_train)

    for name, handler, helptext in (("eval", cmd_eval, "evaluate a snapshot"),
                                    ("induce", cmd_induce, "write decoded trees")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True, help="snapshot path")
        p.add_argument("--data", required=True, help="dataset JSONL")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--out", help="JSON report (eval) or tree dump (induce)")
        if name == "eval":
            p.add_argument("--xlsx", help="export the per-class table")
        p.set_defaults(handler=handler)

    p = sub.add_parser("analyze-distance", help="opinion-to-aspect hop distances")
    p.add_argument("--data", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--sources", default="parser,mtt,aclt")
    p.add_argument("--model", action="append", metavar="NAME=PATH", help="snapshot for a source")
    p.add_argument("--trees", action="append", metavar="NAME=PATH", help="tree dump for a source")
    p.add_argument("--top-k", type=int, help="top-k opinion words per polarity")
    p.add_argument("--reference", help="source the shortening is measured against")
    p.add_argument("--out")
    p.add_argument("--xlsx")
    p.set_defaults(handler=cmd_analyze_distance)

    p = sub.add_parser("analyze-roots", help="root inside the aspect span")
    p.add_argument("--data", required=True)
    p.add_argument("--model", action="append", metavar="NAME=PATH")
    p.add_argument("--trees", action="append", metavar="NAME=PATH")
    p.add_argument("--include-parser", action="store_true")
    p.add_argument("--out")
    p.add_argument("--xlsx")
    p.set_defaults(handler=cmd_analyze_roots)

    p = sub.add_parser("prune-eval", help="evaluate with and without order-k pruning")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out")
    p.add_argument("--xlsx")
    p.set_defaults(handler=cmd_prune_eval)

    p = sub.add_parser("verify", help="run the self-check suite")
    p.add_argument("--max-n", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("stats", help="polarity counts")
    p.add_argument("--data", nargs="*", default=[])
    p.add_argument("--reference-defaults", action="store_true")
    p.add_argument("--out")
    p.add_argument("--xlsx")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("split", help="seeded train/dev split")
    p.add_argument("--data", required=True)
    p.add_argument("--dev-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--write", metavar="PREFIX")
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("make-synthetic", help="generate a templated corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon", help="lexicon JSON (default: built-in)")
    p.add_argument("--lexicon-out")
    p.set_defaults(handler=cmd_make_synthetic)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_environment()
    logging.basicConfig(level=env_log_level(), format=LOG_FORMAT, stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_INVALID

    try:
        return args.handler(args)
    except NumericalError as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
