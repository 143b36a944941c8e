"""``ripplenet`` command line: prepare, train, eval, recommend, explain, analyze, synth."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .dataset import (
    EVAL,
    SPLIT_NAMES,
    TEST,
    implicit_transform,
    load_dataset,
    read_item_entities,
    read_ratings,
    save_dataset,
    split,
    user_history,
)
from .errors import ParseError
from .insight import explain, format_overlap, format_paths, neighbor_overlap_study, superposition, to_dot
from .kg import RippleSets, read_kg
from .metrics import rank_items
from .model import Hyperparams, load_checkpoint, save_checkpoint
from .synthetic import planted_corpus
from .trainer import RippleTable, build_ripple_table, ctr_metrics, recommend_scores, topk_evaluation, train

log = logging.getLogger("ripplenet")

EXIT_MISSING_FILE = 2
EXIT_PARSE = 3
EXIT_NO_CHECKPOINT = 4
EXIT_UNKNOWN_ID = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    out_dir: str = "run"
    kg: str | None = None
    ratings: str | None = None
    item_entity: str | None = None
    threshold: float | None = None
    split: str = "0.6,0.2,0.2"
    dim: int = 16
    n_hops: int = 2
    ripple_size: int = 32
    l2_weight: float = 1e-7
    kge_weight: float = 0.01
    lr: float = 0.02
    batch_size: int | None = None
    epochs: int | None = None
    seed: int = 0
    ks: str = "1,2,5,10,20,50,100"
    pair_count: int = 10000
    max_hop: int = 4
    explain_threshold: float = -1.0
    eval_split: str = "test"

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def checkpoint(self) -> Path:
        return self.out / "model.ckpt"

    def hyperparams(self) -> Hyperparams:
        missing = [k for k in ("batch_size", "epochs") if getattr(self, k) is None]
        if missing:
            raise CliError(EXIT_PARSE, f"config must set {', '.join(missing)}")
        return Hyperparams(
            batch_size=self.batch_size,
            epochs=self.epochs,
            dim=self.dim,
            n_hops=self.n_hops,
            ripple_size=self.ripple_size,
            l2_weight=self.l2_weight,
            kge_weight=self.kge_weight,
            lr=self.lr,
            seed=self.seed,
        )

    def ratios(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.split.split(","))

    def k_list(self) -> list[int]:
        return [int(x) for x in self.ks.split(",") if x.strip()]

    def require(self, *names: str) -> None:
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise CliError(EXIT_MISSING_FILE, f"config does not set {name}")
            if not Path(value).is_file():
                raise CliError(EXIT_MISSING_FILE, f"missing file: {value}")


def _convert(name: str, raw: str):
    kind = RunConfig.__dataclass_fields__[name].type
    if raw.strip().lower() in ("", "none") and "None" in kind:
        return None
    if kind.startswith("int"):
        return int(raw)
    if kind.startswith("float"):
        return float(raw)
    return raw


def load_config(path: str | None, overrides: dict[str, str]) -> RunConfig:
    """``key = value`` lines (``#`` comments), then per-flag overrides on top."""
    values: dict[str, str] = {}
    if path:
        if not Path(path).is_file():
            raise CliError(EXIT_MISSING_FILE, f"missing file: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            parser.read_string("[run]\n" + Path(path).read_text(encoding="utf-8"), source=path)
        except configparser.Error as exc:
            raise CliError(EXIT_PARSE, f"{path}: {exc}") from None
        values.update(parser["run"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise CliError(EXIT_PARSE, f"unknown config key(s): {', '.join(unknown)}")
    try:
        return RunConfig(**{k: _convert(k, v) for k, v in values.items()})
    except ValueError as exc:
        raise CliError(EXIT_PARSE, f"bad config value: {exc}") from None


def _load_prepared(cfg: RunConfig):
    data = cfg.out / "data"
    for name in ("examples.tsv", "items.tsv", "users.tsv"):
        if not (data / name).is_file():
            raise CliError(EXIT_MISSING_FILE, f"missing file: {data / name} (run prepare first)")
    cfg.require("kg")
    return load_dataset(data), read_kg(cfg.kg)


def _ripple_table(cfg: RunConfig, ds, kg) -> RippleTable:
    path = cfg.out / "ripples.tsv"
    if path.is_file():
        table = RippleTable.load(path)
        if table.hops.shape[1:3] == (cfg.n_hops, cfg.ripple_size):
            return table
        log.warning("ripple cache shape differs from config; rebuilding in memory")
    return build_ripple_table(ds, kg, cfg.n_hops, cfg.ripple_size, cfg.seed)


def _load_params(cfg: RunConfig):
    if not cfg.checkpoint.is_file():
        raise CliError(EXIT_NO_CHECKPOINT, f"missing checkpoint: {cfg.checkpoint}")
    return load_checkpoint(cfg.checkpoint)[0]


def _user_id(ds, table: RippleTable, name: str) -> int:
    try:
        uid = ds.users.index(name)
    except ValueError:
        raise CliError(EXIT_UNKNOWN_ID, f"unknown user: {name}") from None
    if uid not in table:
        raise CliError(EXIT_UNKNOWN_ID, f"user {name} has no training history")
    return uid


def cmd_prepare(cfg: RunConfig, args) -> None:
    cfg.require("kg", "ratings", "item_entity")
    kg = read_kg(cfg.kg)
    mapping = read_item_entities(cfg.item_entity, kg)
    ds = implicit_transform(read_ratings(cfg.ratings), cfg.threshold, cfg.seed, mapping)
    ds = split(ds, cfg.ratios(), cfg.seed)
    save_dataset(ds, cfg.out / "data")
    table = build_ripple_table(ds, kg, cfg.n_hops, cfg.ripple_size, cfg.seed)
    table.save(cfg.out / "ripples.tsv")
    summary = {
        "entities": kg.entity_count,
        "relations": kg.relation_count,
        "triples": len(kg),
        "users": ds.user_count,
        "items": ds.item_count,
        "examples": len(ds),
        "train": len(ds.train),
        "eval": len(ds.eval),
        "test": len(ds.test),
        "dropped_items": ds.dropped_items,
        "users_with_ripples": len(table.users),
        "skipped_users": table.skipped,
    }
    lines = [f"{k}\t{v}" for k, v in summary.items()]
    (cfg.out / "prepare_summary.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def cmd_train(cfg: RunConfig, args) -> None:
    hp = cfg.hyperparams()
    ds, kg = _load_prepared(cfg)
    table = _ripple_table(cfg, ds, kg)
    params, report = train(ds, kg, hp, table)
    save_checkpoint(params, cfg.checkpoint, meta={"hyperparams": hp.to_dict()})
    report.checkpoint = cfg.checkpoint.name
    report.write(cfg.out / "train_report.jsonl")
    report.write_timing(cfg.out / "timing.jsonl")
    last = report.epochs[-1] if report.epochs else report.initial
    print(f"epochs\t{len(report.epochs)}")
    print(f"train_ctr\t{last.train_ctr:.6f}")
    print(f"eval_auc\t{_fmt(last.eval_auc)}")
    print(f"eval_acc\t{_fmt(last.eval_acc)}")


def _fmt(x) -> str:
    return "NA" if x is None else f"{x:.6f}"


def cmd_eval(cfg: RunConfig, args) -> None:
    ds, kg = _load_prepared(cfg)
    params = _load_params(cfg)
    table = _ripple_table(cfg, ds, kg)
    part = {"eval": EVAL, "test": TEST}[cfg.eval_split]
    auc_, acc_ = ctr_metrics(params, ds, table, part)
    records = [
        {"metric": "auc", "split": SPLIT_NAMES[part], "value": auc_},
        {"metric": "acc", "split": SPLIT_NAMES[part], "value": acc_},
    ]
    if args.topk:
        for res in topk_evaluation(params, ds, table, cfg.k_list(), part):
            for name in ("precision", "recall", "f1"):
                records.append({"metric": f"{name}@{res.k}", "split": SPLIT_NAMES[part], "value": getattr(res, name), "users": res.users})
    with open(cfg.out / "eval_report.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for rec in records:
        print(f"{rec['metric']}\t{_fmt(rec['value'])}")


def cmd_recommend(cfg: RunConfig, args) -> None:
    ds, kg = _load_prepared(cfg)
    params = _load_params(cfg)
    table = _ripple_table(cfg, ds, kg)
    uid = _user_id(ds, table, args.user)
    scores = recommend_scores(params, ds, table, uid)
    for v in rank_items(scores, args.k):
        print(f"{ds.items[v]}\t{scores[v]:.6f}")


def cmd_explain(cfg: RunConfig, args) -> None:
    ds, kg = _load_prepared(cfg)
    params = _load_params(cfg)
    table = _ripple_table(cfg, ds, kg)
    uid = _user_id(ds, table, args.user)
    try:
        vid = ds.items.index(args.item)
    except ValueError:
        raise CliError(EXIT_UNKNOWN_ID, f"unknown item: {args.item}") from None
    row = table.row[uid]
    ripple = RippleSets(uid, tuple(sorted(user_history(ds, uid))), table.hops[row], tuple(table.fallback[row].tolist()))
    g = explain(uid, vid, params, ripple, cfg.explain_threshold)
    sp = superposition(uid, vid, params, ripple)
    stem = cfg.out / f"explain_{args.user}_{args.item}"
    Path(f"{stem}.dot").write_text(to_dot(g, kg, args.item), encoding="utf-8")
    paths = format_paths(g, kg, args.item)
    Path(f"{stem}.paths.txt").write_text("".join(p + "\n" for p in paths), encoding="utf-8")
    with open(f"{stem}.superposition.tsv", "w", encoding="utf-8") as fh:
        fh.write("entity\t" + "\t".join(f"hop{k + 1}" for k in range(ripple.n_hops)) + "\ttotal\n")
        for e in sorted(sp.total, key=lambda e: (-sp.total[e], e)):
            fh.write(kg.entities[e] + "\t" + "\t".join(f"{m:.6f}" for m in sp.per_hop[e]) + f"\t{sp.total[e]:.6f}\n")
    print(f"edges\t{len(g.edges)}")
    print(f"paths\t{len(paths)}")
    for p in paths:
        print(p)


def cmd_analyze(cfg: RunConfig, args) -> None:
    ds, kg = _load_prepared(cfg)
    rows = neighbor_overlap_study(kg, ds, cfg.pair_count, cfg.max_hop, cfg.seed)
    text = format_overlap(rows)
    (cfg.out / "overlap.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_synth(cfg: RunConfig, args) -> None:
    corpus = planted_corpus(seed=cfg.seed)
    paths = corpus.write(cfg.out)
    for name, p in paths.items():
        print(f"{name}\t{p}")


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "recommend": cmd_recommend,
    "explain": cmd_explain,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        common.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.name.upper())

    parser = argparse.ArgumentParser(prog="ripplenet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--topk", action="store_true", help="also report precision/recall/F1 at each K in ks")
        if name in ("recommend", "explain"):
            p.add_argument("--user", required=True)
        if name == "recommend":
            p.add_argument("--k", type=int, default=10)
        if name == "explain":
            p.add_argument("--item", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("RIPPLE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {f.name: getattr(args, f.name) for f in fields(RunConfig)})
        if args.command != "synth":
            cfg.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING_FILE
    return 0


if __name__ == "__main__":
    sys.exit(main())
