"""Command-line entry point: ingest, train, evaluate, recommend, export-attention, selftest."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ConfigError, field_names, override, parse_config
from .graph import BehaviorVocab, Dataset, IngestError, leave_one_out_split, load_dataset
from .ndcore import CheckpointError, ContractError, load_checkpoint, save_checkpoint
from .trainer import TrainingError

log = logging.getLogger("mbrec")

COMMANDS = ("ingest", "train", "evaluate", "recommend", "export-attention", "selftest")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration overrides (one flag per config key)")
    for name in field_names():
        g.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, metavar="VALUE", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mbrec", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mbrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--data", help="interaction log (TSV) or stored graph (.npz)")
        p.add_argument("--config", help="key = value configuration file")
        _config_flags(p)
        return p

    p = common("ingest", "build and store the binary interaction graph")
    p.add_argument("--out", required=True, help="output .npz path")

    p = common("train", "train a model and write checkpoint + manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="replay the configuration and dataset of an earlier run")
    p.add_argument("--figures", help="directory for the loss-curve figure")

    p = common("evaluate", "leave-one-out HR@N / NDCG@N report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--report", help="write the tab-separated report here as well as stdout")
    p.add_argument("--summary", help="metric<TAB>N<TAB>value file (default: <checkpoint>.summary.tsv)")
    p.add_argument("--ranks", help="per-user rank file")
    p.add_argument("--buckets", type=int, default=5)
    p.add_argument("--figures", help="directory for the sparsity-bucket figure")

    p = common("recommend", "top-k items for one user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--include-seen", action="store_true",
                   help="keep items the user already adopted under the target behavior")

    p = common("export-attention", "learned behavior and cross-layer weights for a user/item")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--item", required=True)
    p.add_argument("--out", help="matrix text file (default: stdout)")
    p.add_argument("--figures", help="directory for the heatmap figure")

    p = sub.add_parser("selftest", help="gradient-check and oracle suites")
    p.add_argument("--full", action="store_true", help="include the full-model gradient check (~30 s)")
    return parser


# ---------------------------------------------------------------------------


def manifest_path(checkpoint) -> Path:
    return Path(str(checkpoint) + ".manifest.json")


def _flag_values(args) -> dict[str, str]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def resolve_config(args, manifest: dict | None = None) -> tuple[Config, set[str]]:
    """defaults < manifest snapshot < --config file < flags. Also returns explicitly set keys."""
    cfg, explicit = Config(), set()
    if manifest is not None:
        cfg = override(cfg, {k: _manifest_value(v) for k, v in manifest["config"].items()})
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise ConfigError(f"config file not found: {args.config}")
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text, cfg)
        explicit |= {ln.split("=", 1)[0].strip() for ln in text.splitlines()
                     if "=" in ln.split("#", 1)[0]}
    flags = _flag_values(args)
    cfg = override(cfg, flags)
    explicit |= set(flags)
    return cfg, explicit


def _manifest_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _load_data(path, cfg: Config, explicit: set[str]) -> Dataset:
    if path is None:
        raise ConfigError("--data is required")
    p = Path(path)
    if p.suffix == ".npz" and not ({"behaviors", "target_behavior"} & explicit):
        return load_dataset(p)
    vocab = BehaviorVocab.from_names(cfg.behaviors, cfg.target_behavior)
    return load_dataset(p, vocab)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_manifest(checkpoint) -> dict:
    mp = manifest_path(checkpoint)
    if not mp.exists():
        raise FileNotFoundError(f"manifest not found next to checkpoint: {mp}")
    return json.loads(mp.read_text(encoding="utf-8"))


def _load_trained(args):
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    manifest = _read_manifest(args.checkpoint)
    cfg, explicit = resolve_config(args, manifest)
    data = args.data or manifest["dataset"]["path"]
    ds = _load_data(data, cfg, explicit)
    params = load_checkpoint(args.checkpoint)
    if tuple(ds.vocab.names) != tuple(cfg.behaviors) or ds.vocab.target != cfg.target_behavior:
        raise IngestError(f"vocabulary mismatch: data has {list(ds.vocab.names)}, "
                          f"model was trained with {list(cfg.behaviors)}")
    if params["embed.user"].shape[0] != ds.tensor.num_users or params["embed.item"].shape[0] != ds.tensor.num_items:
        raise ContractError("checkpoint does not match the dataset's user/item counts")
    from .model import model_config_from_params
    model_config_from_params(params, cfg)
    params = {k: v.astype(cfg.dtype) for k, v in params.items()}
    return cfg, ds, params, manifest


# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg, _ = resolve_config(args)
    vocab = BehaviorVocab.from_names(cfg.behaviors, cfg.target_behavior)
    ds = load_dataset(args.data, vocab) if args.data else None
    if ds is None:
        raise ConfigError("--data is required")
    ds.save(args.out)
    t = ds.tensor
    print(f"users\t{t.num_users}")
    print(f"items\t{t.num_items}")
    for k, name in enumerate(ds.vocab.names):
        print(f"edges.{name}\t{t.edge_count(k)}")
    return 0


def cmd_train(args) -> int:
    from .reports import format_loss_log
    from .trainer import train

    timings = {}
    t0 = time.perf_counter()
    previous = json.loads(Path(args.manifest).read_text(encoding="utf-8")) if args.manifest else None
    cfg, explicit = resolve_config(args, previous)
    data = args.data or (previous["dataset"]["path"] if previous else None)
    if previous and not args.data and _sha256(data) != previous["dataset"]["sha256"]:
        raise IngestError(f"dataset {data} changed since the manifest was written (checksum mismatch)")
    ds = _load_data(data, cfg, explicit)
    cfg = cfg.replace(behaviors=tuple(ds.vocab.names), target_behavior=ds.vocab.target)
    target = ds.vocab.target_index
    train_t, test = leave_one_out_split(ds.tensor, target, cfg.seed)
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = train(train_t, cfg, target,
                   on_epoch=lambda e: log.info("epoch %d loss %.6f hinge %.6f", e.epoch, e.loss, e.hinge))
    timings["train"] = time.perf_counter() - t0

    ckpt = Path(args.checkpoint)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, result.params)
    Path(str(ckpt) + ".loss.tsv").write_text(format_loss_log(result.history), encoding="utf-8")
    if args.figures:
        from .plotting import loss_curve
        loss_curve(result.history, Path(args.figures) / "loss.png")
    manifest = {
        "version": __version__,
        "config": cfg.as_dict(),
        "dataset": {"path": str(Path(data).resolve()), "sha256": _sha256(data),
                    "users": ds.tensor.num_users, "items": ds.tensor.num_items,
                    "edges": ds.tensor.num_edges},
        "seeds": {"seed": cfg.seed},
        "checkpoint": str(ckpt.resolve()),
        "test_users": int(len(test)),
        "timings": timings,
    }
    manifest_path(ckpt).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    last = result.history[-1]
    print(f"epochs\t{len(result.history)}")
    print(f"final_loss\t{last.loss!r}")
    print(f"final_mean_hinge\t{last.hinge!r}")
    print(f"checkpoint\t{ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluator import evaluate, sparsity_buckets
    from .reports import format_ranks, format_report, format_summary

    cfg, ds, params, _ = _load_trained(args)
    target = ds.vocab.target_index
    train_t, test = leave_one_out_split(ds.tensor, target, cfg.seed)
    report = evaluate(params, train_t, test, cfg, target, full=ds.tensor)
    buckets = sparsity_buckets(ds.tensor, report.results, args.buckets)
    text = format_report(report, buckets)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    summary = args.summary or str(args.checkpoint) + ".summary.tsv"
    Path(summary).write_text(format_summary(report), encoding="utf-8")
    if args.ranks:
        Path(args.ranks).write_text(format_ranks(report, ds.user_ids), encoding="utf-8")
    if args.figures and buckets:
        from .plotting import sparsity_chart
        sparsity_chart(buckets, cfg.topn[0], Path(args.figures) / "sparsity.png")
    return 0


def recommend(params, ds: Dataset, cfg: Config, user: int, topk: int, include_seen: bool = False):
    from .model import score_matrix
    from .sampler import full_graph

    if topk <= 0:
        return []
    t = ds.tensor
    items = np.arange(t.num_items)
    if not include_seen:
        a = t.adjacency(ds.vocab.target_index)
        seen = a.indices[a.indptr[user]:a.indptr[user + 1]]
        items = np.setdiff1d(items, seen)
    scores = score_matrix(params, full_graph(t), np.full(len(items), user), items, cfg)
    order = np.lexsort((items, -scores))[:topk]
    return [(int(items[o]), float(scores[o])) for o in order]


def cmd_recommend(args) -> int:
    cfg, ds, params, _ = _load_trained(args)
    user = ds.user_index(args.user)
    for rank, (item, s) in enumerate(recommend(params, ds, cfg, user, args.topk, args.include_seen), start=1):
        print(f"{rank}\t{ds.item_ids[item]}\t{s!r}")
    return 0


def cmd_export_attention(args) -> int:
    from .evaluator import export_attention
    from .reports import format_attention

    cfg, ds, params, _ = _load_trained(args)
    user, item = ds.user_index(args.user), ds.item_index(args.item)
    rec = export_attention(params, ds.tensor, user, item, cfg, list(ds.vocab.names))
    text = format_attention(rec, args.user, args.item)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.figures:
        from .plotting import attention_heatmaps
        attention_heatmaps(rec, Path(args.figures) / "attention.png")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run
    return 0 if run(full=args.full) else 1


HANDLERS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "recommend": cmd_recommend,
    "export-attention": cmd_export_attention,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    level = os.environ.get("MBREC_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        threads = override(Config(), {"threads": args.cfg_threads}).threads if getattr(args, "cfg_threads", None) else 0
        if threads > 0:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                return HANDLERS[args.command](args)
        return HANDLERS[args.command](args)
    except (ConfigError, IngestError, ContractError, CheckpointError, TrainingError,
            FileNotFoundError, ValueError) as exc:
        sys.stderr.write(f"mbrec {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
