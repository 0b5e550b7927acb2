"""Command line: ``train``, ``eval``, ``resplit``, ``stats``, ``track``, ``make-corpus``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data as D
from .checkpoint import CheckpointError, load_checkpoint
from .evaluation import VocabularyMismatch, evaluate
from .features import DatabaseError, DatabaseTable, tokenize
from .models import TrackerSession

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
DATA_ENV = "DSTRNN_DATA"

TRAIN_DEFAULTS = {
    "model": "indep",
    "epochs": 50,
    "batch_size": 10,
    "embed_dim": 100,
    "hidden_dim": 100,
    "dropout_keep": 0.7,
    "loss_scope": "full_history",
    "buckets": 10,
    "lr": 1e-3,
    "patience": 4,
    "top_k": 3,
    "clip_norm": None,
    "min_count": 1,
    "seed": 0,
}

log = logging.getLogger("dstrnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ paths


def _data_root(args) -> Path:
    root = args.data or os.environ.get(DATA_ENV)
    if not root:
        raise UsageError(f"no data root: pass --data or set {DATA_ENV}")
    root = Path(root)
    if not root.is_dir():
        raise D.LoadError(f"data root {root} does not exist")
    return root


def _find(root: Path, explicit, names) -> Path:
    if explicit:
        p = Path(explicit)
        if not p.is_file():
            raise D.LoadError(f"{p} not found")
        return p
    for name in names:
        for cand in (root / name, root / "scripts" / "config" / name, root / "config" / name):
            if cand.is_file():
                return cand
    raise D.LoadError(f"cannot find {names[0]} under {root}")


def _flist(args, root: Path, split: str) -> Path:
    return _find(root, getattr(args, f"flist_{split}", None), [f"dstc2_{split}.flist"])


def _ontology(args, root: Path) -> dict | None:
    try:
        return D.load_ontology(_find(root, args.ontology, ["ontology_dstc2.json", "ontology.json"]))
    except D.LoadError:
        if args.ontology:
            raise
        log.warning("no ontology found; slot values are taken from the training labels")
        return None


def _database(args, root: Path) -> DatabaseTable:
    try:
        return DatabaseTable.load(_find(root, args.db, ["db.json", "database.json"]))
    except D.LoadError:
        if args.db:
            raise
        log.warning("no database found; database features will be zero")
        return DatabaseTable.empty()


def _load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    unknown = set(cfg) - set(TRAIN_DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def effective_config(args) -> dict:
    """Flags override the config file, which overrides the built-in defaults."""
    cfg = dict(TRAIN_DEFAULTS)
    cfg.update(_load_config_file(getattr(args, "config", None)))
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


# --------------------------------------------------------------- commands


def cmd_train(args) -> int:
    from .estimator import DialogueStateTracker

    cfg = effective_config(args)
    root = _data_root(args)
    train_d = D.load_dstc2(root, _flist(args, root, "train"))
    dev_d = D.load_dstc2(root, _flist(args, root, "dev"))
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    est = DialogueStateTracker(
        model=cfg["model"], embed_dim=cfg["embed_dim"], hidden_dim=cfg["hidden_dim"],
        dropout_keep=cfg["dropout_keep"], batch_size=cfg["batch_size"], n_buckets=cfg["buckets"],
        max_epochs=cfg["epochs"], patience=cfg["patience"], top_k=cfg["top_k"],
        learning_rate=cfg["lr"], loss_scope=cfg["loss_scope"], clip_norm=cfg["clip_norm"],
        min_count=cfg["min_count"], ontology=_ontology(args, root), database=_database(args, root),
        seed=cfg["seed"])

    def report(rec):
        print(f"epoch {rec.epoch:3d}  loss {rec.train_loss:.4f}  dev joint {rec.dev_accuracy:.4f}"
              f"  ({rec.wall_time:.1f}s)", flush=True)

    est.fit(train_d, X_dev=dev_d, log_path=log_path, on_epoch=report)
    est.save(out, {"effective_config": cfg})
    print(f"best dev joint accuracy {est.best_score_:.4f} at epoch {est.best_epoch_}; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    root = _data_root(args)
    flist = Path(args.flist) if args.flist else _flist(args, root, args.split)
    dialogues = D.load_dstc2(root, flist)
    report = evaluate(model, dialogues, dataset=args.split if not args.flist else flist.stem,
                      onset=args.onset, strict_vocab=True)
    report.extra = {"checkpoint": str(args.ckpt), "file_list": str(flist),
                    "config": ckpt.meta.get("effective_config", ckpt.config)}
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_resplit(args) -> int:
    ratios = tuple(args.ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise UsageError(f"--ratios must be three non-negative numbers summing to 1, got {list(ratios)}")
    root = _data_root(args)
    entries, sources = [], []
    for split in ("train", "dev", "test"):
        p = _flist(args, root, split)
        sources.append(str(p))
        entries.extend(D.read_file_list(p))
    manifest = D.write_resplit(args.out, entries, ratios, args.seed, sources)
    c = manifest["counts"]
    print(f"train {c['train']}  dev {c['dev']}  test {c['test']}  -> {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    root = _data_root(args)
    splits = {}
    for split in ("train", "dev", "test"):
        try:
            splits[split] = D.load_dstc2(root, _flist(args, root, split))
        except D.LoadError as e:
            if split == "train":
                raise
            log.warning("skipping %s: %s", split, e)
    train_d = splits["train"]
    hist = D.triple_frequency(train_d, {k: v for k, v in splits.items() if k != "train"})
    summary = {k: D.length_summary(v) for k, v in splits.items()}
    print("dialogues: " + "  ".join(f"{k} {len(v)}" for k, v in splits.items()))
    for k, s in summary.items():
        if s.get("n_turns"):
            print(f"{k} history length: max {s['max']}  p95 {s['p95']:.1f}  median {s['p50']:.1f}"
                  f"  turns {s['n_turns']}")
    print(f"distinct train triples: {len(hist.counts)}")
    for k, unseen in hist.unseen.items():
        print(f"{k}: {len(unseen)} triples unseen in train ({sum(unseen.values())} turns)")
    print("triple frequencies (least to most frequent):")
    for triple, count in hist.counts:
        print(f"  {count:6d}  " + ", ".join("None" if v is None else v for v in triple))
    if args.out:
        payload = {"dialogues": {k: len(v) for k, v in splits.items()}, "lengths": summary,
                   "triples": hist.as_dict()}
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _fmt_goal(goal) -> str:
    return " ".join(f"{s}={'None' if v is None else v}" for s, v in zip(D.SLOTS, goal))


def run_tracking(session: TrackerSession, lines, out, prompt=None) -> None:
    """Alternate system/user lines, printing the goal after every word.

    A line may start with ``system:`` or ``user:`` to set the speaker
    explicitly.  ``:reset`` starts a new dialogue and ``:quit`` stops.
    """
    role = "system"
    if prompt:
        prompt(role)
    for raw in lines:
        line = raw.strip()
        if line == ":quit":
            break
        if line == ":reset":
            session.reset()
            role = "system"
            print(f"reset  {_fmt_goal(session.current())}", file=out)
        else:
            for prefix in ("system:", "user:"):
                if line.lower().startswith(prefix):
                    role = prefix[:-1]
                    line = line[len(prefix):]
            for word in tokenize(line):
                goal = session.feed(word, role)
                print(f"{role:<6} {word:<16} {_fmt_goal(goal)}", file=out)
            role = "user" if role == "system" else "system"
        out.flush()
        if prompt:
            prompt(role)


def cmd_track(args) -> int:
    model = load_checkpoint(args.ckpt).build_model()
    session = model.session()
    if args.transcript:
        with open(args.transcript, encoding="utf-8") as f:
            run_tracking(session, f, sys.stdout)
        return EXIT_OK
    interactive = sys.stdin.isatty()
    prompt = (lambda role: print(f"{role}> ", end="", file=sys.stderr, flush=True)) if interactive else None
    if interactive:
        print(f"fresh  {_fmt_goal(session.current())}", file=sys.stderr)
    run_tracking(session, sys.stdin, sys.stdout, prompt)
    return EXIT_OK


def cmd_make_corpus(args) -> int:
    from .synthetic import write_corpus

    info = write_corpus(args.out, args.dialogues, args.seed)
    print(f"wrote {args.dialogues} synthetic dialogues under {info['root']}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _data_args(p, splits=("train", "dev", "test")):
    p.add_argument("--data", help=f"DSTC2 root (default: ${DATA_ENV})")
    for s in splits:
        p.add_argument(f"--flist-{s}", dest=f"flist_{s}", help=f"{s} file list")
    p.add_argument("--ontology", help="ontology JSON")
    p.add_argument("--db", help="restaurant database JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dstrnn", description="GRU dialogue state tracker")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a tracker with early stopping")
    _data_args(p, ("train", "dev"))
    p.add_argument("--config", help="JSON file of training defaults")
    p.add_argument("--model", choices=["indep", "joint", "encdec"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--dropout-keep", type=float)
    p.add_argument("--loss-scope", choices=["full_history", "last_turn"])
    p.add_argument("--buckets", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--min-count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch JSON lines log (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="schedule-2 accuracy of a checkpoint")
    _data_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=["train", "dev", "test"], default="test")
    p.add_argument("--flist", help="evaluate this file list instead of --split")
    p.add_argument("--onset", choices=["joint", "per_slot"], default="joint")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("resplit", help="merge all splits and re-split them at random")
    _data_args(p)
    p.add_argument("--ratios", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_resplit)

    p = sub.add_parser("stats", help="label triple frequencies and history lengths")
    _data_args(p)
    p.add_argument("--out", help="write statistics as JSON")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("track", help="word-by-word tracking REPL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--transcript", help="read lines from a file instead of stdin")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("make-corpus", help="write the synthetic micro-corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--dialogues", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"dstrnn: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (D.DataError, DatabaseError, CheckpointError, VocabularyMismatch, FileNotFoundError,
            json.JSONDecodeError) as e:
        print(f"dstrnn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"dstrnn: failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
