"""``dgms`` command line: one subcommand per pipeline stage.

Exit codes: 0 ok, 1 usage error, 2 bad input data, 3 runtime failure.
Before doing any work each command echoes its effective configuration to
stderr as one JSON line; failures add a human-readable message and a JSON
``{"error": ...}`` line.

Settings come from built-in defaults, then ``--config FILE`` (a JSON object
keyed by flag name), then explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence, TextIO

from . import __version__
from .autodiff import KinkError
from .codegraph import AstFormatError, build_program_graph, decode_ast_json
from .corpus import Corpus, CorpusError, FilterConfig, load_corpus, save_corpus
from .diagnostics import model_gradcheck
from .embeddings import EmbeddingFormatError, HashedEmbeddings, load_embeddings
from .graph import GraphError, GraphFormatError, encode_graph_json
from .minilang import MiniLangSyntaxError, parse_minilang
from .model import CheckpointError, ModelConfig, dump_json, params_from_checkpoint
from .retrieval import EmbeddingIndex, IndexMismatchError, Scorer, build_index, evaluate, search, write_json
from .textgraph import ParseError, text_graph_from_string
from .training import TrainConfig, TrainingError, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

DATA_ERRORS = (
    OSError,
    json.JSONDecodeError,
    UnicodeDecodeError,
    GraphFormatError,
    GraphError,
    AstFormatError,
    MiniLangSyntaxError,
    ParseError,
    EmbeddingFormatError,
    CheckpointError,
    CorpusError,
    IndexMismatchError,
)
RUNTIME_ERRORS = (TrainingError, KinkError, ArithmeticError, MemoryError)

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "embeddings": None,
    "pool_size": 100,
    "top_k": 10,
    "match_op": "submul",
    "agg_op": "fcmax",
    "rgcn_dim": 100,
    "agg_dim": 100,
    "layers": 1,
    "epochs": 10,
    "margin": 0.5,
    "lr": 1e-4,
    "batch": 10,
    "resample_negatives": True,
    "min_lines": 3,
    "min_words": 3,
    "max_nodes": 300,
    "dedupe_docs": True,
    "english_only": False,
    "pairs": 20,
    "lang": "minilang",
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class UsageError(CliError):
    def __init__(self, message: str):
        super().__init__(message, EXIT_USAGE)


class DataError(CliError):
    def __init__(self, message: str):
        super().__init__(message, EXIT_DATA)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


# -- argument grammar ------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", metavar="PATH", help="JSON object of settings keyed by flag name")
    g.add_argument("--seed", type=int, metavar="N", default=None, help="random seed (default 0)")
    g.add_argument(
        "--threads", type=int, metavar="N", default=None, help="worker threads (default $DGMS_THREADS or all cores)"
    )
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _io(p: argparse.ArgumentParser, in_help: str, out_help: str) -> None:
    p.add_argument("--in", dest="in_path", metavar="PATH", default=None, help=in_help)
    p.add_argument("--out", dest="out_path", metavar="PATH", default=None, help=out_help)


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--match-op", choices=["none", "sub", "mul", "submul"], default=None)
    g.add_argument("--agg-op", choices=["avg", "max", "fcavg", "fcmax"], default=None)
    g.add_argument("--rgcn-dim", type=int, metavar="N", default=None)
    g.add_argument("--embeddings", metavar="PATH", default=None, help="GloVe-format vectors (default: hashed)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, metavar="N", default=None)
    g.add_argument("--margin", type=float, metavar="F", default=None)
    g.add_argument("--lr", type=float, metavar="F", default=None)
    g.add_argument("--batch", type=int, metavar="N", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgms", description="Graph-matching semantic code search.")
    parser.add_argument("--version", action="version", version=f"dgms {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    graph = sub.add_parser("graph", help="build one text or code graph as JSON")
    gsub = graph.add_subparsers(dest="graph_kind", metavar="KIND", parser_class=_Parser)
    gsub.required = True
    gt = gsub.add_parser("text", help="plain sentence or bracketed parse -> text graph")
    _io(gt, "input text file (default stdin)", "graph JSON (default stdout)")
    _common(gt)
    gc = gsub.add_parser("code", help="MiniLang source or AST JSON -> program graph")
    _io(gc, "input source/AST file (default stdin)", "graph JSON (default stdout)")
    gc.add_argument("--lang", choices=["minilang", "ast-json"], default=None)
    _common(gc)

    corpus = sub.add_parser("corpus", help="corpus operations")
    csub = corpus.add_subparsers(dest="corpus_cmd", metavar="ACTION", parser_class=_Parser)
    csub.required = True
    cb = csub.add_parser("build", help="filter a raw JSONL corpus and build its graphs")
    _io(cb, "raw JSONL of {id, doc, code|ast[, parse]}", "built corpus JSONL")
    f = cb.add_argument_group("filters")
    f.add_argument("--min-lines", type=int, metavar="N", default=None)
    f.add_argument("--min-words", type=int, metavar="N", default=None)
    f.add_argument("--max-nodes", type=int, metavar="N", default=None)
    f.add_argument("--english-only", action="store_true", default=None)
    _common(cb)

    tr = sub.add_parser("train", help="train a model and write the best checkpoint")
    _io(tr, "training corpus (built or raw JSONL)", "checkpoint JSON")
    tr.add_argument("--val", metavar="PATH", default=None, help="validation corpus (default: the training corpus)")
    tr.add_argument("--log", dest="log_path", metavar="PATH", default=None, help="JSON-lines epoch log")
    _model_flags(tr)
    _train_flags(tr)
    _common(tr)

    gcheck = sub.add_parser("gradcheck", help="finite-difference check of the full loss gradient")
    gcheck.add_argument("--pairs", type=int, metavar="N", default=None)
    gcheck.add_argument("--out", dest="out_path", metavar="PATH", default=None, help="also write the report here")
    _common(gcheck)

    index = sub.add_parser("index", help="code embedding index")
    isub = index.add_subparsers(dest="index_cmd", metavar="ACTION", parser_class=_Parser)
    isub.required = True
    ib = isub.add_parser("build", help="precompute code-side node embeddings")
    _io(ib, "corpus JSONL", "index directory")
    ib.add_argument("--checkpoint", metavar="PATH", default=None)
    ib.add_argument("--embeddings", metavar="PATH", default=None)
    _common(ib)

    ev = sub.add_parser("evaluate", help="MRR and S@k over seeded candidate pools")
    _io(ev, "corpus JSONL", "report JSON (default stdout)")
    ev.add_argument("--checkpoint", metavar="PATH", default=None)
    ev.add_argument("--index", metavar="PATH", default=None)
    ev.add_argument("--pool-size", type=int, metavar="N", default=None)
    ev.add_argument("--embeddings", metavar="PATH", default=None)
    _common(ev)

    se = sub.add_parser("search", help="rank corpus code for a natural-language query")
    se.add_argument("query", nargs="?", default=None, help="query text (omit with --repl)")
    se.add_argument("--in", dest="in_path", metavar="PATH", default=None, help="corpus JSONL")
    se.add_argument("--checkpoint", metavar="PATH", default=None)
    se.add_argument("--index", metavar="PATH", default=None)
    se.add_argument("--top-k", type=int, metavar="N", default=None)
    se.add_argument("--repl", action="store_true", help="read queries line by line from stdin")
    se.add_argument("--embeddings", metavar="PATH", default=None)
    _common(se)
    return parser


# -- effective configuration --------------------------------------------------------

_NOT_SETTINGS = {"command", "graph_kind", "corpus_cmd", "index_cmd", "config", "verbose", "query", "repl"}
_PATH_KEYS = {"in_path", "out_path", "val", "log_path", "checkpoint", "index", "embeddings"}
_ALIASES = {"in": "in_path", "out": "out_path", "log": "log_path"}


def _load_config_file(path: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError(f"config file {path} must hold a JSON object")
    out = {}
    for key, value in raw.items():
        k = key.replace("-", "_")
        out[_ALIASES.get(k, k)] = value
    return out


# settings reachable only through --config
_CONFIG_ONLY = {
    "train": ("layers", "agg_dim", "resample_negatives"),
    "corpus build": ("dedupe_docs",),
}


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags, restricted to this command's settings."""
    name = command_name(args)
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS}
    known = set(flags) | set(_CONFIG_ONLY.get(name, ()))
    file_cfg = _load_config_file(args.config) if args.config else {}
    unknown = sorted(set(file_cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys for '{name}': {', '.join(unknown)}")
    cfg = {k: DEFAULTS.get(k) for k in known}
    cfg.update(file_cfg)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if cfg.get("threads") is None:
        env = os.environ.get("DGMS_THREADS")
        try:
            cfg["threads"] = int(env) if env else (os.cpu_count() or 1)
        except ValueError:
            raise UsageError(f"DGMS_THREADS must be an integer, got {env!r}") from None
    if cfg["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    for k in _PATH_KEYS & set(cfg):
        if cfg[k] is not None and cfg[k] != "-":
            cfg[k] = str(Path(cfg[k]).expanduser().resolve())
    return dict(sorted(cfg.items()))


def command_name(args: argparse.Namespace) -> str:
    parts = [args.command]
    for k in ("graph_kind", "corpus_cmd", "index_cmd"):
        if getattr(args, k, None):
            parts.append(getattr(args, k))
    return " ".join(parts)


# -- helpers -------------------------------------------------------------------------


def _need(cfg: dict, key: str, flag: str) -> str:
    if not cfg.get(key):
        raise UsageError(f"{flag} is required")
    return cfg[key]


def _need_file(cfg: dict, key: str, flag: str) -> str:
    path = _need(cfg, key, flag)
    if path != "-" and not Path(path).exists():
        raise DataError(f"{flag} path does not exist: {path}")
    return path


def _read_input(path: str | None, stdin: TextIO) -> str:
    if path is None or path == "-":
        return stdin.read()
    if not Path(path).exists():
        raise DataError(f"input path does not exist: {path}")
    return Path(path).read_text(encoding="utf-8")


def _write_output(path: str | None, data: bytes, stdout: TextIO) -> None:
    if path is None or path == "-":
        stdout.write(data.decode("utf-8") + "\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)


def _load_corpus(cfg: dict, key: str = "in_path", flag: str = "--in") -> Corpus:
    path = _need_file(cfg, key, flag)
    corpus = load_corpus(path, _filter_config(cfg))
    if len(corpus) == 0:
        raise DataError(f"corpus {path} has no usable entries")
    return corpus


def _filter_config(cfg: dict) -> FilterConfig:
    return FilterConfig(
        min_lines=cfg.get("min_lines", DEFAULTS["min_lines"]),
        min_words=cfg.get("min_words", DEFAULTS["min_words"]),
        max_nodes=cfg.get("max_nodes", DEFAULTS["max_nodes"]),
        dedupe_docs=cfg.get("dedupe_docs", DEFAULTS["dedupe_docs"]),
        english_only=bool(cfg.get("english_only", DEFAULTS["english_only"])),
    )


def _table(cfg: dict, described: dict | None, input_dim: int):
    """Embedding lookup: explicit file, else whatever the checkpoint recorded, else hashed."""
    path = cfg.get("embeddings")
    if path:
        if not Path(path).exists():
            raise DataError(f"--embeddings path does not exist: {path}")
        table = load_embeddings(path)
        if table.dim is None:
            raise DataError(f"embedding file {path} is empty")
        return table
    if described and described.get("kind") == "hashed":
        return HashedEmbeddings(dim=int(described["dim"]), seed=int(described["seed"]), scale=described.get("scale"))
    if described and described.get("kind") == "file":
        raise UsageError("checkpoint was trained with an embedding file; pass --embeddings")
    return HashedEmbeddings(dim=input_dim)


def _load_checkpoint(cfg: dict):
    path = _need_file(cfg, "checkpoint", "--checkpoint")
    ckpt = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(ckpt, dict):
        raise CheckpointError("checkpoint must be a JSON object")
    params = params_from_checkpoint(ckpt)
    table = _table(cfg, ckpt.get("embeddings"), params.config.input_dim)
    return params, table


# -- commands ------------------------------------------------------------------------


def cmd_graph(cfg: dict, args, stdin, stdout, stderr) -> int:
    src = _read_input(cfg.get("in_path"), stdin)
    if args.graph_kind == "text":
        if not src.strip():
            raise DataError("empty text input")
        g = text_graph_from_string(src.strip())
    elif cfg["lang"] == "minilang":
        g = build_program_graph(parse_minilang(src))
    else:
        g = build_program_graph(decode_ast_json(src))
    _write_output(cfg.get("out_path"), encode_graph_json(g), stdout)
    return EXIT_OK


def cmd_corpus_build(cfg: dict, args, stdin, stdout, stderr) -> int:
    src = _need_file(cfg, "in_path", "--in")
    out = _need(cfg, "out_path", "--out")
    corpus = load_corpus(src, _filter_config(cfg))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out)
    stdout.write(json.dumps({"kept": len(corpus), "removed": corpus.removed}) + "\n")
    return EXIT_OK


def cmd_train(cfg: dict, args, stdin, stdout, stderr) -> int:
    out = _need(cfg, "out_path", "--out")
    corpus = _load_corpus(cfg)
    val = _load_corpus(cfg, "val", "--val") if cfg.get("val") else corpus
    if len(corpus) < 2 or len(val) < 2:
        raise DataError("training and validation corpora need at least 2 entries")
    table = _table(cfg, None, 300)
    model_cfg = ModelConfig(
        layers=cfg["layers"],
        rgcn_dim=cfg["rgcn_dim"],
        match_op=cfg["match_op"],
        agg_op=cfg["agg_op"],
        agg_dim=cfg["agg_dim"],
        input_dim=table.dim,
        seed=cfg["seed"],
    )
    train_cfg = TrainConfig(
        margin=cfg["margin"],
        learning_rate=cfg["lr"],
        batch_size=cfg["batch"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        resample_negatives=cfg["resample_negatives"],
        threads=cfg["threads"],
    )
    log_path = cfg.get("log_path") or out + ".log.jsonl"
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "w", encoding="utf-8") as log_fh:

        def on_epoch(rec):
            # wall time stays out of the file so reruns are byte-identical
            entry = {k: v for k, v in asdict(rec).items() if k != "seconds"}
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

        result = train(corpus, val, model_cfg, train_cfg, table, on_epoch=on_epoch)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_bytes(dump_json(result.checkpoint(table, train_cfg)))
    summary = {"best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss, "epochs": len(result.history)}
    stdout.write(json.dumps(summary) + "\n")
    return EXIT_OK


def cmd_gradcheck(cfg: dict, args, stdin, stdout, stderr) -> int:
    report = model_gradcheck(seed=cfg["seed"], pairs=cfg["pairs"]).to_dict()
    ok = report["max_rel_error"] < 1e-4
    report["ok"] = ok
    text = json.dumps(report)
    stdout.write(text + "\n")
    if cfg.get("out_path"):
        Path(cfg["out_path"]).write_text(text + "\n", encoding="utf-8")
    if not ok:
        raise CliError(f"max relative error {report['max_rel_error']:.3g} is not below 1e-4", EXIT_RUNTIME)
    return EXIT_OK


def cmd_index_build(cfg: dict, args, stdin, stdout, stderr) -> int:
    out = _need(cfg, "out_path", "--out")
    params, table = _load_checkpoint(cfg)
    corpus = _load_corpus(cfg)
    index = build_index(corpus, params, table)
    index.save(out)
    stdout.write(json.dumps({"count": len(index), "params_fingerprint": index.fingerprint}) + "\n")
    return EXIT_OK


def _load_index(cfg: dict, params, table) -> EmbeddingIndex | None:
    if not cfg.get("index"):
        return None
    path = _need_file(cfg, "index", "--index")
    try:
        return EmbeddingIndex.load(path, params, table)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, IndexMismatchError):
            raise
        raise DataError(f"bad index at {path}: {exc}") from None


def cmd_evaluate(cfg: dict, args, stdin, stdout, stderr) -> int:
    params, table = _load_checkpoint(cfg)
    corpus = _load_corpus(cfg)
    if cfg["pool_size"] < 1 or cfg["pool_size"] > len(corpus):
        raise DataError(f"--pool-size {cfg['pool_size']} needs 1..{len(corpus)} for this corpus")
    index = _load_index(cfg, params, table)
    report = evaluate(corpus, params, table, pool_size=cfg["pool_size"], seed=cfg["seed"], index=index,
                      threads=cfg["threads"])
    if cfg.get("out_path"):
        write_json(cfg["out_path"], report)
    stdout.write(json.dumps(report) + "\n")
    return EXIT_OK


def _print_ranking(ranked, corpus: Corpus, stdout: TextIO) -> None:
    docs = {e.id: e.doc for e in corpus}
    for rank, (cid, score) in enumerate(ranked.items, 1):
        doc = " ".join(docs.get(cid, "").split())
        stdout.write(f"{rank:>4}  {score:+.6f}  {cid}  {doc[:60]}\n")


def cmd_search(cfg: dict, args, stdin, stdout, stderr) -> int:
    if args.query is None and not args.repl:
        raise UsageError("give a query or --repl")
    if cfg["top_k"] < 0:
        raise UsageError("--top-k must be >= 0")
    params, table = _load_checkpoint(cfg)
    corpus = _load_corpus(cfg)
    index = _load_index(cfg, params, table)
    scorer = Scorer(corpus, params, table, index)

    def run(q: str) -> None:
        try:
            ranked = search(q, corpus, params, table, top_k=cfg["top_k"], scorer=scorer)
        except (ParseError, ValueError) as exc:
            if not args.repl:
                raise DataError(f"bad query: {exc}") from None
            stderr.write(f"bad query: {exc}\n")
            return
        _print_ranking(ranked, corpus, stdout)

    if args.query is not None:
        run(args.query)
    if args.repl:
        prompt = stdin.isatty() if hasattr(stdin, "isatty") else False
        while True:
            if prompt:
                stderr.write("query> ")
                stderr.flush()
            line = stdin.readline()
            if not line:
                break
            if line.strip():
                run(line.strip())
                stdout.write("\n")
                stdout.flush()
    return EXIT_OK


COMMANDS: dict[str, Callable] = {
    "graph text": cmd_graph,
    "graph code": cmd_graph,
    "corpus build": cmd_corpus_build,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "index build": cmd_index_build,
    "evaluate": cmd_evaluate,
    "search": cmd_search,
}


def _fail(stderr: TextIO, code: int, kind: str, message: str) -> int:
    stderr.write(f"dgms: error: {message}\n")
    stderr.write(json.dumps({"error": {"type": kind, "message": message, "exit_code": code}}) + "\n")
    return code


def run(
    argv: Sequence[str] | None = None,
    stdin: TextIO | None = None,
    stdout: TextIO | None = None,
    stderr: TextIO | None = None,
) -> int:
    """Execute one command line and return its exit code."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, stream=stderr, format="%(levelname)s %(name)s: %(message)s")
        name = command_name(args)
        cfg = effective_config(args)
        stderr.write(json.dumps({"command": name, "config": cfg}) + "\n")
        return COMMANDS[name](cfg, args, stdin, stdout, stderr)
    except CliError as exc:
        kind = {EXIT_USAGE: "usage", EXIT_DATA: "data"}.get(exc.code, "runtime")
        return _fail(stderr, exc.code, kind, str(exc))
    except DATA_ERRORS as exc:
        return _fail(stderr, EXIT_DATA, "data", f"{type(exc).__name__}: {exc}")
    except RUNTIME_ERRORS as exc:
        return _fail(stderr, EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    except (ValueError, TypeError, KeyError) as exc:
        # remaining value problems come from settings (bad sizes, ops, dims)
        return _fail(stderr, EXIT_USAGE, "usage", f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # noqa: BLE001
        return _fail(stderr, EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
