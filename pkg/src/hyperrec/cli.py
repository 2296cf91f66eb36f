"""Command-line entry point: ``hyperrec {generate,train,eval,ablate,sweep}``.

Exit codes: 0 success, 2 for user input problems (missing files, unknown or
invalid config keys, malformed data files), 1 for failures during a run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigKeyError, TrainingConfig, load_config, parse_config_text
from .data import AlignmentError, Dataset, ParseError
from .experiments import VARIANTS, run_ablation, run_sweep, sweep_tsv
from .synthetic import GeneratorConfig, GeneratorConfigError, generate
from .trainer import TrainResult, load_checkpoint, split_edges, train
from .model import Structure

log = logging.getLogger("hyperrec")

DATA_FILES = ("interactions.tsv", "statements.tsv", "alignment.tsv")
RUN_LAYOUT = {
    "manifest": "manifest.json",
    "config": "config.cfg",
    "checkpoint": "checkpoint",
    "last": "last",
    "history": "history.tsv",
    "metrics": "metrics.tsv",
    "groups": "groups.tsv",
    "users": "users.tsv",
    "items": "items.tsv",
}
ABLATION_FLAGS = {"sa": "no_sa", "dh": "no_dh", "ssl": "no_ssl"}


class UsageError(Exception):
    """Bad input from the command line; maps to exit code 2."""


# ---------------------------------------------------------------------------
# helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _data_paths(data_dir) -> list[Path]:
    data_dir = Path(data_dir)
    paths = [data_dir / name for name in DATA_FILES]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"missing data files: {', '.join(missing)}")
    return paths


def _load_dataset(data_dir) -> Dataset:
    return Dataset.load(*_data_paths(data_dir))


def _overrides(args) -> dict:
    mapping = {
        "seed": "seed",
        "tau": "tau",
        "layers": "layers",
        "k": "K",
        "lambda1": "lambda1",
        "lambda2": "lambda2",
        "lr": "learning_rate",
        "epochs": "epochs",
        "dim": "dim",
        "batch_size": "batch_size",
        "eval_every": "eval_every",
        "patience": "patience",
    }
    out = {key: getattr(args, flag) for flag, key in mapping.items() if getattr(args, flag, None) is not None}
    for flag in getattr(args, "ablation", None) or ():
        out[ABLATION_FLAGS[flag]] = True
    return out


def _config(args) -> TrainingConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise FileNotFoundError(f"config file not found: {args.config}")
    try:
        return load_config(args.config, _overrides(args))
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _metrics_tsv(rows: list[tuple[str, object]], k: int) -> str:
    lines = [f"split\trecall@{k}\tndcg@{k}\tusers\tmad_user\tmad_item\n"]
    for name, m in rows:
        lines.append(f"{name}\t{m.recall!r}\t{m.ndcg!r}\t{m.n_users}\t{m.mad_user!r}\t{m.mad_item!r}\n")
    return "".join(lines)


def _groups_tsv(rows: list[dict], k: int) -> str:
    cols = ["group", "items", "min_degree", "max_degree", "interactions", "users", f"recall@{k}"]
    lines = ["\t".join(cols) + "\n"]
    for r in rows:
        lines.append("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
    return "".join(lines)


def _id_map_tsv(ids) -> str:
    return "dense_id\texternal_id\n" + "".join(f"{i}\t{x}\n" for i, x in enumerate(ids))


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_evaluation(out: Path, result: TrainResult) -> dict:
    k = result.config.topk
    metrics = [("valid", result.evaluate("valid")), ("test", result.evaluate("test"))]
    _write(out / RUN_LAYOUT["metrics"], _metrics_tsv(metrics, k))
    _write(out / RUN_LAYOUT["groups"], _groups_tsv(result.groups(), k))
    return dict(metrics)


def _manifest(command: str, config: TrainingConfig, data_dir, paths: list[Path]) -> dict:
    return {
        "tool": "hyperrec",
        "version": __version__,
        "command": command,
        "seed": config.seed,
        "config": config.to_dict(),
        "data": {"dir": str(data_dir), "sha256": {p.name: _sha256(p) for p in paths}},
        "layout": RUN_LAYOUT,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    values = {}
    if args.config is not None:
        if not Path(args.config).is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        values.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
    for flag in ("users", "items", "clusters", "p_in", "p_out", "qualifier_rate", "seed"):
        if getattr(args, flag) is not None:
            values[flag] = getattr(args, flag)
    known = GeneratorConfig.__dataclass_fields__
    for key in values:
        if key not in known:
            raise ConfigKeyError(f"unknown generator key {key!r}")
    try:
        typed = {k: type(getattr(GeneratorConfig(), k))(v) for k, v in values.items()}
        config = GeneratorConfig(**typed)
        corpus = generate(config)
    except (ValueError, GeneratorConfigError) as exc:
        raise UsageError(f"invalid generator configuration: {exc}") from None
    files = corpus.write(args.out)
    text = "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in config.__dict__.items())
    _write(Path(args.out) / "generator.cfg", text)
    print(f"wrote {len(corpus.edges)} interactions, {len(corpus.statements)} statements to {args.out}")
    for name, path in files.items():
        log.info("%s: %s", name, path)
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    paths = _data_paths(args.data)
    dataset = Dataset.load(*paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest("train", config, args.data, paths)
    _write(out / RUN_LAYOUT["manifest"], json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    _write(out / RUN_LAYOUT["config"], config.to_text())
    _write(out / RUN_LAYOUT["users"], _id_map_tsv(dataset.graph.user_ids))
    _write(out / RUN_LAYOUT["items"], _id_map_tsv(dataset.graph.item_ids))
    result = train(dataset, config, out_dir=out)
    metrics = _write_evaluation(out, result)
    test = metrics["test"]
    print(f"test recall@{config.topk}={test.recall:.4f} ndcg@{config.topk}={test.ndcg:.4f} (best epoch {result.state.best_epoch})")
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    checkpoint = Path(args.checkpoint) if args.checkpoint else run / RUN_LAYOUT["checkpoint"]
    if not (checkpoint / "manifest.json").is_file():
        raise FileNotFoundError(f"no checkpoint at {checkpoint}")
    manifest_path = run / RUN_LAYOUT["manifest"]
    data_dir = args.data
    if data_dir is None:
        if not manifest_path.is_file():
            raise FileNotFoundError(f"no run manifest at {manifest_path}; pass --data")
        data_dir = json.loads(manifest_path.read_text(encoding="utf-8"))["data"]["dir"]
    dataset = _load_dataset(data_dir)
    state, config = load_checkpoint(checkpoint)
    split = split_edges(dataset.graph, config.seed)
    structure = Structure.build(dataset, split.train)
    result = TrainResult(state, state.params, [], split, structure, config)
    run.mkdir(parents=True, exist_ok=True)
    metrics = _write_evaluation(run, result)
    for name, m in metrics.items():
        print(f"{name}\trecall@{config.topk}={m.recall:.4f}\tndcg@{config.topk}={m.ndcg:.4f}\tmad_user={m.mad_user:.4f}\tmad_item={m.mad_item:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = _config(args)
    dataset = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = range(config.seed, config.seed + args.seeds)

    def progress(r):
        log.info("seed %d %s recall=%.4f", r.seed, r.variant, r.recall)

    report = run_ablation(dataset, config, seeds, tuple(VARIANTS), progress)
    k = config.topk
    _write(out / "ablation.tsv", report.comparison_tsv(k))
    _write(out / "mad.tsv", report.mad_tsv())
    _write(out / "density.tsv", report.density_tsv(k))
    _write(out / "runs.tsv", report.runs_tsv(k))
    _write(out / "config.cfg", config.to_text())
    sys.stdout.write(report.comparison_tsv(k))
    return 0


def cmd_sweep(args) -> int:
    config = _config(args)
    dataset = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = None
    if args.values:
        kind = type(getattr(config, args.param))
        values = [kind(v) for v in args.values.split(",")]
    seeds = range(config.seed, config.seed + args.seeds)
    try:
        rows = run_sweep(dataset, config, args.param, values, seeds)
    except ValueError as exc:
        raise UsageError(f"invalid sweep value: {exc}") from None
    text = sweep_tsv(rows, config.topk)
    _write(out / f"sweep_{args.param}.tsv", text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file with TrainingConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", action="append", choices=sorted(ABLATION_FLAGS), help="repeatable")
    p.add_argument("--tau", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--k", type=int, help="hyperedge size K")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic planted-cluster corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--config", help="key=value file with generator fields")
    g.add_argument("--seed", type=int)
    g.add_argument("--users", type=int)
    g.add_argument("--items", type=int)
    g.add_argument("--clusters", type=int)
    g.add_argument("--p-in", dest="p_in", type=float)
    g.add_argument("--p-out", dest="p_out", type=float)
    g.add_argument("--qualifier-rate", dest="qualifier_rate", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and evaluate it")
    t.add_argument("--data", required=True, help="directory with interactions/statements/alignment TSVs")
    t.add_argument("--out", required=True, help="run directory, e.g. runs/<name>")
    _training_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="re-evaluate a run's checkpoint")
    e.add_argument("--run", required=True)
    e.add_argument("--data", help="defaults to the data directory recorded in the run manifest")
    e.add_argument("--checkpoint", help="defaults to <run>/checkpoint")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="full model and -SA/-DH/-SSL on identical seeds")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, default=3)
    _training_flags(a)
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="sensitivity over one hyperparameter grid")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--param", default="tau", choices=["tau", "layers", "lambda1", "lambda2", "learning_rate"])
    s.add_argument("--values", help="comma-separated subset; defaults to the full grid")
    s.add_argument("--seeds", type=int, default=1)
    _training_flags(s)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigKeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ParseError, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure inside a run
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
