"""Splits, Adam, the epoch loop, checkpoints and run-level training."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainingConfig
from .data import Dataset, InteractionGraph
from .evaluation import Metrics, density_group_eval, mad, ranking_metrics
from .model import ForwardResult, Structure, forward_pass, init_params
from .objective import LossWeights, infonce, margin_loss, sample_negatives, score, total_loss

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "L", "L_m", "L_c_u", "L_c_v", "recall@20", "ndcg@20")
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class Split:
    train: InteractionGraph
    valid: InteractionGraph
    test: InteractionGraph

    def relevant(self, part: str) -> dict[int, list[int]]:
        g = getattr(self, part)
        return {u: list(items) for u, items in enumerate(g.user_neighbors) if items}

    def known(self, *parts: str) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for part in parts:
            for u, items in enumerate(getattr(self, part).user_neighbors):
                if items:
                    out.setdefault(u, []).extend(items)
        return out


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    base = int(np.floor(x))
    return base + int(rng.random() < x - base)


def split_edges(
    graph: InteractionGraph, seed: int, valid_frac: float = 0.1, test_frac: float = 0.1
) -> Split:
    """Per-user random holdout; every user with edges keeps at least one training edge."""
    rng = np.random.default_rng([seed, 0x5B17])
    train, valid, test = [], [], []
    for u, items in enumerate(graph.user_neighbors):
        if not items:
            continue
        items = [items[i] for i in rng.permutation(len(items))]
        n = len(items)
        n_test = _stochastic_round(test_frac * n, rng)
        n_valid = _stochastic_round(valid_frac * n, rng)
        n_test = min(n_test, n - 1)
        n_valid = min(n_valid, n - 1 - n_test)
        test += [(u, v) for v in items[:n_test]]
        valid += [(u, v) for v in items[n_test : n_test + n_valid]]
        train += [(u, v) for v in items[n_test + n_valid :]]
    return Split(graph.subgraph(train), graph.subgraph(valid), graph.subgraph(test))


# ---------------------------------------------------------------------------
# optimiser state


@dataclass
class ModelState:
    params: dict[str, Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    rng: np.random.Generator
    step: int = 0
    epoch: int = 0
    best_recall: float = -1.0
    best_epoch: int = 0
    bad_evals: int = 0

    @classmethod
    def fresh(cls, params: dict[str, Tensor], seed: int) -> "ModelState":
        return cls(
            params=params,
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
            rng=np.random.default_rng([seed, 0x7A1]),
        )

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}


def init_state(dataset: Dataset, config: TrainingConfig) -> ModelState:
    params = init_params(
        dataset.graph.n_users, dataset.n_entities, dataset.n_relations, config, config.seed
    )
    return ModelState.fresh(params, config.seed)


def adam_step(
    state: ModelState, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> None:
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in state.params.items():
        if p.grad is None:
            continue
        g = p.grad
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# losses


@dataclass
class BatchLoss:
    total: Tensor
    margin: float
    contrast_user: float
    contrast_item: float


def _contrast(local: list[Tensor], global_: list[Tensor], rows: np.ndarray, config) -> Tensor | None:
    if not global_ or len(rows) < 2:
        return None
    acc = None
    for lz, gz in zip(local, global_):
        if config.contrast_scope == "batch":
            lz, gz = ad.gather_rows(lz, rows), ad.gather_rows(gz, rows)
        term = infonce(lz, gz, config.tau, config.include_positive)
        acc = term if acc is None else ad.add(acc, term)
    return acc


def batch_loss(
    fw: ForwardResult,
    params: dict[str, Tensor],
    users: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    config: TrainingConfig,
) -> BatchLoss:
    zu = ad.gather_rows(fw.user_final, users)
    L_m = margin_loss(
        score(zu, ad.gather_rows(fw.item_final, pos)),
        score(zu, ad.gather_rows(fw.item_final, neg)),
    )
    weights = LossWeights(config.effective_lambda1, config.lambda2, config.tau)
    zero = Tensor(0.0)
    L_cu = L_cv = zero
    if weights.lambda1:
        n_u, n_v = fw.user_final.shape[0], fw.item_final.shape[0]
        if config.contrast_scope == "batch":
            user_rows = np.unique(users)
            item_rows = np.unique(np.concatenate([pos, neg]))
        else:
            user_rows, item_rows = np.arange(n_u), np.arange(n_v)
        L_cu = _contrast(fw.user_local, fw.user_global, user_rows, config) or zero
        L_cv = _contrast(fw.item_local, fw.item_global, item_rows, config) or zero
    loss = total_loss(L_m, L_cu, L_cv, params, weights)
    return BatchLoss(loss, float(L_m.data), float(L_cu.data), float(L_cv.data))


def full_loss(structure: Structure, params, users, pos, neg, config, operators=None) -> Tensor:
    """Loss for fixed (user, positive, negative) triples; handy for gradient checks.

    Pass ``operators`` from a reference forward pass to hold the hypergraphs fixed.
    """
    fw = forward_pass(structure, params, config, operators)
    return batch_loss(fw, params, np.asarray(users), np.asarray(pos), np.asarray(neg), config).total


# ---------------------------------------------------------------------------
# epochs


@dataclass
class EpochMetrics:
    epoch: int
    L: float
    L_m: float
    L_c_u: float
    L_c_v: float


def train_epoch(structure: Structure, state: ModelState, config: TrainingConfig) -> EpochMetrics:
    graph = structure.graph
    edges = np.array(graph.sorted_edges(), dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise TrainingError("no training edges")
    order = state.rng.permutation(len(edges))
    sums = np.zeros(4)
    for lo in range(0, len(edges), config.batch_size):
        batch = edges[order[lo : lo + config.batch_size]]
        users, pos = batch[:, 0], batch[:, 1]
        neg = np.array([sample_negatives(graph, int(u), state.rng) for u in users], dtype=np.int64)
        fw = forward_pass(structure, state.params, config)
        bl = batch_loss(fw, state.params, users, pos, neg, config)
        value = float(bl.total.data)
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss {value} at epoch {state.epoch + 1}, step {state.step + 1}; "
                f"batch users={users.tolist()} pos={pos.tolist()} neg={neg.tolist()}"
            )
        for p in state.params.values():
            p.zero_grad()
        bl.total.backward()
        adam_step(state, config.learning_rate)
        sums += (value, bl.margin, bl.contrast_user, bl.contrast_item)
    state.epoch += 1
    return EpochMetrics(state.epoch, *sums.tolist())


# ---------------------------------------------------------------------------
# evaluation of a parameter set


def representations(structure: Structure, params, config: TrainingConfig):
    fw = forward_pass(structure, params, config)
    return fw.user_final.data, fw.item_final.data, fw


def evaluate_params(
    structure: Structure,
    params,
    config: TrainingConfig,
    relevant: dict[int, list[int]],
    exclude: dict[int, list[int]] | None = None,
    with_mad: bool = True,
) -> Metrics:
    zu, zv, fw = representations(structure, params, config)
    m = ranking_metrics(zu, zv, relevant, exclude, config.topk)
    if not with_mad:
        return m
    if config.mad_source == "last":
        mu, mv = fw.user_layers[-1].data, fw.item_layers[-1].data
    else:
        mu, mv = zu, zv
    return Metrics(m.recall, m.ndcg, m.n_users, mad(mu), mad(mv))


def group_breakdown(structure: Structure, params, config: TrainingConfig, split: Split) -> list[dict]:
    zu, zv, _ = representations(structure, params, config)
    return density_group_eval(
        zu,
        zv,
        split.train.item_degree,
        split.relevant("test"),
        split.known("train", "valid"),
        config.groups,
        config.topk,
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: ModelState, config: TrainingConfig) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = list(state.params)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "tensors": [{"name": n, "shape": list(state.params[n].shape)} for n in names],
        "layout": "params, adam_m, adam_v (each in tensor order)",
        "config": config.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "best_recall": state.best_recall,
        "best_epoch": state.best_epoch,
        "bad_evals": state.bad_evals,
        "rng": state.rng.bit_generator.state,
    }
    arrays = [state.params[n].data for n in names]
    arrays += [state.m[n] for n in names] + [state.v[n] for n in names]
    ad.save_tensors(path / "tensors.bin", arrays)
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelState, TrainingConfig]:
    path = Path(path)
    if not (path / "manifest.json").is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with open(path / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    names = [t["name"] for t in manifest["tensors"]]
    arrays = ad.load_tensors(path / "tensors.bin", 3 * len(names))
    n = len(names)
    params = {k: Tensor(a, requires_grad=True, name=k) for k, a in zip(names, arrays[:n])}
    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng"]
    state = ModelState(
        params=params,
        m=dict(zip(names, arrays[n : 2 * n])),
        v=dict(zip(names, arrays[2 * n :])),
        rng=rng,
        step=manifest["step"],
        epoch=manifest["epoch"],
        best_recall=manifest["best_recall"],
        best_epoch=manifest["best_epoch"],
        bad_evals=manifest["bad_evals"],
    )
    return state, TrainingConfig.from_dict(manifest["config"])


# ---------------------------------------------------------------------------
# full runs


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if not isinstance(x, int) else str(x)


@dataclass
class TrainResult:
    state: ModelState
    best_params: dict[str, Tensor]
    history: list[dict] = field(default_factory=list)
    split: Split | None = None
    structure: Structure | None = None

    def evaluate(self, part: str = "test", params=None, with_mad: bool = True) -> Metrics:
        exclude = {
            "test": ("train", "valid"),
            "valid": ("train",),
            "train": (),
        }[part]
        return evaluate_params(
            self.structure,
            params if params is not None else self.best_params,
            self.config,
            self.split.relevant(part),
            self.split.known(*exclude) if exclude else None,
            with_mad,
        )

    def groups(self, params=None) -> list[dict]:
        return group_breakdown(
            self.structure, params if params is not None else self.best_params, self.config, self.split
        )

    config: TrainingConfig = field(default_factory=TrainingConfig)


def history_tsv(rows: Iterable[dict]) -> str:
    lines = ["\t".join(HISTORY_COLUMNS)]
    for r in rows:
        lines.append("\t".join(_fmt(r.get(c)) for c in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


def read_history(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = []
        for line in fh:
            vals = line.rstrip("\n").split("\t")
            rows.append({k: (None if v == "" else (int(v) if k == "epoch" else float(v))) for k, v in zip(header, vals)})
    return rows


def train(
    dataset: Dataset,
    config: TrainingConfig,
    out_dir=None,
    resume_from=None,
    stop_after: int | None = None,
) -> TrainResult:
    """Train with validation-based model selection and early stopping.

    ``out_dir`` receives ``checkpoint/`` (best by validation Recall@k),
    ``last/`` (latest state, for resuming) and ``history.tsv``.
    ``stop_after`` halts after that many epochs in this call (used to
    produce resumable partial runs).
    """
    split = split_edges(dataset.graph, config.seed)
    structure = Structure.build(dataset, split.train)
    history: list[dict] = []
    if resume_from is not None:
        state, saved = load_checkpoint(Path(resume_from) / "last")
        if saved != config:
            raise ValueError("resume config differs from checkpoint config")
        history = read_history(Path(resume_from) / "history.tsv")
        best_state, _ = load_checkpoint(Path(resume_from) / "checkpoint")
        best = best_state.copy_params()
    else:
        state = init_state(dataset, config)
        best = state.copy_params()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume_from is None:
            save_checkpoint(out_dir / "checkpoint", state, config)

    relevant_valid = split.relevant("valid")
    exclude_valid = split.known("train")
    ran = 0
    while state.epoch < config.epochs and state.bad_evals < config.patience:
        if stop_after is not None and ran >= stop_after:
            break
        em = train_epoch(structure, state, config)
        ran += 1
        row = {"epoch": em.epoch, "L": em.L, "L_m": em.L_m, "L_c_u": em.L_c_u, "L_c_v": em.L_c_v}
        improved = False
        if em.epoch % config.eval_every == 0 and relevant_valid:
            vm = evaluate_params(structure, state.params, config, relevant_valid, exclude_valid, False)
            row["recall@20"], row["ndcg@20"] = vm.recall, vm.ndcg
            if vm.recall > state.best_recall:
                state.best_recall, state.best_epoch, state.bad_evals = vm.recall, em.epoch, 0
                best = state.copy_params()
                improved = True
            else:
                state.bad_evals += 1
        elif not relevant_valid:
            best = state.copy_params()
            improved = True
        history.append(row)
        log.debug("epoch %d L=%.6f", em.epoch, em.L)
        if out_dir is not None and improved:
            save_checkpoint(out_dir / "checkpoint", state, config)

    if out_dir is not None:
        save_checkpoint(out_dir / "last", state, config)
        with open(out_dir / "history.tsv", "w", encoding="utf-8") as fh:
            fh.write(history_tsv(history))

    best_params = {k: Tensor(a, name=k) for k, a in best.items()}
    return TrainResult(state, best_params, history, split, structure, config)
