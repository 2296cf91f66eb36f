"""Multi-seed ablation batteries and hyperparameter sweeps over one dataset."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import GRIDS, TrainingConfig
from .data import Dataset
from .trainer import train

# variant name -> config changes relative to the full model
VARIANTS: dict[str, dict] = {
    "full": {},
    "-SA": {"no_sa": True},
    "-DH": {"no_dh": True},
    "-SSL": {"no_ssl": True},
}


@dataclass(frozen=True)
class RunRecord:
    variant: str
    seed: int
    recall: float
    ndcg: float
    mad_user: float
    mad_item: float
    group_recall: tuple[float, ...]
    best_epoch: int


def _nanmean(a: np.ndarray, axis=None):
    """Mean over finite entries; nan where a slice has none (without numpy's warning)."""
    a = np.asarray(a, dtype=np.float64)
    ok = np.isfinite(a)
    count = ok.sum(axis=axis)
    total = np.where(ok, a, 0.0).sum(axis=axis)
    return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


@dataclass
class AblationReport:
    runs: list[RunRecord] = field(default_factory=list)

    def variants(self) -> list[str]:
        seen: list[str] = []
        for r in self.runs:
            if r.variant not in seen:
                seen.append(r.variant)
        return seen

    def of(self, variant: str) -> list[RunRecord]:
        return [r for r in self.runs if r.variant == variant]

    def mean(self, variant: str, attr: str) -> float:
        return _mean_sd([getattr(r, attr) for r in self.of(variant)])[0]

    def sparsest_group(self, variant: str) -> float:
        return float(_nanmean([r.group_recall[0] for r in self.of(variant)]))

    def paired_difference(self, variant: str, attr: str = "recall", other: str = "full") -> tuple[float, float]:
        """Mean and standard error of ``other - variant`` over seeds both have run."""
        a = {r.seed: getattr(r, attr) for r in self.of(other)}
        b = {r.seed: getattr(r, attr) for r in self.of(variant)}
        diffs = [a[s] - b[s] for s in sorted(a.keys() & b.keys())]
        m, sd = _mean_sd(diffs)
        return m, sd / math.sqrt(len(diffs)) if diffs else float("nan")

    def comparison_tsv(self, k: int = 20) -> str:
        lines = [f"variant\tseeds\trecall@{k}\trecall@{k}_sd\tndcg@{k}\tndcg@{k}_sd\n"]
        for v in self.variants():
            rec = _mean_sd([r.recall for r in self.of(v)])
            nd = _mean_sd([r.ndcg for r in self.of(v)])
            lines.append(f"{v}\t{len(self.of(v))}\t{rec[0]!r}\t{rec[1]!r}\t{nd[0]!r}\t{nd[1]!r}\n")
        return "".join(lines)

    def mad_tsv(self) -> str:
        lines = ["variant\tseeds\tmad_user\tmad_item\n"]
        for v in self.variants():
            lines.append(
                f"{v}\t{len(self.of(v))}\t{self.mean(v, 'mad_user')!r}\t{self.mean(v, 'mad_item')!r}\n"
            )
        return "".join(lines)

    def density_tsv(self, k: int = 20) -> str:
        lines = [f"variant\tgroup\trecall@{k}\n"]
        for v in self.variants():
            per_group = np.array([r.group_recall for r in self.of(v)], dtype=np.float64)
            for g, value in enumerate(_nanmean(per_group, axis=0).tolist()):
                lines.append(f"{v}\t{g}\t{value!r}\n")
        return "".join(lines)

    def runs_tsv(self, k: int = 20) -> str:
        lines = [f"variant\tseed\trecall@{k}\tndcg@{k}\tmad_user\tmad_item\tbest_epoch\tgroup_recall@{k}\n"]
        for r in self.runs:
            groups = ",".join(repr(g) for g in r.group_recall)
            lines.append(
                f"{r.variant}\t{r.seed}\t{r.recall!r}\t{r.ndcg!r}\t{r.mad_user!r}\t{r.mad_item!r}\t{r.best_epoch}\t{groups}\n"
            )
        return "".join(lines)


def run_one(dataset: Dataset, config: TrainingConfig, variant: str = "full") -> RunRecord:
    result = train(dataset, config)
    m = result.evaluate("test")
    groups = tuple(row[f"recall@{config.topk}"] for row in result.groups())
    return RunRecord(variant, config.seed, m.recall, m.ndcg, m.mad_user, m.mad_item, groups, result.state.best_epoch)


def run_ablation(
    dataset: Dataset,
    config: TrainingConfig,
    seeds: Iterable[int],
    variants: Sequence[str] = tuple(VARIANTS),
    progress: Callable[[RunRecord], None] | None = None,
) -> AblationReport:
    """Train every variant on every seed; a seed fixes split, init and sampling for all variants."""
    report = AblationReport()
    for seed in seeds:
        for name in variants:
            record = run_one(dataset, config.replace(seed=seed, **VARIANTS[name]), name)
            report.runs.append(record)
            if progress is not None:
                progress(record)
    return report


def run_sweep(
    dataset: Dataset,
    config: TrainingConfig,
    param: str,
    values: Sequence | None = None,
    seeds: Iterable[int] = (0,),
) -> list[dict]:
    """One row per grid value with seed-averaged test Recall/NDCG."""
    if values is None:
        if param not in GRIDS:
            raise KeyError(f"no default grid for {param!r}; choose from {sorted(GRIDS)}")
        values = GRIDS[param]
    seeds = list(seeds)
    rows = []
    for value in values:
        recs = [run_one(dataset, config.replace(**{param: value, "seed": s})) for s in seeds]
        rows.append(
            {
                "param": param,
                "value": value,
                "seeds": len(recs),
                "recall": float(np.mean([r.recall for r in recs])),
                "ndcg": float(np.mean([r.ndcg for r in recs])),
            }
        )
    return rows


def sweep_tsv(rows: Sequence[dict], k: int = 20) -> str:
    lines = [f"param\tvalue\tseeds\trecall@{k}\tndcg@{k}\n"]
    for r in rows:
        lines.append(f"{r['param']}\t{r['value']!r}\t{r['seeds']}\t{r['recall']!r}\t{r['ndcg']!r}\n")
    return "".join(lines)
