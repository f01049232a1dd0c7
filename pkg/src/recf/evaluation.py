"""Random n-way splits, label derivation, error metrics and sparsity sweeps."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import DataError, SparseLabels, SparseRatings
from .embeddings import DescriptionEmbedder, DescriptionMatrix, SkipgramConfig
from .factor_model import FitConfig, fit, predict_pairs

__all__ = [
    "VARIANTS",
    "EvalSplit",
    "SweepRecord",
    "SweepReport",
    "split_dataset",
    "derive_labels",
    "mae",
    "rmse",
    "evaluate",
    "run_sweep",
]

logger = logging.getLogger(__name__)

# variant name -> (uses labels, uses descriptions)
VARIANTS = {
    "RECF": (True, True),
    "NO-DESC": (True, False),
    "RATINGS-ONLY": (False, False),
}

REPORT_COLUMNS = ("variant", "n", "sparsity", "seed", "mae", "rmse", "mae_clamped", "rmse_clamped", "iters", "seconds")


@dataclass
class EvalSplit:
    train: SparseRatings
    label_source: SparseRatings
    labels: SparseLabels
    test: SparseRatings

    @property
    def sparsity(self) -> float:
        N, M = self.train.shape
        return len(self.train) / (N * M)


def split_dataset(ratings: SparseRatings, n: int, seed: int = 0) -> EvalSplit:
    """Shuffle the entries and deal them into ``n`` near-equal subsets.

    Subset 0 trains, subset 1 becomes labels, the remaining ``n - 2`` are
    held out. When the entry count is not divisible by ``n`` the leftover
    entries go to the lowest-numbered subsets, one each.
    """
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if len(ratings) < n:
        raise DataError(f"{len(ratings)} entries cannot be split into {n} subsets")
    order = np.random.default_rng(seed).permutation(len(ratings))
    base, extra = divmod(len(ratings), n)
    bounds = np.cumsum([0] + [base + (i < extra) for i in range(n)])
    train = ratings.subset(order[bounds[0]:bounds[1]])
    source = ratings.subset(order[bounds[1]:bounds[2]])
    test = ratings.subset(order[bounds[2]:])
    return EvalSplit(train, source, derive_labels(source), test)


def derive_labels(source: SparseRatings, threshold: float = 3.0) -> SparseLabels:
    """Like (1) where the score exceeds ``threshold``, dislike (0) otherwise."""
    return SparseLabels(
        source.n_users, source.n_items, source.users, source.items,
        (source.values > threshold).astype(float),
        user_ids=source.user_ids, item_ids=source.item_ids,
    )


def _errors(predictions, test) -> np.ndarray:
    if isinstance(test, SparseRatings):
        truth = test.values
    else:
        truth = np.asarray(test, dtype=float)
        if truth.ndim == 2:
            truth = truth[:, 2]
    predictions = np.asarray(predictions, dtype=float)
    if truth.size == 0:
        raise DataError("empty test set")
    if predictions.shape != truth.shape:
        raise ValueError(f"{predictions.size} predictions for {truth.size} test ratings")
    return truth - predictions


def mae(predictions, test) -> float:
    """Mean absolute error; ``test`` holds ratings or ``(u, v, r)`` triplets."""
    return float(np.mean(np.abs(_errors(predictions, test))))


def rmse(predictions, test) -> float:
    err = _errors(predictions, test)
    return math.sqrt(float(np.mean(err * err)))


def evaluate(model, test: SparseRatings) -> dict[str, float]:
    raw = predict_pairs(model, test.users, test.items)
    clamped = np.clip(raw, *test.scale)
    return {
        "mae": mae(raw, test),
        "rmse": rmse(raw, test),
        "mae_clamped": mae(clamped, test),
        "rmse_clamped": rmse(clamped, test),
    }


@dataclass
class SweepRecord:
    variant: str
    n: int
    seed: int
    sparsity: float
    mae: float = math.nan
    rmse: float = math.nan
    mae_clamped: float = math.nan
    rmse_clamped: float = math.nan
    iters: int = 0
    seconds: float = 0.0
    switch_iter: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepReport:
    records: list[SweepRecord] = field(default_factory=list)

    def select(self, variant: str, n: int | None = None) -> list[SweepRecord]:
        return [r for r in self.records if r.variant == variant and (n is None or r.n == n)]

    def aggregate(self) -> list[dict]:
        """Mean and sample standard deviation per (variant, n) over successful runs."""
        out = []
        keys = list(dict.fromkeys((r.variant, r.n) for r in self.records))
        for variant, n in keys:
            runs = [r for r in self.select(variant, n) if r.ok]
            row = {"variant": variant, "n": n, "runs": len(runs),
                   "failed": len(self.select(variant, n)) - len(runs)}
            row["sparsity"] = float(np.mean([r.sparsity for r in runs])) if runs else math.nan
            for metric in ("mae", "rmse", "mae_clamped", "rmse_clamped"):
                vals = np.array([getattr(r, metric) for r in runs])
                row[f"{metric}_mean"] = float(vals.mean()) if runs else math.nan
                row[f"{metric}_std"] = float(vals.std(ddof=1)) if len(runs) > 1 else 0.0
            out.append(row)
        return out

    def mean_mae(self, variant: str, n: int, clamped: bool = True) -> float:
        metric = "mae_clamped" if clamped else "mae"
        return float(np.mean([getattr(r, metric) for r in self.select(variant, n) if r.ok]))

    def to_csv(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        for r in self.records:
            lines.append(",".join([
                r.variant, str(r.n), _num(r.sparsity), str(r.seed), _num(r.mae), _num(r.rmse),
                _num(r.mae_clamped), _num(r.rmse_clamped), str(r.iters), "%.3f" % r.seconds,
            ]))
        lines.append("")
        lines.append("# aggregate")
        lines.append(self.aggregate_csv().rstrip("\n"))
        return "\n".join(lines) + "\n"

    def aggregate_csv(self) -> str:
        cols = ["variant", "n", "sparsity", "runs", "failed"] + [
            f"{m}_{s}" for m in ("mae", "rmse", "mae_clamped", "rmse_clamped") for s in ("mean", "std")
        ]
        lines = [",".join(cols)]
        for row in self.aggregate():
            lines.append(",".join(str(row[c]) if isinstance(row[c], (int, str)) else _num(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else "%.10g" % x


def run_sweep(ratings: SparseRatings, Q: Sequence[Sequence[str]] | None, cfg: FitConfig = FitConfig(),
              n_values: Sequence[int] = (3, 5, 10, 15, 20), seeds: Sequence[int] = (0, 1, 2, 3, 4),
              variants: Sequence[str] = tuple(VARIANTS), skipgram: SkipgramConfig = SkipgramConfig(),
              min_count: int = 1, C: DescriptionMatrix | None = None, timing: bool = False) -> SweepReport:
    """Split, label, fit and score every (variant, n, seed) cell.

    Word vectors depend only on the descriptions, so they are trained once
    and shared by every cell. ``NO-DESC`` fits with no description term and
    ``RATINGS-ONLY`` additionally drops the labels; neither touches ``Q``.
    A cell that raises is recorded with its error message and NaN metrics.
    ``timing`` fills the ``seconds`` column with wall-clock time, which
    makes the report non-reproducible byte for byte.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    if C is None and Q is not None and any(VARIANTS[v][1] for v in variants):
        emb = DescriptionEmbedder(skipgram.dim, skipgram.window, skipgram.epochs, skipgram.initial_step,
                                  min_count, skipgram.seed)
        C = emb.fit(Q).transform(Q)

    report = SweepReport()
    for n in n_values:
        for seed in seeds:
            split = split_dataset(ratings, n, seed)
            for variant in variants:
                use_labels, use_desc = VARIANTS[variant]
                rec = SweepRecord(variant, n, seed, split.sparsity)
                vcfg = replace(cfg, seed=seed,
                               lambda_L=cfg.lambda_L if use_labels else 0.0,
                               lambda_C=cfg.lambda_C if use_desc else 0.0)
                t0 = time.perf_counter()
                try:
                    model, trace = fit(split.train, split.labels if use_labels else None,
                                       C if use_desc else None, vcfg)
                    for k, v in evaluate(model, split.test).items():
                        setattr(rec, k, v)
                    rec.iters = trace.n_iter
                    rec.switch_iter = trace.switch_iter
                except Exception as exc:  # recorded, not fatal
                    logger.warning("cell variant=%s n=%d seed=%d failed: %s", variant, n, seed, exc)
                    rec.error = f"{type(exc).__name__}: {exc}"
                if timing:
                    rec.seconds = time.perf_counter() - t0
                logger.info("%s n=%d seed=%d mae=%.4f rmse=%.4f iters=%d", variant, n, seed,
                            rec.mae_clamped, rec.rmse_clamped, rec.iters)
                report.records.append(rec)
    return report
