"""Sample ranking and pruning over the two-criterion (DON, NOD) matrix.

DON is a benefit criterion (more norm shrinkage is better), NOD a cost
criterion (less displacement is better). The default ranking method is
TOPSIS: vector-normalize both columns, form the ideal point Z+ =
(max DON, min NOD) and the negative-ideal Z- = (min DON, max NOD), and
score each sample by its relative closeness C = D-/(D+ + D-).

Ablation combiners mirror the alternatives this method is measured
against: single-metric rankings, a min-max weighted sum, non-dominated
(Pareto front) sorting, and a seeded random baseline.

Every method yields a strict total order: ties are broken by sample id,
so reruns are bit-identical on any platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, InvalidRatio, UsageError
from .metrics import SampleMetrics
from .seeding import stable_uniform

METHODS = ("topsis", "don_only", "nod_only", "weighted_sum", "pareto", "random")


def _column_norm_sq(col: np.ndarray) -> float:
    # Summing sorted squares makes the norm independent of row order, so
    # permuting samples permutes scores exactly rather than to rounding.
    return float(np.sort(col * col).sum())


@dataclass(frozen=True)
class CriterionMatrix:
    """Aligned (sample_id, DON, NOD) columns for n >= 1 samples."""

    sample_ids: tuple[str, ...]
    don: np.ndarray
    nod: np.ndarray

    def __post_init__(self):
        don = np.array(self.don, dtype=np.float64)
        nod = np.array(self.nod, dtype=np.float64)
        if len(self.sample_ids) < 1:
            raise DataError("criterion matrix needs at least one sample")
        if don.shape != (len(self.sample_ids),) or nod.shape != (len(self.sample_ids),):
            raise DataError(
                f"criterion columns must both have length {len(self.sample_ids)}"
            )
        if not (np.isfinite(don).all() and np.isfinite(nod).all()):
            raise DataError("criterion values must be finite")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise DataError("sample ids must be unique")
        don.setflags(write=False)
        nod.setflags(write=False)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "don", don)
        object.__setattr__(self, "nod", nod)

    @classmethod
    def from_metrics(cls, metrics: Sequence[SampleMetrics]) -> "CriterionMatrix":
        return cls(
            sample_ids=tuple(m.sample_id for m in metrics),
            don=np.array([m.don for m in metrics]),
            nod=np.array([m.nod for m in metrics]),
        )

    @property
    def n(self) -> int:
        return len(self.sample_ids)


def vector_normalize(m: CriterionMatrix) -> CriterionMatrix:
    """Divide each column by its Euclidean norm; a zero column stays zero."""
    cols = []
    for col in (m.don, m.nod):
        norm_sq = _column_norm_sq(col)
        cols.append(col / math.sqrt(norm_sq) if norm_sq > 0 else col.copy())
    return CriterionMatrix(sample_ids=m.sample_ids, don=cols[0], nod=cols[1])


def _pair_scores(m: CriterionMatrix, values: np.ndarray) -> list[tuple[str, float]]:
    return [(sid, float(v)) for sid, v in zip(m.sample_ids, values)]


def topsis_scores(m: CriterionMatrix) -> list[tuple[str, float]]:
    """Relative closeness C in [0, 1] per sample, aligned with input order.

    When every row is identical both distances vanish and C is fixed at
    0.5, the symmetric point of the score.
    """
    norm = vector_normalize(m)
    z_plus = (norm.don.max(), norm.nod.min())
    z_minus = (norm.don.min(), norm.nod.max())
    d_plus = np.hypot(norm.don - z_plus[0], norm.nod - z_plus[1])
    d_minus = np.hypot(norm.don - z_minus[0], norm.nod - z_minus[1])
    denom = d_plus + d_minus
    safe = np.where(denom > 0, denom, 1.0)
    c = np.where(denom > 0, d_minus / safe, 0.5)
    return _pair_scores(m, c)


def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.full_like(col, 0.5)
    return (col - lo) / (hi - lo)


def weighted_sum_scores(m: CriterionMatrix, weight: float = 0.5) -> list[tuple[str, float]]:
    """Naive combiner: w * DON_minmax + (1-w) * (1 - NOD_minmax)."""
    if not (0.0 <= weight <= 1.0):
        raise UsageError(f"weight must be in [0, 1], got {weight!r}")
    scores = weight * _minmax(m.don) + (1.0 - weight) * (1.0 - _minmax(m.nod))
    return _pair_scores(m, scores)


def pareto_fronts(m: CriterionMatrix) -> np.ndarray:
    """Non-dominated front index per sample (0 = Pareto-optimal)."""
    n = m.n
    counts = np.zeros(n, dtype=np.int64)
    dominated_by: list[np.ndarray] = []
    for i in range(n):
        dom = (
            (m.don[i] >= m.don)
            & (m.nod[i] <= m.nod)
            & ((m.don[i] > m.don) | (m.nod[i] < m.nod))
        )
        dom[i] = False
        js = np.nonzero(dom)[0]
        dominated_by.append(js)
        counts[js] += 1
    front = np.full(n, -1, dtype=np.int64)
    current = list(np.nonzero(counts == 0)[0])
    level = 0
    while current:
        nxt = []
        for i in current:
            front[i] = level
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(int(j))
        current = nxt
        level += 1
    return front


def pareto_rank(m: CriterionMatrix) -> list[tuple[str, float]]:
    """Score = -front index, so sorting by score descending orders fronts."""
    return _pair_scores(m, -pareto_fronts(m).astype(np.float64))


def single_metric_scores(m: CriterionMatrix, which: str) -> list[tuple[str, float]]:
    if which == "don_only":
        return _pair_scores(m, m.don)
    if which == "nod_only":
        return _pair_scores(m, -m.nod)  # lowest displacement ranks first
    raise UsageError(f"which must be 'don_only' or 'nod_only', got {which!r}")


def random_scores(m: CriterionMatrix, seed: int) -> list[tuple[str, float]]:
    """Seeded per-id scores; independent of row order by construction."""
    if seed is None:
        raise UsageError("the random method requires a seed")
    return [(sid, stable_uniform(seed, "random-method", sid)) for sid in m.sample_ids]


@dataclass(frozen=True)
class RankedSelection:
    """A total ranking plus the pruned id set it induces."""

    method: str
    ranking: tuple[tuple[str, float], ...]
    selected_ids: tuple[str, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        scores = [s for _, s in self.ranking]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise DataError("ranking scores must be non-increasing")
        if self.method == "topsis" and scores:
            if min(scores) < 0.0 or max(scores) > 1.0:
                raise DataError("topsis scores must lie in [0, 1]")


def rank(
    m: CriterionMatrix,
    method: str = "topsis",
    *,
    weight: float = 0.5,
    seed: int | None = None,
) -> list[tuple[str, float]]:
    """Full ordering (best first) under the given method.

    Ties break by sample id ascending; Pareto fronts additionally order by
    DON descending inside a front before falling back to the id.
    """
    if method == "topsis":
        scored = topsis_scores(m)
    elif method in ("don_only", "nod_only"):
        scored = single_metric_scores(m, method)
    elif method == "weighted_sum":
        scored = weighted_sum_scores(m, weight)
    elif method == "pareto":
        scored = pareto_rank(m)
    elif method == "random":
        scored = random_scores(m, seed)
    else:
        raise UsageError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "pareto":
        by_id = dict(zip(m.sample_ids, m.don))
        return sorted(scored, key=lambda p: (-p[1], -by_id[p[0]], p[0]))
    return sorted(scored, key=lambda p: (-p[1], p[0]))


def select_top(ranked, ratio: float, reverse: bool = False) -> list[str]:
    """First max(1, floor(ratio*n)) ids of a ranking.

    With `reverse` the selection flips to the other end of the ranking:
    the worst k ids, returned worst-first. Forward selection at ratio r
    and reverse selection at ratio 1-r partition the ids whenever both
    counts are integral.
    """
    if not (0.0 < ratio <= 1.0):
        raise InvalidRatio(f"ratio must be in (0, 1], got {ratio!r}")
    ids = [item[0] if isinstance(item, tuple) else item for item in ranked]
    if not ids:
        return []
    k = max(1, math.floor(ratio * len(ids)))
    if reverse:
        return list(reversed(ids[len(ids) - k:]))
    return ids[:k]


def make_selection(
    m: CriterionMatrix,
    method: str = "topsis",
    ratio: float = 1.0,
    *,
    weight: float = 0.5,
    seed: int | None = None,
    reverse: bool = False,
) -> RankedSelection:
    ranking = rank(m, method, weight=weight, seed=seed)
    selected = select_top(ranking, ratio, reverse=reverse)
    params: dict = {"ratio": ratio, "reverse": bool(reverse)}
    if method == "weighted_sum":
        params["weight"] = weight
    if method == "random":
        params["seed"] = seed
    return RankedSelection(
        method=method,
        ranking=tuple(ranking),
        selected_ids=tuple(selected),
        params=params,
    )


def selection_report(sel: RankedSelection) -> dict:
    """JSON-ready report document for a selection."""
    return {
        "method": sel.method,
        "params": dict(sel.params),
        "n_total": len(sel.ranking),
        "n_selected": len(sel.selected_ids),
        "ranking": [[sid, score] for sid, score in sel.ranking],
        "selected_ids": list(sel.selected_ids),
    }
