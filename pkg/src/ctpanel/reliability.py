"""Ground-truth curiosity from multiple raters.

Pipeline: drop raters who rushed (mean HIT time far below the pool), pick the
rater subset with the best single-measure ICC per HIT, then collapse each
unit's votes with an inverse-marginal weighting that discounts overused labels.
"""
from __future__ import annotations

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .session import RaterScore

SCORES = (0, 1, 2)


class IccUndefinedError(ValueError):
    """ICC has no defined value (zero variance in the ANOVA decomposition)."""


class NoValidSubsetError(ValueError):
    pass


@dataclass
class RatingMatrix:
    """Units in rows, raters in columns; NaN marks a missing rating."""

    units: list
    raters: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.units), len(self.raters)):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{len(self.units)} units x {len(self.raters)} raters")

    @classmethod
    def from_array(cls, values) -> "RatingMatrix":
        values = np.asarray(values, dtype=float)
        return cls(list(range(values.shape[0])), [f"r{j}" for j in range(values.shape[1])], values)

    def subset(self, raters: Sequence) -> "RatingMatrix":
        cols = [self.raters.index(r) for r in raters]
        return RatingMatrix(list(self.units), list(raters), self.values[:, cols])

    def complete(self) -> "RatingMatrix":
        keep = ~np.isnan(self.values).any(axis=1)
        return RatingMatrix([u for u, k in zip(self.units, keep) if k], list(self.raters), self.values[keep])


@dataclass
class RaterProfile:
    rater_id: str
    mean_hit_duration: float
    label_marginals: dict


def rater_profiles(ratings: Iterable[RaterScore]) -> list[RaterProfile]:
    durations = defaultdict(list)
    labels = defaultdict(Counter)
    for r in ratings:
        durations[r.rater_id].append(r.hit_duration)
        labels[r.rater_id][r.score] += 1
    profiles = []
    for rid in sorted(durations):
        n = sum(labels[rid].values())
        profiles.append(RaterProfile(rid, float(np.mean(durations[rid])),
                                     {s: labels[rid][s] / n for s in SCORES}))
    return profiles


def filter_raters_by_time(profiles: Sequence[RaterProfile], k: float = 1.5) -> list[str]:
    """Keep raters whose mean HIT time is at least ``mean - k * sd`` of the pool.

    The pool statistics use the population standard deviation of the raters'
    mean durations.
    """
    if len(profiles) < 2:
        raise ValueError("need at least two rater profiles")
    if not k > 0:
        raise ValueError("k must be positive")
    d = np.array([p.mean_hit_duration for p in profiles], dtype=float)
    threshold = d.mean() - k * d.std()
    return [p.rater_id for p, di in zip(profiles, d) if di >= threshold]


def icc(matrix) -> float:
    """ICC(2,1): two-way random effects, absolute agreement, single rater.

    Accepts a RatingMatrix or a units x raters array without missing cells.
    """
    x = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("ICC needs at least 2 units and 2 raters")
    if np.isnan(x).any():
        raise ValueError("ICC input has missing cells; drop incomplete units first")
    n, k = x.shape
    grand = x.mean()
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    ss_total = ((x - grand) ** 2).sum()
    if ss_total == 0:
        raise IccUndefinedError("constant rating matrix")
    if (x == x[:, :1]).all():
        # raters agree on every unit: exact agreement, no rounding residue
        return 1.0
    ss_rows = k * ((row_means - grand) ** 2).sum()
    ss_cols = n * ((col_means - grand) ** 2).sum()
    ss_err = ss_total - ss_rows - ss_cols
    msr = ss_rows / (n - 1)
    msc = ss_cols / (k - 1)
    mse = ss_err / ((n - 1) * (k - 1))
    denom = msr + (k - 1) * mse + k * (msc - mse) / n
    if denom == 0 or not math.isfinite(denom):
        raise IccUndefinedError("zero denominator in ICC(2,1)")
    return float((msr - mse) / denom)


def candidate_subsets(raters: Sequence, min_size: int = 2):
    for size in range(min_size, len(raters) + 1):
        yield from itertools.combinations(raters, size)


def best_rater_subset(matrix: RatingMatrix, min_size: int = 2, tol: float = 1e-12):
    """Exhaustively search rater subsets of size >= ``min_size`` for the best ICC.

    Each subset is scored on the units it rated completely. Ties go to the
    larger subset, then to the lexicographically smaller rater ids.
    Returns ``(subset, icc)``.
    """
    if min_size < 2:
        raise ValueError("min_size must be >= 2")
    if len(matrix.raters) > 10:
        raise ValueError("exhaustive search limited to 10 raters")
    best = None
    for subset in candidate_subsets(sorted(matrix.raters), min_size):
        sub = matrix.subset(subset).complete()
        if len(sub.units) < 2:
            continue
        try:
            value = icc(sub)
        except IccUndefinedError:
            continue
        if best is None:
            best = (subset, value)
            continue
        b_sub, b_val = best
        if value > b_val + tol or (abs(value - b_val) <= tol and len(subset) > len(b_sub)):
            best = (subset, value)
    if best is None:
        raise NoValidSubsetError(f"no rater subset of size >= {min_size} has a defined ICC")
    return best


def inverse_bias_correct(
    unit_scores: Mapping[str, int],
    profiles: Iterable[RaterProfile],
    eps: float = 1e-6,
    prefer: str = "high",
) -> int:
    """Pick one label from several raters' votes.

    A vote for score ``s`` by rater ``r`` weighs ``1 / max(marginal_r(s), eps)``,
    so a rater who hands out a label constantly says little by giving it.
    The label with the largest summed weight wins; ties go to the higher
    score (``prefer="low"`` flips that).
    """
    if not unit_scores:
        raise ValueError("empty vote set")
    by_id = {p.rater_id: p for p in profiles}
    totals = defaultdict(float)
    for rater, score in unit_scores.items():
        marg = by_id[rater].label_marginals.get(score, 0.0)
        totals[score] += 1.0 / max(marg, eps)
    order = sorted(totals, reverse=(prefer == "high"))
    return max(order, key=lambda s: totals[s])


def majority_vote(unit_scores: Mapping[str, int], prefer: str = "high") -> int:
    counts = Counter(unit_scores.values())
    order = sorted(counts, reverse=(prefer == "high"))
    return max(order, key=lambda s: counts[s])


def _delta_nominal(values):
    return (values[:, None] != values[None, :]).astype(float)


def _delta_ordinal(values, marginals):
    # squared rank-sum distance between ordered categories
    cum = np.concatenate([[0.0], np.cumsum(marginals)])
    n = len(values)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = cum[j + 1] - cum[i] - (marginals[i] + marginals[j]) / 2.0
            d[i, j] = d[j, i] = s * s
    return d


def krippendorff_alpha(matrix, level: str = "nominal") -> float:
    """Krippendorff's alpha from the coincidence matrix.

    Units with fewer than two ratings are not pairable and are ignored.
    """
    x = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    values = np.unique(x[~np.isnan(x)])
    index = {v: i for i, v in enumerate(values)}
    c = len(values)
    o = np.zeros((c, c))
    for row in x:
        vals = row[~np.isnan(row)]
        m = len(vals)
        if m < 2:
            continue
        counts = np.zeros(c)
        for v in vals:
            counts[index[v]] += 1
        o += (np.outer(counts, counts) - np.diag(counts)) / (m - 1)
    n_c = o.sum(axis=1)
    n = n_c.sum()
    if n < 2:
        raise ValueError("fewer than 2 pairable values")
    if level == "nominal":
        delta = _delta_nominal(values)
    elif level == "ordinal":
        delta = _delta_ordinal(values, n_c)
    else:
        raise ValueError(f"unknown level {level!r}")
    d_o = (o * delta).sum()
    d_e = (np.outer(n_c, n_c) * delta).sum()
    if d_e == 0:
        raise ValueError("alpha undefined: only one value among pairable ratings")
    return float(1.0 - (n - 1) * d_o / d_e)


@dataclass
class CuriosityLabel:
    member: str
    slice_index: int
    score: int
    subset_icc: Optional[float]


def derive_curiosity(
    ratings: Sequence[RaterScore],
    min_raters: int = 2,
    time_sd: float = 1.5,
    hit_key: Callable[[RaterScore], Hashable] = lambda r: r.member,
    prefer: str = "high",
) -> list[CuriosityLabel]:
    """Time filter, best-ICC subset per HIT, bias-corrected vote per unit.

    ``hit_key`` groups ratings into HITs; the default treats each member's
    video as one HIT. When no subset has a defined ICC (e.g. constant labels),
    all retained raters vote and ``subset_icc`` is None.
    """
    ratings = list(ratings)
    if not ratings:
        return []
    profiles = rater_profiles(ratings)
    retained = set(filter_raters_by_time(profiles, time_sd)) if len(profiles) >= 2 else {p.rater_id for p in profiles}
    kept = [r for r in ratings if r.rater_id in retained]

    hits = defaultdict(list)
    for r in kept:
        hits[hit_key(r)].append(r)

    labels = []
    for key in sorted(hits, key=str):
        hit = hits[key]
        units = sorted({(r.member, r.slice_index) for r in hit}, key=lambda u: (u[0], u[1]))
        raters = sorted({r.rater_id for r in hit})
        uidx = {u: i for i, u in enumerate(units)}
        ridx = {rid: j for j, rid in enumerate(raters)}
        vals = np.full((len(units), len(raters)), np.nan)
        for r in hit:
            vals[uidx[(r.member, r.slice_index)], ridx[r.rater_id]] = r.score
        matrix = RatingMatrix(units, raters, vals)
        subset, sub_icc = tuple(raters), None
        if len(raters) >= max(min_raters, 2):
            try:
                subset, sub_icc = best_rater_subset(matrix, min_raters)
            except NoValidSubsetError:
                pass
        cols = [ridx[rid] for rid in subset]
        for u, row in zip(units, vals):
            votes = {raters[j]: int(row[j]) for j in cols if not np.isnan(row[j])}
            if not votes:
                votes = {raters[j]: int(row[j]) for j in range(len(raters)) if not np.isnan(row[j])}
            score = inverse_bias_correct(votes, profiles, prefer=prefer)
            labels.append(CuriosityLabel(u[0], u[1], score, sub_icc))
    return labels
