"""Ranking evaluation with raw, static, and time-aware filtering.

Every test fact is asked in both directions (the reciprocal fact carries the
subject question), so handing this module an augmented split covers both.
A query's rank counts the strictly better candidates plus the equal-scored
candidates with smaller entity ids, after removing known alternative answers:
the static filter removes any entity that ever answers (s, p, ?); the
time-aware one removes only entities answering at exactly the query time.
An answer missing from the scored candidates ranks at |E|, the worst
possible position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FILTER_MODES = ("raw", "static", "time-aware")


class FilterIndex:
    """Known-answer lookups over a fact corpus (usually train+valid+test)."""

    def __init__(self, quads):
        quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
        self.static = {}
        self.temporal = {}
        for s, p, o, t in quads:
            self.static.setdefault((int(s), int(p)), set()).add(int(o))
            self.temporal.setdefault((int(s), int(p), int(t)), set()).add(int(o))


def static_filter(index, subject, predicate):
    """Entities answering (subject, predicate, ?) at any time."""
    return index.static.get((subject, predicate), set())


def time_aware_filter(index, subject, predicate, t):
    """Entities answering (subject, predicate, ?) at exactly time t."""
    return index.temporal.get((subject, predicate, t), set())


def filter_set(index, subject, predicate, t, mode):
    if mode == "raw":
        return set()
    if mode == "static":
        return static_filter(index, subject, predicate)
    if mode == "time-aware":
        return time_aware_filter(index, subject, predicate, t)
    raise ValueError(f"filter mode must be one of {FILTER_MODES}, got {mode!r}")


def rank_answer(score_map, answer, n_entities, filtered=()):
    """Rank of `answer` among all entities under the given scores.

    `score_map` covers the scored candidates; everything else scores 0.
    Entities in `filtered` (except the answer itself) are removed before
    counting. Equal scores resolve in favor of the smaller entity id, and an
    answer with no score at all ranks last at n_entities.
    """
    if answer not in score_map:
        return int(n_entities)
    scores = np.zeros(n_entities)
    for e, s in score_map.items():
        scores[e] = s
    alive = np.ones(n_entities, dtype=bool)
    for e in filtered:
        alive[e] = False
    alive[answer] = True
    target = scores[answer]
    greater = int((alive & (scores > target)).sum())
    equal_smaller = int((alive[:answer] & (scores[:answer] == target)).sum())
    return 1 + greater + equal_smaller


def metrics(ranks, ks=(1, 3, 10)):
    """Mean reciprocal rank and Hits@k over a non-empty rank collection."""
    ranks = np.asarray(list(ranks), dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("metrics require at least one rank record")
    if (ranks < 1).any():
        raise ValueError("ranks must be >= 1")
    out = {"mrr": float((1.0 / ranks).mean()), "count": int(ranks.size)}
    out["hits"] = {int(k): float((ranks <= k).mean()) for k in ks}
    return out


@dataclass(frozen=True)
class RankRecord:
    subject: int
    predicate: int
    answer: int
    timestamp: int
    rank: int


def evaluate_queries(quads, score_fn, n_entities, filter_index=None,
                     mode="raw", ks=(1, 3, 10)):
    """Rank every (s, p, ?, t) query in `quads` (one row per direction).

    `score_fn(row_index, subject, predicate, t)` returns the score map of
    one forecast. Returns (metrics dict, list of RankRecord).
    """
    if mode != "raw" and filter_index is None:
        raise ValueError(f"{mode} filtering requires a filter index")
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    if quads.shape[0] == 0:
        raise ValueError("no queries to evaluate")
    records = []
    for i, (s, p, o, t) in enumerate(quads):
        s, p, o, t = int(s), int(p), int(o), int(t)
        scores = score_fn(i, s, p, t)
        fset = filter_set(filter_index, s, p, t, mode) if mode != "raw" else set()
        rank = rank_answer(scores, o, n_entities, fset)
        records.append(RankRecord(s, p, o, t, rank))
    return metrics([r.rank for r in records], ks), records
