"""Prior-edge sampling strategies.

Given the time-ordered candidate facts of one node, a sampler selects at most
`budget` of them without replacement. Weighted strategies draw sequentially
from the renormalized remainder, so the selection distribution is exactly the
stated per-draw categorical and does not depend on numpy internals. The
`last-n` strategy is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("uniform", "exp-weighted", "linear-weighted", "last-n")


@dataclass
class SamplingConfig:
    strategy: str = "exp-weighted"
    budget: int = 8
    seed: int = 0

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown sampling strategy {self.strategy!r}; choose from {STRATEGIES}"
            )
        if self.budget < 1:
            raise ValueError(f"sampling budget must be >= 1, got {self.budget}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        return self


def query_rng(seed, query_index, epoch=0):
    """Independent RNG stream for one query, stable across batch composition."""
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, query_index)))


def _draw_without_replacement(weights, n, rng):
    """Sequential categorical draws; each draw renormalizes the remainder."""
    w = np.asarray(weights, dtype=np.float64).copy()
    picked = np.empty(n, dtype=np.int64)
    for i in range(n):
        total = w.sum()
        cdf = np.cumsum(w / total)
        j = int(np.searchsorted(cdf, rng.random(), side="right"))
        j = min(j, w.shape[0] - 1)  # guard the cdf's float edge at 1.0
        while w[j] == 0.0:  # same guard can land on an exhausted cell
            j -= 1
        picked[i] = j
        w[j] = 0.0
    return picked


def _weights(edges, t, strategy):
    ts = edges[:, 2].astype(np.float64)
    if strategy == "uniform":
        return np.ones(edges.shape[0])
    if strategy == "exp-weighted":
        # proportional to exp(t' - t); shifting by max(t') keeps exp() in
        # range without changing the normalized distribution
        return np.exp(ts - ts.max())
    if strategy == "linear-weighted":
        return 1.0 + (ts - ts.min())
    raise ValueError(f"no weights for strategy {strategy!r}")


def sample_prior_edges(edges, t, config, rng=None):
    """Select up to `config.budget` rows of `edges` without replacement.

    `edges` is the (m, 3) array (predicate, object, timestamp) returned by a
    prior-edge query at time `t`; every timestamp must already be before `t`.
    Returns the selected rows. When the budget covers all candidates every
    strategy returns them all (in input order).
    """
    config.validate()
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    if edges.size and int(edges[:, 2].max()) >= t:
        raise ValueError("candidate edge at or after query time")
    m = edges.shape[0]
    n = min(config.budget, m)
    if n == m and config.strategy != "last-n":
        return edges.copy()
    if config.strategy == "last-n":
        # most recent first; ties at equal timestamps resolved by
        # (predicate id, object id) ascending
        order = np.lexsort((edges[:, 1], edges[:, 0], -edges[:, 2]))
        return edges[np.sort(order[:n])]
    if rng is None:
        rng = np.random.default_rng(config.seed)
    picked = _draw_without_replacement(_weights(edges, t, config.strategy), n, rng)
    return edges[np.sort(picked)]


def collapse_to_neighbors(edges):
    """Group sampled edges into (object, timestamp) nodes.

    Multiple predicates between the same pair of nodes stay distinct edges;
    only the target nodes deduplicate. Returns (nodes, assignment) where
    nodes is a (k, 2) array of unique (object, timestamp) pairs in first
    appearance order and assignment maps each edge to its node row.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 3)
    nodes = []
    index = {}
    assignment = np.empty(edges.shape[0], dtype=np.int64)
    for i, (_, obj, ts) in enumerate(edges):
        key = (int(obj), int(ts))
        if key not in index:
            index[key] = len(nodes)
            nodes.append(key)
        assignment[i] = index[key]
    return np.asarray(nodes, dtype=np.int64).reshape(-1, 2), assignment
