"""Training: binary cross-entropy over normalized entity scores, Adam updates.

Each training query is one augmented fact (s, p, ?, t) with answer o. The
forecast's per-entity scores are normalized within the query to pseudo
probabilities and every candidate contributes a binary cross-entropy term;
per-query means are then averaged over the batch. Batches concatenate the
per-query score vectors and reduce them with segment kernels keyed by query
index, so batch composition cannot change any query's term.

Neighbor sampling uses an RNG stream derived from (seed, epoch, query row),
making runs with a fixed seed bit-reproducible regardless of batching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import evaluation
from .engine import Query, forecast
from .sampling import query_rng

CLAMP_EPS = 1e-12

# epoch tag for validation-time sampling streams, disjoint from train epochs
EVAL_EPOCH = 0xFFFFFFFF


@dataclass
class TrainingConfig:
    lr: float = 2e-4
    batch: int = 128
    epochs: int = 10
    seed: int = 0
    skip_missing_answer: bool = False

    def validate(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        return self


@dataclass
class QueryBatch:
    """Concatenated candidate scores for a batch of queries.

    `segments[i]` is the batch-local query index of candidate i; labels hold
    at most one positive entry per query (none when the answer is absent
    from the query's candidates).
    """

    scores: object  # (m,) Tensor or ndarray
    labels: np.ndarray
    segments: np.ndarray
    n_queries: int

    def __post_init__(self):
        if self.labels.shape != self.segments.shape:
            raise ValueError("labels and segments must align")
        if self.segments.size and np.bincount(
                self.segments[self.labels > 0]).max(initial=0) > 1:
            raise ValueError("a query may carry at most one positive label")


def bce_loss(batch):
    """Mean over usable queries of mean over candidates of the BCE terms.

    Queries with no candidates, or whose scores sum to zero (nothing to
    normalize), are excluded from the outer mean. Returns (loss, n_used);
    loss is None when nothing is usable.
    """
    totals = ad.values_of(ad.segment_sum(batch.scores, batch.segments,
                                         batch.n_queries))
    counts = np.bincount(batch.segments, minlength=batch.n_queries)
    usable = (counts > 0) & (totals > 0.0)
    n_used = int(usable.sum())
    if n_used == 0:
        return None, 0
    entry_keep = np.nonzero(usable[batch.segments])[0]
    seg_map = np.cumsum(usable) - 1  # old query slot -> compact slot
    scores = ad.gather_rows(batch.scores, entry_keep)
    labels = batch.labels[entry_keep]
    seg = seg_map[batch.segments[entry_keep]]
    denom = ad.gather_rows(ad.segment_sum(scores, seg, n_used), seg)
    prob = ad.clamp(scores / denom, CLAMP_EPS, 1.0 - CLAMP_EPS)
    terms = -(labels * ad.log(prob) + (1.0 - labels) * ad.log(1.0 - prob))
    per_query = ad.segment_sum(terms, seg, n_used) * (1.0 / np.bincount(seg, minlength=n_used))
    loss = ad.tsum(per_query) * (1.0 / n_used)
    return loss, n_used


class Adam:
    """Adam with bias correction; parameters without gradients are untouched."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, named_tensors):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in named_tensors.items():
            g = tensor.grad
            if g is None:
                continue
            m = self._m.setdefault(name, np.zeros_like(tensor.data))
            v = self._v.setdefault(name, np.zeros_like(tensor.data))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def build_batch(results, answers, skip_missing_answer=False):
    """Assemble a QueryBatch from per-query forecasts and true answers."""
    pieces, labels, segments = [], [], []
    slot = 0
    for result, answer in zip(results, answers):
        ids = result.entity_ids
        lab = (ids == answer).astype(np.float64)
        if skip_missing_answer and lab.sum() == 0:
            continue
        pieces.append(result.entity_scores)
        labels.append(lab)
        segments.append(np.full(ids.shape[0], slot, dtype=np.int64))
        slot += 1
    if not pieces:
        return None
    scores = ad.concat(pieces, axis=0)
    return QueryBatch(scores, np.concatenate(labels),
                      np.concatenate(segments), slot)


@dataclass
class FitResult:
    loss_trace: list = field(default_factory=list)  # one float per batch
    epoch_loss: list = field(default_factory=list)
    valid_mrr: list = field(default_factory=list)
    best_epoch: int = -1
    best_valid_mrr: float = -1.0
    epochs_run: int = 0
    aborted: bool = False


def _seen_entity_mask(train_quads, n_entities):
    mask = np.zeros(n_entities, dtype=bool)
    if train_quads.size:
        mask[np.unique(train_quads[:, [0, 2]])] = True
    return mask


def _valid_mrr(params, valid_quads, adjacency, filter_index, hyper,
               sampling_cfg, seed, n_predicates):
    live = params.arrays

    def score(i, s, p, t):
        rng = query_rng(seed, i, epoch=EVAL_EPOCH)
        res = forecast(adjacency, live, Query(s, p, t), hyper,
                       sampling_cfg, rng, n_predicates)
        return res.score_map()

    m, _ = evaluation.evaluate_queries(valid_quads, score, adjacency.n_entities,
                                       filter_index, mode="time-aware", ks=(1,))
    return m["mrr"], m["hits"][1]


def fit(params, train_quads, valid_quads, train_adjacency, valid_adjacency,
        hyper, sampling_cfg, config, n_predicates, filter_index=None,
        log=None, stop_at_hits1=None):
    """Optimize `params` in place; keeps the best-on-validation weights.

    `train_quads`/`valid_quads` are augmented (both directions present).
    Validation MRR is computed each epoch with time-aware filtering; the
    parameter state with the best validation MRR is restored at the end. A
    non-finite loss aborts immediately and restores the last best state.
    """
    config.validate()
    hyper.validate()
    result = FitResult()
    if filter_index is None:
        filter_index = evaluation.FilterIndex(
            np.concatenate([train_quads, valid_quads], axis=0))
    params.seen_entities = _seen_entity_mask(train_quads, params.dims.n_entities)
    best = {k: v.copy() for k, v in params.arrays.items()}
    optimizer = Adam(config.lr)
    n = train_quads.shape[0]
    for epoch in range(config.epochs):
        order_rng = np.random.default_rng(
            np.random.SeedSequence((config.seed, epoch, 0x0EDE2)))
        order = order_rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch):
            rows = order[start:start + config.batch]
            tensors = params.tensors()
            results, answers = [], []
            for row in rows:
                s, p, o, t = (int(x) for x in train_quads[row])
                rng = query_rng(config.seed, int(row), epoch=epoch)
                res = forecast(train_adjacency, tensors, Query(s, p, t),
                               hyper, sampling_cfg, rng, n_predicates)
                results.append(res)
                answers.append(o)
            batch = build_batch(results, answers, config.skip_missing_answer)
            if batch is None:
                continue
            loss, n_used = bce_loss(batch)
            if loss is None:
                continue
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                for k, v in best.items():
                    params.arrays[k][...] = v
                result.aborted = True
                return result
            loss.backward()
            optimizer.step(tensors)
            result.loss_trace.append(loss_value)
            epoch_losses.append(loss_value)
        result.epoch_loss.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        mrr, hits1 = _valid_mrr(params, valid_quads, valid_adjacency,
                                filter_index, hyper, sampling_cfg,
                                config.seed, n_predicates)
        result.valid_mrr.append(mrr)
        result.epochs_run = epoch + 1
        if mrr > result.best_valid_mrr:
            result.best_valid_mrr = mrr
            result.best_epoch = epoch
            best = {k: v.copy() for k, v in params.arrays.items()}
        if log is not None:
            log(epoch, result.epoch_loss[-1], mrr, hits1)
        if stop_at_hits1 is not None and hits1 >= stop_at_hits1:
            break
    for k, v in best.items():
        params.arrays[k][...] = v
    return result
