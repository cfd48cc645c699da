"""Segmented array kernels.

A segmented vector is a flat value array plus an equally long array of segment
ids in [0, n_segments). The kernels here reduce or normalize values per
segment without materializing per-segment slices. The vectorized path uses
numpy scatter accumulation (bincount / ufunc.at); a naive per-segment
iterator is kept as an independent reference implementation for testing and
benchmarking, and an optional debug mode cross-checks sums against a sparse
indicator-matrix product.

Accumulation order matters for float reproducibility: both the vectorized and
the naive sum accumulate values in ascending input order, so their results are
bit-identical, not merely close.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

# Sentinel returned by segment_argmax for segments with no entries.
EMPTY_SEGMENT = -1

_DEBUG_CROSSCHECK = os.environ.get("TKGCAST_SEGMENT_DEBUG", "") not in ("", "0")


def set_debug_crosscheck(enabled: bool) -> None:
    """Toggle the sparse-matrix cross-check on every segment_sum call."""
    global _DEBUG_CROSSCHECK
    _DEBUG_CROSSCHECK = bool(enabled)


def _validate(values, segment_ids, n_segments):
    values = np.asarray(values, dtype=np.float64)
    seg = np.asarray(segment_ids)
    if seg.ndim != 1:
        raise ValueError("segment_ids must be one-dimensional")
    if values.ndim not in (1, 2):
        raise ValueError("values must be a vector or a row matrix")
    if values.shape[0] != seg.shape[0]:
        raise ValueError(
            f"length mismatch: {values.shape[0]} values, {seg.shape[0]} segment ids"
        )
    if int(n_segments) < 0:
        raise ValueError("n_segments must be non-negative")
    if seg.size:
        if not np.issubdtype(seg.dtype, np.integer):
            raise TypeError("segment_ids must be integers")
        lo, hi = int(seg.min()), int(seg.max())
        if lo < 0 or hi >= n_segments:
            raise IndexError(
                f"segment id out of range: saw [{lo}, {hi}] with n_segments={n_segments}"
            )
    return values, seg.astype(np.int64), int(n_segments)


def _sparse_crosscheck(values, seg, n_segments, result):
    # Debug route: an explicit (n_segments x m) indicator matrix performs the
    # same reduction as a matrix product.
    from scipy import sparse

    m = seg.shape[0]
    ind = sparse.csr_matrix(
        (np.ones(m), (seg, np.arange(m))), shape=(n_segments, m)
    )
    ref = ind @ values
    if not np.allclose(ref, result, rtol=1e-12, atol=1e-12):
        raise AssertionError("segment_sum disagrees with sparse-matrix reduction")


def segment_sum(values, segment_ids, n_segments):
    """Sum values per segment; segments with no entries sum to 0."""
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    if values.ndim == 1:
        out = np.bincount(seg, weights=values, minlength=n_segments)
    else:
        out = np.zeros((n_segments, values.shape[1]))
        np.add.at(out, seg, values)
    if _DEBUG_CROSSCHECK:
        _sparse_crosscheck(values, seg, n_segments, out)
    return out


def segment_max(values, segment_ids, n_segments):
    """Max value per segment; empty segments report -inf."""
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    if values.ndim != 1:
        raise ValueError("segment_max expects a vector")
    out = np.full(n_segments, -np.inf)
    np.maximum.at(out, seg, values)
    return out


def segment_softmax(values, segment_ids, n_segments):
    """Softmax within each segment.

    Each segment's values are shifted by the segment max before
    exponentiation, so uniform offsets cancel exactly and large magnitudes
    cannot overflow.
    """
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    if values.ndim != 1:
        raise ValueError("segment_softmax expects a vector")
    if values.size == 0:
        return values.copy()
    shifted = values - segment_max(values, seg, n_segments)[seg]
    e = np.exp(shifted)
    totals = np.bincount(seg, weights=e, minlength=n_segments)
    return e / totals[seg]


def segment_argmax(values, segment_ids, n_segments):
    """Index (into `values`) of the max per segment.

    Ties resolve to the smallest index; empty segments report EMPTY_SEGMENT.
    """
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    if values.ndim != 1:
        raise ValueError("segment_argmax expects a vector")
    best = segment_max(values, seg, n_segments)
    out = np.full(n_segments, values.shape[0], dtype=np.int64)
    hit = values == best[seg]
    np.minimum.at(out, seg[hit], np.nonzero(hit)[0])
    return np.where(out < values.shape[0], out, EMPTY_SEGMENT)


@dataclass(frozen=True)
class SegmentedVector:
    """A value array paired with its segment assignment."""

    values: np.ndarray
    segment_ids: np.ndarray
    n_segments: int

    def __post_init__(self):
        _validate(self.values, self.segment_ids, self.n_segments)

    def sum(self):
        return segment_sum(self.values, self.segment_ids, self.n_segments)

    def softmax(self):
        return segment_softmax(self.values, self.segment_ids, self.n_segments)

    def argmax(self):
        return segment_argmax(self.values, self.segment_ids, self.n_segments)


# ---------------------------------------------------------------------------
# Naive reference route. Deliberately independent of the kernels above: plain
# per-segment iteration, sequential accumulation in ascending input order.
# ---------------------------------------------------------------------------


def naive_segment_sum(values, segment_ids, n_segments):
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    if values.ndim == 1:
        out = np.zeros(n_segments)
    else:
        out = np.zeros((n_segments, values.shape[1]))
    for i in range(seg.shape[0]):
        out[seg[i]] += values[i]
    return out


def naive_segment_softmax(values, segment_ids, n_segments):
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    out = np.empty_like(values)
    for k in range(n_segments):
        mask = seg == k
        if not mask.any():
            continue
        part = values[mask]
        e = np.exp(part - part.max())
        out[mask] = e / e.sum()
    return out


def naive_segment_argmax(values, segment_ids, n_segments):
    values, seg, n_segments = _validate(values, segment_ids, n_segments)
    out = np.full(n_segments, EMPTY_SEGMENT, dtype=np.int64)
    for k in range(n_segments):
        idx = np.nonzero(seg == k)[0]
        if idx.size:
            out[k] = idx[np.argmax(values[idx])]  # argmax keeps first on ties
    return out


# ---------------------------------------------------------------------------
# Benchmark harness.
# ---------------------------------------------------------------------------

_BENCH_OPS = {
    "sum": (segment_sum, naive_segment_sum),
    "softmax": (segment_softmax, naive_segment_softmax),
    "argmax": (segment_argmax, naive_segment_argmax),
}


def _best_time(fn, iters):
    best = np.inf
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_benchmark(size, segments, iters=5, seed=0):
    """Time the vectorized kernels against the naive iterator on random data.

    Returns a JSON-serializable report with per-op best-of-`iters` wall times
    and speedup factors.
    """
    if size < 1 or segments < 1 or iters < 1:
        raise ValueError("size, segments, and iters must all be >= 1")
    rng = np.random.default_rng(seed)
    values = rng.standard_normal(size)
    seg = rng.integers(0, segments, size=size)
    report = {"size": int(size), "segments": int(segments), "iters": int(iters), "ops": {}}
    for name, (fast, naive) in _BENCH_OPS.items():
        t_fast = _best_time(lambda f=fast: f(values, seg, segments), iters)
        t_naive = _best_time(lambda f=naive: f(values, seg, segments), iters)
        report["ops"][name] = {
            "kernel_seconds": t_fast,
            "naive_seconds": t_naive,
            "speedup": t_naive / t_fast if t_fast > 0 else float("inf"),
        }
    return report
