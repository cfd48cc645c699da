"""Attention-guided subgraph reasoning.

A forecast grows an inference graph around the query node (entity, query
time). Each step: every node samples facts from its strict past and the
targets join the graph as (entity, timestamp) nodes; hidden states are
refreshed in reverse insertion order so the query node, updated last, sees
information up to L hops away; node attention flows along the normalized
edge attentions; edges with the K largest contributions survive. Entities
are finally scored by aggregating the attention of their surviving nodes.

All tensor math goes through the autodiff helpers, so the same code runs on
plain float arrays for inference and on recorded tensors for training (the
caller decides by handing `live` parameter arrays of either kind). Sampling
and pruning decisions always operate on raw values; they are constants to
the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .sampling import sample_prior_edges

AGGREGATIONS = ("sum", "mean")


@dataclass
class Hyperparams:
    """Reasoning-loop knobs. The sampling budget travels in SamplingConfig."""

    steps: int = 3
    prune_k: int = 32
    gamma: float = 0.5
    leaky_slope: float = 0.01
    agg: str = "sum"

    def validate(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.prune_k < 1:
            raise ValueError(f"prune_k must be >= 1, got {self.prune_k}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.leaky_slope <= 0:
            raise ValueError("leaky_slope must be positive")
        if self.agg not in AGGREGATIONS:
            raise ValueError(f"agg must be one of {AGGREGATIONS}, got {self.agg!r}")
        return self


@dataclass(frozen=True)
class Query:
    subject: int
    predicate: int
    t: int


@dataclass
class StepTrace:
    """Per-step diagnostics captured during a forecast."""

    step: int
    n_nodes: int = 0  # after pruning
    n_edges: int = 0  # after pruning
    n_edges_at_sweep: int = 0  # edges present when messages were computed
    messages: int = 0
    softmax_deviation: float = 0.0  # max |sum(alpha) - 1| over nodes with edges
    mass_redistributed: float = 0.0  # sum of a^{l-1} over nodes with outgoing edges
    mass_received: float = 0.0  # sum of a^l inflow over all nodes
    query_retained: bool = False
    causality_violations: int = 0


class InferenceGraph:
    """Nodes are (entity, timestamp) pairs; edges point into the past.

    Node 0 is always the query node. Edge arrays are parallel lists in
    insertion order; `edge_uid` is a monotone counter that survives pruning
    and breaks contribution ties deterministically.
    """

    def __init__(self, query):
        self.query = query
        self.node_entity = [query.subject]
        self.node_ts = [query.t]
        self.node_step = [0]
        self._index = {(query.subject, query.t): 0}
        self.edge_src = []
        self.edge_dst = []
        self.edge_pred = []
        self.edge_uid = []
        self._edge_keys = set()
        self._next_uid = 0
        # value-space snapshots for export and pruning
        self.node_attention = np.ones(1)
        self.edge_alpha = np.zeros(0)
        self.edge_flow = np.zeros(0)
        self.edge_contribution = np.zeros(0)

    @property
    def n_nodes(self):
        return len(self.node_entity)

    @property
    def n_edges(self):
        return len(self.edge_src)

    def node_id(self, entity, ts):
        return self._index.get((entity, ts))

    def add_node(self, entity, ts, step):
        key = (int(entity), int(ts))
        idx = self._index.get(key)
        if idx is not None:
            return idx, False
        idx = len(self.node_entity)
        self._index[key] = idx
        self.node_entity.append(key[0])
        self.node_ts.append(key[1])
        self.node_step.append(step)
        return idx, True

    def add_edge(self, src, dst, pred):
        key = (src, dst, int(pred))
        if key in self._edge_keys:
            return False
        self._edge_keys.add(key)
        self.edge_src.append(src)
        self.edge_dst.append(dst)
        self.edge_pred.append(int(pred))
        self.edge_uid.append(self._next_uid)
        self._next_uid += 1
        return True

    def edges_array(self):
        return (np.asarray(self.edge_src, dtype=np.int64),
                np.asarray(self.edge_dst, dtype=np.int64),
                np.asarray(self.edge_pred, dtype=np.int64))

    def compact(self, keep_edges):
        """Drop all edges outside `keep_edges`, then drop isolated non-query
        nodes. Returns the old node indices that survived, in order."""
        keep_edges = np.asarray(keep_edges, dtype=np.int64)
        src = [self.edge_src[i] for i in keep_edges]
        dst = [self.edge_dst[i] for i in keep_edges]
        pred = [self.edge_pred[i] for i in keep_edges]
        uid = [self.edge_uid[i] for i in keep_edges]
        incident = set(src) | set(dst) | {0}
        keep_nodes = [i for i in range(self.n_nodes) if i in incident]
        remap = {old: new for new, old in enumerate(keep_nodes)}
        self.node_entity = [self.node_entity[i] for i in keep_nodes]
        self.node_ts = [self.node_ts[i] for i in keep_nodes]
        self.node_step = [self.node_step[i] for i in keep_nodes]
        self._index = {(e, t): i for i, (e, t) in
                       enumerate(zip(self.node_entity, self.node_ts))}
        self.edge_src = [remap[s] for s in src]
        self.edge_dst = [remap[d] for d in dst]
        self.edge_pred = pred
        self.edge_uid = uid
        self._edge_keys = {(s, d, p) for s, d, p in
                           zip(self.edge_src, self.edge_dst, self.edge_pred)}
        return np.asarray(keep_nodes, dtype=np.int64)


# ---------------------------------------------------------------------------
# Node representations.
# ---------------------------------------------------------------------------


def _base_rows(live, entities, timestamps):
    """Input projection of raw (static + time) rows for a batch of nodes."""
    static = ad.gather_rows(live["entity_static"], entities)
    timerows = ad.time_encode(live["time_freq"], live["time_phase"], timestamps)
    raw = ad.concat([static, timerows], axis=1)
    return ad.matmul(raw, live["w_v"]) + live["b_v"]


def _self_transform(rows, live, step, slope):
    return ad.leaky_relu(ad.matmul(rows, live[f"w_h_{step}"]) + live[f"b_h_{step}"],
                         slope)


def _bootstrap_rows(live, entities, timestamps, upto_step, slope):
    """Rows for nodes created at step `upto_step + 1`: the input projection
    chased through the self-transforms of every step already completed."""
    rows = _base_rows(live, entities, timestamps)
    for step in range(1, upto_step + 1):
        rows = _self_transform(rows, live, step, slope)
    return rows


def init_inference_graph(query, live, hyper, n_entities, n_predicates):
    """Single-node graph around the query plus its projected hidden state."""
    hyper.validate()
    if not (0 <= query.subject < n_entities):
        raise ValueError(f"unknown entity id {query.subject}")
    if not (0 <= query.predicate < n_predicates):
        raise ValueError(f"unknown predicate id {query.predicate}")
    graph = InferenceGraph(query)
    h = _base_rows(live, [query.subject], [query.t])
    a = _ones_like_mode(live, 1)
    return graph, h, a


def _ones_like_mode(live, n):
    ones = np.ones(n)
    return ad.Tensor(ones, op="attention0") if _training(live) else ones


def _training(live):
    return ad.is_tensor(live["entity_static"])


# ---------------------------------------------------------------------------
# Expansion.
# ---------------------------------------------------------------------------


def expand(graph, adjacency, cfg, rng, step):
    """Sample prior edges for every node currently in the graph.

    Returns (new_node_indices, n_new_edges). Sampling draws happen in node
    index order from the supplied rng, so expansion is deterministic given
    the stream.
    """
    snapshot = graph.n_nodes
    new_nodes = []
    new_edges = 0
    for v in range(snapshot):
        candidates = adjacency.prior_edges(graph.node_entity[v], graph.node_ts[v])
        if candidates.shape[0] == 0:
            continue
        picked = sample_prior_edges(candidates, graph.node_ts[v], cfg, rng)
        for pred, obj, ts in picked:
            u, created = graph.add_node(int(obj), int(ts), step)
            if created:
                new_nodes.append(u)
            if graph.add_edge(v, u, int(pred)):
                new_edges += 1
    return np.asarray(new_nodes, dtype=np.int64), new_edges


# ---------------------------------------------------------------------------
# Attention and representation sweep.
# ---------------------------------------------------------------------------


def edge_attention(w_sub, w_obj, h_sub, h_obj, p_k, h_q, p_q):
    """Raw query-dependent edge scores.

    All arguments are row matrices with one row per edge (h_q/p_q repeated);
    the score is the inner product of the two projected 4-way concatenations.
    """
    z_sub = ad.concat([h_sub, p_k, h_q, p_q], axis=1)
    z_obj = ad.concat([h_obj, p_k, h_q, p_q], axis=1)
    return ad.tsum(ad.matmul(z_sub, w_sub) * ad.matmul(z_obj, w_obj), axis=1)


def normalize_attention(scores, segment_ids, n_segments):
    """Softmax over each node's outgoing edges (all neighbors, all predicates)."""
    return ad.segment_softmax(scores, segment_ids, n_segments)


def _empty_alpha(live):
    return ad.Tensor(np.zeros(0), op="alpha") if _training(live) else np.zeros(0)


def reverse_update(graph, h, pred_table, live, hyper, step, trace=None):
    """One full representation sweep at inference step `step`.

    Node groups are processed in descending added_at_step order: the newest
    nodes first (they have no outgoing edges yet, so their update is the pure
    self-transform), then older groups, the query node last. Reads go through
    the work-in-progress matrix, so a group sees updated states for nodes
    added after it and previous-step states for its own and older groups.

    Returns (h_new, alpha) with alpha aligned to the graph's edge order.
    """
    n = graph.n_nodes
    src, dst, pred = graph.edges_array()
    node_step = np.asarray(graph.node_step)
    messages = 0
    alpha_pieces = []
    alpha_edge_order = []
    softmax_dev = 0.0
    for group in sorted(set(graph.node_step), reverse=True):
        members = np.nonzero(node_step == group)[0]
        local = np.full(n, -1, dtype=np.int64)
        local[members] = np.arange(members.shape[0])
        edge_idx = np.nonzero(local[src] >= 0)[0] if src.size else np.zeros(0, np.int64)
        h_members = ad.gather_rows(h, members)
        if edge_idx.size:
            e_src, e_dst, e_pred = src[edge_idx], dst[edge_idx], pred[edge_idx]
            seg = local[e_src]
            n_edge = e_src.shape[0]
            messages += n_edge
            h_sub = ad.gather_rows(h, e_src)
            h_obj = ad.gather_rows(h, e_dst)
            p_k = ad.gather_rows(pred_table, e_pred)
            h_q = ad.gather_rows(h, np.zeros(n_edge, dtype=np.int64))
            p_q = ad.gather_rows(pred_table,
                                 np.full(n_edge, graph.query.predicate, dtype=np.int64))
            scores = edge_attention(live[f"w_sub_{step}"], live[f"w_obj_{step}"],
                                    h_sub, h_obj, p_k, h_q, p_q)
            alpha = normalize_attention(scores, seg, members.shape[0])
            alpha_pieces.append(alpha)
            alpha_edge_order.append(edge_idx)
            sums = ad.segment_sum(ad.values_of(alpha), seg, members.shape[0])
            edged = np.unique(seg)
            softmax_dev = max(softmax_dev, float(np.abs(sums[edged] - 1.0).max()))
            weighted = ad.as_col(alpha) * h_obj
            agg = ad.segment_sum(weighted, seg, members.shape[0])
            if edged.shape[0] < members.shape[0]:
                h_tilde = ad.row_update(h_members, edged, ad.gather_rows(agg, edged))
            else:
                h_tilde = agg
        else:
            h_tilde = h_members
        mix = hyper.gamma * h_members + (1.0 - hyper.gamma) * h_tilde
        new_rows = _self_transform(mix, live, step, hyper.leaky_slope)
        h = ad.row_update(h, members, new_rows)
    if alpha_pieces:
        order = np.concatenate(alpha_edge_order)
        inverse = np.empty(order.shape[0], dtype=np.int64)
        inverse[order] = np.arange(order.shape[0])
        alpha_all = ad.gather_rows(ad.concat(alpha_pieces, axis=0), inverse)
    else:
        alpha_all = _empty_alpha(live)
    graph.edge_alpha = ad.values_of(alpha_all).copy()
    if trace is not None:
        trace.messages = messages
        trace.n_edges_at_sweep = graph.n_edges
        trace.softmax_deviation = softmax_dev
    return h, alpha_all


def project_predicates(pred_table, live, step):
    """Affine predicate refresh through the step's update layer."""
    return ad.matmul(pred_table, live[f"w_h_{step}"]) + live[f"b_h_{step}"]


def propagate_node_attention(graph, a_prev, alpha, trace=None):
    """Push each node's attention down its outgoing edges (weighted by alpha).

    Every node's new attention is pure inflow; the query node keeps its
    previous attention only while it has no outgoing edges to redistribute
    over.
    """
    src, dst, _ = graph.edges_array()
    n = graph.n_nodes
    if src.size == 0:
        inflow_total = 0.0
        a_new = a_prev
        retained = True
        graph.edge_flow = np.zeros(0)
    else:
        flow = alpha * ad.gather_rows(a_prev, src)
        # per-edge flow doubles as the contribution score used by pruning
        graph.edge_flow = ad.values_of(flow).copy()
        a_new = ad.segment_sum(flow, dst, n)
        inflow_total = float(ad.values_of(a_new).sum())
        retained = False
        if not (src == 0).any():
            a_new = ad.row_update(a_new, np.array([0]), ad.gather_rows(a_prev, [0]))
            retained = True
    if trace is not None:
        prev = ad.values_of(a_prev)
        redistributors = np.unique(src)
        trace.mass_redistributed = float(prev[redistributors].sum())
        trace.mass_received = inflow_total
        trace.query_retained = retained
    graph.node_attention = ad.values_of(a_new).copy()
    return a_new


def aggregate_entity_scores(graph, a, agg):
    """Collapse node attentions to per-entity scores.

    Returns (entity_ids, scores) where entity_ids are the distinct entities
    present in the graph, ascending. Entities absent from the graph score 0
    and are simply not listed.
    """
    if agg not in AGGREGATIONS:
        raise ValueError(f"agg must be one of {AGGREGATIONS}, got {agg!r}")
    entities = np.asarray(graph.node_entity, dtype=np.int64)
    uniq, inverse = np.unique(entities, return_inverse=True)
    scores = ad.segment_sum(a, inverse, uniq.shape[0])
    if agg == "mean":
        counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(np.float64)
        scores = scores * (1.0 / counts)
    return uniq, scores


def prune(graph, h, a, hyper):
    """Keep the K edges with the largest contributions, drop isolated nodes.

    Contribution of an edge is its attention weight times the attention its
    source node held before redistributing, i.e. the flow term of the
    propagation sum. Ties at the K-th place keep the edge with the older
    target timestamp, then the smaller insertion id. Returns (h, a)
    compacted to the surviving nodes.
    """
    if hyper.prune_k < 1:
        raise ValueError(f"prune_k must be >= 1, got {hyper.prune_k}")
    src, dst, _ = graph.edges_array()
    if src.size == 0:
        graph.edge_contribution = np.zeros(0)
        return h, a
    contrib = graph.edge_flow
    ts_to = np.asarray(graph.node_ts)[dst]
    uid = np.asarray(graph.edge_uid)
    order = np.lexsort((uid, ts_to, -contrib))
    keep = np.sort(order[: hyper.prune_k])
    keep_nodes = graph.compact(keep)
    graph.edge_alpha = graph.edge_alpha[keep]
    graph.edge_flow = graph.edge_flow[keep]
    graph.edge_contribution = contrib[keep]
    graph.node_attention = graph.node_attention[keep_nodes]
    h = ad.gather_rows(h, keep_nodes)
    a = ad.gather_rows(a, keep_nodes)
    return h, a


# ---------------------------------------------------------------------------
# Full forecast.
# ---------------------------------------------------------------------------


@dataclass
class ForecastResult:
    query: Query
    ranked: list  # (entity_id, score) descending, graph entities only
    graph: InferenceGraph
    entity_ids: np.ndarray
    entity_scores: object  # vector aligned with entity_ids (Tensor in training)
    trace: list = field(default_factory=list)
    unseen_entities: list = field(default_factory=list)
    hidden: np.ndarray = None  # final node states, rows follow graph order

    def score_map(self):
        return {int(e): float(s) for e, s in
                zip(self.entity_ids, ad.values_of(self.entity_scores))}


def forecast(adjacency, live, query, hyper, sampling_cfg, rng,
             n_predicates, with_trace=False, seen_entities=None):
    """Run the full reasoning loop for one query.

    `live` maps parameter names to arrays (inference) or Tensors (training);
    `rng` drives neighbor sampling. Returns a ForecastResult whose ranked
    list covers the entities of the final graph, best first, ties broken by
    ascending entity id.
    """
    hyper.validate()
    sampling_cfg.validate()
    graph, h, a = init_inference_graph(query, live, hyper,
                                       adjacency.n_entities, n_predicates)
    pred_table = live["pred"]
    traces = []
    for step in range(1, hyper.steps + 1):
        trace = StepTrace(step) if with_trace else None
        new_nodes, _ = expand(graph, adjacency, sampling_cfg, rng, step)
        if trace is not None:
            src, dst, _ = graph.edges_array()
            ts = np.asarray(graph.node_ts)
            trace.causality_violations = int((ts[dst] >= ts[src]).sum()) if src.size else 0
        if new_nodes.size:
            rows = _bootstrap_rows(
                live,
                [graph.node_entity[i] for i in new_nodes],
                [graph.node_ts[i] for i in new_nodes],
                step - 1, hyper.leaky_slope)
            h = ad.concat([h, rows], axis=0)
        h, alpha = reverse_update(graph, h, pred_table, live, hyper, step, trace)
        if step < hyper.steps:
            pred_table = project_predicates(pred_table, live, step)
        a = propagate_node_attention(graph, a, alpha, trace)
        h, a = prune(graph, h, a, hyper)
        if trace is not None:
            trace.n_nodes = graph.n_nodes
            trace.n_edges = graph.n_edges
            traces.append(trace)
    entity_ids, scores = aggregate_entity_scores(graph, a, hyper.agg)
    values = ad.values_of(scores)
    order = np.lexsort((entity_ids, -values))
    ranked = [(int(entity_ids[i]), float(values[i])) for i in order]
    unseen = []
    if seen_entities is not None:
        present = np.unique(np.asarray(graph.node_entity, dtype=np.int64))
        unseen = [int(e) for e in present if not seen_entities[e]]
        if not seen_entities[query.subject] and query.subject not in unseen:
            unseen.append(query.subject)
    return ForecastResult(query, ranked, graph, entity_ids, scores,
                          trace=traces, unseen_entities=unseen,
                          hidden=ad.values_of(h).copy())
