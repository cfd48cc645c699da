"""Export a forecast's inference graph as a human-readable explanation.

Documents carry names, never internal ids. The JSON form is the full record;
the DOT form renders the same graph for graphviz with node size proportional
to attention and edge darkness proportional to contribution. Both use a
deterministic ordering (attention descending, then name) so identical
forecasts serialize identically. A verifier can replay every exported edge
against the loaded corpus: each edge must be a genuine quadruple.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

SCHEMA_VERSION = 1
TOP_PREDICTIONS = 10


class ExplanationError(ValueError):
    """An exported explanation does not match the corpus it claims."""


@dataclass
class ExplanationDocument:
    schema_version: int
    query: dict
    predictions: list
    nodes: list
    edges: list
    fingerprint: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise ExplanationError(
                f"unsupported explanation schema {payload.get('schema_version')!r}"
            )
        return cls(**payload)


def build_explanation(result, entities, predicates, fingerprint=None,
                      config_snapshot=None):
    """Assemble the document for one ForecastResult.

    `entities`/`predicates` are the vocabularies used to resolve names. A
    forecast whose graph never grew still documents the query node itself.
    """
    graph = result.graph
    q = result.query
    nodes = [
        {
            "entity": entities.name(graph.node_entity[i]),
            "timestamp": int(graph.node_ts[i]),
            "attention": float(graph.node_attention[i]),
        }
        for i in range(graph.n_nodes)
    ]
    nodes.sort(key=lambda n: (-n["attention"], n["entity"], n["timestamp"]))
    edges = []
    for j in range(graph.n_edges):
        v, u = graph.edge_src[j], graph.edge_dst[j]
        edges.append({
            "from_entity": entities.name(graph.node_entity[v]),
            "from_timestamp": int(graph.node_ts[v]),
            "predicate": predicates.name(graph.edge_pred[j]),
            "to_entity": entities.name(graph.node_entity[u]),
            "to_timestamp": int(graph.node_ts[u]),
            "attention": float(graph.edge_alpha[j]) if graph.edge_alpha.size else 0.0,
            "contribution": float(graph.edge_contribution[j])
            if graph.edge_contribution.size else 0.0,
        })
    edges.sort(key=lambda e: (-e["contribution"], e["from_entity"],
                              e["to_entity"], e["predicate"], e["to_timestamp"]))
    doc = ExplanationDocument(
        schema_version=SCHEMA_VERSION,
        query={
            "subject": entities.name(q.subject),
            "predicate": predicates.name(q.predicate),
            "timestamp": int(q.t),
        },
        predictions=[
            {"entity": entities.name(e), "score": float(s)}
            for e, s in result.ranked[:TOP_PREDICTIONS]
        ],
        nodes=nodes,
        edges=edges,
    )
    doc.fingerprint = {
        "model": fingerprint or "",
        "config": config_snapshot or {},
    }
    if result.unseen_entities:
        doc.fingerprint["unseen_entities"] = sorted(
            entities.name(e) for e in result.unseen_entities)
    return doc


def _gray(fraction):
    """Hex gray from light (low contribution) to black (max contribution)."""
    level = int(round(204 * (1.0 - fraction)))
    return f"#{level:02x}{level:02x}{level:02x}"


def to_dot(doc):
    """Graphviz rendering; node width tracks attention, edge color contribution."""
    a_max = max((n["attention"] for n in doc.nodes), default=0.0)
    c_max = max((e["contribution"] for e in doc.edges), default=0.0)
    lines = ["digraph explanation {", "  rankdir=RL;",
             '  node [shape=ellipse, style=filled, fillcolor="#f2f2f2"];']
    q = doc.query
    lines.append(f'  // query: ({q["subject"]}, {q["predicate"]}, ?, {q["timestamp"]})')
    for n in doc.nodes:
        share = n["attention"] / a_max if a_max > 0 else 0.0
        width = 0.5 + 1.5 * share
        label = f'{n["entity"]}\\nt={n["timestamp"]}\\na={n["attention"]:.4f}'
        name = f'{n["entity"]} @ {n["timestamp"]}'
        lines.append(
            f'  "{name}" [label="{label}", width={width:.3f}, fixedsize=false];'
        )
    for e in doc.edges:
        share = e["contribution"] / c_max if c_max > 0 else 0.0
        src = f'{e["from_entity"]} @ {e["from_timestamp"]}'
        dst = f'{e["to_entity"]} @ {e["to_timestamp"]}'
        lines.append(
            f'  "{src}" -> "{dst}" [label="{e["predicate"]}", '
            f'color="{_gray(share)}", penwidth={0.8 + 2.2 * share:.3f}];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def verify_explanation(doc, dataset):
    """Check every exported edge against the corpus it was computed from.

    The underlying fact of an edge is (from_entity, predicate, to_entity,
    to_timestamp). Raises ExplanationError on the first edge that does not
    correspond to a loaded quadruple, unknown name, or broken causality.
    """
    entities, predicates = dataset.entities, dataset.predicates
    facts = {tuple(int(x) for x in row) for row in dataset.quads}
    for e in doc.edges:
        try:
            s = entities.get(e["from_entity"])
            p = predicates.get(e["predicate"])
            o = entities.get(e["to_entity"])
        except KeyError as err:
            raise ExplanationError(f"unknown name in edge: {err}") from None
        if e["to_timestamp"] >= e["from_timestamp"]:
            raise ExplanationError(
                f"edge does not point into the past: {e['from_entity']} -> "
                f"{e['to_entity']} at {e['to_timestamp']}"
            )
        quad = (s, p, o, int(e["to_timestamp"]))
        if quad not in facts:
            raise ExplanationError(
                f"edge has no supporting fact: ({e['from_entity']}, "
                f"{e['predicate']}, {e['to_entity']}, {e['to_timestamp']})"
            )
    return len(doc.edges)
