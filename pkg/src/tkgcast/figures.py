"""Figure rendering for the report paths.

Every CLI command that writes delimited output can also drop a PNG next to
it: the inference subgraph for a forecast (node size follows attention, edge
darkness follows contribution), rank distributions for an evaluation run,
loss/metric curves for training, and timing bars for the kernel benchmark.
Figures are side outputs; nothing downstream consumes them.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def render_explanation(doc, path):
    """Draw an explanation document: time on x, attention as marker size."""
    nodes = doc.nodes
    edges = doc.edges
    pos = {}
    by_ts = {}
    for n in sorted(nodes, key=lambda n: (n["timestamp"], n["entity"])):
        ts = n["timestamp"]
        row = by_ts.setdefault(ts, 0)
        by_ts[ts] = row + 1
        pos[(n["entity"], ts)] = (ts, row)
    fig, ax = plt.subplots(figsize=(8, 5))
    c_max = max((e["contribution"] for e in edges), default=0.0)
    for e in edges:
        x0, y0 = pos[(e["from_entity"], e["from_timestamp"])]
        x1, y1 = pos[(e["to_entity"], e["to_timestamp"])]
        share = e["contribution"] / c_max if c_max > 0 else 0.0
        ax.annotate(
            "", xy=(x1, y1), xytext=(x0, y0),
            arrowprops={"arrowstyle": "->", "color": str(0.8 * (1 - share)),
                        "lw": 0.8 + 2.2 * share},
        )
    a_max = max((n["attention"] for n in nodes), default=0.0)
    xs, ys, sizes = [], [], []
    for n in nodes:
        x, y = pos[(n["entity"], n["timestamp"])]
        xs.append(x)
        ys.append(y)
        share = n["attention"] / a_max if a_max > 0 else 0.0
        sizes.append(60 + 540 * share)
        ax.annotate(f'{n["entity"]}\n{n["attention"]:.3f}', (x, y),
                    textcoords="offset points", xytext=(6, 6), fontsize=7)
    ax.scatter(xs, ys, s=sizes, c="#4878a8", alpha=0.85, zorder=3)
    q = doc.query
    ax.set_title(f'({q["subject"]}, {q["predicate"]}, ?, {q["timestamp"]})')
    ax.set_xlabel("timestamp")
    ax.set_yticks([])
    ax.grid(alpha=0.25, axis="x")
    return _finish(fig, path)


def render_rank_histogram(ranks, path, title="rank distribution"):
    ranks = np.asarray(list(ranks))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    edges = np.logspace(0, np.log10(max(ranks.max(), 2)), 30)
    ax1.hist(ranks, bins=edges, color="#4878a8", edgecolor="white")
    ax1.set_xscale("log")
    ax1.set_xlabel("rank")
    ax1.set_ylabel("queries")
    ax1.set_title(title)
    sorted_r = np.sort(ranks)
    ax2.step(sorted_r, np.arange(1, ranks.size + 1) / ranks.size, where="post",
             color="#a85448")
    ax2.set_xscale("log")
    ax2.set_xlabel("rank")
    ax2.set_ylabel("fraction of queries ≤ rank")
    ax2.set_ylim(0, 1)
    ax2.grid(alpha=0.25)
    return _finish(fig, path)


def render_training_curves(fit_result, path):
    fig, ax1 = plt.subplots(figsize=(8, 4.5))
    if fit_result.loss_trace:
        ax1.plot(fit_result.loss_trace, color="#4878a8", lw=0.9, label="batch loss")
    ax1.set_xlabel("optimizer step")
    ax1.set_ylabel("loss")
    ax1.grid(alpha=0.25)
    if fit_result.valid_mrr:
        ax2 = ax1.twinx()
        steps_per_epoch = max(len(fit_result.loss_trace), 1) / len(fit_result.valid_mrr)
        xs = [(i + 1) * steps_per_epoch for i in range(len(fit_result.valid_mrr))]
        ax2.plot(xs, fit_result.valid_mrr, "o-", color="#a85448", label="valid MRR")
        ax2.set_ylabel("validation MRR")
    fig.legend(loc="upper right")
    return _finish(fig, path)


def render_benchmark(report, path):
    ops = list(report["ops"])
    kernel = [report["ops"][o]["kernel_seconds"] for o in ops]
    naive = [report["ops"][o]["naive_seconds"] for o in ops]
    x = np.arange(len(ops))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, naive, width=0.4, label="naive per-segment", color="#c8b273")
    ax.bar(x + 0.2, kernel, width=0.4, label="vectorized kernel", color="#4878a8")
    ax.set_yscale("log")
    ax.set_xticks(x, ops)
    ax.set_ylabel("seconds (best of iters)")
    ax.set_title(f'd={report["size"]}, segments={report["segments"]}')
    for i, o in enumerate(ops):
        ax.annotate(f'{report["ops"][o]["speedup"]:.0f}x', (x[i] + 0.2, kernel[i]),
                    ha="center", va="bottom", fontsize=8)
    ax.legend()
    ax.grid(alpha=0.25, axis="y")
    return _finish(fig, path)
