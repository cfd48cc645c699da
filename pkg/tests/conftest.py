"""Shared builders: tiny corpora on disk, toy graphs, a finite-difference oracle."""

import os

import numpy as np
import pytest

from tkgcast.embeddings import ModelDims, ParameterSet
from tkgcast.kgstore import TemporalAdjacency, augment_reciprocal, load_corpus


def write_corpus(directory, train, valid, test):
    """Write three split files; each row is (subject, predicate, object, ts)."""
    os.makedirs(directory, exist_ok=True)
    for name, rows in (("train", train), ("valid", valid), ("test", test)):
        with open(os.path.join(directory, f"{name}.txt"), "w", encoding="utf-8") as fh:
            for s, p, o, t in rows:
                fh.write(f"{s}\t{p}\t{o}\t{t}\n")
    return directory


def load_augmented(directory):
    splits = load_corpus(directory)
    return {k: augment_reciprocal(v) for k, v in splits.items()}


def random_rows(n_entities=10, n_predicates=3, n_facts=120, t_span=20, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_facts):
        s, o = rng.choice(n_entities, size=2, replace=False)
        rows.append((f"e{s}", f"p{rng.integers(n_predicates)}", f"e{o}",
                     int(rng.integers(t_span))))
    rows.sort(key=lambda r: r[3])
    return rows


@pytest.fixture
def tiny_corpus(tmp_path):
    """12 entities, 2 predicates, timestamps 0..15, split 80/10/10 by time."""
    rows = random_rows(n_entities=12, n_predicates=2, n_facts=100,
                       t_span=16, seed=11)
    cut1, cut2 = int(len(rows) * 0.8), int(len(rows) * 0.9)
    return write_corpus(tmp_path / "corpus", rows[:cut1], rows[cut1:cut2],
                        rows[cut2:])


def toy_params(n_entities, n_predicates, static_dim=4, time_dim=2, steps=2,
               t_max=20, seed=3):
    dims = ModelDims(n_entities, n_predicates, static_dim, time_dim)
    return ParameterSet.init(dims, steps, t_max, seed=seed)


def adjacency_of(aug):
    return TemporalAdjacency.from_datasets([aug["train"], aug["valid"],
                                            aug["test"]])


def numeric_grad(fn, array, step=1e-5):
    """Central finite differences of a scalar-valued fn over one array."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = fn()
        flat[i] = keep - step
        down = fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def max_rel_error(analytic, numeric):
    """Worst-case relative error, guarded for near-zero entries."""
    denom = np.maximum(np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def dataset_dir(name):
    """Resolve an external benchmark corpus; None when not mounted."""
    override = os.environ.get("TKGCAST_DATA_DIR")
    candidates = []
    if override:
        candidates.append(os.path.join(override, name))
        candidates.append(override)
    candidates.append(os.path.join("data", name))
    for c in candidates:
        if all(os.path.exists(os.path.join(c, f"{s}.txt"))
               for s in ("train", "valid", "test")):
            return c
    return None


def rule_kg_splits(n_entities=20, n_rounds=250, train_rounds=200,
                   valid_rounds=25, seed=5):
    """Rule-governed corpus: every r fact at even t implies r2 at t + 1.

    The r2 object at t + 1 equals the r object at t, so a model that reads
    one step of history can predict r2 queries perfectly. The r facts of
    all rounds live in the train file (they are history, available before
    any query that needs them); the r2 facts of the last rounds form the
    held-out valid and test windows. Returns (train, valid, test) row lists
    plus the timestamp of the last training round.
    """
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for round_no in range(n_rounds):
        t = 2 * round_no
        s, o = rng.choice(n_entities, size=2, replace=False)
        train.append((f"e{s}", "r", f"e{o}", t))
        consequent = (f"e{s}", "r2", f"e{o}", t + 1)
        if round_no < train_rounds:
            train.append(consequent)
        elif round_no < train_rounds + valid_rounds:
            valid.append(consequent)
        else:
            test.append(consequent)
    return train, valid, test, 2 * (train_rounds - 1) + 1
