"""Temporal knowledge graph storage.

Facts are (subject, predicate, object, timestamp) quadruples. This module
loads them from tab-separated files, assigns dense integer ids, augments the
corpus with reciprocal facts so both argument directions can be queried, and
builds a per-entity time-sorted adjacency that answers "which facts about
entity e happened strictly before time t" by binary search.
"""

from __future__ import annotations

import datetime
import warnings
from dataclasses import dataclass, field

import numpy as np

RECIPROCAL_SUFFIX = "^-1"


class IngestError(ValueError):
    """Raised for malformed input files; carries file and line context."""


@dataclass(frozen=True)
class Quadruple:
    subject: int
    predicate: int
    obj: int
    timestamp: int

    def as_tuple(self):
        return (self.subject, self.predicate, self.obj, self.timestamp)


class Vocab:
    """Bidirectional name <-> dense id map.

    Ids are assigned by first appearance. A frozen vocab still accepts new
    names (records referencing them are kept) but flags them, so growth after
    a freeze is always explicit in `unseen_ids`.
    """

    def __init__(self, names=()):
        self.names = list(names)
        self.ids = {n: i for i, n in enumerate(self.names)}
        if len(self.ids) != len(self.names):
            raise ValueError("duplicate names in vocabulary")
        self.frozen = False
        self.unseen_ids = set()
        self.reciprocal_base = None  # set once reciprocal names are appended

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.ids

    def freeze(self):
        self.frozen = True

    def get(self, name):
        return self.ids[name]

    def name(self, idx):
        return self.names[idx]

    def get_or_add(self, name):
        """Return (id, flagged). flagged is True when a frozen vocab grew."""
        idx = self.ids.get(name)
        if idx is not None:
            return idx, False
        if self.reciprocal_base is not None:
            # ids above reciprocal_base mirror the base block; growing the
            # vocabulary now would break that correspondence
            raise ValueError(
                f"vocabulary is closed after reciprocal augmentation; "
                f"cannot add {name!r}"
            )
        idx = len(self.names)
        self.names.append(name)
        self.ids[name] = idx
        if self.frozen:
            self.unseen_ids.add(idx)
            return idx, True
        return idx, False

    def ensure_reciprocals(self):
        """Append one reciprocal name per base predicate; idempotent."""
        if self.reciprocal_base is not None:
            return self.reciprocal_base
        base = len(self.names)
        for i in range(base):
            idx, _ = self.get_or_add(self.names[i] + RECIPROCAL_SUFFIX)
            self.unseen_ids.discard(idx)
        self.reciprocal_base = base
        return base

    def save_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i, name in enumerate(self.names):
                if "\t" in name or "\n" in name:
                    raise ValueError(f"name not representable in TSV: {name!r}")
                fh.write(f"{name}\t{i}\n")

    @classmethod
    def load_tsv(cls, path):
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                cols = line.split("\t")
                if len(cols) != 2:
                    raise IngestError(f"{path}:{lineno}: expected name\\tid")
                try:
                    pairs.append((cols[0], int(cols[1])))
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: id is not an integer") from None
        pairs.sort(key=lambda x: x[1])
        if [i for _, i in pairs] != list(range(len(pairs))):
            raise IngestError(f"{path}: ids are not dense 0..{len(pairs) - 1}")
        return cls([n for n, _ in pairs])


@dataclass
class Dataset:
    """One split of a corpus: an ordered quadruple array plus shared vocabs."""

    quads: np.ndarray  # (n, 4) int64 columns [subject, predicate, object, ts]
    entities: Vocab
    predicates: Vocab
    split: str = "all"
    augmented: bool = False
    n_base_predicates: int = 0
    flagged_rows: list = field(default_factory=list)
    time_granularity: str = "unit"  # "day" when parsed from ISO dates
    epoch: object = None  # datetime.date origin for day indices, if any

    def __post_init__(self):
        self.quads = np.asarray(self.quads, dtype=np.int64).reshape(-1, 4)
        if not self.n_base_predicates:
            self.n_base_predicates = len(self.predicates)

    def __len__(self):
        return self.quads.shape[0]

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_predicates(self):
        return len(self.predicates)

    def records(self):
        for s, p, o, t in self.quads:
            yield Quadruple(int(s), int(p), int(o), int(t))


def _parse_timestamp(raw, epoch, time_unit, where):
    if epoch is not None or "-" in raw[1:]:
        try:
            day = datetime.date.fromisoformat(raw)
        except ValueError:
            raise IngestError(f"{where}: bad timestamp {raw!r}") from None
        if epoch is None:
            raise IngestError(f"{where}: ISO date without an epoch")
        return (day - epoch).days
    try:
        t = int(raw)
    except ValueError:
        raise IngestError(f"{where}: bad timestamp {raw!r}") from None
    return t // time_unit if time_unit > 1 else t


def _scan_epoch(path):
    """Earliest ISO date in a file, or None if timestamps are integers."""
    earliest = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise IngestError(f"{path}:{lineno}: expected 4 tab-separated columns")
            raw = cols[3]
            if "-" not in raw[1:]:
                return earliest
            try:
                day = datetime.date.fromisoformat(raw)
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad timestamp {raw!r}") from None
            if earliest is None or day < earliest:
                earliest = day
    return earliest


def load_quadruples(path, entities=None, predicates=None, split="all",
                    epoch=None, time_unit=1):
    """Load one TSV split (subject\\tpredicate\\tobject\\ttimestamp).

    Extra columns are ignored. New names extend the given vocabs in first
    appearance order; if a vocab is frozen the record is still kept and its
    row index lands in `flagged_rows`. ISO-date timestamps become day indices
    relative to `epoch` (defaulting to the earliest date in this file);
    integer timestamps pass through, optionally floor-divided by `time_unit`.
    """
    entities = entities if entities is not None else Vocab()
    predicates = predicates if predicates is not None else Vocab()
    if epoch is None:
        epoch = _scan_epoch(path)
    rows = []
    flagged = []
    granularity = "day" if epoch is not None else "unit"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise IngestError(f"{path}:{lineno}: expected 4 tab-separated columns")
            s, fs = entities.get_or_add(cols[0])
            p, fp = predicates.get_or_add(cols[1])
            o, fo = entities.get_or_add(cols[2])
            t = _parse_timestamp(cols[3], epoch, time_unit, f"{path}:{lineno}")
            if fs or fp or fo:
                flagged.append(len(rows))
            rows.append((s, p, o, t))
    quads = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    return Dataset(quads, entities, predicates, split=split,
                   flagged_rows=flagged, time_granularity=granularity,
                   epoch=epoch)


SPLIT_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}


def load_corpus(directory, time_unit=1):
    """Load train/valid/test splits with shared vocabs and a shared epoch."""
    import os

    paths = {k: os.path.join(directory, v) for k, v in SPLIT_FILES.items()}
    missing = [p for p in paths.values() if not os.path.exists(p)]
    if missing:
        raise IngestError(f"missing split files: {', '.join(missing)}")
    epochs = [e for e in (_scan_epoch(p) for p in paths.values()) if e is not None]
    epoch = min(epochs) if epochs else None
    entities, predicates = Vocab(), Vocab()
    out = {}
    for name, path in paths.items():
        out[name] = load_quadruples(path, entities, predicates, split=name,
                                    epoch=epoch, time_unit=time_unit)
    return out


def augment_reciprocal(ds):
    """Append one reciprocal fact (o, p', s, t) per fact (s, p, o, t).

    Reciprocal predicate ids are base ids shifted by the base vocabulary
    size; the shared predicate vocab is extended once no matter how many
    splits are augmented. Augmenting the same dataset twice is rejected.
    """
    if ds.augmented:
        raise ValueError("dataset is already augmented with reciprocal facts")
    n_base = ds.predicates.ensure_reciprocals()
    if ds.quads.size and int(ds.quads[:, 1].max()) >= n_base:
        raise ValueError("quadruples already reference reciprocal predicates")
    recip = ds.quads[:, [2, 1, 0, 3]].copy()
    recip[:, 1] += n_base
    return Dataset(np.concatenate([ds.quads, recip], axis=0),
                   ds.entities, ds.predicates, split=ds.split,
                   augmented=True, n_base_predicates=n_base,
                   flagged_rows=list(ds.flagged_rows),
                   time_granularity=ds.time_granularity, epoch=ds.epoch)


def reciprocal_id(p, n_base):
    """Involutive predicate <-> reciprocal map on augmented ids."""
    return (p + n_base) % (2 * n_base)


def time_split(ds, t_valid, t_test):
    """Partition by timestamp: train t < t_valid, valid t < t_test, test rest."""
    if t_valid >= t_test:
        raise ValueError(f"need t_valid < t_test, got {t_valid} >= {t_test}")
    t = ds.quads[:, 3]
    masks = {
        "train": t < t_valid,
        "valid": (t >= t_valid) & (t < t_test),
        "test": t >= t_test,
    }
    out = {}
    for name, mask in masks.items():
        if not mask.any():
            warnings.warn(f"time_split produced an empty {name} split", stacklevel=2)
        out[name] = Dataset(ds.quads[mask], ds.entities, ds.predicates,
                            split=name, augmented=ds.augmented,
                            n_base_predicates=ds.n_base_predicates,
                            time_granularity=ds.time_granularity,
                            epoch=ds.epoch)
    return out["train"], out["valid"], out["test"]


class TemporalAdjacency:
    """Per-subject fact lists sorted by timestamp, for prior-edge queries.

    Entry (p, o, t) under subject s represents the fact (s, p, o, t). The
    entry count always equals the number of quadruples indexed; reciprocal
    facts must already be present if object-side history should be reachable.
    """

    def __init__(self, quads, n_entities):
        quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
        self.n_entities = int(n_entities)
        if quads.size and int(quads[:, [0, 2]].max()) >= self.n_entities:
            raise ValueError("entity id out of range for adjacency")
        order = np.lexsort((quads[:, 2], quads[:, 1], quads[:, 3], quads[:, 0]))
        self._sorted = quads[order]
        self._offsets = np.zeros(self.n_entities + 1, dtype=np.int64)
        counts = np.bincount(self._sorted[:, 0], minlength=self.n_entities)
        np.cumsum(counts, out=self._offsets[1:])

    @classmethod
    def from_dataset(cls, ds):
        return cls(ds.quads, ds.n_entities)

    @classmethod
    def from_datasets(cls, datasets):
        quads = np.concatenate([d.quads for d in datasets], axis=0)
        return cls(quads, datasets[0].n_entities)

    def __len__(self):
        return self._sorted.shape[0]

    def prior_edges(self, entity, t):
        """Facts (p, o, t') about `entity` with t' strictly before t.

        Returns an (m, 3) int64 array with columns (predicate, object,
        timestamp), ascending by (timestamp, predicate, object).
        """
        lo, hi = self._offsets[entity], self._offsets[entity + 1]
        block = self._sorted[lo:hi]
        cut = np.searchsorted(block[:, 3], t, side="left")
        return block[:cut][:, [1, 2, 3]]

    def flatten(self):
        """All indexed facts as an (n, 4) array (order unspecified)."""
        return self._sorted.copy()
