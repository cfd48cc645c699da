"""Model parameters: static embeddings, periodic time features, step weights.

An entity at time t is represented by its static row concatenated with a
learned periodic encoding of t, so one entity can look different at
different timestamps. Predicates share that width (static_dim + time_dim)
and live in the same space; reciprocal predicates have rows of their own.

Parameters are plain float64 arrays collected in a ParameterSet; `tensors()`
wraps them (without copying) as autodiff leaves for training. Checkpoints are
single .npz containers holding every named tensor plus a JSON manifest with a
format version, so shape or version mismatches fail loudly at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, time_encode, values_of

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelDims:
    n_entities: int
    n_predicates: int  # counted after reciprocal augmentation
    static_dim: int
    time_dim: int

    @property
    def dim(self):
        """Width shared by node and predicate representations."""
        return self.static_dim + self.time_dim

    def validate(self):
        if min(self.n_entities, self.n_predicates) < 1:
            raise ValueError("need at least one entity and one predicate")
        if min(self.static_dim, self.time_dim) < 1:
            raise ValueError("embedding dims must be positive")
        return self


class TimeEncoder:
    """Trainable bounded periodic features of a timestamp.

    Each component is sqrt(1/time_dim) * cos(freq_j * t + phase_j), so the
    encoding always lies inside [-sqrt(1/time_dim), sqrt(1/time_dim)].
    """

    def __init__(self, freq, phase):
        self.freq = freq
        self.phase = phase

    def encode(self, timestamps):
        """Rows of time features for an array of timestamps."""
        return time_encode(self.freq, self.phase, timestamps)


def time_encoding(encoder, t):
    """Feature vector for a single timestamp (value space)."""
    freq = values_of(encoder.freq)
    phase = values_of(encoder.phase)
    return time_encode(freq, phase, [t])[0]


def geometric_frequencies(time_dim, t_max):
    """time_dim frequencies in geometric progression over [1/t_max, 1]."""
    t_max = max(int(t_max), 2)
    if time_dim == 1:
        return np.array([1.0 / t_max])
    exponents = np.arange(time_dim) / (time_dim - 1) - 1.0
    return np.power(float(t_max), exponents)


class ParameterSet:
    """All trainable arrays, keyed by name.

    Per reasoning step l (1-based) there are four arrays: the two attention
    projections w_sub_l / w_obj_l acting on the 4-way concatenated features,
    and the shared update transform w_h_l / b_h_l. w_v / b_v project raw
    (static + time) rows into the hidden space once, at node creation.
    """

    STEP_KEYS = ("w_sub", "w_obj", "w_h", "b_h")

    def __init__(self, arrays, dims, steps, t_max=None, seen_entities=None):
        # float64 buffers throughout; tensors() wraps these same buffers so
        # in-place optimizer updates land here
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self.dims = dims
        self.steps = int(steps)
        self.t_max = t_max
        self.seen_entities = seen_entities
        self._check_shapes()

    @classmethod
    def init(cls, dims, steps, t_max, seed=0):
        dims.validate()
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        rng = np.random.default_rng(seed)
        d = dims.dim

        def uniform(shape, width):
            bound = 1.0 / np.sqrt(width)
            return rng.uniform(-bound, bound, size=shape)

        arrays = {
            "entity_static": uniform((dims.n_entities, dims.static_dim),
                                     dims.static_dim),
            "pred": uniform((dims.n_predicates, d), d),
            "time_freq": geometric_frequencies(dims.time_dim, t_max),
            "time_phase": np.zeros(dims.time_dim),
            "w_v": uniform((d, d), d),
            "b_v": np.zeros(d),
        }
        for l in range(1, steps + 1):
            arrays[f"w_sub_{l}"] = uniform((4 * d, d), 4 * d)
            arrays[f"w_obj_{l}"] = uniform((4 * d, d), 4 * d)
            arrays[f"w_h_{l}"] = uniform((d, d), d)
            arrays[f"b_h_{l}"] = np.zeros(d)
        return cls(arrays, dims, steps, t_max=t_max)

    def _check_shapes(self):
        d = self.dims.dim
        expect = {
            "entity_static": (self.dims.n_entities, self.dims.static_dim),
            "pred": (self.dims.n_predicates, d),
            "time_freq": (self.dims.time_dim,),
            "time_phase": (self.dims.time_dim,),
            "w_v": (d, d),
            "b_v": (d,),
        }
        for l in range(1, self.steps + 1):
            expect[f"w_sub_{l}"] = (4 * d, d)
            expect[f"w_obj_{l}"] = (4 * d, d)
            expect[f"w_h_{l}"] = (d, d)
            expect[f"b_h_{l}"] = (d,)
        if set(expect) != set(self.arrays):
            missing = set(expect) - set(self.arrays)
            extra = set(self.arrays) - set(expect)
            raise ValueError(f"parameter names mismatch: missing={missing}, extra={extra}")
        for name, shape in expect.items():
            got = self.arrays[name].shape
            if got != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {got}")

    def tensors(self):
        """Fresh autodiff leaves sharing this set's buffers."""
        return {name: Tensor(arr, op=name) for name, arr in self.arrays.items()}

    def copy(self):
        return ParameterSet({k: v.copy() for k, v in self.arrays.items()},
                            self.dims, self.steps, t_max=self.t_max,
                            seen_entities=None if self.seen_entities is None
                            else self.seen_entities.copy())

    def encoder(self, live=None):
        live = live or self.arrays
        return TimeEncoder(live["time_freq"], live["time_phase"])

    def fingerprint(self):
        h = hashlib.sha256()
        for name in sorted(self.arrays):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return h.hexdigest()[:16]


def entity_embedding(params, entity, t):
    """Raw representation of one entity at one time: static row + time row.

    Value-space helper; the reasoning engine assembles the same rows in batch
    through the autodiff helpers when gradients are needed.
    """
    static = params.arrays["entity_static"][entity]
    timerow = time_encoding(params.encoder(), t)
    return np.concatenate([static, timerow])


def predicate_embedding(params, p):
    return params.arrays["pred"][p].copy()


def save_checkpoint(params, path, extra=None):
    """Write every parameter plus a versioned JSON manifest to one .npz."""
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "dims": {
            "n_entities": params.dims.n_entities,
            "n_predicates": params.dims.n_predicates,
            "static_dim": params.dims.static_dim,
            "time_dim": params.dims.time_dim,
        },
        "steps": params.steps,
        "t_max": params.t_max,
        "tensor_shapes": {k: list(v.shape) for k, v in params.arrays.items()},
    }
    if extra:
        manifest["extra"] = extra
    payload = dict(params.arrays)
    payload["manifest_json"] = np.array(json.dumps(manifest))
    if params.seen_entities is not None:
        payload["seen_entities"] = params.seen_entities.astype(np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path):
    """Load a checkpoint; returns (ParameterSet, manifest)."""
    with np.load(path, allow_pickle=False) as npz:
        if "manifest_json" not in npz:
            raise ValueError(f"{path}: not a model checkpoint (no manifest)")
        manifest = json.loads(str(npz["manifest_json"]))
        version = manifest.get("format_version")
        if version != CHECKPOINT_FORMAT:
            raise ValueError(
                f"{path}: unsupported checkpoint format {version!r} "
                f"(expected {CHECKPOINT_FORMAT})"
            )
        arrays = {k: npz[k].astype(np.float64)
                  for k in npz.files
                  if k not in ("manifest_json", "seen_entities")}
        seen = npz["seen_entities"].astype(bool) if "seen_entities" in npz.files else None
    for name, shape in manifest["tensor_shapes"].items():
        if name not in arrays:
            raise ValueError(f"{path}: missing tensor {name}")
        if list(arrays[name].shape) != shape:
            raise ValueError(
                f"{path}: tensor {name} has shape {list(arrays[name].shape)}, "
                f"manifest says {shape}"
            )
    dims = ModelDims(**manifest["dims"])
    params = ParameterSet(arrays, dims, manifest["steps"],
                          t_max=manifest.get("t_max"), seen_entities=seen)
    return params, manifest
