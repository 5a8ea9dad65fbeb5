"""Problem files (JSON) and on-disk factor caches.

A problem file is a JSON object::

    {"format": "scenario-fbe-problem", "version": 1,
     "dims": {"n_x": .., "n_u": .., "m": .., "m_terminal": .., "num_nodes": ..},
     "tree": {"ancestor": [...], "probability": [...], "mode": [...] | null}
           | {"markov": {"transition": [[..]], "initial_dist": [..], "horizon": N}},
     "data": {"A": {"broadcast": [[..]]} | {"per_node": [[[..]], ...]}, ...},
     "stage_specs": spec | [spec, ...], "terminal_specs": spec | [spec, ...],
     "root_state": [...]}

with ``spec`` one of ``{"type": "box", "lower": [..], "upper": [..]}``,
``{"type": "l1", "gamma": g}`` or ``{"type": "none"}``. Infinite bounds are
written as the strings ``"inf"`` and ``"-inf"``. Per-node arrays include the
unused row 0; terminal arrays are per leaf.

:func:`dumps` always writes the canonical form: explicit ancestor and
probability arrays, and ``broadcast`` exactly when all rows coincide. Floats are
written with ``repr`` precision so ``loads(dumps(p))`` reproduces every array
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CacheMismatch, DimensionMismatch, ProblemFileError
from .problem import ProblemInstance
from .prox import Box, NoPenalty, ScaledL1
from .riccati import _AFFINE_FIELDS, _MATRIX_FIELDS, FactorCache, factor
from .tree import ScenarioTree, build_from_markov

FORMAT = "scenario-fbe-problem"
VERSION = 1

_NODE_FIELDS = ("A", "B", "c", "Q", "R", "S", "q", "r", "F", "G")
_LEAF_FIELDS = ("P_terminal", "p_terminal", "F_terminal")


def _enc_float_list(a):
    return [x if np.isfinite(x) else ("inf" if x > 0 else "-inf") for x in np.asarray(a, float).tolist()]


def _dec_float_list(a):
    return np.array([float(x) for x in a], dtype=float)


def _enc_spec(spec):
    if isinstance(spec, Box):
        return {"type": "box", "lower": _enc_float_list(spec.lower),
                "upper": _enc_float_list(spec.upper)}
    if isinstance(spec, ScaledL1):
        return {"type": "l1", "gamma": float(spec.gamma)}
    if isinstance(spec, NoPenalty):
        return {"type": "none"}
    raise ProblemFileError(f"cannot serialise block spec {type(spec).__name__}")


def _dec_spec(obj):
    try:
        kind = obj["type"]
        if kind == "box":
            return Box(_dec_float_list(obj["lower"]), _dec_float_list(obj["upper"]))
        if kind == "l1":
            return ScaledL1(float(obj["gamma"]))
        if kind == "none":
            return NoPenalty()
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemFileError(f"malformed block spec {obj!r}: {exc}") from exc
    raise ProblemFileError(f"unknown block type {kind!r}")


def _enc_stack(arr):
    arr = np.asarray(arr, dtype=float)
    if arr.shape[0] > 0 and np.all(arr == arr[0]):
        return {"broadcast": arr[0].tolist()}
    return {"per_node": arr.tolist()}


def _dec_stack(obj, name):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ProblemFileError(f"{name}: expected {{'broadcast': ..}} or {{'per_node': ..}}")
    (kind, val), = obj.items()
    if kind not in ("broadcast", "per_node"):
        raise ProblemFileError(f"{name}: unknown layout {kind!r}")
    try:
        return np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{name}: not a numeric array") from exc


def _enc_specs(specs):
    if len(specs) > 0 and all(s == specs[0] for s in specs):
        return _enc_spec(specs[0])
    return [_enc_spec(s) for s in specs]


def _dec_specs(obj):
    if isinstance(obj, list):
        return tuple(_dec_spec(s) for s in obj)
    return _dec_spec(obj)


def to_dict(prob: ProblemInstance) -> dict:
    t = prob.tree
    tree = {"ancestor": t.ancestor.tolist(), "probability": t.probability.tolist(),
            "mode": None if t.mode is None else np.asarray(t.mode).tolist()}
    data = {name: _enc_stack(getattr(prob, name)) for name in _NODE_FIELDS + _LEAF_FIELDS}
    return {"format": FORMAT, "version": VERSION,
            "dims": {"n_x": prob.n_x, "n_u": prob.n_u, "m": prob.m, "m_terminal": prob.m_terminal,
                     "num_nodes": t.num_nodes},
            "tree": tree, "data": data,
            "stage_specs": _enc_specs(prob.stage_specs),
            "terminal_specs": _enc_specs(prob.terminal_specs),
            "root_state": prob.root_state.tolist()}


def _tree_from(obj) -> ScenarioTree:
    if "markov" in obj:
        mk = obj["markov"]
        trans = np.array(mk["transition"], dtype=float)
        return build_from_markov(trans.shape[0], trans, mk["initial_dist"], int(mk["horizon"]))
    mode = obj.get("mode")
    return ScenarioTree(np.array(obj["ancestor"], dtype=np.int64),
                        np.array(obj["probability"], dtype=float),
                        None if mode is None else np.array(mode, dtype=np.int64))


def from_dict(obj: dict) -> ProblemInstance:
    if not isinstance(obj, dict) or obj.get("format") != FORMAT:
        raise ProblemFileError(f"not a {FORMAT} document")
    if obj.get("version") != VERSION:
        raise ProblemFileError(f"unsupported version {obj.get('version')!r}")
    try:
        tree = _tree_from(obj["tree"])
        dims = obj["dims"]
        data = obj["data"]
        arrays = {name: _dec_stack(data[name], name) for name in _NODE_FIELDS + _LEAF_FIELDS}
        prob = ProblemInstance(tree=tree, **arrays,
                               stage_specs=_dec_specs(obj["stage_specs"]),
                               terminal_specs=_dec_specs(obj["terminal_specs"]),
                               root_state=np.array(obj["root_state"], dtype=float))
    except ProblemFileError:
        raise
    except KeyError as exc:
        raise ProblemFileError(f"missing field {exc}") from exc
    except (DimensionMismatch, TypeError, ValueError, IndexError) as exc:
        raise ProblemFileError(str(exc)) from exc
    got = {"n_x": prob.n_x, "n_u": prob.n_u, "m": prob.m, "m_terminal": prob.m_terminal,
           "num_nodes": tree.num_nodes}
    for key, val in got.items():
        if key in dims and int(dims[key]) != val:
            raise ProblemFileError(f"dims.{key} = {dims[key]} but the data imply {val}")
    return prob


def dumps(prob: ProblemInstance, indent=None) -> str:
    return json.dumps(to_dict(prob), indent=indent, allow_nan=False)


def loads(text: str) -> ProblemInstance:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"invalid JSON: {exc}") from exc
    return from_dict(obj)


def save_problem(prob: ProblemInstance, path):
    Path(path).write_text(dumps(prob))


def load_problem(path) -> ProblemInstance:
    return loads(Path(path).read_text())


def content_hash(prob: ProblemInstance) -> str:
    """SHA-256 of the canonical file form, ignoring the root state."""
    d = to_dict(prob)
    d.pop("root_state")
    return hashlib.sha256(json.dumps(d, sort_keys=True, allow_nan=False).encode()).hexdigest()


_CACHE_ARRAYS = ("K", "sigma", "chat", "chat_terminal", "Phi", "Theta", "D", "Lam", "P", "chol",
                 "child_starts")


def save_factor(cache: FactorCache, prob: ProblemInstance, path):
    arrays = {name: getattr(cache, name) for name in _CACHE_ARRAYS}
    arrays.update({f"seg{i}": s for i, s in enumerate(cache.segments)})
    np.savez(path, content_hash=np.array(content_hash(prob)), **arrays)


def load_factor(path, prob: ProblemInstance) -> FactorCache:
    """Load a cache written by :func:`save_factor`; it must belong to ``prob``."""
    with np.load(path) as f:
        if str(f["content_hash"]) != content_hash(prob):
            raise CacheMismatch(f"{path} was built for a different problem")
        arrays = {name: f[name] for name in _CACHE_ARRAYS}
        segs = tuple(f[f"seg{i}"] for i in range(prob.tree.num_stages))
    source = {name: getattr(prob, name) for name in _MATRIX_FIELDS + _AFFINE_FIELDS}
    return FactorCache(segments=segs, source=source, **arrays)


def cached_factor(prob: ProblemInstance, cache_dir) -> FactorCache:
    """Factor ``prob``, reusing ``cache_dir/<content hash>.npz`` when present."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{content_hash(prob)}.npz"
    if path.exists():
        return load_factor(path, prob)
    cache = factor(prob)
    save_factor(cache, prob, path)
    return cache
