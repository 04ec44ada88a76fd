"""Composite models as DAGs of nodes.

Nodes without parents see the raw lag window. ``trend_extract`` and
``residual_extract`` turn each window into its smoothed trend or the
remainder; model nodes below them regress on the transformed window.
Model nodes with model parents are stacked on their parents' in-sample
predictions, and ``linear_blend`` combines two or more predictions with
least-squares weights that sum to one. Every model node targets the next
raw value of the series.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict, deque
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from gapfill.errors import GapFillError, NodeFitError, PipelineStructureError
from gapfill.lag_models import (
    MODEL_KINDS,
    AtomicModel,
    FittedModel,
    build_lag_matrix,
    fit_arrays,
    recursive_forecast,
)
from gapfill.series import TimeSeries

__all__ = [
    "OPERATIONS",
    "TRANSFORMS",
    "MAX_NODES",
    "PipelineNode",
    "Pipeline",
    "FittedPipeline",
    "validate",
    "is_valid",
    "fit_pipeline",
    "fit_pipeline_arrays",
    "forecast_pipeline",
    "single_node",
    "decomposition_chain",
    "window_trend",
    "pipeline_to_json",
    "pipeline_from_json",
]

TRANSFORMS = ("trend_extract", "residual_extract")
OPERATIONS = MODEL_KINDS + TRANSFORMS + ("linear_blend",)
MAX_NODES = 12

DEFAULT_PARAMS = {"ridge": {"alpha": 1.0}, "lasso": {"alpha": 1.0}, "knn": {"k": 5}}


@dataclass(frozen=True)
class PipelineNode:
    id: str
    operation: str
    params: Mapping[str, Any] = field(default_factory=dict)
    parents: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "params", dict(self.params))

    @property
    def is_model(self) -> bool:
        return self.operation in MODEL_KINDS

    @property
    def is_transform(self) -> bool:
        return self.operation in TRANSFORMS

    def atomic(self) -> AtomicModel:
        merged = {**DEFAULT_PARAMS[self.operation], **self.params}
        return AtomicModel(self.operation, **merged)


@dataclass(frozen=True)
class Pipeline:
    nodes: tuple[PipelineNode, ...]
    root: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, node_id: str) -> PipelineNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def children(self) -> dict[str, list[str]]:
        kids: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for p in n.parents:
                if p in kids:
                    kids[p].append(n.id)
        return kids

    def topological_order(self) -> list[str]:
        """Kahn's algorithm with ties broken by id, independent of node order."""
        indeg = {n.id: len(set(n.parents)) for n in self.nodes}
        kids = self.children()
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order: list[str] = []
        queue = deque(ready)
        while queue:
            nid = queue.popleft()
            order.append(nid)
            released = []
            for c in sorted(set(kids[nid])):
                indeg[c] -= 1
                if indeg[c] == 0:
                    released.append(c)
            queue.extend(sorted(released))
        if len(order) != len(self.nodes):
            raise PipelineStructureError("cycle")
        return order

    def upstream(self, node_id: str) -> set[str]:
        """``node_id`` together with all of its ancestors."""
        seen = {node_id}
        stack = [node_id]
        while stack:
            for p in self.node(stack.pop()).parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def subtree_keys(self) -> dict[str, str]:
        """Id-free description of the sub-DAG feeding each node."""
        memo: dict[str, str] = {}

        def describe(nid: str) -> str:
            if nid not in memo:
                n = self.node(nid)
                params = ",".join(f"{k}={n.params[k]!r}" for k in sorted(n.params))
                inner = ",".join(sorted(describe(p) for p in n.parents))
                memo[nid] = f"{n.operation}[{params}]({inner})"
            return memo[nid]

        for nid in self.ids:
            describe(nid)
        return memo

    def canonical(self) -> str:
        """Id-free structural description; equal strings mean equal structure."""
        return self.subtree_keys()[self.root]

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "operation": n.operation,
                    "hyperparameters": dict(n.params),
                    "parents": list(n.parents),
                }
                for n in self.nodes
            ],
            "root": self.root,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Pipeline:
        try:
            nodes = tuple(
                PipelineNode(
                    id=str(d["id"]),
                    operation=str(d["operation"]),
                    params=dict(d.get("hyperparameters", {})),
                    parents=tuple(str(p) for p in d.get("parents", [])),
                )
                for d in doc["nodes"]
            )
            return cls(nodes, str(doc["root"]))
        except (KeyError, TypeError) as exc:
            raise GapFillError(f"malformed pipeline document: {exc}") from None


def _check_params(n: PipelineNode) -> None:
    if n.is_model:
        allowed = set(DEFAULT_PARAMS[n.operation])
        extra = set(n.params) - allowed
        if extra:
            raise PipelineStructureError(f"unknown hyperparameter {sorted(extra)[0]}", n.id)
        try:
            n.atomic()
        except (ValueError, TypeError):
            raise PipelineStructureError("invalid hyperparameter", n.id) from None
    elif n.is_transform:
        extra = set(n.params) - {"window"}
        if extra:
            raise PipelineStructureError(f"unknown hyperparameter {sorted(extra)[0]}", n.id)
        win = n.params.get("window")
        if win is not None and (not isinstance(win, int) or win < 1):
            raise PipelineStructureError("invalid hyperparameter", n.id)
    elif n.params:
        raise PipelineStructureError("operation takes no hyperparameters", n.id)


def validate(pipeline: Pipeline, max_nodes: int = MAX_NODES) -> None:
    """Raise PipelineStructureError naming the first violated rule."""
    if not pipeline.nodes:
        raise PipelineStructureError("empty pipeline")
    if len(pipeline.nodes) > max_nodes:
        raise PipelineStructureError(f"too many nodes ({len(pipeline.nodes)} > {max_nodes})")
    ids = pipeline.ids
    seen: set[str] = set()
    for nid in ids:
        if nid in seen:
            raise PipelineStructureError("duplicate node id", nid)
        seen.add(nid)
    for n in pipeline.nodes:
        if n.operation not in OPERATIONS:
            raise PipelineStructureError(f"unknown operation {n.operation!r}", n.id)
        if len(set(n.parents)) != len(n.parents):
            raise PipelineStructureError("duplicate parent", n.id)
        for p in n.parents:
            if p not in seen:
                raise PipelineStructureError(f"unknown parent {p!r}", n.id)
            if p == n.id:
                raise PipelineStructureError("cycle", n.id)
        if n.is_transform and n.parents:
            raise PipelineStructureError("transform nodes take no parents", n.id)
        if n.operation == "linear_blend":
            if len(n.parents) < 2:
                raise PipelineStructureError("linear_blend requires at least 2 parents", n.id)
            for p in n.parents:
                if pipeline.node(p).is_transform:
                    raise PipelineStructureError(
                        "linear_blend parents must produce predictions", n.id
                    )
        _check_params(n)
    if pipeline.root not in seen:
        raise PipelineStructureError("unknown root", pipeline.root)
    pipeline.topological_order()
    sinks = [nid for nid, kids in pipeline.children().items() if not kids]
    if len(sinks) > 1:
        raise PipelineStructureError("multiple sinks", sorted(sinks)[1])
    if sinks != [pipeline.root]:
        raise PipelineStructureError("root is not the sink", pipeline.root)
    if pipeline.node(pipeline.root).is_transform:
        raise PipelineStructureError("transform node cannot be the sink", pipeline.root)


def is_valid(pipeline: Pipeline, max_nodes: int = MAX_NODES) -> bool:
    try:
        validate(pipeline, max_nodes)
    except PipelineStructureError:
        return False
    return True


@lru_cache(maxsize=64)
def _trend_bounds(w: int, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    back = (width - 1) // 2
    fwd = width // 2
    pos = np.arange(w)
    lo = np.clip(pos - back, 0, w)
    hi = np.clip(pos + fwd + 1, 0, w)
    return lo, hi, (hi - lo).astype(float)


def window_trend(windows: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average along each row, shrinking at the row edges."""
    windows = np.asarray(windows, dtype=float)
    rows, w = windows.shape
    lo, hi, counts = _trend_bounds(w, max(1, min(width, w)))
    csum = np.zeros((rows, w + 1))
    np.cumsum(windows, axis=1, out=csum[:, 1:])
    return (csum[:, hi] - csum[:, lo]) / counts


@dataclass(frozen=True)
class _BlendState:
    weights: np.ndarray


def _as_block(a: np.ndarray) -> np.ndarray:
    return a[:, None] if a.ndim == 1 else a


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    pipeline: Pipeline
    w: int
    order: tuple[str, ...]
    states: Mapping[str, Any]

    def predict_many(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        if windows.ndim != 2 or windows.shape[1] != self.w:
            raise ValueError(f"expected windows of length {self.w}, got shape {windows.shape}")
        outputs: dict[str, np.ndarray] = {}
        for nid in self.order:
            outputs[nid] = _node_output(self.pipeline.node(nid), self.states[nid], windows, outputs, self.w)
        return outputs[self.pipeline.root]

    def forecast(self, seed_window, horizon: int) -> np.ndarray:
        return forecast_pipeline(self, seed_window, horizon)

    def forecast_many(self, seeds: np.ndarray, horizon: int) -> np.ndarray:
        return recursive_forecast(self.predict_many, seeds, horizon)


def _transform(node: PipelineNode, windows: np.ndarray, w: int) -> np.ndarray:
    trend = window_trend(windows, node.params.get("window") or w)
    return trend if node.operation == "trend_extract" else windows - trend


def _features(node: PipelineNode, windows: np.ndarray, outputs) -> np.ndarray:
    if not node.parents:
        return windows
    return np.hstack([_as_block(outputs[p]) for p in node.parents])


def _node_output(node, state, windows, outputs, w) -> np.ndarray:
    if node.is_transform:
        return _transform(node, windows, w)
    if node.operation == "linear_blend":
        stacked = np.column_stack([outputs[p] for p in node.parents])
        return stacked @ state.weights
    return state.predict_many(_features(node, windows, outputs))


class FitCache:
    """Fitted node states keyed by sub-DAG description.

    Only valid for one fixed training set: a node's fit depends on nothing
    but its sub-DAG and the data, so structurally equal sub-DAGs in
    different genomes can share one fit. Thread-safe, least recently used
    entries are evicted first.
    """

    def __init__(self, maxsize: int = 128):
        self.maxsize = maxsize
        self._data: OrderedDict[str, tuple[Any, np.ndarray | None]] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str):
        with self._lock:
            hit = self._data.get(key)
            if hit is not None:
                self._data.move_to_end(key)
            return hit

    def put(self, key: str, state: Any, output: np.ndarray | None) -> None:
        with self._lock:
            self._data[key] = (state, output)
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)


def _affine_weights(stacked: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares weights constrained to sum to one.

    The last weight is eliminated: ``y - p_last = sum_i w_i (p_i - p_last)``.
    Minimum-norm solutions make redundant parents share nothing, so a blend
    of identical parents reproduces the last parent exactly.
    """
    last = stacked[:, -1]
    sol, *_ = np.linalg.lstsq(stacked[:, :-1] - last[:, None], y - last, rcond=None)
    return np.append(sol, 1.0 - sol.sum())


def _fit_node(node: PipelineNode, x: np.ndarray, y: np.ndarray, outputs):
    if node.is_transform:
        return None
    if node.operation == "linear_blend":
        return _BlendState(_affine_weights(np.column_stack([outputs[p] for p in node.parents]), y))
    return fit_arrays(node.atomic(), _features(node, x, outputs), y)


def fit_pipeline_arrays(pipeline: Pipeline, x: np.ndarray, y: np.ndarray,
                        cache: FitCache | None = None) -> FittedPipeline:
    """Fit every node in topological order on lag windows ``x`` and targets ``y``.

    ``cache`` must only ever be used with this exact ``(x, y)``.
    """
    validate(pipeline)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = x.shape[1]
    order = pipeline.topological_order()
    kids = pipeline.children()
    keys = pipeline.subtree_keys() if cache is not None else {}
    states: dict[str, Any] = {}
    outputs: dict[str, np.ndarray] = {}
    for nid in order:
        node = pipeline.node(nid)
        hit = cache.get(keys[nid]) if cache is not None else None
        if hit is not None:
            states[nid], out = hit
        else:
            try:
                states[nid] = _fit_node(node, x, y, outputs)
            except GapFillError as exc:
                raise NodeFitError(nid, exc) from exc
            out = None
        if kids[nid]:
            if out is None:
                out = _node_output(node, states[nid], x, outputs, w)
            outputs[nid] = out
        if cache is not None and (hit is None or hit[1] is None and out is not None):
            cache.put(keys[nid], states[nid], out)
    return FittedPipeline(pipeline, w, tuple(order), states)


def fit_pipeline(pipeline: Pipeline, series: TimeSeries, w: int,
                 cache: FitCache | None = None) -> FittedPipeline:
    """Build the lag matrix of ``series`` and fit ``pipeline`` on it."""
    validate(pipeline)
    lag = build_lag_matrix(series, w)
    return fit_pipeline_arrays(pipeline, lag.features, lag.targets, cache)


def forecast_pipeline(fitted: FittedPipeline, seed_window, horizon: int) -> np.ndarray:
    """Recursive multi-step forecast evaluating the DAG root at every step."""
    seed = np.asarray(seed_window, dtype=float)
    if seed.ndim != 1 or seed.size != fitted.w:
        raise ValueError(f"seed window length {seed.size} does not match w={fitted.w}")
    return recursive_forecast(fitted.predict_many, seed[None, :], horizon)[0]


def single_node(kind: str = "ridge", node_id: str = "n0", **params) -> Pipeline:
    return Pipeline((PipelineNode(node_id, kind, params),), node_id)


DEFAULT_CHAIN_TREND_WINDOW = 5


def decomposition_chain(alpha: float = 1.0,
                        trend_window: int | None = DEFAULT_CHAIN_TREND_WINDOW) -> Pipeline:
    """Trend and residual forecast separately, merged by a linear blend.

    ``trend_window=None`` smooths over the whole lag window.
    """
    tw = {} if trend_window is None else {"window": trend_window}
    return Pipeline(
        (
            PipelineNode("trend", "trend_extract", tw),
            PipelineNode("residual", "residual_extract", dict(tw)),
            PipelineNode("trend_model", "ridge", {"alpha": alpha}, ("trend",)),
            PipelineNode("residual_model", "ridge", {"alpha": alpha}, ("residual",)),
            PipelineNode("blend", "linear_blend", {}, ("trend_model", "residual_model")),
        ),
        "blend",
    )


def pipeline_to_json(pipeline: Pipeline) -> str:
    return json.dumps(pipeline.to_dict(), indent=2, sort_keys=True) + "\n"


def pipeline_from_json(text: str) -> Pipeline:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GapFillError(f"malformed pipeline JSON: {exc}") from None
    pipeline = Pipeline.from_dict(doc)
    validate(pipeline)
    return pipeline
