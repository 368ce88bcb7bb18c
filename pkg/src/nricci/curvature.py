"""Ollivier-Ricci curvature on weighted graphs, and its neural variant.

For an edge (u, v), curvature is kappa = 1 - W1(m_u, m_v) / d(u, v):
m_u and m_v are probability measures each endpoint spreads over its
neighborhood, W1 is the exact Wasserstein-1 distance (a transportation
LP, solved by the simplex kernel), and d is the true shortest-path
distance — which can be shorter than the edge itself when a multi-hop
shortcut exists. Negative curvature marks bottleneck edges.

Distances are produced by Dijkstra runs from measure-support nodes,
truncated as soon as every required target settles; the all-edges driver
shares one distance cache across the whole report instead of re-running
per edge. A Sinkhorn approximation exists strictly for speed comparisons
and never feeds acceptance numbers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import data_io
from .kernels import TRANSPORT_OK, dijkstra_csr, sinkhorn, transport_simplex
from .neural_graph import NodeId, WeightedGraph, build_neural_data_graph

_MARGINAL_TOL = 1e-9
_PROB_TOL = 1e-12


class TransportFailure(RuntimeError):
    """The exact transport solver failed to converge (numerical failure)."""


@dataclass(frozen=True)
class MeasureConfig:
    """How a node spreads probability mass over its neighborhood.

    kind "uniform": each neighbor gets (1 - alpha) / degree.
    kind "exponential": neighbor mass proportional to exp(-w(node, .)),
    scaled by (1 - alpha). Either way the node keeps alpha itself.
    """

    kind: str = "uniform"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("uniform", "exponential"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must lie in [0, 1)")


@dataclass(frozen=True)
class NeighborMeasure:
    support: np.ndarray  # flat node ids
    probabilities: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.probabilities.shape:
            raise ValueError("support/probabilities shape mismatch")
        if self.probabilities.size == 0:
            raise ValueError("empty measure")
        if self.probabilities.min() < 0:
            raise ValueError("negative probability")
        if abs(float(self.probabilities.sum()) - 1.0) > _PROB_TOL:
            raise ValueError("probabilities do not sum to 1")


@dataclass(frozen=True)
class TransportPlan:
    coupling: np.ndarray  # shape (len m_u support), len(m_v support))
    objective: float


@dataclass(frozen=True)
class EdgeCurvature:
    kappa: float
    w1: float
    distance: float


@dataclass
class CurvatureReport:
    """Per-edge curvature of one graph.

    Arrays are parallel over the defined edges; ``undefined_edges`` lists
    (u, v) NodeId pairs whose curvature could not be formed (these are
    excluded from all statistics).
    """

    layer_sizes: List[int]
    edge_u: List[NodeId]
    edge_v: List[NodeId]
    edge_length: np.ndarray
    distance: np.ndarray
    w1: np.ndarray
    kappa: np.ndarray
    undefined_edges: List[Tuple[NodeId, NodeId]]
    measure: MeasureConfig

    @property
    def n_defined(self) -> int:
        return int(self.kappa.size)

    def summary(self) -> dict:
        out = {
            "n_nodes": int(np.sum(self.layer_sizes)),
            "n_edges": self.n_defined + len(self.undefined_edges),
            "n_defined": self.n_defined,
            "n_undefined": len(self.undefined_edges),
            "measure_kind": self.measure.kind,
            "measure_alpha": self.measure.alpha,
        }
        if self.n_defined:
            neg = int((self.kappa < 0).sum())
            out.update(
                kappa_min=float(self.kappa.min()),
                kappa_max=float(self.kappa.max()),
                kappa_mean=float(self.kappa.mean()),
                n_negative=neg,
                negative_fraction=neg / self.n_defined,
            )
        return out


# ---------------------------------------------------------------------------
# measures and distances


def neighbor_measure(graph: WeightedGraph, node: int,
                     config: MeasureConfig) -> NeighborMeasure:
    """Measure m_node. ``node`` is a flat id; raises on isolated nodes."""
    nbrs, wts = graph.neighbors(node)
    if nbrs.size == 0:
        raise ValueError(f"node {node} is isolated: no measure")
    alpha = config.alpha
    if config.kind == "uniform":
        probs = np.full(nbrs.size, (1.0 - alpha) / nbrs.size)
    else:
        scale = np.exp(-wts)
        probs = (1.0 - alpha) * scale / scale.sum()
    if alpha > 0.0:
        support = np.concatenate([np.array([node], dtype=np.int64), nbrs])
        probs = np.concatenate([[alpha], probs])
    else:
        support = nbrs
    return NeighborMeasure(support=support, probabilities=probs)


def shortest_distances(graph: WeightedGraph, sources: Sequence[int],
                       targets: Optional[Sequence[int]] = None) -> np.ndarray:
    """Exact shortest-path distances from each source, row per source.

    Entries are guaranteed for the requested targets (all nodes when
    ``targets`` is None); other entries may be inf even when reachable,
    because each Dijkstra run stops once its targets settle. Unreachable
    targets stay inf.
    """
    indptr, indices, weights = graph.csr()
    n = graph.n_nodes
    mask = np.zeros(n, dtype=np.uint8)
    if targets is None:
        mask[:] = 1
        n_targets = n
    else:
        for t in targets:
            mask[t] = 1
        n_targets = int(mask.sum())
    out = np.empty((len(sources), n))
    for k, s in enumerate(sources):
        out[k] = dijkstra_csr(indptr, indices, weights, int(s), mask, n_targets)
    return out


# ---------------------------------------------------------------------------
# Wasserstein-1


def wasserstein1(m_u: NeighborMeasure, m_v: NeighborMeasure,
                 cost: np.ndarray) -> Tuple[float, TransportPlan]:
    """Exact W1 between two measures given pairwise support distances.

    ``cost[i, j]`` is d(support_u[i], support_v[j]). An infinite entry is
    tolerated as long as no optimal plan needs it; if mass must cross an
    infinite distance the reported cost is inf.
    """
    a = m_u.probabilities.astype(np.float64)
    b = m_v.probabilities.astype(np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (a.size, b.size):
        raise ValueError(f"cost shape {cost.shape} != ({a.size}, {b.size})")
    inf_mask = ~np.isfinite(cost)
    if inf_mask.any():
        finite_max = cost[~inf_mask].max() if (~inf_mask).any() else 1.0
        big = 2.0 * finite_max * max(a.size, b.size) + 1.0
        solve_cost = np.where(inf_mask, big, cost)
    else:
        solve_cost = cost
    plan, obj, status = transport_simplex(a, b, solve_cost)
    if status != TRANSPORT_OK:
        raise TransportFailure(
            f"transportation simplex did not converge on a "
            f"{a.size}x{b.size} instance"
        )
    row_err = np.abs(plan.sum(axis=1) - a).max()
    col_err = np.abs(plan.sum(axis=0) - b).max()
    if row_err > _MARGINAL_TOL or col_err > _MARGINAL_TOL:
        raise TransportFailure(
            f"transport plan marginals off by {max(row_err, col_err):.3e}"
        )
    if inf_mask.any() and float(plan[inf_mask].sum()) > _MARGINAL_TOL:
        return float("inf"), TransportPlan(coupling=plan, objective=float("inf"))
    value = float((plan * solve_cost).sum())
    return value, TransportPlan(coupling=plan, objective=value)


def sinkhorn_w1(m_u: NeighborMeasure, m_v: NeighborMeasure, cost: np.ndarray,
                reg: float = 0.01, max_iter: int = 2000,
                tol: float = 1e-9) -> float:
    """Entropy-regularized approximation of W1. Speed comparisons only —
    never used on acceptance paths."""
    plan, obj = sinkhorn(
        m_u.probabilities.astype(np.float64),
        m_v.probabilities.astype(np.float64),
        np.asarray(cost, dtype=np.float64), reg, max_iter, tol,
    )
    return float(obj)


# ---------------------------------------------------------------------------
# edge curvature


def orc_edge(graph: WeightedGraph, u: int, v: int,
             config: MeasureConfig = MeasureConfig()) -> EdgeCurvature:
    """Curvature of one edge given by flat endpoint ids."""
    m_u = neighbor_measure(graph, u, config)
    m_v = neighbor_measure(graph, v, config)
    targets = np.unique(np.concatenate([m_v.support, [v]]))
    dist = shortest_distances(graph, m_u.support, targets)
    cost = dist[:, m_v.support]
    d_uv = _edge_distance(graph, u, v, dist, m_u.support)
    w1, _ = wasserstein1(m_u, m_v, cost)
    return EdgeCurvature(kappa=1.0 - w1 / d_uv, w1=w1, distance=d_uv)


def _edge_distance(graph, u, v, dist_rows, sources) -> float:
    pos = np.flatnonzero(sources == u)
    if pos.size:
        return float(dist_rows[pos[0], v])
    extra = shortest_distances(graph, [u], [v])
    return float(extra[0, v])


def orc_all_edges(graph: WeightedGraph,
                  config: MeasureConfig = MeasureConfig(),
                  method: str = "exact",
                  sinkhorn_reg: float = 0.01) -> CurvatureReport:
    """Curvature for every edge of a graph, with a shared distance cache.

    One truncated Dijkstra runs per measure-support node (not per edge);
    every edge's cost matrix is then a gather from the cache. ``method``
    "sinkhorn" switches to the approximate solver (flagged, non-acceptance).
    """
    if method not in ("exact", "sinkhorn"):
        raise ValueError(f"unknown method {method!r}")
    n_edges = graph.n_edges
    if n_edges == 0:
        warnings.warn("empty graph: empty curvature report")
        return CurvatureReport(
            layer_sizes=list(graph.layer_sizes), edge_u=[], edge_v=[],
            edge_length=np.empty(0), distance=np.empty(0), w1=np.empty(0),
            kappa=np.empty(0), undefined_edges=[], measure=config,
        )

    measures: Dict[int, NeighborMeasure] = {}
    endpoints = np.unique(np.concatenate([graph.edge_u, graph.edge_v]))
    for node in endpoints:
        measures[int(node)] = neighbor_measure(graph, int(node), config)

    support_nodes = np.unique(
        np.concatenate([m.support for m in measures.values()])
    )
    rows = shortest_distances(graph, support_nodes, support_nodes)
    row_of = np.full(graph.n_nodes, -1, dtype=np.int64)
    row_of[support_nodes] = np.arange(support_nodes.size)
    sup_idx = {node: row_of[m.support] for node, m in measures.items()}

    edge_u_ids: List[NodeId] = []
    edge_v_ids: List[NodeId] = []
    lengths: List[float] = []
    dists: List[float] = []
    w1s: List[float] = []
    kappas: List[float] = []
    undefined: List[Tuple[NodeId, NodeId]] = []
    for e in range(n_edges):
        u = int(graph.edge_u[e])
        v = int(graph.edge_v[e])
        m_u = measures[u]
        m_v = measures[v]
        cost = rows[sup_idx[u][:, None], m_v.support[None, :]]
        d_uv = float(rows[row_of[u], v])
        if method == "exact":
            w1, _ = wasserstein1(m_u, m_v, cost)
        else:
            w1 = sinkhorn_w1(m_u, m_v, cost, reg=sinkhorn_reg)
        if not np.isfinite(w1) or not np.isfinite(d_uv) or d_uv <= 0:
            undefined.append((graph.node_id(u), graph.node_id(v)))
            continue
        edge_u_ids.append(graph.node_id(u))
        edge_v_ids.append(graph.node_id(v))
        lengths.append(float(graph.edge_w[e]))
        dists.append(d_uv)
        w1s.append(w1)
        kappas.append(1.0 - w1 / d_uv)
    return CurvatureReport(
        layer_sizes=list(graph.layer_sizes),
        edge_u=edge_u_ids, edge_v=edge_v_ids,
        edge_length=np.asarray(lengths), distance=np.asarray(dists),
        w1=np.asarray(w1s), kappa=np.asarray(kappas),
        undefined_edges=undefined, measure=config,
    )


def nrc_all_edges(net, x: np.ndarray,
                  config: MeasureConfig = MeasureConfig(),
                  include_bias: bool = True,
                  method: str = "exact",
                  sinkhorn_reg: float = 0.01) -> CurvatureReport:
    """Neural Ricci curvature: curvature of every edge of the neural data
    graph of (net, x)."""
    graph, _ = build_neural_data_graph(net, x, include_bias=include_bias)
    return orc_all_edges(graph, config, method=method, sinkhorn_reg=sinkhorn_reg)


# ---------------------------------------------------------------------------
# persistence


def write_curvature_csv(path, report: CurvatureReport) -> None:
    header = ["u_rank", "u_index", "v_rank", "v_index",
              "edge_length", "distance", "w1", "kappa"]
    rows = []
    for k in range(report.n_defined):
        nu = report.edge_u[k]
        nv = report.edge_v[k]
        rows.append([nu.rank, nu.index, nv.rank, nv.index,
                     report.edge_length[k], report.distance[k],
                     report.w1[k], report.kappa[k]])
    data_io.write_csv(path, header, rows)


def write_curvature_summary(path, report: CurvatureReport, extra: dict = None) -> None:
    doc = report.summary()
    if extra:
        doc.update(extra)
    data_io.write_json(path, doc)


def read_curvature_kappas(path) -> np.ndarray:
    """Read back just the kappa column of a curvature CSV."""
    header, rows = data_io.read_csv(path)
    k = header.index("kappa")
    return np.array([float(r[k]) for r in rows])
