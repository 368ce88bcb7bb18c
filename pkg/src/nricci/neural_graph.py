"""Neural graphs and per-example neural data graphs.

The static neural graph has one node per neuron (input pixels included)
and an undirected edge for every nonzero weight, with length 1/|w| —
strong connections are short. The per-example data graph specializes this
to one input: edges leaving a zero-activation neuron (dead ReLU or zero
pixel) are removed, and edges into an *active* neuron are renormalized so
that the surviving positive connections carry exactly the mass that the
neuron actually received. That mixed-sign normalization scales each
positive weight by (received mass / positive mass); negative connections
are dropped after being absorbed into the scale factor, so every edge
length in the data graph stays positive.

The bias term is treated as a virtual always-on input during the
normalization (it contributes to the received mass, and to the positive
mass when positive). This keeps the scale factor inside [0, 1] for active
neurons and makes the conservation identity exact. Setting
``include_bias=False`` reproduces the bias-blind variant, where the factor
can leave [0, 1] and the tau floor does the last-resort clamping.

Edges into an inactive neuron keep the plain 1/|w| length: there is no
received mass to conserve, and pruning happens on the outgoing side (its
activation is zero, so everything it feeds is cut anyway).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import data_io
from .network import Network

# floor for normalized effective weights: keeps 1/w_hat finite when the
# normalization degenerates (possible only in the bias-blind variant, or
# for vanishingly small trained weights)
TAU = 1e-8


class NodeId(NamedTuple):
    """A neuron address: rank 0 is the input layer, rank k>0 the output of
    layer k; index runs inside the rank (channel-major for conv ranks)."""

    rank: int
    index: int


@dataclass
class WeightedGraph:
    """Undirected positively-weighted graph over the neurons of a network.

    Edges are stored once with ``edge_u``/``edge_v`` flat node ids
    (lower rank first) and ``edge_w`` the edge length. CSR adjacency over
    both directions is built lazily for traversal.
    """

    layer_sizes: List[int]
    edge_u: np.ndarray
    edge_v: np.ndarray
    edge_w: np.ndarray
    _csr: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self):
        self.offsets = np.concatenate(
            [[0], np.cumsum(np.asarray(self.layer_sizes, dtype=np.int64))]
        )
        self.edge_u = np.asarray(self.edge_u, dtype=np.int64)
        self.edge_v = np.asarray(self.edge_v, dtype=np.int64)
        self.edge_w = np.asarray(self.edge_w, dtype=np.float64)
        if not (self.edge_u.shape == self.edge_v.shape == self.edge_w.shape):
            raise ValueError("edge arrays must have matching shapes")
        if self.edge_w.size and (
            not np.all(np.isfinite(self.edge_w)) or np.any(self.edge_w <= 0)
        ):
            raise ValueError("edge weights must be positive and finite")
        if np.any(self.edge_u == self.edge_v):
            raise ValueError("self-loops are not allowed")
        n = self.n_nodes
        if self.edge_u.size and (
            self.edge_u.min() < 0 or self.edge_u.max() >= n
            or self.edge_v.min() < 0 or self.edge_v.max() >= n
        ):
            raise ValueError("edge endpoint out of range")

    @property
    def n_nodes(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_edges(self) -> int:
        return int(self.edge_u.size)

    def flat_id(self, node: NodeId) -> int:
        if not (0 <= node.rank < len(self.layer_sizes)):
            raise IndexError(f"rank {node.rank} out of range")
        if not (0 <= node.index < self.layer_sizes[node.rank]):
            raise IndexError(f"index {node.index} out of range for rank {node.rank}")
        return int(self.offsets[node.rank] + node.index)

    def node_id(self, flat: int) -> NodeId:
        if not (0 <= flat < self.n_nodes):
            raise IndexError(f"flat id {flat} out of range")
        rank = int(np.searchsorted(self.offsets, flat, side="right") - 1)
        return NodeId(rank, int(flat - self.offsets[rank]))

    def csr(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, indices, weights) over both edge directions."""
        if self._csr is None:
            n = self.n_nodes
            deg = np.zeros(n, dtype=np.int64)
            np.add.at(deg, self.edge_u, 1)
            np.add.at(deg, self.edge_v, 1)
            indptr = np.concatenate([[0], np.cumsum(deg)])
            indices = np.empty(indptr[-1], dtype=np.int64)
            weights = np.empty(indptr[-1], dtype=np.float64)
            cursor = indptr[:-1].copy()
            for a, b, w in zip(self.edge_u, self.edge_v, self.edge_w):
                indices[cursor[a]] = b
                weights[cursor[a]] = w
                cursor[a] += 1
                indices[cursor[b]] = a
                weights[cursor[b]] = w
                cursor[b] += 1
            self._csr = (indptr, indices, weights)
        return self._csr

    def neighbors(self, flat: int) -> Tuple[np.ndarray, np.ndarray]:
        indptr, indices, weights = self.csr()
        lo, hi = indptr[flat], indptr[flat + 1]
        return indices[lo:hi], weights[lo:hi]

    def degree(self, flat: int) -> int:
        indptr, _, _ = self.csr()
        return int(indptr[flat + 1] - indptr[flat])


@dataclass(frozen=True)
class NormalizationOutcome:
    """Result of mixed-sign normalization at one active neuron.

    weights / activations: the surviving incoming edges as given
    factor:     received mass / positive mass, the common scale
    kept:       indices (into weights/activations) of edges kept
    w_hat:      normalized effective weight per kept edge, each >= tau
    dropped:    indices of edges removed (negative weight, or w_hat < tau)
    bias_mass:  normalized mass assigned to the virtual bias input
    input_sum:  total received mass; kept mass + bias mass conserves it
                exactly whenever no sub-tau edge had to be dropped
    """

    weights: np.ndarray
    activations: np.ndarray
    factor: float
    kept: np.ndarray
    w_hat: np.ndarray
    dropped: np.ndarray
    bias_mass: float
    input_sum: float


def normalize_mixed_sign(weights: np.ndarray, activations: np.ndarray,
                         bias: float, include_bias: bool = True,
                         tau: float = TAU) -> NormalizationOutcome:
    """Algorithmic core of the data-graph edge reweighting.

    ``weights`` and ``activations`` describe the surviving incoming edges
    of one active neuron (activations strictly positive). The received
    mass is sum(w*n) plus the bias when it participates; the positive mass
    is the same sum restricted to positive weights (plus a positive bias).
    Positive-weight edges are kept with w_hat = w * factor; negative ones
    are dropped, as is any edge whose w_hat falls below ``tau``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    activations = np.asarray(activations, dtype=np.float64)
    contrib = weights * activations
    input_sum = float(contrib.sum())
    if include_bias:
        input_sum += float(bias)
    pos_mask = weights > 0
    pos_sum = float(contrib[pos_mask].sum())
    bias_positive = include_bias and bias > 0
    if bias_positive:
        pos_sum += float(bias)
    all_idx = np.arange(weights.size, dtype=np.int64)
    if pos_sum <= 0.0:
        # degenerate: no positive mass to carry the received mass
        return NormalizationOutcome(
            weights=weights, activations=activations, factor=0.0,
            kept=np.empty(0, dtype=np.int64),
            w_hat=np.empty(0, dtype=np.float64),
            dropped=all_idx, bias_mass=0.0, input_sum=input_sum,
        )
    factor = input_sum / pos_sum
    candidates = np.flatnonzero(pos_mask)
    scaled = weights[candidates] * factor
    big_enough = scaled >= tau
    kept = candidates[big_enough]
    w_hat = scaled[big_enough]
    dropped = np.setdiff1d(all_idx, kept, assume_unique=True)
    bias_mass = float(bias) * factor if bias_positive else 0.0
    return NormalizationOutcome(
        weights=weights, activations=activations, factor=factor,
        kept=kept, w_hat=w_hat, dropped=dropped,
        bias_mass=bias_mass, input_sum=input_sum,
    )


def build_neural_graph(net: Network) -> WeightedGraph:
    """Static graph of the network: one edge per nonzero weight, length
    1/|w|. Biases contribute no nodes or edges."""
    sizes = net.layer_sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    us, vs, ws = [], [], []
    for rank, lin in enumerate(net.linearizations()):
        rows = np.repeat(
            np.arange(lin.out_dim, dtype=np.int64), np.diff(lin.indptr)
        )
        mask = lin.weights != 0.0
        us.append(offsets[rank] + lin.cols[mask])
        vs.append(offsets[rank + 1] + rows[mask])
        ws.append(1.0 / np.abs(lin.weights[mask]))
    return WeightedGraph(
        layer_sizes=list(sizes),
        edge_u=np.concatenate(us) if us else np.empty(0, np.int64),
        edge_v=np.concatenate(vs) if vs else np.empty(0, np.int64),
        edge_w=np.concatenate(ws) if ws else np.empty(0, np.float64),
    )


def build_neural_data_graph(net: Network, x: np.ndarray,
                            include_bias: bool = True,
                            tau: float = TAU):
    """Per-example graph: zero-phase pruning plus mixed-sign normalization.

    Rules, per incoming edge group of each neuron:
      * edges with zero weight or a zero-activation source are removed;
      * if the neuron is active (post-activation, or logit for the output
        rank, strictly positive), the surviving edges go through
        :func:`normalize_mixed_sign` and the kept ones get length 1/w_hat;
      * otherwise surviving edges keep the static length 1/|w|.

    Returns ``(graph, outcomes)`` where outcomes is a list of
    ``(NodeId of the target neuron, NormalizationOutcome)`` for every
    neuron that went through the normalization.
    """
    trace = net.forward_trace(x)
    sizes = net.layer_sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    us: List[np.ndarray] = []
    vs: List[np.ndarray] = []
    ws: List[np.ndarray] = []
    outcomes: List[Tuple[NodeId, NormalizationOutcome]] = []
    for rank, lin in enumerate(net.linearizations()):
        src_act = trace.values[rank]
        tgt_act = trace.values[rank + 1]
        for o in range(lin.out_dim):
            lo, hi = lin.indptr[o], lin.indptr[o + 1]
            cols = lin.cols[lo:hi]
            w = lin.weights[lo:hi]
            alive = (w != 0.0) & (src_act[cols] > 0.0)
            if not alive.any():
                continue
            cols_a = cols[alive]
            w_a = w[alive]
            if tgt_act[o] > 0.0:
                out = normalize_mixed_sign(
                    w_a, src_act[cols_a], float(lin.bias[o]), include_bias, tau
                )
                outcomes.append((NodeId(rank + 1, o), out))
                if out.kept.size == 0:
                    continue
                cols_keep = cols_a[out.kept]
                lengths = 1.0 / out.w_hat
            else:
                cols_keep = cols_a
                lengths = 1.0 / np.abs(w_a)
            us.append(offsets[rank] + cols_keep)
            vs.append(np.full(cols_keep.size, offsets[rank + 1] + o, np.int64))
            ws.append(lengths)
    graph = WeightedGraph(
        layer_sizes=list(sizes),
        edge_u=np.concatenate(us) if us else np.empty(0, np.int64),
        edge_v=np.concatenate(vs) if vs else np.empty(0, np.int64),
        edge_w=np.concatenate(ws) if ws else np.empty(0, np.float64),
    )
    return graph, outcomes


def write_graph_csv(path, graph: WeightedGraph) -> None:
    """Dump the edge list with rank/index node addresses."""
    rows = []
    for a, b, w in zip(graph.edge_u, graph.edge_v, graph.edge_w):
        nu = graph.node_id(int(a))
        nv = graph.node_id(int(b))
        rows.append([nu.rank, nu.index, nv.rank, nv.index, w])
    data_io.write_csv(
        path, ["u_rank", "u_index", "v_rank", "v_index", "weight"], rows
    )
