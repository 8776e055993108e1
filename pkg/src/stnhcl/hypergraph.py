"""Patch hypergraph construction and degree-normalized convolution.

Patches become hypergraph nodes; soft k-means clusters them and every
cluster whose support survives thresholding becomes a hyperedge, so one
edge can tie together many distant patches with similar content.  The
convolution aggregates node features into edge summaries and scatters
them back, normalized by edge and node degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

MASS_FLOOR = 1e-12  # cluster mass below this counts as empty


@dataclass
class HypergraphConfig:
    """Knobs for building one patch hypergraph."""

    num_edges: int = 4
    threshold: float = 0.3
    temperature: float = 0.1
    iters: int = 10
    share_topology: bool = False

    def validate(self) -> None:
        if self.num_edges < 1:
            raise ConfigError(f"num_edges must be >= 1, got {self.num_edges}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")


@dataclass
class MembershipMatrix:
    """Soft cluster assignments (nodes x clusters) with the final centroids."""

    values: np.ndarray
    centroids: np.ndarray
    temperature: float
    iters: int

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def num_clusters(self) -> int:
        return self.values.shape[1]


@dataclass
class Hypergraph:
    """Binary incidence (edges x nodes) plus cached degree vectors."""

    incidence: np.ndarray
    node_degrees: np.ndarray = field(init=False)
    edge_degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=np.float64)
        if inc.ndim != 2:
            raise ShapeError(f"incidence must be 2-D, got shape {inc.shape}")
        self.incidence = inc
        self.node_degrees = inc.sum(axis=0)
        self.edge_degrees = inc.sum(axis=1)

    @property
    def num_edges(self) -> int:
        return self.incidence.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.incidence.shape[1]


@dataclass
class HgnnParams:
    """Weights of one two-step hypergraph convolution."""

    theta1: Tensor
    theta2: Tensor
    activation: str = "leaky_relu"


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("kmc,kmc->km", diff, diff)


def _seed_centroids(points: np.ndarray, num_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point seeding started from an rng-drawn projection.

    The start point is the extreme of a random linear projection, so the
    whole procedure depends on node *values*, never on their order: a
    consistent permutation of the input permutes memberships the same way.
    """
    direction = rng.standard_normal(points.shape[1])
    chosen = [int(np.argmax(points @ direction))]
    dist = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < num_clusters:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _reseed_empty(centroids: np.ndarray, points: np.ndarray, mass: np.ndarray) -> None:
    """Restart empty clusters at the point farthest from any live centroid."""
    alive = mass >= MASS_FLOOR
    dist = _sq_distances(points, centroids[alive]).min(axis=1)
    for j in np.flatnonzero(~alive):
        k = int(np.argmax(dist))
        centroids[j] = points[k]
        dist[k] = -np.inf


def soft_kmeans(
    features,
    num_clusters: int,
    temperature: float,
    iters: int,
    rng: np.random.Generator,
) -> MembershipMatrix:
    """Temperature-softened k-means over patch features.

    Each round assigns ``softmax_j(-||x_k - c_j||^2 / temperature)`` and
    moves every centroid to its membership-weighted mean; the returned
    membership corresponds to the final assignment round.  Clustering is
    a hard topology decision, so it runs on raw values and is never
    differentiated through.
    """
    pts = features.data if isinstance(features, Tensor) else np.asarray(features)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2:
        raise ShapeError(f"features must be 2-D (nodes x channels), got shape {pts.shape}")
    n = pts.shape[0]
    if not 1 <= num_clusters <= n:
        raise ConfigError(f"num_clusters must lie in [1, {n}], got {num_clusters}")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")

    centroids = _seed_centroids(pts, num_clusters, rng)
    membership = None
    for _ in range(iters):
        membership = _row_softmax(-_sq_distances(pts, centroids) / temperature)
        mass = membership.sum(axis=0)
        if np.any(mass < MASS_FLOOR):
            _reseed_empty(centroids, pts, mass)
            membership = _row_softmax(-_sq_distances(pts, centroids) / temperature)
            mass = membership.sum(axis=0)
        centroids = (membership.T @ pts) / mass[:, None]
    return MembershipMatrix(membership, centroids, float(temperature), int(iters))


def build_incidence(membership, threshold: float) -> Hypergraph:
    """Threshold memberships into a binary incidence matrix.

    Every node additionally joins its argmax cluster (ties to the lowest
    index), so no node is ever isolated; hyperedges that end up with no
    members are dropped.
    """
    values = membership.values if isinstance(membership, MembershipMatrix) else np.asarray(membership)
    if values.ndim != 2:
        raise ShapeError(f"membership must be 2-D, got shape {values.shape}")
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
    n = values.shape[0]
    incidence = (values >= threshold).T.copy()
    incidence[np.argmax(values, axis=1), np.arange(n)] = True
    incidence = incidence[incidence.any(axis=1)]
    return Hypergraph(incidence.astype(np.float64))


_ACTIVATIONS = {
    "leaky_relu": lambda t: T.leaky_relu(t, 0.2),
    "relu": T.relu,
    "identity": lambda t: t,
}


def hgnn_conv(hypergraph: Hypergraph, nodes: Tensor, params: HgnnParams) -> Tensor:
    """Two-step degree-normalized hypergraph convolution.

    Node features are transformed and mean-pooled into each hyperedge,
    then edge summaries are activated and scattered back to member nodes
    (mean over incident edges) before the output transform:

        edges = D_e^-1 . B . act(nodes . theta1)
        out   = D_v^-1 . B^T . act(edges) . theta2
    """
    act = _ACTIVATIONS.get(params.activation)
    if act is None:
        raise ConfigError(f"unknown activation {params.activation!r}")
    if nodes.ndim != 2:
        raise ShapeError(f"nodes must be 2-D, got shape {nodes.shape}")
    if nodes.shape[0] != hypergraph.num_nodes:
        raise ConfigError(
            f"node count {nodes.shape[0]} != incidence column count {hypergraph.num_nodes}"
        )
    if params.theta1.shape[0] != nodes.shape[1]:
        raise ConfigError(
            f"theta1 expects {params.theta1.shape[0]} input channels, nodes have {nodes.shape[1]}"
        )
    if params.theta2.shape[0] != params.theta1.shape[1]:
        raise ConfigError("theta2 input extent must match theta1 output extent")

    dtype = nodes.dtype
    incidence = Tensor(hypergraph.incidence, dtype=dtype)
    inv_edge = Tensor((1.0 / hypergraph.edge_degrees)[:, None], dtype=dtype)
    inv_node = Tensor((1.0 / hypergraph.node_degrees)[:, None], dtype=dtype)

    hidden = act(T.matmul(nodes, params.theta1))
    edges = T.mul(T.matmul(incidence, hidden), inv_edge)
    pooled = T.mul(T.matmul(T.transpose(incidence), act(edges)), inv_node)
    return T.matmul(pooled, params.theta2)


def init_hgnn_params(
    rng: np.random.Generator,
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    activation: str = "leaky_relu",
    dtype=np.float32,
) -> HgnnParams:
    """Uniform fan-in initialization of both transforms."""
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    b1 = 1.0 / np.sqrt(in_dim)
    b2 = 1.0 / np.sqrt(hidden_dim)
    theta1 = Tensor(rng.uniform(-b1, b1, size=(in_dim, hidden_dim)).astype(dtype), requires_grad=True)
    theta2 = Tensor(rng.uniform(-b2, b2, size=(hidden_dim, out_dim)).astype(dtype), requires_grad=True)
    return HgnnParams(theta1, theta2, activation)
