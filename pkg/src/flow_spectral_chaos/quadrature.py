# src/flow_spectral_chaos/quadrature.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from .distributions import Distribution, DistributionKind, ProductMeasure
from .errors import DimensionTooLargeError, NodeSetMismatchError, QuadratureError

logger = logging.getLogger(__name__)

# Points per axis used when a config does not say otherwise.
DEFAULT_POINTS = {
    DistributionKind.UNIFORM: 100,
    DistributionKind.BETA: 80,
    DistributionKind.GAMMA: 140,
    DistributionKind.NORMAL: 110,
}
DENSE_POINTS = 400
MAX_GRID_DIM = 3


class NodeKind(str, Enum):
    GAUSS_FULL_GRID = "gauss"
    MONTE_CARLO = "mc"


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Quadrature nodes (Q, d) and positive weights summing to one.

    Compared by identity: two node sets are the same carrier only if they are
    the same object.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: NodeKind
    label: str = field(default="")

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float, copy=True)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.array(self.weights, dtype=float, copy=True).ravel()
        if nodes.shape[0] < 1 or nodes.shape[0] != weights.shape[0]:
            raise QuadratureError(f"Node set needs Q >= 1 nodes and one weight per node, got {nodes.shape} / {weights.shape}")
        if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights)) and np.all(weights > 0)):
            raise QuadratureError(f"Node set '{self.label}' has non-finite nodes or non-positive weights")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def Q(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def axis(self, i: int) -> np.ndarray:
        return self.nodes[:, i]

    def expectation(self, values) -> float:
        return float(np.sum(np.asarray(values, dtype=float) * self.weights))


def _normalized(weights: np.ndarray) -> np.ndarray:
    return weights / np.sum(weights)


def gauss_rule(dist: Distribution, n_points: Optional[int] = None) -> NodeSet:
    """Gauss rule orthogonal w.r.t. the law's density, weights normalized to one.

    scipy's ``roots_*`` routines solve the Golub-Welsch eigenproblem of the
    family's Jacobi matrix: Legendre for uniform, Jacobi(beta-1, alpha-1) for
    beta, generalized Laguerre(alpha-1) for gamma, probabilists' Hermite for
    normal. Nodes are then mapped affinely onto the law's support.
    """
    n = DEFAULT_POINTS[dist.kind] if n_points is None else int(n_points)
    if n < 1:
        raise QuadratureError(f"A Gauss rule needs at least one point, got {n}")
    p = dist.named_params
    try:
        if dist.kind is DistributionKind.UNIFORM:
            y, w = special.roots_legendre(n)
            x = 0.5 * (p["a"] + p["b"]) + 0.5 * (p["b"] - p["a"]) * y
        elif dist.kind is DistributionKind.BETA:
            y, w = special.roots_jacobi(n, p["beta"] - 1.0, p["alpha"] - 1.0)
            x = 0.5 * (p["a"] + p["b"]) + 0.5 * (p["b"] - p["a"]) * y
        elif dist.kind is DistributionKind.GAMMA:
            y, w = special.roots_genlaguerre(n, p["alpha"] - 1.0)
            x = p["a"] + y / p["beta"]
        else:
            y, w = special.roots_hermitenorm(n)
            x = p["mu"] + p["sigma"] * y
    except (np.linalg.LinAlgError, ValueError) as e:
        raise QuadratureError(f"Gauss rule for {dist.spell()} with {n} points failed: {e}", module="quadrature") from e
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w)) and np.sum(w) > 0):
        raise QuadratureError(f"Gauss rule for {dist.spell()} with {n} points did not converge", module="quadrature")
    if np.any(w <= 0):
        # far tail nodes of gamma/normal rules underflow
        logger.debug(f"Dropping {int(np.sum(w <= 0))} zero-weight nodes from the {dist.kind.value} rule")
        x, w = x[w > 0], w[w > 0]
    order = np.argsort(x, kind="stable")
    return NodeSet(x[order], _normalized(w[order]), NodeKind.GAUSS_FULL_GRID, label=f"{dist.kind.value}[{n}]")


def tensor_grid(rules: Sequence[NodeSet]) -> NodeSet:
    """Cartesian product of rules; the first axis varies slowest."""
    if not rules:
        raise QuadratureError("tensor_grid needs at least one rule")
    dim = sum(rule.dim for rule in rules)
    if dim > MAX_GRID_DIM:
        raise DimensionTooLargeError(
            f"Full tensor grids are limited to d <= {MAX_GRID_DIM}, got d = {dim}; use Monte Carlo nodes",
            module="quadrature",
        )
    if len(rules) == 1:
        return rules[0]
    nodes, weights = rules[0].nodes, rules[0].weights
    for rule in rules[1:]:
        nodes = np.concatenate(
            [np.repeat(nodes, rule.Q, axis=0), np.tile(rule.nodes, (nodes.shape[0], 1))], axis=1
        )
        weights = np.outer(weights, rule.weights).ravel()
    label = "x".join(rule.label for rule in rules)
    return NodeSet(nodes, weights, NodeKind.GAUSS_FULL_GRID, label=label)


def gauss_grid(measure: ProductMeasure, points_per_dim: Optional[Sequence[int]] = None) -> NodeSet:
    if points_per_dim is None:
        points_per_dim = [None] * measure.dim
    elif len(points_per_dim) == 1 and measure.dim > 1:
        points_per_dim = list(points_per_dim) * measure.dim
    if len(points_per_dim) != measure.dim:
        raise QuadratureError(
            f"points_per_dim has {len(points_per_dim)} entries for a {measure.dim}-dimensional measure"
        )
    if measure.dim > MAX_GRID_DIM:
        raise DimensionTooLargeError(
            f"Full tensor grids are limited to d <= {MAX_GRID_DIM}, got d = {measure.dim}; use Monte Carlo nodes",
            module="quadrature",
        )
    return tensor_grid([gauss_rule(f, n) for f, n in zip(measure.factors, points_per_dim)])


def dense_grid(measure: ProductMeasure, points: int = DENSE_POINTS) -> NodeSet:
    return gauss_grid(measure, [max(points, DENSE_POINTS)] * measure.dim)


def mc_nodes(measure: ProductMeasure, Q: int, seed: int) -> NodeSet:
    nodes = measure.sample(Q, seed)
    weights = np.full(Q, 1.0 / Q)
    return NodeSet(nodes, weights, NodeKind.MONTE_CARLO, label=f"mc[{Q},seed={seed}]")


def reweighted(nodes: NodeSet, modifier: Callable[[np.ndarray], np.ndarray], label: str = "") -> NodeSet:
    """Rule for dmu' = g dmu: w_q <- w_q g(xi_q), renormalized.

    The caller is responsible for enough points to keep the products exact.
    """
    factor = np.asarray(modifier(nodes.nodes if nodes.dim > 1 else nodes.axis(0)), dtype=float)
    weights = nodes.weights * factor
    if np.any(weights <= 0):
        raise QuadratureError("Weight modifier produced non-positive weights; choose nodes avoiding its zeros")
    return NodeSet(nodes.nodes, _normalized(weights), nodes.kind, label=label or f"{nodes.label}*g")


def _values_on(f):
    carrier = getattr(f, "carrier", None)
    values = np.asarray(getattr(f, "values", f), dtype=float)
    return values, carrier


def inner(f, g, nodes: Optional[NodeSet] = None) -> float:
    """<f, g> = sum_q f(xi_q) g(xi_q) w_q.

    f and g are random functions or plain value vectors; random functions must
    live on ``nodes`` (or on each other's carrier when nodes is omitted).
    """
    fv, fc = _values_on(f)
    gv, gc = _values_on(g)
    carrier = nodes or fc or gc
    if carrier is None:
        raise NodeSetMismatchError("inner() needs a node set when given plain arrays")
    for c in (fc, gc):
        if c is not None and c is not carrier:
            raise NodeSetMismatchError("Random functions live on different node sets", module="quadrature")
    if fv.shape != (carrier.Q,) or gv.shape != (carrier.Q,):
        raise NodeSetMismatchError(
            f"Value vectors of shape {fv.shape} / {gv.shape} do not match Q = {carrier.Q}", module="quadrature"
        )
    return float(np.sum(fv * gv * carrier.weights))
