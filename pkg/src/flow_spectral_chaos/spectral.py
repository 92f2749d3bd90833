# src/flow_spectral_chaos/spectral.py
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from scipy import special

from .distributions import Distribution, DistributionKind, ProductMeasure
from .errors import NodeSetMismatchError, NumericalError
from .quadrature import NodeKind, NodeSet
from .rfs import TOL_ORTH, Basis, RandomFunction, gram_schmidt

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = -1e-12
CSV_FLOAT = ".17g"


@dataclass(frozen=True)
class GpcBasisSpec:
    d: int
    p: int

    @property
    def size(self) -> int:
        return comb(self.d + self.p, self.p)

    def multi_indices(self) -> list[tuple[int, ...]]:
        """Total order <= p, graded, each grade in reverse lexicographic order."""
        out = []
        for grade in range(self.p + 1):
            out.extend(sorted(_compositions(grade, self.d), reverse=True))
        return out


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


BOOTSTRAP_MIN_ORDER = 6
BOOTSTRAP_MAX_FULL_DIM = 3


def bootstrap_order(d: int, P: int = 0, min_functions: int = 7) -> int:
    """Default total order of the gPC window basis.

    Up to three dimensions the order is at least 6; wider measures take the
    smallest order with ``min_functions`` members. Never below the FSC basis
    size ``P``, so the window is no coarser than the run that follows it.
    """
    if d <= BOOTSTRAP_MAX_FULL_DIM:
        p = BOOTSTRAP_MIN_ORDER
    else:
        p = 0
        while comb(d + p, p) < min_functions:
            p += 1
    return max(p, P)


def univariate_polynomial(dist: Distribution, degree: int, x: np.ndarray) -> np.ndarray:
    """Classical orthogonal polynomial of ``degree`` matched to the law, at x."""
    p = dist.named_params
    x = np.asarray(x, dtype=float)
    if dist.kind is DistributionKind.UNIFORM:
        return special.eval_legendre(degree, (2.0 * x - p["a"] - p["b"]) / (p["b"] - p["a"]))
    if dist.kind is DistributionKind.BETA:
        y = (2.0 * x - p["a"] - p["b"]) / (p["b"] - p["a"])
        return special.eval_jacobi(degree, p["beta"] - 1.0, p["alpha"] - 1.0, y)
    if dist.kind is DistributionKind.GAMMA:
        return special.eval_genlaguerre(degree, p["alpha"] - 1.0, p["beta"] * (x - p["a"]))
    return special.eval_hermitenorm(degree, (x - p["mu"]) / p["sigma"])


def gpc_basis(measure: ProductMeasure, spec: GpcBasisSpec, nodes: NodeSet) -> Basis:
    if nodes.dim != measure.dim or spec.d != measure.dim:
        raise NodeSetMismatchError(
            f"gPC basis of dimension {spec.d} for a {measure.dim}-dimensional measure on {nodes.dim}-dimensional nodes"
        )
    rows = []
    for k in spec.multi_indices():
        values = np.ones(nodes.Q)
        for axis, degree in enumerate(k):
            if degree:
                values = values * univariate_polynomial(measure.factors[axis], degree, nodes.axis(axis))
        rows.append(values)
    values = np.array(rows)
    norms = (values * values) @ nodes.weights
    basis = Basis(values, norms, nodes, label=f"gpc[d={spec.d},p={spec.p}]")
    if nodes.kind is NodeKind.MONTE_CARLO or basis.orthogonality_defect() > TOL_ORTH:
        # the products are only orthogonal under the exact measure
        logger.debug(f"Re-orthogonalizing {basis.label} on {nodes.label}")
        basis = gram_schmidt(values[1:], nodes)
        basis = Basis(basis.values, basis.norms, nodes, label=f"gpc[d={spec.d},p={spec.p}]")
    return basis


def mean(modes, basis: Optional[Basis] = None) -> float:
    return float(np.asarray(modes, dtype=float)[0])


def variance(modes, basis: Basis) -> float:
    modes = np.asarray(modes, dtype=float)
    return float(np.sum(basis.norms[1:] * modes[1:] ** 2))


def covariance(modes_a, modes_b, basis: Basis) -> float:
    """Cov of two random functions expanded in the same basis."""
    a = np.asarray(modes_a, dtype=float)
    b = np.asarray(modes_b, dtype=float)
    return float(np.sum(basis.norms[1:] * a[1:] * b[1:]))


def reconstruct(modes, basis: Basis) -> RandomFunction:
    return RandomFunction(basis.reconstruct(modes), basis.carrier)


def project(f: Union[RandomFunction, np.ndarray], basis: Basis) -> np.ndarray:
    if isinstance(f, RandomFunction):
        if f.carrier is not basis.carrier:
            raise NodeSetMismatchError("Function and basis live on different node sets", module="spectral")
        f = f.values
    return basis.project(f)


def _autocovariance(z_t: RandomFunction, z_s: RandomFunction) -> float:
    """Cov[z(t), z(s)] for two instants, evaluated nodally."""
    if z_t.carrier is not z_s.carrier:
        raise NodeSetMismatchError("Both instants must live on the same node set")
    nodes = z_t.carrier
    return nodes.expectation(z_t.values * z_s.values) - nodes.expectation(z_t.values) * nodes.expectation(z_s.values)


@dataclass
class MomentSeries:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    label: str = ""
    realizations: Optional[int] = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        if not (self.times.shape == self.mean.shape == self.variance.shape):
            raise NumericalError(
                f"Moment series '{self.label}' has mismatched lengths "
                f"{self.times.shape}/{self.mean.shape}/{self.variance.shape}"
            )
        if np.any(np.diff(self.times) <= 0):
            raise NumericalError(f"Moment series '{self.label}' times must increase")
        if np.any(self.variance < VARIANCE_FLOOR):
            worst = float(self.variance.min())
            raise NumericalError(f"Moment series '{self.label}' has negative variance {worst:.3e}")
        self.variance = np.maximum(self.variance, 0.0)

    @property
    def stderr(self) -> Optional[np.ndarray]:
        """Standard error of the mean for sampled references."""
        if not self.realizations:
            return None
        return np.sqrt(self.variance / self.realizations)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "mean", "variance"])
            for t, m, v in zip(self.times, self.mean, self.variance):
                writer.writerow([format(t, CSV_FLOAT), format(m, CSV_FLOAT), format(v, CSV_FLOAT)])

    @classmethod
    def from_csv(cls, path: Union[str, Path], label: str = "") -> MomentSeries:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        return cls(
            times=[float(r["t"]) for r in rows],
            mean=[float(r["mean"]) for r in rows],
            variance=[float(r["variance"]) for r in rows],
            label=label,
        )
