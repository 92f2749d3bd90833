# src/flow_spectral_chaos/rfs.py
"""Random functions on a node set and the two orthogonalizers.

A random function is stored by its values at the quadrature nodes, so every
inner product is a weighted sum over the carrier. Bases always start with the
constant function Psi_0 = 1.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateFunctionError,
    NodeSetMismatchError,
    NonFiniteError,
    SingularCovarianceError,
)
from .quadrature import NodeSet

logger = logging.getLogger(__name__)

TOL_ORTH = 1e-8
TOL_DROP = 1e-12
TOL_DET = 1e-14


@dataclass(frozen=True, eq=False)
class RandomFunction:
    values: np.ndarray
    carrier: NodeSet

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.carrier.Q,):
            raise NodeSetMismatchError(f"Expected {self.carrier.Q} nodal values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("Random function has non-finite nodal values", module="rfs")
        object.__setattr__(self, "values", values)

    def mean(self) -> float:
        return self.carrier.expectation(self.values)


RawFunctions = Union[Sequence[RandomFunction], np.ndarray]


@dataclass(frozen=True, eq=False)
class Basis:
    """Orthogonal functions {Psi_0 .. Psi_P} stored row-wise, with norms Upsilon_jj.

    ``sources`` records which raw function (1-based position in the input list)
    each Psi_j, j >= 1, was built from.

    ``recombination``, set by a second orthogonalization pass, holds the
    first-pass functions in this basis: first.values = recombination @ values.
    """

    values: np.ndarray
    norms: np.ndarray
    carrier: NodeSet
    sources: tuple[int, ...] = field(default=())
    label: str = field(default="")
    recombination: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def P(self) -> int:
        return self.values.shape[0] - 1

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @cached_property
    def projector(self) -> np.ndarray:
        """Rows Psi_j w / Upsilon_jj; ``projector @ f`` gives all coefficients at once."""
        return self.values * self.carrier.weights / self.norms[:, None]

    def project(self, values: np.ndarray) -> np.ndarray:
        """Spectral coefficients of nodal values; accepts (Q,) or (n, Q)."""
        return np.asarray(values, dtype=float) @ self.projector.T

    def reconstruct(self, modes: np.ndarray) -> np.ndarray:
        return np.asarray(modes, dtype=float) @ self.values

    def gram(self) -> np.ndarray:
        return (self.values * self.carrier.weights) @ self.values.T

    def orthogonality_defect(self) -> float:
        """max_{i != j} |<Psi_i, Psi_j>| / sqrt(Upsilon_ii Upsilon_jj)."""
        gram = self.gram()
        scale = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
        off = np.abs(gram) / scale
        np.fill_diagonal(off, 0.0)
        return float(off.max()) if off.size else 0.0


@dataclass
class OpCounter:
    """Counts elementary floating-point operations along an instrumented path."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass(frozen=True)
class MomentStats:
    """E[Phi_j] and Cov[Phi_i, Phi_j] for the raw functions Phi_1 .. Phi_P."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def P(self) -> int:
        return self.mean.shape[0]

    def subset(self, keep: Sequence[int]) -> MomentStats:
        keep = list(keep)
        return MomentStats(self.mean[keep], self.cov[np.ix_(keep, keep)])


def _stack(raw: RawFunctions, nodes: Optional[NodeSet]) -> tuple[np.ndarray, NodeSet]:
    if isinstance(raw, np.ndarray):
        if nodes is None:
            raise NodeSetMismatchError("A node set is required when raw functions are given as an array")
        matrix = np.atleast_2d(np.asarray(raw, dtype=float))
        if matrix.shape[1] != nodes.Q:
            raise NodeSetMismatchError(f"Raw functions have {matrix.shape[1]} values, carrier has Q = {nodes.Q}")
        return matrix, nodes
    raw = list(raw)
    carrier = nodes or (raw[0].carrier if raw else None)
    if carrier is None:
        raise NodeSetMismatchError("Cannot orthogonalize an empty list without a node set")
    for f in raw:
        if f.carrier is not carrier:
            raise NodeSetMismatchError("Raw functions live on different node sets", module="rfs")
    matrix = np.array([f.values for f in raw], dtype=float).reshape(len(raw), carrier.Q)
    return matrix, carrier


def moment_stats(raw: RawFunctions, nodes: Optional[NodeSet] = None) -> MomentStats:
    matrix, carrier = _stack(raw, nodes)
    w = carrier.weights
    mean = matrix @ w
    centered = matrix - mean[:, None]
    cov = (centered * w) @ centered.T
    return MomentStats(mean, 0.5 * (cov + cov.T))


def _det(matrix: np.ndarray) -> float:
    if matrix.shape[0] == 0:
        return 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(matrix, check_finite=True)
    sign = -1.0 if np.count_nonzero(piv != np.arange(piv.shape[0])) % 2 else 1.0
    return float(sign * np.prod(np.diag(lu)))


def leading_minor(stats: MomentStats, k: int) -> float:
    """det of the covariance block of Phi_1 .. Phi_k; 1 for k = 0."""
    return _det(stats.cov[:k, :k])


def row_replaced_minor(stats: MomentStats, k: int, j: int) -> float:
    """det of the k x k block with its last row replaced by Cov[Phi_j, Phi_1..k]."""
    block = np.array(stats.cov[:k, :k], copy=True)
    block[k - 1, :] = stats.cov[j - 1, :k]
    return _det(block)


def determinant_ratio(stats: MomentStats, k: int, j: int) -> float:
    """Coefficient of Psi_k in the expansion of Phi_j (1 <= k < j)."""
    return row_replaced_minor(stats, k, j) / leading_minor(stats, k)


def gram_schmidt(
    raw: RawFunctions,
    nodes: Optional[NodeSet] = None,
    *,
    counter: Optional[OpCounter] = None,
    tol_drop: float = TOL_DROP,
) -> Basis:
    """Classic Gram-Schmidt with Psi_0 = 1 prepended.

    Psi_j = Phi_j - sum_k <Phi_j, Psi_k> / <Psi_k, Psi_k> Psi_k.
    Raises DegenerateFunctionError when Upsilon_jj falls below tol_drop times
    the raw function's own mean square.
    """
    phi, carrier = _stack(raw, nodes)
    w = carrier.weights
    Q = carrier.Q
    tally = counter.add if counter is not None else (lambda n: None)

    psi = [np.ones(Q)]
    norms = [1.0]
    for j in range(phi.shape[0]):
        f = phi[j]
        v = f.copy()
        for k, psi_k in enumerate(psi):
            if k == 0:
                c = np.sum(f * w)
                tally(2 * Q - 1)
                v -= c
                tally(Q)
            else:
                c = np.sum(f * psi_k * w) / norms[k]
                tally(3 * Q)
                v -= c * psi_k
                tally(2 * Q)
        upsilon = float(np.sum(v * v * w))
        tally(3 * Q - 1)
        # dependence check, not part of the counted process
        scale = float(np.sum(f * f * w))
        if not upsilon > tol_drop * scale:
            raise DegenerateFunctionError(
                f"Raw function {j + 1} is linearly dependent on its predecessors "
                f"(Upsilon = {upsilon:.3e}, mean square = {scale:.3e})",
                index=j,
                module="rfs",
            )
        psi.append(v)
        norms.append(upsilon)
    return Basis(np.array(psi), np.array(norms), carrier, tuple(range(1, phi.shape[0] + 1)), label="gs")


def theorem1_orthogonalize(
    raw: RawFunctions,
    stats: Optional[MomentStats] = None,
    nodes: Optional[NodeSet] = None,
    *,
    tol_det: float = TOL_DET,
) -> Basis:
    """Orthogonalize from first and second moments alone.

    Psi_j = Phi_j - E[Phi_j] - sum_{k<j} det(Delta_k(j)) / det(box_k) Psi_k and
    Upsilon_jj = det(box_j) / det(box_{j-1}). ``stats`` may be supplied when the
    moments are known in closed form.
    """
    phi, carrier = _stack(raw, nodes)
    if stats is None:
        stats = moment_stats(phi, carrier)
    if stats.P != phi.shape[0]:
        raise NodeSetMismatchError(f"Moment statistics cover {stats.P} functions, got {phi.shape[0]}")

    psi = [np.ones(carrier.Q)]
    norms = [1.0]
    minors = [1.0]
    for j in range(1, phi.shape[0] + 1):
        box_j = leading_minor(stats, j)
        mean_square = stats.cov[j - 1, j - 1] + stats.mean[j - 1] ** 2
        if not box_j > tol_det * minors[-1] * mean_square:
            raise SingularCovarianceError(
                f"Covariance block of the first {j} raw functions is singular (det = {box_j:.3e})",
                index=j - 1,
                module="rfs",
            )
        v = phi[j - 1] - stats.mean[j - 1]
        for k in range(1, j):
            v = v - determinant_ratio(stats, k, j) * psi[k]
        psi.append(v)
        norms.append(box_j / minors[-1])
        minors.append(box_j)
    return Basis(np.array(psi), np.array(norms), carrier, tuple(range(1, phi.shape[0] + 1)), label="theorem1")


def reorthogonalize(basis: Basis, *, tol_drop: float = TOL_DROP) -> Basis:
    """Second classic Gram-Schmidt pass over Psi_1 .. Psi_P.

    The span is unchanged. Coefficients computed against the incoming basis
    carry over as ``modes @ recombination``.
    """
    second = gram_schmidt(basis.values[1:], basis.carrier, tol_drop=tol_drop)
    recombination = second.project(basis.values)
    if basis.recombination is not None:
        recombination = basis.recombination @ recombination
    return Basis(
        second.values, second.norms, basis.carrier, basis.sources,
        label=f"{basis.label}+gs", recombination=recombination,
    )


def projection_coeff(basis: Basis, f: Union[RandomFunction, np.ndarray], j: int) -> float:
    if isinstance(f, RandomFunction):
        if f.carrier is not basis.carrier:
            raise NodeSetMismatchError("Function and basis live on different node sets", module="rfs")
        f = f.values
    return float(basis.projector[j] @ np.asarray(f, dtype=float))


class CostMethod(str, Enum):
    THM1_KNOWN = "thm1-known"
    THM1_UNKNOWN = "thm1-unknown"
    CLASSIC_GS = "classic-gs"


def q_coefficient(method: CostMethod, P: int) -> Fraction:
    """Factor multiplying Q in the operation count."""
    P = Fraction(P)
    if method is CostMethod.THM1_KNOWN:
        return P * (P + 1)
    if method is CostMethod.THM1_UNKNOWN:
        return Fraction(7, 2) * P * (P + Fraction(11, 7))
    return Fraction(5, 2) * (P * P + Fraction(9, 5) * P - Fraction(6, 5))


def cost_model(method: CostMethod, P: int, Q: int) -> int:
    """Elementary-operation count to orthogonalize P raw functions on Q nodes.

    Per node, the determinant form with known moments needs P(P+1) operations,
    fewer than classic Gram-Schmidt at every P >= 1; estimating the moments on
    the nodes makes it dearer than Gram-Schmidt at every P.
    """
    if P == 0:
        return 0
    x = Fraction(P)
    if method is CostMethod.THM1_KNOWN:
        rest = x**5 / 30 + x**4 / 6 - x**3 / 3 + x**2 / 3 - Fraction(6, 5) * x + 1
    elif method is CostMethod.THM1_UNKNOWN:
        rest = x**5 / 30 + x**4 / 6 - x**3 / 3 - x**2 / 6 - Fraction(27, 10) * x + 1
    else:
        rest = -2 * x + 1
    return round(q_coefficient(method, P) * Q + rest)
