# src/flow_spectral_chaos/fsc.py
"""Flow-driven spectral chaos time stepping.

Each step rebuilds the random basis from the enriched flow map of the current
nodal state, moves the random modes onto it (mean-square projection or the
exact closed form), then advances the Galerkin system with RK4 on the frozen
basis. An initial window runs on a fixed gPC basis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .distributions import ProductMeasure
from .errors import (
    BasisBoundError,
    BasisCollapseError,
    DegenerateFunctionError,
    FscError,
    InvalidParametersError,
    LinearDependenceError,
    NonFiniteError,
)
from .flowmap import EnrichedState, ExplicitOde, derivative_chain_eval, taylor_flow
from .quadrature import NodeSet
from .rfs import (
    TOL_ORTH,
    Basis,
    MomentStats,
    determinant_ratio,
    gram_schmidt,
    moment_stats,
    reorthogonalize,
    theorem1_orthogonalize,
)
from .spectral import GpcBasisSpec, MomentSeries, bootstrap_order, gpc_basis

logger = logging.getLogger(__name__)

# (t, modes) -> d modes / dt on a fixed basis
TensorRhs = Callable[[float, np.ndarray], np.ndarray]

VARIANCE_CHECK_EVERY = 100


class Transfer(str, Enum):
    FSC1 = "fsc1"
    FSC2 = "fsc2"


class Orthogonalizer(str, Enum):
    GS = "gs"
    THEOREM1 = "theorem1"


class GalerkinMode(str, Enum):
    NODAL = "nodal"
    TENSOR = "tensor"


@dataclass(frozen=True)
class BootstrapConfig:
    method: str = "gpc"
    order: Optional[int] = None
    duration: float = 1.0


@dataclass(frozen=True)
class FscConfig:
    P: int
    M: int = 4
    transfer: Transfer = Transfer.FSC2
    dt: float = 1e-3
    T: float = 10.0
    bootstrap: BootstrapConfig = BootstrapConfig()
    orthogonalizer: Orthogonalizer = Orthogonalizer.GS
    galerkin: GalerkinMode = GalerkinMode.NODAL
    midpoint: bool = False

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def bootstrap_steps(self) -> int:
        return int(round(self.bootstrap.duration / self.dt))

    def validate(self, n: int) -> None:
        if not 1 <= self.M <= 4:
            raise InvalidParametersError(f"Flow-map order M must be in 1..4, got {self.M}")
        if not n + 1 <= self.P <= n + self.M:
            raise BasisBoundError(
                f"P={self.P} is outside n+1 <= P <= n+M = [{n + 1}, {n + self.M}] for an order-{n} ODE"
            )
        if not self.dt > 0:
            raise InvalidParametersError(f"dt must be positive, got {self.dt}")
        if not self.T > 0:
            raise InvalidParametersError(f"T must be positive, got {self.T}")
        if self.bootstrap.duration < 0:
            raise InvalidParametersError(f"Bootstrap duration must be >= 0, got {self.bootstrap.duration}")
        if self.bootstrap.method != "gpc":
            raise InvalidParametersError(f"Unknown bootstrap method '{self.bootstrap.method}' (only 'gpc')")
        if self.bootstrap.order is not None and self.bootstrap.order < 0:
            raise InvalidParametersError(f"Bootstrap order must be >= 0, got {self.bootstrap.order}")
        if abs(self.steps * self.dt - self.T) > 1e-9 * self.T:
            raise InvalidParametersError(f"T={self.T} is not a whole number of steps of dt={self.dt}")


@dataclass
class SpectralState:
    t: float
    basis: Basis
    modes: np.ndarray

    @property
    def order(self) -> int:
        return self.modes.shape[0]

    def nodal(self) -> np.ndarray:
        return self.basis.reconstruct(self.modes)

    def mean(self, component: int) -> float:
        return float(self.modes[component, 0])

    def variance(self, component: int) -> float:
        return float(np.sum(self.basis.norms[1:] * self.modes[component, 1:] ** 2))


@dataclass
class RunDiagnostics:
    steps: int = 0
    resets: int = 0
    rank_drops: int = 0
    min_basis_size: int = 0
    max_transfer_residual: float = 0.0
    max_orthogonality_defect: float = 0.0
    reorthogonalizations: int = 0
    max_mean_shift: float = 0.0
    max_variance_gap: float = 0.0
    closed_form_fallbacks: int = 0


@dataclass
class FscResult:
    series: dict[str, MomentSeries]
    diagnostics: RunDiagnostics
    final_state: SpectralState


def _orthogonalize(raw: np.ndarray, nodes: NodeSet, orthogonalizer: Orthogonalizer,
                   stats: Optional[MomentStats]) -> Basis:
    if orthogonalizer is Orthogonalizer.THEOREM1:
        return theorem1_orthogonalize(raw, stats, nodes)
    return gram_schmidt(raw, nodes)


def _second_pass(basis: Basis, t: float, tol_orth: float, diagnostics: Optional[RunDiagnostics]) -> Basis:
    defect = basis.orthogonality_defect()
    refined = reorthogonalize(basis)
    remaining = refined.orthogonality_defect()
    if diagnostics is not None:
        diagnostics.reorthogonalizations += 1
    log = logger.warning if diagnostics is None or diagnostics.reorthogonalizations == 1 else logger.debug
    log(f"Basis at t={t:.6g} lost orthogonality (defect {defect:.3e} > {tol_orth:.0e}), "
        f"second pass leaves {remaining:.3e}")
    if remaining > tol_orth:
        raise DegenerateFunctionError(
            f"Raw function {basis.P} keeps the basis non-orthogonal after a second pass (defect {remaining:.3e})",
            index=basis.P - 1,
            module="fsc",
            time=t,
        )
    return refined


def build_basis(
    enriched: EnrichedState,
    P: int,
    orthogonalizer: Orthogonalizer,
    nodes: NodeSet,
    *,
    midpoint_h: float = 0.0,
    M: Optional[int] = None,
    tol_orth: float = TOL_ORTH,
    diagnostics: Optional[RunDiagnostics] = None,
) -> Basis:
    """Orthogonalize {1, s^1 .. s^P}; dependent raw vectors are dropped and reported in ``sources``.

    A basis whose orthogonality defect exceeds ``tol_orth`` gets a second
    Gram-Schmidt pass; if that is not enough, its last raw function is dropped.
    """
    if midpoint_h:
        raw = taylor_flow(None, midpoint_h, enriched, M or enriched.M, components=P)
    else:
        raw = enriched.values[:P]
    stats = moment_stats(raw, nodes) if orthogonalizer is Orthogonalizer.THEOREM1 else None
    keep = list(range(P))
    basis = None
    while keep:
        try:
            basis = _orthogonalize(raw[keep], nodes, orthogonalizer, stats.subset(keep) if stats else None)
            if basis.orthogonality_defect() > tol_orth:
                basis = _second_pass(basis, enriched.t, tol_orth, diagnostics)
            break
        except LinearDependenceError as e:
            dropped = keep.pop(e.index)
            logger.debug(f"Dropping dependent raw function {dropped + 1} at t={enriched.t:.6g}")
    if not keep:
        raise BasisCollapseError(
            f"All {P} raw functions are constant at t={enriched.t:.6g}; no random basis can be built",
            module="fsc", time=enriched.t,
        )
    return Basis(
        basis.values, basis.norms, nodes, tuple(k + 1 for k in keep),
        label=basis.label, recombination=basis.recombination,
    )


def transfer_fsc1(old: SpectralState, new_basis: Basis) -> np.ndarray:
    """(s^l)^j = sum_k <Psi_j^new, Psi_k^old> / Upsilon_jj^new (s^l)^k."""
    transfer = new_basis.projector @ old.basis.values.T
    # both bases start with Psi_0 = 1 and are centered past it: the mean mode carries over as is
    transfer[0] = 0.0
    transfer[0, 0] = 1.0
    return old.modes @ transfer.T


def _project_nodal(nodal: np.ndarray, new_basis: Basis) -> np.ndarray:
    return new_basis.project(nodal)


def transfer_fsc2(
    old: SpectralState,
    new_basis: Basis,
    stats: Optional[MomentStats] = None,
    *,
    raw_is_state: bool = True,
) -> np.ndarray:
    """Exact transfer when the new basis was built from the state itself.

    Row l is (E[s^l], det(Delta_1(l))/det(box_1), ..., 1, 0, ...). When the
    first n raw functions were not the state components (a rank drop or a
    pushed basis), the state is projected instead.

    Rows are built in first-pass coordinates and carried through the basis
    ``recombination`` when a second orthogonalization pass was needed.
    """
    n = old.order
    if not raw_is_state or new_basis.sources[:n] != tuple(range(1, n + 1)):
        return _project_nodal(old.nodal(), new_basis)
    if stats is None:
        stats = moment_stats(old.nodal(), new_basis.carrier)
    modes = np.zeros((n, new_basis.size))
    for l in range(1, n + 1):
        modes[l - 1, 0] = stats.mean[l - 1]
        for j in range(1, l):
            modes[l - 1, j] = determinant_ratio(stats, j, l)
        modes[l - 1, l] = 1.0
    if new_basis.recombination is not None:
        modes = modes @ new_basis.recombination
    return modes


def galerkin_rhs(ode: ExplicitOde, t: float, state: SpectralState) -> np.ndarray:
    """Row l < n takes row l+1; row n is the projection of f on the reconstructed state."""
    nodal = state.nodal()
    f = ode.rhs(t, state.basis.carrier.nodes, nodal)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError(f"Non-finite right-hand side of '{ode.name}'", module="fsc", time=t)
    return np.vstack([state.modes[1:], state.basis.project(f)[None, :]])


def rk4_step(
    ode: ExplicitOde,
    state: SpectralState,
    dt: float,
    rhs: Optional[TensorRhs] = None,
) -> SpectralState:
    if not dt > 0:
        raise InvalidParametersError(f"dt must be positive, got {dt}")

    def deriv(t, modes):
        if rhs is not None:
            return rhs(t, modes)
        return galerkin_rhs(ode, t, SpectralState(t, state.basis, modes))

    t, y = state.t, state.modes
    k1 = deriv(t, y)
    k2 = deriv(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = deriv(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = deriv(t + dt, y + dt * k3)
    modes = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(modes)):
        raise NonFiniteError(f"Non-finite random modes after the step from t={t:.6g}", module="fsc", time=t)
    return SpectralState(t + dt, state.basis, modes)


class _Recorder:
    def __init__(self, responses: Sequence[tuple[str, int]], times: np.ndarray):
        self.responses = responses
        self.times = times
        self.mean = np.zeros((len(responses), times.shape[0]))
        self.variance = np.zeros((len(responses), times.shape[0]))

    def nodal(self, i: int, values: np.ndarray, nodes: NodeSet) -> None:
        for r, (_, component) in enumerate(self.responses):
            m = nodes.expectation(values[component])
            self.mean[r, i] = m
            self.variance[r, i] = nodes.expectation((values[component] - m) ** 2)

    def spectral(self, i: int, state: SpectralState) -> None:
        for r, (_, component) in enumerate(self.responses):
            self.mean[r, i] = state.mean(component)
            self.variance[r, i] = state.variance(component)

    def series(self) -> dict[str, MomentSeries]:
        return {
            name: MomentSeries(self.times, self.mean[r], self.variance[r], label=name)
            for r, (name, _) in enumerate(self.responses)
        }


def run_fsc(
    ode: ExplicitOde,
    cfg: FscConfig,
    nodes: NodeSet,
    measure: ProductMeasure,
    responses: Sequence[tuple[str, int]] = (("u", 0),),
    *,
    tensor_rhs: Optional[Callable[[Basis], TensorRhs]] = None,
) -> FscResult:
    """Integrates the moments of ``responses`` over [0, T]."""
    n = ode.order
    cfg.validate(n)
    if cfg.galerkin is GalerkinMode.TENSOR and tensor_rhs is None:
        raise InvalidParametersError(f"'{ode.name}' defines no tensor Galerkin path")
    responses = [(name, int(c)) for name, c in responses]
    ode = ode.with_domain(0.0, cfg.T)
    xi = nodes.nodes
    N, n_boot = cfg.steps, min(cfg.bootstrap_steps, cfg.steps)
    times = np.arange(N + 1) * cfg.dt
    recorder = _Recorder(responses, times)
    diag = RunDiagnostics()
    midpoint_h = 0.5 * cfg.dt if cfg.midpoint else 0.0

    s0 = ode.initial_state(xi)
    recorder.nodal(0, s0, nodes)
    state: Optional[SpectralState] = None
    if n_boot > 0:
        p = cfg.bootstrap.order if cfg.bootstrap.order is not None else bootstrap_order(measure.dim, cfg.P)
        basis = gpc_basis(measure, GpcBasisSpec(measure.dim, p), nodes)
        logger.info(f"{ode.name}: gPC bootstrap with {basis.size} functions for {n_boot} steps")
        state = SpectralState(0.0, basis, basis.project(s0))
    diag.min_basis_size = state.basis.size if state else cfg.P + 1

    rhs_cache: dict[int, TensorRhs] = {}
    logger.info(
        f"{ode.name}: FSC run P={cfg.P} M={cfg.M} {cfg.transfer.value} dt={cfg.dt} T={cfg.T} on Q={nodes.Q} nodes"
    )
    i = 0
    try:
        for i in range(N):
            t = times[i]
            if i >= n_boot:
                state = _reset(ode, cfg, t, state, s0, nodes, midpoint_h, diag)
            rhs = None
            if cfg.galerkin is GalerkinMode.TENSOR:
                key = id(state.basis)
                if key not in rhs_cache:
                    rhs_cache.clear()
                    rhs_cache[key] = tensor_rhs(state.basis)
                rhs = rhs_cache[key]
            state = rk4_step(ode, SpectralState(t, state.basis, state.modes), cfg.dt, rhs)
            state.t = times[i + 1]
            recorder.spectral(i + 1, state)
            if (i + 1) % VARIANCE_CHECK_EVERY == 0:
                _check_variance(state, responses, nodes, diag)
            diag.steps = i + 1
    except FscError as e:
        raise e.located(module="fsc", step=i, time=float(times[i]))

    logger.info(
        f"{ode.name}: done, {diag.resets} basis resets, {diag.rank_drops} rank drops, "
        f"{diag.reorthogonalizations} second passes, max transfer residual {diag.max_transfer_residual:.3e}"
    )
    return FscResult(recorder.series(), diag, state)


def _reset(ode, cfg, t, state, s0, nodes, midpoint_h, diag) -> SpectralState:
    nodal = state.nodal() if state is not None else s0
    enriched = derivative_chain_eval(ode, t, nodes.nodes, nodal, cfg.M)
    basis = build_basis(enriched, cfg.P, cfg.orthogonalizer, nodes, midpoint_h=midpoint_h, M=cfg.M, diagnostics=diag)
    diag.resets += 1
    drops = cfg.P - basis.P
    diag.rank_drops += drops
    diag.min_basis_size = min(diag.min_basis_size, basis.size)
    old = state if state is not None else SpectralState(t, _nodal_carrier(nodal, nodes), np.eye(nodal.shape[0]))

    if cfg.transfer is Transfer.FSC2:
        raw_is_state = not midpoint_h
        if not raw_is_state or basis.sources[: ode.order] != tuple(range(1, ode.order + 1)):
            diag.closed_form_fallbacks += 1
        modes = transfer_fsc2(old, basis, moment_stats(nodal, nodes), raw_is_state=raw_is_state)
    else:
        modes = transfer_fsc1(old, basis) if state is not None else basis.project(nodal)

    residual = float(np.max(np.abs(basis.reconstruct(modes) - nodal)))
    diag.max_transfer_residual = max(diag.max_transfer_residual, residual)
    if state is not None:
        shift = float(np.max(np.abs(modes[:, 0] - state.modes[:, 0])))
        diag.max_mean_shift = max(diag.max_mean_shift, shift)
    diag.max_orthogonality_defect = max(diag.max_orthogonality_defect, basis.orthogonality_defect())
    return SpectralState(t, basis, modes)


def _nodal_carrier(nodal: np.ndarray, nodes: NodeSet) -> Basis:
    # Pseudo-basis whose "functions" are the nodal state rows; used only before the first basis exists.
    return Basis(nodal, np.ones(nodal.shape[0]), nodes, label="nodal")


def _check_variance(state: SpectralState, responses, nodes: NodeSet, diag: RunDiagnostics) -> None:
    nodal = state.nodal()
    for _, component in responses:
        m = nodes.expectation(nodal[component])
        direct = nodes.expectation((nodal[component] - m) ** 2)
        diag.max_variance_gap = max(diag.max_variance_gap, abs(direct - state.variance(component)))
