# src/flow_spectral_chaos/flowmap.py
"""Time derivatives of the solution and the order-M stochastic flow map.

An n-th order ODE d^n u/dt^n = f(t, xi, s) is carried as its configuration
state s = (u, du/dt, ..., d^{n-1}u/dt^{n-1}); each component is a (Q,) array of
nodal values, so a state is an (n, Q) array. The enriched state appends f and
its first M-1 total time derivatives.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import factorial, inf
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import ChainUnavailableError, NonFiniteError

logger = logging.getLogger(__name__)

H_FD = 1e-4
MAX_GENERIC_M = 4

RhsFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
ChainFn = Callable[[float, np.ndarray, np.ndarray, int], np.ndarray]
IcFn = Callable[[np.ndarray], np.ndarray]
LinearCoefficientsFn = Callable[[np.ndarray], Sequence[np.ndarray]]


@dataclass(frozen=True)
class ExplicitOde:
    """An ODE in explicit form with optional analytic derivative information.

    rhs(t, xi, state) returns f at every node; xi is the (Q, d) node array.
    chain(t, xi, state, count) returns (count, Q): f, D_t f, ..., D_t^{count-1} f
    and is trusted for count <= chain_depth + 1. For autonomous linear ODEs,
    linear_coefficients(xi) returns df/ds^k for k = 1..n and the chain follows
    from the state alone.
    """

    order: int
    dim: int
    rhs: RhsFn
    initial: tuple[IcFn, ...]
    chain: Optional[ChainFn] = None
    chain_depth: int = 0
    linear_coefficients: Optional[LinearCoefficientsFn] = None
    domain: tuple[float, float] = (0.0, inf)
    name: str = ""

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"ODE order must be >= 1, got {self.order}")
        if len(self.initial) != self.order:
            raise ValueError(f"An order-{self.order} ODE needs {self.order} initial conditions, got {len(self.initial)}")

    def initial_state(self, xi: np.ndarray) -> np.ndarray:
        xi = np.atleast_2d(xi)
        return np.array([np.broadcast_to(np.asarray(c(xi), dtype=float), (xi.shape[0],)) for c in self.initial])

    def state_derivative(self, t: float, xi: np.ndarray, state: np.ndarray) -> np.ndarray:
        return np.vstack([state[1:], self.rhs(t, xi, state)[None, :]])

    def with_domain(self, start: float, stop: float) -> ExplicitOde:
        return ExplicitOde(
            self.order, self.dim, self.rhs, self.initial, self.chain, self.chain_depth,
            self.linear_coefficients, (start, stop), self.name,
        )


@dataclass(frozen=True)
class EnrichedState:
    """Nodal values of (u, du/dt, ..., d^{n+M-1}u/dt^{n+M-1}) at time t."""

    t: float
    values: np.ndarray
    order: int

    @property
    def M(self) -> int:
        return self.values.shape[0] - self.order

    @property
    def state(self) -> np.ndarray:
        return self.values[: self.order]


@dataclass(frozen=True)
class TrajectoryWindow:
    """Pathwise states at t + o h for integer offsets o."""

    t: float
    h: float
    offsets: tuple[int, ...]
    states: np.ndarray
    xi: np.ndarray = field(repr=False)


def pathwise_rk4_step(ode: ExplicitOde, t: float, xi: np.ndarray, state: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step of the deterministic system at every node."""
    k1 = ode.state_derivative(t, xi, state)
    k2 = ode.state_derivative(t + 0.5 * h, xi, state + 0.5 * h * k1)
    k3 = ode.state_derivative(t + 0.5 * h, xi, state + 0.5 * h * k2)
    k4 = ode.state_derivative(t + h, xi, state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _stencil(m: int, t: float, h: float, domain: tuple[float, float]) -> tuple[int, ...]:
    r = (m + 1) // 2
    if t - r * h < domain[0]:
        return tuple(range(0, m + 1))
    if t + r * h > domain[1]:
        return tuple(range(-m, 1))
    return tuple(range(-r, r + 1))


def _fd_weights(offsets: Sequence[int], m: int) -> np.ndarray:
    """Weights w with sum_j w_j g(t + o_j h) ~ h^m g^(m)(t)."""
    o = np.asarray(offsets, dtype=float)
    K = o.shape[0]
    A = np.array([o**p / factorial(p) for p in range(K)])
    rhs = np.zeros(K)
    rhs[m] = 1.0
    return linalg.solve(A, rhs)


def trajectory_window(
    ode: ExplicitOde, t: float, xi: np.ndarray, state: np.ndarray, m: int, h: float = H_FD
) -> TrajectoryWindow:
    """Stencil of pathwise states around t, one-sided near the ends of the domain."""
    offsets = _stencil(m, t, h, ode.domain)
    if offsets[0] == 0 or offsets[-1] == 0:
        logger.debug(f"One-sided stencil for D_t^{m} f at t={t:.6g} (first-order accurate)")
    by_offset = {0: state}
    current = state
    for o in range(1, max(offsets) + 1):
        current = pathwise_rk4_step(ode, t + (o - 1) * h, xi, current, h)
        by_offset[o] = current
    current = state
    for o in range(-1, min(offsets) - 1, -1):
        current = pathwise_rk4_step(ode, t + (o + 1) * h, xi, current, -h)
        by_offset[o] = current
    return TrajectoryWindow(t, h, offsets, np.array([by_offset[o] for o in offsets]), xi)


def fd_total_derivative(ode: ExplicitOde, t: float, window: TrajectoryWindow, m: int) -> np.ndarray:
    """m-th total time derivative of f by finite differences along the window."""
    if m == 0:
        return ode.rhs(t, window.xi, window.states[window.offsets.index(0)])
    weights = _fd_weights(window.offsets, m)
    out = np.zeros(window.states.shape[-1])
    for w, o, s in zip(weights, window.offsets, window.states):
        if w != 0.0:
            out = out + w * ode.rhs(window.t + o * window.h, window.xi, s)
    return out / window.h**m


def _linear_chain(ode: ExplicitOde, xi: np.ndarray, columns: list[np.ndarray], count: int) -> None:
    # d^{n+m}u = sum_k (df/ds^k) d^{m+k-1}u for autonomous linear f
    a = [np.asarray(c, dtype=float) for c in ode.linear_coefficients(xi)]
    n = ode.order
    for m in range(1, count):
        columns.append(sum(a[k] * columns[m + k] for k in range(n)))


def derivative_chain_eval(
    ode: ExplicitOde,
    t: float,
    xi: np.ndarray,
    state: np.ndarray,
    M: int,
    h_fd: float = H_FD,
) -> EnrichedState:
    state = np.asarray(state, dtype=float)
    n = ode.order
    if M < 1:
        raise ChainUnavailableError(f"Flow-map order must be >= 1, got M={M}")
    columns = list(state)
    if ode.chain is not None and M - 1 <= ode.chain_depth:
        columns.extend(np.asarray(ode.chain(t, xi, state, M), dtype=float))
    elif ode.linear_coefficients is not None:
        columns.append(np.asarray(ode.rhs(t, xi, state), dtype=float))
        _linear_chain(ode, xi, columns, M)
    elif M <= MAX_GENERIC_M:
        columns.append(np.asarray(ode.rhs(t, xi, state), dtype=float))
        for m in range(1, M):
            window = trajectory_window(ode, t, xi, state, m, h_fd)
            columns.append(fd_total_derivative(ode, t, window, m))
    else:
        raise ChainUnavailableError(
            f"M={M} needs D_t^{M - 1} f but '{ode.name}' supplies no derivative chain that deep",
            module="flowmap",
        )
    values = np.array(columns[: n + M])
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.all(np.isfinite(values), axis=1)))
        raise NonFiniteError(
            f"Non-finite d^{bad}u/dt^{bad} in the enriched state of '{ode.name}'", module="flowmap", time=t
        )
    return EnrichedState(t, values, n)


def taylor_flow(ode: Optional[ExplicitOde], h: float, enriched: EnrichedState, M: int,
                components: Optional[int] = None) -> np.ndarray:
    """Order-M Taylor push: phi^k(h) = sum_{j<=M} h^j/j! d^{j+k-1}u/dt^{j+k-1}.

    By default the n state components are pushed; ``components`` may ask for
    more, in which case pushes of the later ones are truncated to the
    derivatives the enriched state carries.
    """
    count = enriched.order if components is None else components
    s = enriched.values
    out = np.zeros((count, s.shape[1]))
    for k in range(count):
        for j in range(M + 1):
            if k + j >= s.shape[0]:
                break
            out[k] += h**j / factorial(j) * s[k + j]
    return out
