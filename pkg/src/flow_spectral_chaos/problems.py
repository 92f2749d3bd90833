# src/flow_spectral_chaos/problems.py
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Mapping, Optional

import numpy as np

from .distributions import Distribution, ProductMeasure
from .errors import InvalidParametersError, UnknownVariantError
from .flowmap import ExplicitOde
from .fsc import BootstrapConfig, FscConfig, TensorRhs
from .quadrature import NodeSet
from .rfs import Basis

logger = logging.getLogger(__name__)


class ProblemId(str, Enum):
    P1 = "p1"
    P2 = "p2"
    P3 = "p3"
    P4 = "p4"
    P5 = "p5"
    P6 = "p6"
    HIGHDIM = "highdim"


class ReferenceKind(str, Enum):
    CLOSED_FORM = "closed-form"
    DENSE_QUADRATURE = "dense-quadrature"
    MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class Response:
    name: str
    component: int


# Falling body
P1_MASS = 4.0
GRAVITY = 9.81
P1_V0 = 50.0
# Single-degree-of-freedom oscillator
P2_MASS = 100.0
P2_U0 = 0.05
P2_V0 = 0.20
# Van der Pol
VDP_MASS = 100.0
VDP_RHO = 150.0
VDP_STIFFNESS = 400.0
HIGHDIM_DIMS = (5, 7, 10)

ExactFn = Callable[[float, np.ndarray], np.ndarray]
TensorRhsFactory = Callable[[Basis], TensorRhs]


@dataclass(frozen=True)
class ProblemSpec:
    id: ProblemId
    variant: str
    ode: ExplicitOde
    measure: ProductMeasure
    input_names: tuple[str, ...]
    responses: tuple[Response, ...]
    defaults: FscConfig
    reference: ReferenceKind
    exact: Optional[ExactFn] = None
    tensor_rhs: Optional[TensorRhsFactory] = field(default=None, repr=False)
    mc_points: int = 0

    @property
    def name(self) -> str:
        return f"{self.id.value}-{self.variant}"

    @property
    def response(self) -> Response:
        return self.responses[0]


# --- variants ---

VARIANTS: dict[ProblemId, dict[str, tuple[Distribution, ...]]] = {
    ProblemId.P1: {
        "uniform": (Distribution.uniform(1.0, 2.0),),
        "beta": (Distribution.beta(2.0, 5.0, 1.0, 2.0),),
    },
    ProblemId.P2: {
        "uniform": (Distribution.uniform(340.0, 460.0),),
        "beta": (Distribution.beta(2.0, 5.0, 340.0, 460.0),),
        "gamma": (Distribution.gamma(10.0, 0.1, 340.0),),
    },
    ProblemId.P3: {
        "uniform": (Distribution.uniform(85.0, 115.0), Distribution.uniform(340.0, 460.0)),
        "beta": (Distribution.uniform(85.0, 115.0), Distribution.beta(2.0, 5.0, 340.0, 460.0)),
    },
    ProblemId.P4: {
        "uniform": (Distribution.uniform(2.0, 3.0),),
        "beta": (Distribution.beta(2.0, 5.0, 2.0, 3.0),),
        "normal": (Distribution.normal(2.5, 0.125),),
    },
    ProblemId.P5: {
        "uniform": (Distribution.uniform(3.0, 5.0),),
        "beta": (Distribution.beta(2.0, 5.0, 3.0, 5.0),),
        "normal": (Distribution.normal(4.0, 0.2),),
    },
    ProblemId.P6: {
        "uniform-beta": (Distribution.uniform(150.0, 450.0), Distribution.beta(2.0, 5.0, 0.05, 0.25)),
    },
}
INPUT_NAMES = {
    ProblemId.P1: ("k",),
    ProblemId.P2: ("k",),
    ProblemId.P3: ("m", "k"),
    ProblemId.P4: ("k",),
    ProblemId.P5: ("k",),
    ProblemId.P6: ("c", "u0"),
}


def _const(value: float):
    return lambda xi: np.full(xi.shape[0], value)


# --- linear problems ---

def _falling_body(measure: ProductMeasure) -> tuple[ExplicitOde, ExactFn]:
    def rhs(t, xi, s):
        return GRAVITY - xi[:, 0] / P1_MASS * s[0]

    def exact(t, xi):
        k = xi[:, 0]
        terminal = P1_MASS * GRAVITY / k
        return terminal + (P1_V0 - terminal) * np.exp(-k * t / P1_MASS)

    ode = ExplicitOde(
        order=1, dim=1, rhs=rhs, initial=(_const(P1_V0),),
        linear_coefficients=lambda xi: (-xi[:, 0] / P1_MASS,),
        name="p1",
    )
    return ode, exact


def _oscillator(measure: ProductMeasure, random_mass: bool) -> tuple[ExplicitOde, ExactFn]:
    def kappa(xi):
        return xi[:, 1] / xi[:, 0] if random_mass else xi[:, 0] / P2_MASS

    def rhs(t, xi, s):
        return -kappa(xi) * s[0]

    def exact(t, xi):
        omega = np.sqrt(kappa(xi))
        return P2_U0 * np.cos(omega * t) + P2_V0 / omega * np.sin(omega * t)

    ode = ExplicitOde(
        order=2, dim=measure.dim, rhs=rhs, initial=(_const(P2_U0), _const(P2_V0)),
        linear_coefficients=lambda xi: (-kappa(xi), np.zeros(xi.shape[0])),
        name="p3" if random_mass else "p2",
    )
    return ode, exact


def _third_order() -> ExplicitOde:
    # u''' + u''/2 + k u' + u = 0
    def rhs(t, xi, s):
        return -0.5 * s[2] - xi[:, 0] * s[1] - s[0]

    return ExplicitOde(
        order=3, dim=1, rhs=rhs, initial=(_const(1.0), _const(-1.0), _const(2.0)),
        linear_coefficients=lambda xi: (-np.ones(xi.shape[0]), -xi[:, 0], np.full(xi.shape[0], -0.5)),
        name="p4",
    )


def _fourth_order() -> ExplicitOde:
    # u'''' + k u'' + u = 0
    def rhs(t, xi, s):
        return -xi[:, 0] * s[2] - s[0]

    zeros = lambda xi: np.zeros(xi.shape[0])  # noqa: E731
    return ExplicitOde(
        order=4, dim=1, rhs=rhs, initial=(_const(1.0), _const(-1.0), _const(2.0), _const(-3.0)),
        linear_coefficients=lambda xi: (-np.ones(xi.shape[0]), zeros(xi), -xi[:, 0], zeros(xi)),
        name="p5",
    )


# --- Van der Pol ---

def vdp_chain(t: float, xi: np.ndarray, s: np.ndarray, count: int) -> np.ndarray:
    """u'' .. u^(5) from m u'' = (1 - rho u^2) c u' - k u."""
    c = xi[:, 0]
    u, v = s[0], s[1]
    m, rho, k = VDP_MASS, VDP_RHO, VDP_STIFFNESS
    damping = (1.0 - rho * u * u) * c
    a = (damping * v - k * u) / m
    out = [a]
    if count > 1:
        j = (-2.0 * rho * c * u * v * v + damping * a - k * v) / m
        out.append(j)
    if count > 2:
        s4 = (-2.0 * rho * c * v**3 - 6.0 * rho * c * u * v * a + damping * j - k * a) / m
        out.append(s4)
    if count > 3:
        s5 = (
            -12.0 * rho * c * v * v * a
            - 6.0 * rho * c * u * a * a
            - 8.0 * rho * c * u * v * j
            + damping * s4
            - k * j
        ) / m
        out.append(s5)
    return np.array(out[:count])


def _van_der_pol() -> ExplicitOde:
    return ExplicitOde(
        order=2, dim=2,
        rhs=lambda t, xi, s: vdp_chain(t, xi, s, 1)[0],
        initial=(lambda xi: xi[:, 1], lambda xi: 2.0 * xi[:, 1] - 0.10),
        chain=vdp_chain, chain_depth=3,
        name="p6",
    )


def vdp_input_basis(nodes: NodeSet) -> np.ndarray:
    """Rows {1, c - E[c], u0 - E[u0]} at the nodes."""
    c = nodes.axis(0)
    u0 = nodes.axis(1)
    return np.array([np.ones(nodes.Q), c - nodes.expectation(c), u0 - nodes.expectation(u0)])


def vdp_multiplication_tensor(basis: Basis, input_basis: np.ndarray) -> np.ndarray:
    """M[i, j, k, l, m] = <Psi_i, Psi_j Psi_k Psi_l Psi~_m> / Upsilon_ii.

    Each sorted (j, k, l) is integrated once and copied to its permutations, so
    the symmetry in j, k, l holds bit for bit.
    """
    size = basis.size
    tensor = np.zeros((size, size, size, size, input_basis.shape[0]))
    for j, k, l in itertools.combinations_with_replacement(range(size), 3):
        product = basis.values[j] * basis.values[k] * basis.values[l]
        block = basis.projector @ (product[None, :] * input_basis).T
        for a, b, c in set(itertools.permutations((j, k, l))):
            tensor[:, a, b, c, :] = block
    return tensor


def vdp_tensor_rhs(basis: Basis) -> TensorRhs:
    input_basis = vdp_input_basis(basis.carrier)
    tensor = vdp_multiplication_tensor(basis, input_basis)
    c_modes = np.array([basis.carrier.expectation(basis.carrier.axis(0)), 1.0, 0.0])
    linear = np.einsum("ijm,m->ij", tensor[:, :, 0, 0, :], c_modes)
    cubic = np.einsum("ijklm,m->ijkl", tensor, c_modes)

    def rhs(t: float, modes: np.ndarray) -> np.ndarray:
        u, v = modes[0], modes[1]
        acc = (
            linear @ v
            - VDP_RHO * np.einsum("ijkl,j,k,l->i", cubic, v, u, u)
            - VDP_STIFFNESS * u
        ) / VDP_MASS
        return np.vstack([v, acc])

    return rhs


# --- high-dimensional problem ---

@dataclass(frozen=True)
class HighDimInputs:
    k: np.ndarray
    f: np.ndarray
    u0: np.ndarray
    v0: np.ndarray
    k_t: np.ndarray
    k_tt: np.ndarray
    k_ttt: np.ndarray
    f_t: np.ndarray
    f_tt: np.ndarray
    f_ttt: np.ndarray


def _padded(xi: np.ndarray) -> np.ndarray:
    xi = np.atleast_2d(xi)
    out = np.zeros((xi.shape[0], 10))
    out[:, : xi.shape[1]] = xi
    return out


def highdim_inputs(d: int, t: float, nodes) -> HighDimInputs:
    """k(t), f(t), the initial conditions and their time derivatives at the nodes.

    Components beyond d are held at zero. ``nodes`` is a NodeSet or a (Q, d) array.
    """
    xi = nodes.nodes if isinstance(nodes, NodeSet) else np.asarray(nodes, dtype=float)
    if xi.shape[1] != d:
        raise InvalidParametersError(f"High-dimensional inputs for d={d} got {xi.shape[1]}-dimensional nodes")
    x = _padded(xi)
    amp_k = (x[:, 0] + 40.0) * (x[:, 5] + x[:, 6] + 40.0) / 2400.0
    lam = (x[:, 1] + 7.0) / 77.0
    decay = np.exp(-lam * t)
    amp_f = (x[:, 2] + 7.0) * (x[:, 7] + 40.0) / 1200.0
    wave = x[:, 8] + x[:, 9]
    omega = np.pi / 7.0
    sin, cos = np.sin(omega * t), np.cos(omega * t)
    return HighDimInputs(
        k=amp_k * (3.0 - decay),
        f=amp_f * (wave * sin + 3.0),
        u0=(x[:, 3] + 8.0) / 7.0,
        v0=(x[:, 4] + 7.0) / 8.0,
        k_t=amp_k * lam * decay,
        k_tt=-amp_k * lam**2 * decay,
        k_ttt=amp_k * lam**3 * decay,
        f_t=amp_f * wave * omega * cos,
        f_tt=-amp_f * wave * omega**2 * sin,
        f_ttt=-amp_f * wave * omega**3 * cos,
    )


def _highdim_ode(d: int) -> ExplicitOde:
    def chain(t, xi, s, count):
        inp = highdim_inputs(d, t, xi)
        u, v = s[0], s[1]
        a = inp.f - inp.k * u
        out = [a]
        if count > 1:
            j = inp.f_t - inp.k_t * u - inp.k * v
            out.append(j)
        if count > 2:
            s4 = inp.f_tt - inp.k_tt * u - 2.0 * inp.k_t * v - inp.k * a
            out.append(s4)
        if count > 3:
            out.append(inp.f_ttt - inp.k_ttt * u - 3.0 * inp.k_tt * v - 3.0 * inp.k_t * a - inp.k * j)
        return np.array(out[:count])

    return ExplicitOde(
        order=2, dim=d,
        rhs=lambda t, xi, s: chain(t, xi, s, 1)[0],
        initial=(lambda xi: highdim_inputs(d, 0.0, xi).u0, lambda xi: highdim_inputs(d, 0.0, xi).v0),
        chain=chain, chain_depth=3,
        name=f"highdim{d}",
    )


def highdim_measure(d: int) -> ProductMeasure:
    beta = Distribution.beta(2.0, 5.0, -1.0, 1.0)
    uniform = Distribution.uniform(-1.0, 1.0)
    return ProductMeasure((beta,) * 3 + (uniform,) * (d - 3))


# --- linear second-order tensor path ---

def stiffness_tensor(basis: Basis, kappa: np.ndarray) -> np.ndarray:
    """K[i, j] = <Psi_i, kappa Psi_j> / Upsilon_ii."""
    return (basis.projector * kappa) @ basis.values.T


def _stiffness_tensor_rhs(stiffness: Callable[[float, np.ndarray], np.ndarray],
                          forcing: Optional[Callable[[float, np.ndarray], np.ndarray]],
                          time_dependent: bool) -> TensorRhsFactory:
    def factory(basis: Basis) -> TensorRhs:
        xi = basis.carrier.nodes
        frozen = None if time_dependent else stiffness_tensor(basis, stiffness(0.0, xi))

        def rhs(t: float, modes: np.ndarray) -> np.ndarray:
            K = frozen if frozen is not None else stiffness_tensor(basis, stiffness(t, xi))
            acc = -K @ modes[0]
            if forcing is not None:
                acc = acc + basis.projector @ forcing(t, xi)
            return np.vstack([modes[1], acc])

        return rhs

    return factory


# --- factory ---

def _apply_overrides(pid: ProblemId, factors: tuple[Distribution, ...],
                     overrides: Optional[Mapping[str, Distribution]]) -> tuple[Distribution, ...]:
    if not overrides:
        return factors
    names = INPUT_NAMES.get(pid, ())
    factors = list(factors)
    for name, dist in overrides.items():
        if name not in names:
            raise UnknownVariantError(f"Problem {pid.value} has no random input '{name}' (inputs: {list(names)})")
        factors[names.index(name)] = dist
    return tuple(factors)


def make_problem(
    id,
    variant: Optional[str] = None,
    *,
    d: Optional[int] = None,
    overrides: Optional[Mapping[str, Distribution]] = None,
) -> ProblemSpec:
    try:
        pid = ProblemId(str(getattr(id, "value", id)).lower())
    except ValueError:
        known = ", ".join(p.value for p in ProblemId)
        raise UnknownVariantError(f"Unknown problem '{id}' (known: {known})") from None

    if pid is ProblemId.HIGHDIM:
        d = 10 if d is None else int(d)
        if d not in HIGHDIM_DIMS:
            raise UnknownVariantError(f"High-dimensional problem supports d in {HIGHDIM_DIMS}, got {d}")
        if overrides:
            raise UnknownVariantError("The high-dimensional problem has no overridable inputs")
        variant = variant or "beta-uniform"
        if variant != "beta-uniform":
            raise UnknownVariantError(f"High-dimensional problem has only the 'beta-uniform' variant, got '{variant}'")
        ode = _highdim_ode(d)

        def stiffness(t, xi):
            return highdim_inputs(d, t, xi).k

        def forcing(t, xi):
            return highdim_inputs(d, t, xi).f

        return ProblemSpec(
            id=pid, variant=f"d{d}", ode=ode, measure=highdim_measure(d), input_names=(),
            responses=(Response("u", 0),),
            defaults=FscConfig(P=3, dt=1e-2, T=10.0, bootstrap=BootstrapConfig(duration=0.0)),
            reference=ReferenceKind.MONTE_CARLO,
            tensor_rhs=_stiffness_tensor_rhs(stiffness, forcing, time_dependent=True),
            mc_points=100_000,
        )

    table = VARIANTS[pid]
    variant = (variant or next(iter(table))).lower()
    if variant not in table:
        raise UnknownVariantError(f"Problem {pid.value} has no variant '{variant}' (variants: {list(table)})")
    measure = ProductMeasure(_apply_overrides(pid, table[variant], overrides))
    exact = None
    tensor = None

    if pid is ProblemId.P1:
        ode, exact = _falling_body(measure)
        responses, reference = (Response("v", 0),), ReferenceKind.CLOSED_FORM
    elif pid in (ProblemId.P2, ProblemId.P3):
        random_mass = pid is ProblemId.P3
        ode, exact = _oscillator(measure, random_mass)
        responses, reference = (Response("u", 0),), ReferenceKind.CLOSED_FORM
        kappa = (lambda t, xi: xi[:, 1] / xi[:, 0]) if random_mass else (lambda t, xi: xi[:, 0] / P2_MASS)
        tensor = _stiffness_tensor_rhs(kappa, None, time_dependent=False)
    elif pid is ProblemId.P4:
        ode = _third_order()
        responses, reference = (Response("u", 0),), ReferenceKind.DENSE_QUADRATURE
    elif pid is ProblemId.P5:
        ode = _fourth_order()
        responses, reference = (Response("jerk", 3), Response("u", 0)), ReferenceKind.DENSE_QUADRATURE
    else:
        ode = _van_der_pol()
        responses, reference = (Response("u", 0),), ReferenceKind.MONTE_CARLO
        tensor = vdp_tensor_rhs

    n = ode.order
    defaults = FscConfig(P=n + 4, dt=1e-3, T=10.0)
    if pid is ProblemId.P6:
        # cubic damping needs a richer window basis than the linear problems
        defaults = replace(defaults, P=4, dt=5e-3, bootstrap=BootstrapConfig(order=9))
    return ProblemSpec(
        id=pid, variant=variant, ode=ode, measure=measure, input_names=INPUT_NAMES[pid],
        responses=responses, defaults=defaults, reference=reference, exact=exact, tensor_rhs=tensor,
    )
