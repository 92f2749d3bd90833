# src/flow_spectral_chaos/oracle.py
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import GridMismatchError, InvalidParametersError, NonFiniteError
from .flowmap import pathwise_rk4_step
from .problems import ProblemSpec, ReferenceKind, Response
from .quadrature import NodeSet, dense_grid
from .spectral import CSV_FLOAT, MomentSeries

logger = logging.getLogger(__name__)

DENSE_REFINE = 10
MC_BATCH = 10_000
TIME_TOL = 1e-9


@dataclass
class ErrorReport:
    times: np.ndarray
    eps_mean: np.ndarray
    eps_var: np.ndarray
    global_mean: float
    global_var: float
    reference: ReferenceKind
    interpolated: bool = False
    realizations: Optional[int] = None

    def summary(self) -> dict:
        return {
            "global_mean": self.global_mean,
            "global_var": self.global_var,
            "reference_kind": self.reference.value,
            "interpolated": self.interpolated,
            "realizations": self.realizations,
        }

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "eps_mean", "eps_var"])
            for t, em, ev in zip(self.times, self.eps_mean, self.eps_var):
                writer.writerow([format(t, CSV_FLOAT), format(em, CSV_FLOAT), format(ev, CSV_FLOAT)])


def global_error(times: np.ndarray, local: np.ndarray) -> float:
    """(dt/T) sum_{i=0..N} eps(t_i); all N+1 samples are kept."""
    if times.shape[0] < 2:
        return float(local[0]) if local.size else 0.0
    dt = times[1] - times[0]
    T = times[-1] - times[0]
    return float(dt / T * np.sum(local))


def error_metrics(test: MomentSeries, reference: MomentSeries,
                  kind: ReferenceKind = ReferenceKind.CLOSED_FORM) -> ErrorReport:
    t = test.times
    r = reference.times
    if r[0] > t[0] + TIME_TOL or r[-1] < t[-1] - TIME_TOL:
        raise GridMismatchError(
            f"Reference covers [{r[0]:.6g}, {r[-1]:.6g}] but the run spans [{t[0]:.6g}, {t[-1]:.6g}]",
            module="oracle",
        )
    aligned = r.shape == t.shape and np.all(np.abs(r - t) <= TIME_TOL)
    if aligned:
        ref_mean, ref_var = reference.mean, reference.variance
    else:
        logger.info(f"Interpolating reference '{reference.label}' onto {t.shape[0]} test times")
        ref_mean = np.interp(t, r, reference.mean)
        ref_var = np.interp(t, r, reference.variance)
    eps_mean = np.abs(test.mean - ref_mean)
    eps_var = np.abs(test.variance - ref_var)
    return ErrorReport(
        times=t,
        eps_mean=eps_mean,
        eps_var=eps_var,
        global_mean=global_error(t, eps_mean),
        global_var=global_error(t, eps_var),
        reference=kind,
        interpolated=not aligned,
        realizations=reference.realizations,
    )


# --- closed form ---

def closed_form_moments(problem: ProblemSpec, t: float, dense_rule: Optional[NodeSet] = None) -> tuple[float, float]:
    if problem.exact is None:
        raise InvalidParametersError(f"Problem {problem.name} has no closed-form solution")
    rule = dense_rule or dense_grid(problem.measure)
    values = problem.exact(float(t), rule.nodes)
    mean = rule.expectation(values)
    return mean, rule.expectation((values - mean) ** 2)


def closed_form_series(problem: ProblemSpec, times: np.ndarray,
                       dense_rule: Optional[NodeSet] = None) -> MomentSeries:
    rule = dense_rule or dense_grid(problem.measure)
    moments = np.array([closed_form_moments(problem, t, rule) for t in times])
    return MomentSeries(times, moments[:, 0], moments[:, 1], label=f"{problem.name}:closed-form")


# --- pathwise references ---

def _pathwise(problem: ProblemSpec, xi: np.ndarray, dt: float, steps: int, refine: int,
              response: Response) -> np.ndarray:
    """Response at every coarse step for each row of xi, shape (len(xi), steps + 1)."""
    ode = problem.ode
    h = dt / refine
    state = ode.initial_state(xi)
    out = np.empty((xi.shape[0], steps + 1))
    out[:, 0] = state[response.component]
    for i in range(steps):
        for r in range(refine):
            state = pathwise_rk4_step(ode, i * dt + r * h, xi, state, h)
        if not np.all(np.isfinite(state)):
            bad = int(np.argmax(~np.all(np.isfinite(state), axis=0)))
            raise NonFiniteError(
                f"Pathwise solution of {problem.name} blew up at xi={xi[bad].tolist()}",
                module="oracle", step=i, time=(i + 1) * dt,
            )
        out[:, i + 1] = state[response.component]
    return out


def dense_reference(problem: ProblemSpec, dt: float, T: float, dense_rule: Optional[NodeSet] = None,
                    refine: int = DENSE_REFINE, response: Optional[Response] = None) -> MomentSeries:
    """Dense quadrature over pathwise RK4 solutions at step dt/refine."""
    rule = dense_rule or dense_grid(problem.measure)
    response = response or problem.response
    steps = int(round(T / dt))
    paths = _pathwise(problem, rule.nodes, dt, steps, refine, response)
    mean = rule.weights @ paths
    var = rule.weights @ (paths - mean) ** 2
    return MomentSeries(np.arange(steps + 1) * dt, mean, var, label=f"{problem.name}:dense")


class RunningMoments:
    """One-pass mean/variance per time sample; batches merged in call order."""

    def __init__(self, width: int):
        self.count = 0
        self.mean = np.zeros(width)
        self.m2 = np.zeros(width)

    def merge(self, batch: np.ndarray) -> None:
        nb = batch.shape[0]
        if nb == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_m2 = ((batch - batch_mean) ** 2).sum(axis=0)
        total = self.count + nb
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * (nb / total)
        self.m2 = self.m2 + batch_m2 + delta**2 * (self.count * nb / total)
        self.count = total

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / self.count if self.count else np.zeros_like(self.m2)


def mc_reference(problem: ProblemSpec, realizations: int, dt: float, T: float, seed: int,
                 batch: int = MC_BATCH, response: Optional[Response] = None, refine: int = 1) -> MomentSeries:
    """Monte Carlo moments from pathwise RK4 on sampled inputs."""
    if realizations < 1:
        raise InvalidParametersError(f"Monte Carlo reference needs >= 1 realization, got {realizations}")
    response = response or problem.response
    steps = int(round(T / dt))
    xi = problem.measure.sample(realizations, seed, stream=1)
    acc = RunningMoments(steps + 1)
    for start in range(0, realizations, batch):
        chunk = xi[start:start + batch]
        acc.merge(_pathwise(problem, chunk, dt, steps, refine, response))
        logger.debug(f"{problem.name}: Monte Carlo reference {acc.count}/{realizations}")
    return MomentSeries(
        np.arange(steps + 1) * dt, acc.mean, acc.variance,
        label=f"{problem.name}:mc", realizations=realizations,
    )


def reference_series(problem: ProblemSpec, dt: float, T: float, *, realizations: int, seed: int,
                     dense_points: int = 400, kind: Optional[ReferenceKind] = None) -> MomentSeries:
    kind = kind or problem.reference
    if kind is ReferenceKind.CLOSED_FORM:
        times = np.arange(int(round(T / dt)) + 1) * dt
        return closed_form_series(problem, times, dense_grid(problem.measure, dense_points))
    if kind is ReferenceKind.DENSE_QUADRATURE:
        return dense_reference(problem, dt, T, dense_grid(problem.measure, dense_points))
    return mc_reference(problem, realizations, dt, T, seed)
