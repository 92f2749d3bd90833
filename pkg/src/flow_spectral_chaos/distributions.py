# src/flow_spectral_chaos/distributions.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import InvalidParametersError, UnknownVariantError

logger = logging.getLogger(__name__)


class DistributionKind(str, Enum):
    UNIFORM = "uniform"
    BETA = "beta"
    GAMMA = "gamma"
    NORMAL = "normal"


# Parameter names in config spelling order; None marks a required value.
PARAMETER_NAMES: dict[DistributionKind, tuple[tuple[str, float | None], ...]] = {
    DistributionKind.UNIFORM: (("a", None), ("b", None)),
    DistributionKind.BETA: (("alpha", None), ("beta", None), ("a", 0.0), ("b", 1.0)),
    DistributionKind.GAMMA: (("alpha", None), ("beta", None), ("a", 0.0)),
    DistributionKind.NORMAL: (("mu", None), ("sigma", None)),
}


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox counter-based generator, keyed by (seed, stream).

    Philox output is fixed by numpy's bit-generator versioning, so the same
    (seed, stream) pair yields the same samples on every platform.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class Distribution:
    """A one-dimensional probability law.

    params follow PARAMETER_NAMES: uniform (a, b), beta (alpha, beta, a, b),
    gamma (alpha, beta, a) with rate beta and support [a, inf), normal (mu, sigma).
    """

    kind: DistributionKind
    params: tuple[float, ...]

    def __post_init__(self):
        names = [name for name, _ in PARAMETER_NAMES[self.kind]]
        if len(self.params) != len(names):
            raise InvalidParametersError(f"{self.kind.value} expects parameters {names}, got {self.params}")
        if not all(np.isfinite(self.params)):
            raise InvalidParametersError(f"{self.kind.value} parameters must be finite: {self.params}")
        p = dict(zip(names, self.params))
        if self.kind in (DistributionKind.UNIFORM, DistributionKind.BETA) and not p["a"] < p["b"]:
            raise InvalidParametersError(f"{self.kind.value} needs a < b, got a={p['a']}, b={p['b']}")
        if self.kind in (DistributionKind.BETA, DistributionKind.GAMMA) and not (p["alpha"] > 0 and p["beta"] > 0):
            raise InvalidParametersError(
                f"{self.kind.value} needs alpha > 0 and beta > 0, got alpha={p['alpha']}, beta={p['beta']}"
            )
        if self.kind is DistributionKind.NORMAL and not p["sigma"] > 0:
            raise InvalidParametersError(f"normal needs sigma > 0, got sigma={p['sigma']}")

    @classmethod
    def uniform(cls, a: float, b: float) -> Distribution:
        return cls(DistributionKind.UNIFORM, (float(a), float(b)))

    @classmethod
    def beta(cls, alpha: float, beta: float, a: float = 0.0, b: float = 1.0) -> Distribution:
        return cls(DistributionKind.BETA, (float(alpha), float(beta), float(a), float(b)))

    @classmethod
    def gamma(cls, alpha: float, beta: float, a: float = 0.0) -> Distribution:
        return cls(DistributionKind.GAMMA, (float(alpha), float(beta), float(a)))

    @classmethod
    def normal(cls, mu: float, sigma: float) -> Distribution:
        return cls(DistributionKind.NORMAL, (float(mu), float(sigma)))

    @classmethod
    def from_call(cls, name: str, kwargs: Mapping[str, float]) -> Distribution:
        """Builds a law from its config spelling, e.g. ("beta", {"alpha": 2, "beta": 5})."""
        try:
            kind = DistributionKind(name.lower())
        except ValueError:
            known = ", ".join(k.value for k in DistributionKind)
            raise UnknownVariantError(f"Unknown distribution '{name}' (known: {known})") from None
        spec = PARAMETER_NAMES[kind]
        unknown = set(kwargs) - {n for n, _ in spec}
        if unknown:
            raise InvalidParametersError(f"{kind.value} does not take {sorted(unknown)}")
        values = []
        for pname, default in spec:
            if pname in kwargs:
                values.append(float(kwargs[pname]))
            elif default is not None:
                values.append(default)
            else:
                raise InvalidParametersError(f"{kind.value} is missing parameter '{pname}'")
        return cls(kind, tuple(values))

    @property
    def named_params(self) -> dict[str, float]:
        return {name: value for (name, _), value in zip(PARAMETER_NAMES[self.kind], self.params)}

    def spell(self) -> str:
        args = ",".join(f"{k}={v!r}" for k, v in self.named_params.items())
        return f"{self.kind.value}({args})"

    @property
    def support(self) -> tuple[float, float]:
        p = self.named_params
        if self.kind is DistributionKind.NORMAL:
            return (-np.inf, np.inf)
        if self.kind is DistributionKind.GAMMA:
            return (p["a"], np.inf)
        return (p["a"], p["b"])

    @cached_property
    def frozen(self):
        """The matching frozen ``scipy.stats`` law."""
        p = self.named_params
        if self.kind is DistributionKind.UNIFORM:
            return stats.uniform(loc=p["a"], scale=p["b"] - p["a"])
        if self.kind is DistributionKind.BETA:
            return stats.beta(p["alpha"], p["beta"], loc=p["a"], scale=p["b"] - p["a"])
        if self.kind is DistributionKind.GAMMA:
            return stats.gamma(p["alpha"], loc=p["a"], scale=1.0 / p["beta"])
        return stats.norm(loc=p["mu"], scale=p["sigma"])

    def density(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        values = np.where(inside, self.frozen.pdf(x), 0.0)
        return float(values) if values.ndim == 0 else values

    def mean(self) -> float:
        return float(self.frozen.mean())

    def variance(self) -> float:
        return float(self.frozen.var())

    def moment(self, k: int) -> float:
        """Raw moment E[xi^k]."""
        return 1.0 if k == 0 else float(self.frozen.moment(k))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(self.frozen.rvs(size=count, random_state=rng), dtype=float)


@dataclass(frozen=True)
class ProductMeasure:
    """Independent product of one-dimensional laws, dmu = dmu^1 ... dmu^d."""

    factors: tuple[Distribution, ...]

    def __post_init__(self):
        if len(self.factors) < 1:
            raise InvalidParametersError("A product measure needs at least one factor")

    @classmethod
    def of(cls, *factors: Distribution) -> ProductMeasure:
        return cls(tuple(factors))

    @property
    def dim(self) -> int:
        return len(self.factors)

    def density(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.ones(points.shape[0])
        for axis, factor in enumerate(self.factors):
            out = out * factor.density(points[:, axis])
        return out

    def sample(self, count: int, seed: int, stream: int = 0) -> np.ndarray:
        if count < 1:
            raise InvalidParametersError(f"Sample count must be >= 1, got {count}")
        rng = make_rng(seed, stream)
        columns = [factor.sample(count, rng) for factor in self.factors]
        return np.column_stack(columns)


def density(dist: Distribution, x):
    return dist.density(x)


def sample(measure: ProductMeasure | Distribution | Sequence[Distribution], count: int, seed: int) -> np.ndarray:
    """Draws ``count`` i.i.d. points of shape (count, d); identical seeds give identical streams."""
    if isinstance(measure, Distribution):
        measure = ProductMeasure.of(measure)
    elif not isinstance(measure, ProductMeasure):
        measure = ProductMeasure(tuple(measure))
    return measure.sample(count, seed)
