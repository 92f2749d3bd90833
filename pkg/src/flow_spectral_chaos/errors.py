# src/flow_spectral_chaos/errors.py
"""Exception hierarchy shared by the library and the CLI.

The CLI maps ``ConfigError`` to exit code 2 and ``NumericalError`` to exit
code 3. Every error may carry the module, step and time at which it was
raised so a diagnostic can point at the failing part of a run.
"""
from typing import Optional


class FscError(Exception):
    def __init__(
        self,
        message: str,
        *,
        module: Optional[str] = None,
        step: Optional[int] = None,
        time: Optional[float] = None,
    ):
        self.message = message
        self.module = module
        self.step = step
        self.time = time
        super().__init__(self._render())

    def _render(self) -> str:
        where = []
        if self.module:
            where.append(f"module={self.module}")
        if self.step is not None:
            where.append(f"step={self.step}")
        if self.time is not None:
            where.append(f"t={self.time:.6g}")
        if not where:
            return self.message
        return f"{self.message} [{', '.join(where)}]"

    def located(self, *, module: Optional[str] = None, step: Optional[int] = None,
                time: Optional[float] = None) -> "FscError":
        """Fills in location fields that are still unset and returns self."""
        self.module = self.module or module
        self.step = self.step if self.step is not None else step
        self.time = self.time if self.time is not None else time
        self.args = (self._render(),)
        return self


# --- configuration problems (exit code 2) ---

class ConfigError(FscError, ValueError):
    pass


class InvalidParametersError(ConfigError):
    pass


class UnknownVariantError(ConfigError):
    pass


class DimensionTooLargeError(ConfigError):
    pass


class ChainUnavailableError(ConfigError):
    pass


class BasisBoundError(ConfigError):
    pass


# --- numerical failures (exit code 3) ---

class NumericalError(FscError, ArithmeticError):
    pass


class QuadratureError(NumericalError):
    pass


class LinearDependenceError(NumericalError):
    """A raw function is (numerically) a combination of the ones before it.

    ``index`` is the position of the offending function in the raw list
    (0-based), so callers can drop it and retry.
    """

    def __init__(self, message: str, *, index: int, **kwargs):
        self.index = index
        super().__init__(message, **kwargs)


class DegenerateFunctionError(LinearDependenceError):
    pass


class SingularCovarianceError(LinearDependenceError):
    pass


class BasisCollapseError(NumericalError):
    pass


class NonFiniteError(NumericalError):
    pass


# --- usage errors ---

class NodeSetMismatchError(FscError, ValueError):
    pass


class GridMismatchError(FscError, ValueError):
    pass
