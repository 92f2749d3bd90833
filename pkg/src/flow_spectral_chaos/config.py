# src/flow_spectral_chaos/config.py
"""Run configuration files and process settings.

A run file is INI text with the sections [problem], [fsc], [bootstrap],
[quadrature], [oracle] and [output]. Values are plain literals or calls such
as ``beta(alpha=2, beta=5, a=1, b=2)``; call arguments must be literals.
"""
from __future__ import annotations

import ast
import configparser
import io
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from dotenv import load_dotenv

from .distributions import Distribution, ProductMeasure
from .errors import InvalidParametersError, UnknownVariantError
from .fsc import BootstrapConfig, FscConfig, GalerkinMode, Orthogonalizer, Transfer
from .problems import ProblemId, ProblemSpec, ReferenceKind, make_problem
from .quadrature import MAX_GRID_DIM, NodeKind, NodeSet, gauss_grid, mc_nodes

logger = logging.getLogger(__name__)

SECTIONS = ("problem", "fsc", "bootstrap", "quadrature", "oracle", "output")
DESK_T = 10.0
FULL_SCALE_T = 150.0
DESK_REALIZATIONS = 100_000
FULL_SCALE_REALIZATIONS = 1_000_000

_CALL = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*\((.*)\)\s*$", re.DOTALL)
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class Settings:
    log_dir: str = "logs"
    log_level: str = "INFO"
    output_dir: str = "runs"


def load_settings() -> Settings:
    load_dotenv()
    return Settings(
        log_dir=os.getenv("FSC_LOG_DIR", "logs"),
        log_level=os.getenv("FSC_LOG_LEVEL", "INFO").upper(),
        output_dir=os.getenv("FSC_OUTPUT_DIR", "runs"),
    )


def parse_call(text: str) -> tuple[str, dict[str, Any]]:
    """``name(key=literal, ...)`` -> (name, {key: value}).

    Only keyword arguments with Python literal values are accepted.
    """
    match = _CALL.match(text)
    if not match:
        raise InvalidParametersError(f"Expected name(key=value, ...), got '{text}'")
    name, body = match.group(1), match.group(2).strip()
    if not body:
        return name, {}
    try:
        call = ast.parse(f"_({body})", mode="eval").body
    except SyntaxError:
        raise InvalidParametersError(f"Cannot parse arguments of '{text}'") from None
    if call.args:
        raise InvalidParametersError(f"'{text}': arguments must be given as key=value")
    kwargs = {}
    for kw in call.keywords:
        if kw.arg is None:
            raise InvalidParametersError(f"'{text}': ** expansion is not allowed")
        try:
            kwargs[kw.arg] = ast.literal_eval(kw.value)
        except ValueError:
            raise InvalidParametersError(f"'{text}': value of '{kw.arg}' is not a literal") from None
    return name, kwargs


def _bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise InvalidParametersError(f"'{key}' must be true or false, got '{value}'")


def _number(value: str, key: str, kind=float):
    try:
        parsed = ast.literal_eval(value.strip())
    except (ValueError, SyntaxError):
        raise InvalidParametersError(f"'{key}' must be a number, got '{value}'") from None
    if isinstance(parsed, bool) or not isinstance(parsed, (int, float)):
        raise InvalidParametersError(f"'{key}' must be a number, got '{value}'")
    if kind is int and float(parsed) != int(parsed):
        raise InvalidParametersError(f"'{key}' must be an integer, got '{value}'")
    return kind(parsed)


def _choice(enum, value: str, key: str):
    try:
        return enum(value.strip().lower())
    except ValueError:
        known = ", ".join(e.value for e in enum)
        raise InvalidParametersError(f"'{key}' must be one of {known}, got '{value}'") from None


@dataclass(frozen=True)
class ProblemConfig:
    id: ProblemId
    variant: Optional[str] = None
    d: Optional[int] = None
    overrides: dict[str, Distribution] = field(default_factory=dict)
    seed: int = 0

    def build(self) -> ProblemSpec:
        return make_problem(self.id, self.variant, d=self.d, overrides=self.overrides or None)


@dataclass(frozen=True)
class QuadratureConfig:
    kind: NodeKind = NodeKind.GAUSS_FULL_GRID
    points_per_dim: Optional[tuple[int, ...]] = None
    q: Optional[int] = None
    seed: Optional[int] = None

    def spell(self) -> str:
        if self.kind is NodeKind.MONTE_CARLO:
            return f"mc(q={self.q}, seed={self.seed})"
        if self.points_per_dim is None:
            return "gauss()"
        return f"gauss(points_per_dim={list(self.points_per_dim)})"

    def build(self, measure: ProductMeasure, seed: int) -> NodeSet:
        if self.kind is NodeKind.MONTE_CARLO:
            return mc_nodes(measure, self.q, self.seed if self.seed is not None else seed)
        return gauss_grid(measure, self.points_per_dim)


@dataclass(frozen=True)
class OracleConfig:
    reference: Optional[ReferenceKind] = None
    realizations: int = DESK_REALIZATIONS
    dense_points: int = 400
    seed: Optional[int] = None


@dataclass(frozen=True)
class OutputConfig:
    directory: Optional[str] = None
    plots: bool = True


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    fsc: FscConfig
    quadrature: QuadratureConfig
    oracle: OracleConfig
    output: OutputConfig

    @property
    def seed(self) -> int:
        return self.problem.seed

    @property
    def oracle_seed(self) -> int:
        return self.oracle.seed if self.oracle.seed is not None else self.seed

    @property
    def reference(self) -> ReferenceKind:
        return self.oracle.reference or self.problem.build().reference

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, problem=replace(self.problem, seed=seed))

    def validate(self) -> ProblemSpec:
        """Builds the problem and checks every cross-section constraint."""
        problem = self.problem.build()
        self.fsc.validate(problem.ode.order)
        if self.fsc.galerkin is GalerkinMode.TENSOR and problem.tensor_rhs is None:
            raise InvalidParametersError(f"Problem {problem.name} has no tensor Galerkin path")
        d = problem.measure.dim
        q = self.quadrature
        if q.kind is NodeKind.MONTE_CARLO:
            if not q.q or q.q < 2:
                raise InvalidParametersError(f"Monte Carlo quadrature needs q >= 2, got {q.q}")
        else:
            if d > MAX_GRID_DIM:
                raise InvalidParametersError(
                    f"Problem {problem.name} has d={d}; Gauss grids stop at d={MAX_GRID_DIM}, use mc(q=...)"
                )
            if q.points_per_dim is not None and len(q.points_per_dim) not in (1, d):
                raise InvalidParametersError(f"points_per_dim needs 1 or {d} entries, got {len(q.points_per_dim)}")
            if q.points_per_dim is not None and min(q.points_per_dim) < 1:
                raise InvalidParametersError("points_per_dim entries must be >= 1")
        ref = self.oracle.reference or problem.reference
        if ref is ReferenceKind.CLOSED_FORM and problem.exact is None:
            raise InvalidParametersError(f"Problem {problem.name} has no closed-form reference")
        if ref is ReferenceKind.DENSE_QUADRATURE and d > MAX_GRID_DIM:
            raise InvalidParametersError(f"Dense-quadrature reference is unavailable for d={d}")
        if self.oracle.realizations < 1:
            raise InvalidParametersError(f"realizations must be >= 1, got {self.oracle.realizations}")
        return problem


def _problem_section(section: Mapping[str, str]) -> ProblemConfig:
    if "id" not in section:
        raise InvalidParametersError("[problem] needs an 'id'")
    try:
        pid = ProblemId(section["id"].strip().lower())
    except ValueError:
        known = ", ".join(p.value for p in ProblemId)
        raise UnknownVariantError(f"Unknown problem '{section['id']}' (known: {known})") from None
    overrides = {}
    for key, value in section.items():
        if key in ("id", "variant", "d", "seed"):
            continue
        name, kwargs = parse_call(value)
        overrides[key] = Distribution.from_call(name, kwargs)
    return ProblemConfig(
        id=pid,
        variant=section.get("variant", "").strip() or None,
        d=_number(section["d"], "d", int) if "d" in section else None,
        overrides=overrides,
        seed=_number(section.get("seed", "0"), "seed", int),
    )


def _fsc_section(section: Mapping[str, str], boot: Mapping[str, str], defaults: FscConfig) -> FscConfig:
    known = {"p", "m", "transfer", "dt", "t", "orthogonalizer", "galerkin", "midpoint"}
    unknown = set(section) - known
    if unknown:
        raise InvalidParametersError(f"[fsc] has unknown keys {sorted(unknown)}")
    bootstrap = defaults.bootstrap
    if boot:
        unknown = set(boot) - {"method", "order", "duration"}
        if unknown:
            raise InvalidParametersError(f"[bootstrap] has unknown keys {sorted(unknown)}")
        order = bootstrap.order
        if "order" in boot:
            spelled = boot["order"].strip()
            order = None if spelled in ("", "auto") else _number(spelled, "order", int)
        bootstrap = BootstrapConfig(
            method=boot.get("method", bootstrap.method).strip().lower(),
            order=order,
            duration=_number(boot["duration"], "duration") if "duration" in boot else bootstrap.duration,
        )
    return FscConfig(
        P=_number(section["p"], "P", int) if "p" in section else defaults.P,
        M=_number(section["m"], "M", int) if "m" in section else defaults.M,
        transfer=_choice(Transfer, section["transfer"], "transfer") if "transfer" in section else defaults.transfer,
        dt=_number(section["dt"], "dt") if "dt" in section else defaults.dt,
        T=_number(section["t"], "T") if "t" in section else defaults.T,
        bootstrap=bootstrap,
        orthogonalizer=(
            _choice(Orthogonalizer, section["orthogonalizer"], "orthogonalizer")
            if "orthogonalizer" in section else defaults.orthogonalizer
        ),
        galerkin=_choice(GalerkinMode, section["galerkin"], "galerkin") if "galerkin" in section else defaults.galerkin,
        midpoint=_bool(section["midpoint"], "midpoint") if "midpoint" in section else defaults.midpoint,
    )


def _quadrature_section(section: Mapping[str, str], problem: ProblemSpec) -> QuadratureConfig:
    if "rule" not in section:
        if problem.mc_points:
            return QuadratureConfig(NodeKind.MONTE_CARLO, q=problem.mc_points)
        return QuadratureConfig()
    name, kwargs = parse_call(section["rule"])
    if name == "gauss":
        unknown = set(kwargs) - {"points_per_dim"}
        if unknown:
            raise InvalidParametersError(f"gauss() does not take {sorted(unknown)}")
        points = kwargs.get("points_per_dim")
        if isinstance(points, int):
            points = [points]
        return QuadratureConfig(points_per_dim=tuple(int(p) for p in points) if points is not None else None)
    if name == "mc":
        unknown = set(kwargs) - {"q", "seed"}
        if unknown:
            raise InvalidParametersError(f"mc() does not take {sorted(unknown)}")
        if "q" not in kwargs:
            raise InvalidParametersError("mc() needs q")
        seed = kwargs.get("seed")
        return QuadratureConfig(NodeKind.MONTE_CARLO, q=int(kwargs["q"]), seed=None if seed is None else int(seed))
    raise InvalidParametersError(f"Unknown quadrature rule '{name}' (known: gauss, mc)")


def _oracle_section(section: Mapping[str, str]) -> OracleConfig:
    unknown = set(section) - {"reference", "realizations", "dense_points", "seed"}
    if unknown:
        raise InvalidParametersError(f"[oracle] has unknown keys {sorted(unknown)}")
    reference = section.get("reference", "auto").strip().lower()
    return OracleConfig(
        reference=None if reference == "auto" else _choice(ReferenceKind, reference, "reference"),
        realizations=_number(section.get("realizations", str(DESK_REALIZATIONS)), "realizations", int),
        dense_points=_number(section.get("dense_points", "400"), "dense_points", int),
        seed=_number(section["seed"], "seed", int) if "seed" in section else None,
    )


def _output_section(section: Mapping[str, str]) -> OutputConfig:
    directory = section.get("directory", "").strip()
    return OutputConfig(
        directory=directory or None,
        plots=_bool(section.get("plots", "true"), "plots"),
    )


def parse_config(text: str, *, full_scale: bool = False) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise InvalidParametersError(f"Malformed config: {e}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise InvalidParametersError(f"Unknown config sections {sorted(unknown)}")
    if not parser.has_section("problem"):
        raise InvalidParametersError("Config needs a [problem] section")

    def section(name):
        return dict(parser[name]) if parser.has_section(name) else {}

    problem_cfg = _problem_section(section("problem"))
    problem = problem_cfg.build()
    defaults = problem.defaults
    oracle = _oracle_section(section("oracle"))
    if full_scale:
        defaults = replace(defaults, T=FULL_SCALE_T)
        if "realizations" not in section("oracle"):
            oracle = replace(oracle, realizations=FULL_SCALE_REALIZATIONS)
    fsc = _fsc_section(section("fsc"), section("bootstrap"), defaults)
    if full_scale:
        fsc = replace(fsc, T=FULL_SCALE_T)
    cfg = RunConfig(
        problem=problem_cfg,
        fsc=fsc,
        quadrature=_quadrature_section(section("quadrature"), problem),
        oracle=oracle,
        output=_output_section(section("output")),
    )
    cfg.validate()
    return cfg


def load_config(path: Union[str, Path], *, full_scale: bool = False) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidParametersError(f"Cannot read config '{path}': {e}") from None
    logger.debug(f"Loaded config {path}")
    return parse_config(text, full_scale=full_scale)


def dump_config(cfg: RunConfig) -> str:
    """Resolved config, defaults included, in the file format."""
    parser = configparser.ConfigParser(interpolation=None)
    p = cfg.problem
    parser["problem"] = {"id": p.id.value, "seed": str(p.seed)}
    if p.variant:
        parser["problem"]["variant"] = p.variant
    if p.d is not None:
        parser["problem"]["d"] = str(p.d)
    for name, dist in p.overrides.items():
        parser["problem"][name] = dist.spell()
    f = cfg.fsc
    parser["fsc"] = {
        "P": str(f.P),
        "M": str(f.M),
        "transfer": f.transfer.value,
        "dt": repr(f.dt),
        "T": repr(f.T),
        "orthogonalizer": f.orthogonalizer.value,
        "galerkin": f.galerkin.value,
        "midpoint": str(f.midpoint).lower(),
    }
    parser["bootstrap"] = {
        "method": f.bootstrap.method,
        "order": "auto" if f.bootstrap.order is None else str(f.bootstrap.order),
        "duration": repr(f.bootstrap.duration),
    }
    parser["quadrature"] = {"rule": cfg.quadrature.spell()}
    o = cfg.oracle
    parser["oracle"] = {
        "reference": o.reference.value if o.reference else "auto",
        "realizations": str(o.realizations),
        "dense_points": str(o.dense_points),
    }
    if o.seed is not None:
        parser["oracle"]["seed"] = str(o.seed)
    parser["output"] = {"plots": str(cfg.output.plots).lower()}
    if cfg.output.directory:
        parser["output"]["directory"] = cfg.output.directory
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
