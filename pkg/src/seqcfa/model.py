"""Measurement-model syntax, stage decomposition, and complexity accounting.

A model is a set of factor definitions, one per line::

    G  =~ F1 + F2 + F3
    F1 =~ V1 + V2

``Name =~ a + b`` declares that factor ``Name`` is measured by the
indicators on the right. Indicators that are themselves defined on some
other line are factors; anything else is an observed item. ``#`` starts a
comment, blank lines are ignored, and residual-covariance syntax (``~~``)
is rejected outright.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property

from .errors import ModelSyntaxError

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


@dataclass(frozen=True)
class FactorDef:
    """One factor and its ordered indicator list.

    ``fixed_loadings`` maps an indicator name to a constant loading value.
    Fixed entries are not free parameters; they exist for identification
    tricks and for cross-loading injection in generating models, and the
    plain text grammar never produces them.
    """

    name: str
    indicators: tuple[str, ...]
    fixed_loadings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.indicators:
            raise ModelSyntaxError(f"factor '{self.name}' has no indicators")
        unknown = set(self.fixed_loadings) - set(self.indicators)
        if unknown:
            raise ModelSyntaxError(
                f"fixed loading on '{sorted(unknown)[0]}' which is not an "
                f"indicator of '{self.name}'"
            )


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Immutable parsed model: factor definitions plus derived structure."""

    factors: tuple[FactorDef, ...]
    variable_names: tuple[str, ...]
    levels: int

    @cached_property
    def factor_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @cached_property
    def factor_level(self) -> dict[str, int]:
        """Level of each factor: 1 + the highest level among its factor
        indicators, observed items counting as level 0."""
        return _compute_levels(self.factors)

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        return (
            self.factors == other.factors
            and self.variable_names == other.variable_names
            and self.levels == other.levels
        )

    def __hash__(self):
        return hash((self.factors, self.variable_names, self.levels))


@dataclass(frozen=True)
class ComplexityReport:
    """Square-root free-parameter-count heuristics scaled by sample size.

    These are rough standard-error-like complexity numbers: the
    simultaneous hierarchical fit pays for both covariance blocks plus the
    cross-level loadings at once, while each stage of a staged fit pays
    only for its own block.
    """

    p: int
    q: int
    n_obs: int
    se_traditional: float
    se_level1: float
    se_level2: float


def _compute_levels(factors) -> dict[str, int]:
    """Factor levels via depth-first search; raises on a cyclic graph."""
    by_name = {f.name: f for f in factors}
    memo: dict[str, int] = {}
    in_progress: set[str] = set()

    def level(name: str) -> int:
        if name not in by_name:
            return 0
        if name in memo:
            return memo[name]
        if name in in_progress:
            raise ModelSyntaxError(f"cycle detected involving factor '{name}'")
        in_progress.add(name)
        value = 1 + max(level(ind) for ind in by_name[name].indicators)
        in_progress.discard(name)
        memo[name] = value
        return value

    return {f.name: level(f.name) for f in factors}


def _make_spec(factors: list[FactorDef]) -> ModelSpec:
    """Build a ModelSpec from definitions, deriving observed names, order,
    and levels, and checking the factor graph is acyclic."""
    by_name = {f.name: f for f in factors}
    depth = max(_compute_levels(factors).values())

    observed: list[str] = []
    seen = set()
    for fac in factors:
        for ind in fac.indicators:
            if ind not in by_name and ind not in seen:
                seen.add(ind)
                observed.append(ind)

    return ModelSpec(factors=tuple(factors), variable_names=tuple(observed), levels=depth)


def parse_model(text: str) -> ModelSpec:
    """Parse model syntax text into a :class:`ModelSpec`.

    Raises
    ------
    ModelSyntaxError
        On malformed lines (with line and column), duplicate factor
        definitions, duplicate indicators within a factor, residual
        covariance syntax, or a cyclic factor graph.
    """
    factors: list[FactorDef] = []
    defined: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        hash_pos = raw.find("#")
        line = raw if hash_pos < 0 else raw[:hash_pos]
        if not line.strip():
            continue

        tilde = line.find("~~")
        if tilde >= 0:
            raise ModelSyntaxError(
                "residual covariance syntax '~~' is not supported; only "
                "'=~' measurement lines are allowed",
                line=lineno,
                column=tilde + 1,
            )
        op = line.find("=~")
        if op < 0:
            raise ModelSyntaxError(
                "expected a measurement line of the form 'Name =~ ind1 + ind2'",
                line=lineno,
                column=len(line) - len(line.lstrip()) + 1,
            )

        lhs, rhs = line[:op], line[op + 2:]
        name = lhs.strip()
        name_col = len(lhs) - len(lhs.lstrip()) + 1
        if not _IDENT_RE.fullmatch(name):
            raise ModelSyntaxError(
                f"invalid factor name {name!r}", line=lineno, column=name_col
            )
        if name in defined:
            raise ModelSyntaxError(
                f"factor '{name}' already defined on line {defined[name]}",
                line=lineno,
                column=name_col,
            )

        indicators: list[str] = []
        cursor = op + 2
        for chunk in rhs.split("+"):
            ind = chunk.strip()
            col = cursor + (len(chunk) - len(chunk.lstrip())) + 1
            if not _IDENT_RE.fullmatch(ind):
                shown = ind if ind else "''"
                raise ModelSyntaxError(
                    f"invalid indicator {shown!r}", line=lineno, column=col
                )
            if ind in indicators:
                raise ModelSyntaxError(
                    f"duplicate indicator '{ind}' for factor '{name}'",
                    line=lineno,
                    column=col,
                )
            indicators.append(ind)
            cursor += len(chunk) + 1

        defined[name] = lineno
        factors.append(FactorDef(name=name, indicators=tuple(indicators)))

    if not factors:
        raise ModelSyntaxError("model text defines no factors")
    return _make_spec(factors)


def serialize_model(spec: ModelSpec) -> str:
    """Render a ModelSpec back to syntax text.

    Round-trips with :func:`parse_model`. Fixed loadings have no text
    form, so specs carrying them are refused rather than silently dropped.
    """
    for fac in spec.factors:
        if fac.fixed_loadings:
            raise ValueError(
                f"factor '{fac.name}' has fixed loadings, which the text "
                "grammar cannot express"
            )
    lines = [f"{fac.name} =~ {' + '.join(fac.indicators)}" for fac in spec.factors]
    return "\n".join(lines) + "\n"


def stage_decomposition(spec: ModelSpec) -> list[ModelSpec]:
    """Split a hierarchical spec into per-level flat specs.

    Stage ``k`` contains every level-``k`` factor. Its observed variables
    are whatever those factors point at: raw items at stage 1, and from
    stage 2 on the factor names of the stage below plus any lower-level
    factor (or raw item) first consumed at level ``k``. The union of the
    stage factor sets is exactly the factor set of ``spec``.
    """
    stages = []
    for k in range(1, spec.levels + 1):
        stage_factors = [f for f in spec.factors if spec.factor_level[f.name] == k]
        stages.append(_make_spec(stage_factors))
    return stages


def param_complexity(p: int, q: int, n_obs: int) -> ComplexityReport:
    """Free-parameter complexity heuristics for a p-item, q-factor layer.

    se_traditional = sqrt(p(p+1)/2 + q(q+1)/2 + p*q) / n_obs, the joint
    cost of both covariance blocks and the cross-level loadings;
    se_level1 and se_level2 are the per-stage costs sqrt(p(p+1)/2)/n_obs
    and sqrt(q(q+1)/2)/n_obs.
    """
    for label, value in (("p", p), ("q", q), ("n_obs", n_obs)):
        if int(value) != value or value <= 0:
            raise ValueError(f"{label} must be a positive integer, got {value!r}")
    p_block = p * (p + 1) / 2
    q_block = q * (q + 1) / 2
    return ComplexityReport(
        p=p,
        q=q,
        n_obs=n_obs,
        se_traditional=math.sqrt(p_block + q_block + p * q) / n_obs,
        se_level1=math.sqrt(p_block) / n_obs,
        se_level2=math.sqrt(q_block) / n_obs,
    )
