"""Synthetic hierarchical data for the three benchmark designs.

Latents are generated top-down through the factor tree with every
factor scaled to unit variance; items mix their factor(s) with a
residual whose share of item variance is the condition's error level.
Everything is driven by one integer seed, so a condition reproduces its
dataset bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError
from .estimator import DataMatrix
from .model import ModelSpec, parse_model

_DESIGN_ALIASES = {
    "simple": "Simple",
    "complex": "Complex",
    "mostcomplex": "MostComplex",
    "most-complex": "MostComplex",
    "most_complex": "MostComplex",
}

_DISTRIBUTIONS = {"normal": "Normal", "skewed": "Skewed"}
_PATTERNS = {"homoskedastic": "Homoskedastic", "heteroskedastic": "Heteroskedastic"}

_SIMPLE_MODEL = """
G =~ F1 + F2 + F3
F1 =~ V1 + V2
F2 =~ V3 + V4
F3 =~ V5 + V6
"""

_COMPLEX_MODEL = """
G =~ F1 + F2 + F3 + F4
F1 =~ V1 + V2 + V3
F2 =~ V4 + V5 + V6
F3 =~ V7 + V8 + V9
F4 =~ V10 + V11 + V12
"""

_MOST_COMPLEX_MODEL = """
H =~ G1 + G2 + F5
G1 =~ F1 + F2
G2 =~ F3 + F4
F1 =~ V1 + V2 + V3
F2 =~ V4 + V5 + V6
F3 =~ V7 + V8 + V9
F4 =~ V10 + V11 + V12
F5 =~ V13 + V14 + V15
"""


@dataclass(frozen=True)
class Design:
    """A model spec plus the parameters that generate data from it."""

    name: str
    spec: ModelSpec
    item_loading: float = 0.8
    factor_loading: float = 0.7
    cross_pairs: tuple[tuple[str, str], ...] = ()


def builtin_design(name) -> Design:
    """One of the three benchmark designs by (case-insensitive) name."""
    if isinstance(name, str):
        canonical = _DESIGN_ALIASES.get(name.replace(" ", "").lower())
    else:
        canonical = None
    if canonical is None:
        raise ValueError(
            f"unknown design {name!r}; expected simple, complex, or most-complex"
        )
    if canonical == "Simple":
        return Design("Simple", parse_model(_SIMPLE_MODEL))
    if canonical == "Complex":
        return Design("Complex", parse_model(_COMPLEX_MODEL))
    spec = parse_model(_MOST_COMPLEX_MODEL)
    # each subfactor's first item picks up a secondary loading on the
    # next subfactor, wrapping around at the end
    cross = (("V1", "F2"), ("V4", "F3"), ("V7", "F4"), ("V10", "F5"), ("V13", "F1"))
    return Design("MostComplex", spec, cross_pairs=cross)


@dataclass(frozen=True)
class SimCondition:
    design: "str | ModelSpec"
    n_obs: int
    error_level: float
    distribution: str
    residual_pattern: str
    cross_loading: float = 0.0
    seed: int = 0
    residual_skew: bool = False

    def __post_init__(self):
        if isinstance(self.design, str):
            canonical = _DESIGN_ALIASES.get(self.design.replace(" ", "").lower())
            if canonical is None:
                raise ValueError(f"unknown design {self.design!r}")
            object.__setattr__(self, "design", canonical)
        elif not isinstance(self.design, ModelSpec):
            raise TypeError("design must be a builtin name or a ModelSpec")
        if self.n_obs <= 0:
            raise ValueError("n_obs must be positive")
        if not 0.0 < self.error_level < 1.0:
            raise ValueError("error_level must lie strictly between 0 and 1")
        dist = _DISTRIBUTIONS.get(str(self.distribution).lower())
        if dist is None:
            raise ValueError(f"distribution must be Normal or Skewed, got {self.distribution!r}")
        object.__setattr__(self, "distribution", dist)
        pattern = _PATTERNS.get(str(self.residual_pattern).lower())
        if pattern is None:
            raise ValueError(
                f"residual_pattern must be Homoskedastic or Heteroskedastic, "
                f"got {self.residual_pattern!r}"
            )
        object.__setattr__(self, "residual_pattern", pattern)
        if self.cross_loading < 0 or self.cross_loading >= 1:
            raise ValueError("cross_loading must lie in [0, 1)")
        if self.cross_loading != 0 and self.design != "MostComplex":
            raise ValueError("cross loadings are defined only for the MostComplex design")

    @property
    def design_name(self) -> str:
        return self.design if isinstance(self.design, str) else "Custom"


@dataclass(frozen=True)
class SimulatedDataset:
    """Generated data together with everything needed to check it.

    ``true_latents`` maps level -> (n_obs x k) matrix of factor
    realizations, columns named by ``latent_names``; the top level holds
    the single highest factor. Loadings and residual sds are the
    post-rescaling values actually used, so the analytic implied
    covariance can be rebuilt exactly.
    """

    condition: SimCondition
    spec: ModelSpec
    data: DataMatrix
    true_latents: dict[int, np.ndarray]
    latent_names: dict[int, tuple[str, ...]]
    direct_loadings: np.ndarray
    structural: np.ndarray
    factor_cov: np.ndarray
    residual_sd: np.ndarray
    item_loading: float = 0.8
    factor_loading: float = 0.7
    cross_pairs: tuple[tuple[str, str], ...] = field(default=())

    @property
    def top_level(self) -> int:
        return max(self.true_latents)

    @property
    def top_latent(self) -> np.ndarray:
        return self.true_latents[self.top_level][:, 0]

    def implied_covariance(self) -> np.ndarray:
        sigma = (
            self.direct_loadings @ self.factor_cov @ self.direct_loadings.T
            + np.diag(self.residual_sd**2)
        )
        return (sigma + sigma.T) / 2.0


def _resolve(condition: SimCondition) -> Design:
    if isinstance(condition.design, ModelSpec):
        return Design("Custom", condition.design)
    return builtin_design(condition.design)


def _latent_structure(design: Design, spec: ModelSpec):
    """B matrix, exogenous set, generation order (levels descending),
    factor covariance with unit diagonal, and disturbance variances."""
    factors = list(spec.factor_names)
    index = {name: i for i, name in enumerate(factors)}
    m = len(factors)
    B = np.zeros((m, m))
    children = set()
    for fac in spec.factors:
        for ind in fac.indicators:
            if ind in index:
                B[index[ind], index[fac.name]] = design.factor_loading
                children.add(index[ind])
    exo = [j for j in range(m) if j not in children]
    levels = spec.factor_level
    order = sorted(range(m), key=lambda j: -levels[factors[j]])

    C = np.zeros((m, m))
    disturbance = np.zeros(m)
    for j in exo:
        C[j, j] = 1.0
        disturbance[j] = 1.0
    for j in order:
        if j in exo:
            continue
        b = B[j, :]
        row = b @ C
        quad = float(b @ C @ b)
        if quad >= 1.0:
            raise ValueError(
                f"factor '{factors[j]}' would need nonpositive disturbance "
                "variance under the generating loadings"
            )
        C[j, :] = row
        C[:, j] = row
        C[j, j] = 1.0
        disturbance[j] = 1.0 - quad
    return B, exo, order, C, disturbance


def _draw(rng: np.random.Generator, n: int, skewed: bool) -> np.ndarray:
    """Unit-variance, mean-zero draws; the skewed variant is a centered
    and scaled chi-square(2), which has skewness 2."""
    if skewed:
        return (rng.chisquare(2, n) - 2.0) / 2.0
    return rng.standard_normal(n)


def generate(condition: SimCondition) -> SimulatedDataset:
    """Simulate one dataset for a condition.

    The top factor is drawn directly; every lower factor is
    loading x parent plus a disturbance scaled so the factor has unit
    variance. Under a Skewed condition the top draw and all factor
    disturbances use the skewed generator, so non-normality survives at
    every level. Item signal is scaled to variance 1 - error_level and
    the residual takes the rest (modulated by the heteroskedastic ramp).
    """
    design = _resolve(condition)
    spec = design.spec
    factors = list(spec.factor_names)
    items = list(spec.variable_names)
    index = {name: i for i, name in enumerate(factors)}
    n = condition.n_obs
    p = len(items)
    m = len(factors)

    B, exo, order, C, disturbance = _latent_structure(design, spec)
    rng = np.random.default_rng(condition.seed)
    skewed = condition.distribution == "Skewed"

    # zeros matter: a child's update multiplies columns not yet filled
    # by zero weights, which must not pick up stray non-finite memory
    eta = np.zeros((n, m))
    for j in order:
        shock = _draw(rng, n, skewed)
        if j in exo:
            eta[:, j] = shock
        else:
            eta[:, j] = eta @ B[j, :] + np.sqrt(disturbance[j]) * shock

    cross_map = {item: index[sec] for item, sec in design.cross_pairs}
    main_factor = {}
    for fac in spec.factors:
        for ind in fac.indicators:
            if ind not in index:
                main_factor[ind] = index[fac.name]

    e = condition.error_level
    if condition.residual_pattern == "Heteroskedastic":
        ramp = np.linspace(0.7, 1.3, p)
        ramp = ramp / np.sqrt(np.mean(ramp**2))
    else:
        ramp = np.ones(p)
    residual_sd = np.sqrt(e) * ramp

    lam = np.zeros((p, m))
    for i, item in enumerate(items):
        f = main_factor[item]
        weights = {f: design.item_loading}
        if condition.cross_loading != 0 and item in cross_map:
            weights[cross_map[item]] = condition.cross_loading
        idx = list(weights)
        w = np.array([weights[j] for j in idx])
        signal_var = float(w @ C[np.ix_(idx, idx)] @ w)
        scale = np.sqrt((1.0 - e) / signal_var)
        for j, wj in zip(idx, w):
            lam[i, j] = scale * wj

    noise = _draw(rng, n * p, condition.residual_skew).reshape(n, p)
    X = eta @ lam.T + noise * residual_sd

    levels = spec.factor_level
    by_level: dict[int, list[int]] = {}
    for j, name in enumerate(factors):
        by_level.setdefault(levels[name], []).append(j)
    true_latents = {
        lvl: eta[:, cols].copy() for lvl, cols in sorted(by_level.items())
    }
    latent_names = {
        lvl: tuple(factors[j] for j in cols) for lvl, cols in sorted(by_level.items())
    }

    return SimulatedDataset(
        condition=condition,
        spec=spec,
        data=DataMatrix(X, tuple(items)),
        true_latents=true_latents,
        latent_names=latent_names,
        direct_loadings=lam,
        structural=B,
        factor_cov=C,
        residual_sd=residual_sd,
        item_loading=design.item_loading,
        factor_loading=design.factor_loading,
        cross_pairs=design.cross_pairs,
    )


def write_dataset(dataset: SimulatedDataset, path_prefix: str) -> tuple[str, str]:
    """Write the observed data as CSV plus a sidecar JSON holding the
    generating parameters and true latents. Returns both paths."""
    csv_path = f"{path_prefix}.csv"
    json_path = f"{path_prefix}.json"
    frame = pd.DataFrame(dataset.data.values, columns=list(dataset.data.column_names))
    frame.to_csv(csv_path, index=False, float_format="%.12g")
    condition = dataset.condition
    sidecar = {
        "schema_version": 1,
        "condition": {
            "design": condition.design_name,
            "n_obs": condition.n_obs,
            "error_level": condition.error_level,
            "distribution": condition.distribution,
            "residual_pattern": condition.residual_pattern,
            "cross_loading": condition.cross_loading,
            "seed": condition.seed,
            "residual_skew": condition.residual_skew,
        },
        "items": list(dataset.data.column_names),
        "factors": list(dataset.spec.factor_names),
        "direct_loadings": dataset.direct_loadings.tolist(),
        "structural": dataset.structural.tolist(),
        "residual_sd": dataset.residual_sd.tolist(),
        "true_latents": {
            str(lvl): {
                "factors": list(dataset.latent_names[lvl]),
                "values": dataset.true_latents[lvl].tolist(),
            }
            for lvl in dataset.true_latents
        },
    }
    with open(json_path, "w") as handle:
        json.dump(sidecar, handle)
    return csv_path, json_path


def load_dataset_csv(csv_path: str) -> DataMatrix:
    frame = pd.read_csv(csv_path)
    if frame.shape[1] == 0:
        raise DataError(f"no columns in {csv_path}")
    return DataMatrix(frame.to_numpy(dtype=float), tuple(str(c) for c in frame.columns))
