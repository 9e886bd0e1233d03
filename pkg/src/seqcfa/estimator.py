"""Maximum-likelihood estimation of confirmatory factor models.

Fits the covariance structure Sigma = Lambda C Lambda' + Theta by
minimizing the normal-theory discrepancy

    F = ln det(Sigma) + tr(S Sigma^{-1}) - ln det(S) - p

with a quasi-Newton pass over an unconstrained reparameterization:
residual variances enter through their logs, factor correlations and
factor-on-factor loadings through tanh, item loadings raw. Every factor
(at every level) has implied variance fixed to 1, so loadings are on the
standardized-latent scale and factor scores are comparable across fits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError
from .model import ModelSpec

_PENALTY = 1e12
_HEYWOOD_REL = 1e-6


class FitStatus(Enum):
    CONVERGED = "Converged"
    NONCONVERGED = "NonConverged"
    INADMISSIBLE = "Inadmissible"


@dataclass(frozen=True)
class DataMatrix:
    """An n_obs x p block of observed scores with named columns."""

    values: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        if values.ndim != 2:
            raise DataError("data must be a 2-D array of observations x columns")
        if values.shape[0] < 2:
            raise DataError("need at least 2 observations")
        if values.shape[1] != len(self.column_names):
            raise DataError(
                f"{values.shape[1]} columns but {len(self.column_names)} names"
            )
        if len(set(self.column_names)) != len(self.column_names):
            raise DataError("column names must be unique")
        if not np.isfinite(values).all():
            raise DataError("data contains non-finite entries")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, names) -> "DataMatrix":
        """Columns reordered/selected by name."""
        names = tuple(names)
        missing = [c for c in names if c not in self.column_names]
        if missing:
            raise DataError(f"columns missing from data: {missing}")
        idx = [self.column_names.index(c) for c in names]
        return DataMatrix(self.values[:, idx], names)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.column_names).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    tol_grad: float = 1e-6
    tol_f: float = 1e-9
    standardize: bool = False

    @classmethod
    def from_entries(cls, entries) -> "FitOptions":
        """Build options from ``key=value`` strings (CLI/config form)."""
        kwargs = {}
        for entry in entries:
            if "=" not in entry:
                raise ValueError(f"expected key=value, got {entry!r}")
            key, _, value = entry.partition("=")
            key = key.strip()
            value = value.strip()
            if key in ("max_iter",):
                kwargs[key] = int(value)
            elif key in ("tol_grad", "tol_f"):
                kwargs[key] = float(value)
            elif key == "standardize":
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"standardize must be boolean, got {value!r}")
                kwargs[key] = low in ("true", "1", "yes")
            else:
                raise ValueError(f"unknown option {key!r}")
        return cls(**kwargs)


def sample_covariance(data: DataMatrix) -> np.ndarray:
    """Sample covariance with the n-1 divisor.

    Raises DataError naming the column if any column is constant.
    """
    X = data.values
    for j, name in enumerate(data.column_names):
        if np.ptp(X[:, j]) == 0.0:
            raise DataError(f"column '{name}' has zero variance")
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / (data.n_obs - 1)
    return (S + S.T) / 2.0


def implied_covariance(loadings, psi, theta) -> np.ndarray:
    """Sigma = Lambda Psi Lambda' + diag(theta)."""
    loadings = np.asarray(loadings, dtype=float)
    psi = np.asarray(psi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 2:
        theta = np.diag(theta)
    p, m = loadings.shape
    if psi.shape != (m, m):
        raise ValueError(f"psi must be {m}x{m}, got {psi.shape}")
    if theta.shape != (p,):
        raise ValueError(f"theta must have {p} diagonal entries")
    sigma = loadings @ psi @ loadings.T + np.diag(theta)
    return (sigma + sigma.T) / 2.0


def _chol_logdet(matrix, label):
    try:
        c = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise ValueError(f"{label} matrix is not positive definite") from None
    return 2.0 * np.log(np.diag(c)).sum()


def ml_discrepancy(sample_cov, implied_cov) -> float:
    """Normal-theory ML discrepancy between two positive definite matrices."""
    S = np.asarray(sample_cov, dtype=float)
    sigma = np.asarray(implied_cov, dtype=float)
    if S.shape != sigma.shape or S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance matrices must be square and same shape")
    p = S.shape[0]
    logdet_s = _chol_logdet(S, "sample")
    logdet_sigma = _chol_logdet(sigma, "implied")
    sigma_inv = np.linalg.inv(sigma)
    value = logdet_sigma + float(np.sum(S * sigma_inv)) - logdet_s - p
    return max(value, 0.0)


class DiscrepancyObjective:
    """The ML discrepancy and its analytic gradient over free parameters.

    Parameter vector layout: free item loadings (raw), factor-on-factor
    loadings (tanh), exogenous factor correlations (tanh), then log
    residual variances. Factor covariance is built recursively top-down
    so every factor keeps unit implied variance; the disturbance variance
    of a non-exogenous factor is derived as 1 minus its explained
    quadratic form and checked for admissibility after the fit.
    """

    def __init__(self, spec: ModelSpec, sample_cov: np.ndarray):
        self.spec = spec
        self.items = list(spec.variable_names)
        self.factors = list(spec.factor_names)
        self.p = len(self.items)
        self.m = len(self.factors)
        self.S = np.asarray(sample_cov, dtype=float)
        if self.S.shape != (self.p, self.p):
            raise ValueError(
                f"sample covariance is {self.S.shape}, spec has {self.p} items"
            )
        self.logdet_s = _chol_logdet(self.S, "sample")

        item_index = {name: i for i, name in enumerate(self.items)}
        fac_index = {name: i for i, name in enumerate(self.factors)}

        self.item_edges_free: list[tuple[int, int]] = []
        self.item_edges_fixed: list[tuple[int, int, float]] = []
        self.factor_edges_free: list[tuple[int, int]] = []
        self.factor_edges_fixed: list[tuple[int, int, float]] = []
        children = set()
        for fac in spec.factors:
            f = fac_index[fac.name]
            for ind in fac.indicators:
                fixed = fac.fixed_loadings.get(ind)
                if ind in fac_index:
                    c = fac_index[ind]
                    children.add(c)
                    if fixed is None:
                        self.factor_edges_free.append((c, f))
                    else:
                        self.factor_edges_fixed.append((c, f, float(fixed)))
                else:
                    i = item_index[ind]
                    if fixed is None:
                        self.item_edges_free.append((i, f))
                    else:
                        self.item_edges_fixed.append((i, f, float(fixed)))

        self.exo = [j for j in range(self.m) if j not in children]
        self.exo_pairs = list(combinations(self.exo, 2))
        levels = spec.factor_level
        self.child_order = sorted(
            (j for j in range(self.m) if j in children),
            key=lambda j: -levels[self.factors[j]],
        )
        self.parents: dict[int, list[tuple[int, int | None, float]]] = {
            c: [] for c in self.child_order
        }
        # parent entries: (parent index, free-param slot or None, fixed value)
        for slot, (c, f) in enumerate(self.factor_edges_free):
            self.parents[c].append((f, slot, 0.0))
        for c, f, value in self.factor_edges_fixed:
            self.parents[c].append((f, None, value))

        self.n_item = len(self.item_edges_free)
        self.n_edge = len(self.factor_edges_free)
        self.n_exo = len(self.exo_pairs)
        self.n_params = self.n_item + self.n_edge + self.n_exo + self.p
        self.n_latent_params = self.n_edge + self.n_exo
        self._edge_off = self.n_item
        self._exo_off = self.n_item + self.n_edge
        self._theta_off = self.n_item + self.n_edge + self.n_exo

    @property
    def df(self) -> int:
        return self.p * (self.p + 1) // 2 - self.n_params

    def start_values(self) -> np.ndarray:
        x0 = np.empty(self.n_params)
        x0[: self.n_item] = 0.7
        x0[self._edge_off : self._exo_off] = np.arctanh(0.7)
        x0[self._exo_off : self._theta_off] = np.arctanh(0.3)
        x0[self._theta_off :] = np.log(0.5 * np.diag(self.S))
        return x0

    def _direct_loadings(self, x) -> np.ndarray:
        lam = np.zeros((self.p, self.m))
        for slot, (i, f) in enumerate(self.item_edges_free):
            lam[i, f] = x[slot]
        for i, f, value in self.item_edges_fixed:
            lam[i, f] = value
        return lam

    def _latent_cov(self, x, with_sens: bool):
        """Factor covariance C with unit diagonal, per-parameter dC
        matrices for the latent-side parameters, and derived disturbance
        variances for non-exogenous factors."""
        m = self.m
        C = np.zeros((m, m))
        sens = (
            [np.zeros((m, m)) for _ in range(self.n_latent_params)]
            if with_sens
            else []
        )
        for a in self.exo:
            C[a, a] = 1.0
        for k, (a, b) in enumerate(self.exo_pairs):
            rho = np.tanh(x[self._exo_off + k])
            C[a, b] = C[b, a] = rho
            if with_sens:
                s = sens[self.n_edge + k]
                s[a, b] = s[b, a] = 1.0 - rho * rho

        disturbance = {}
        for c in self.child_order:
            entries = self.parents[c]
            par_idx = [f for f, _, _ in entries]
            bvals = np.array(
                [
                    np.tanh(x[self._edge_off + slot]) if slot is not None else value
                    for _, slot, value in entries
                ]
            )
            par_rows = C[par_idx, :]
            row = bvals @ par_rows
            quad = float(bvals @ C[np.ix_(par_idx, par_idx)] @ bvals)
            if with_sens:
                for t in range(self.n_latent_params):
                    srow = bvals @ np.array([sens[t][f, :] for f in par_idx])
                    for j, (_, slot, _) in enumerate(entries):
                        if slot is not None and slot == t:
                            srow = srow + (1.0 - bvals[j] ** 2) * par_rows[j]
                    sens[t][c, :] = srow
                    sens[t][:, c] = srow
                    sens[t][c, c] = 0.0
            C[c, :] = row
            C[:, c] = row
            C[c, c] = 1.0
            disturbance[c] = 1.0 - quad
        return C, sens, disturbance

    def unpack(self, x):
        """Structured matrices at a parameter point: direct loadings,
        structural matrix B, factor covariance C, disturbance variances,
        residual variances."""
        x = np.asarray(x, dtype=float)
        lam = self._direct_loadings(x)
        C, _, disturbance = self._latent_cov(x, with_sens=False)
        B = np.zeros((self.m, self.m))
        for slot, (c, f) in enumerate(self.factor_edges_free):
            B[c, f] = np.tanh(x[self._edge_off + slot])
        for c, f, value in self.factor_edges_fixed:
            B[c, f] = value
        theta = np.exp(x[self._theta_off :])
        return lam, B, C, disturbance, theta

    def implied(self, x) -> np.ndarray:
        lam, _, C, _, theta = self.unpack(x)
        sigma = lam @ C @ lam.T + np.diag(theta)
        return (sigma + sigma.T) / 2.0

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        lam = self._direct_loadings(x)
        C, sens, _ = self._latent_cov(x, with_sens=True)
        theta = np.exp(x[self._theta_off :])
        sigma = lam @ C @ lam.T + np.diag(theta)
        sigma = (sigma + sigma.T) / 2.0
        try:
            factor = cho_factor(sigma, lower=True)
        except np.linalg.LinAlgError:
            return _PENALTY, np.zeros_like(x)
        logdet = 2.0 * np.log(np.diag(factor[0])).sum()
        eye = np.eye(self.p)
        sigma_inv = cho_solve(factor, eye)
        value = logdet + float(np.sum(self.S * sigma_inv)) - self.logdet_s - self.p

        G = sigma_inv - sigma_inv @ self.S @ sigma_inv
        G = (G + G.T) / 2.0
        GL = G @ lam
        GLC = GL @ C
        grad = np.empty_like(x)
        for slot, (i, f) in enumerate(self.item_edges_free):
            grad[slot] = 2.0 * GLC[i, f]
        if self.n_latent_params:
            M = lam.T @ GL
            for t in range(self.n_latent_params):
                grad[self._edge_off + t] = float(np.sum(M * sens[t]))
        grad[self._theta_off :] = np.diag(G) * theta
        return value, grad

    def value(self, x) -> float:
        return self.value_and_grad(x)[0]

    def gradient(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]


@dataclass
class FittedModel:
    """Result of one ML fit.

    ``loadings`` stacks all levels: column f holds the total effect of
    factor f on each item (for flat fits this is just the loading
    matrix). ``psi`` is the innovation covariance: the correlation block
    of exogenous factors plus derived disturbance variances on the
    diagonal, so implied_covariance(loadings, psi, theta) reconstructs
    the fitted covariance for hierarchical fits too. ``structural`` holds
    factor-on-factor loadings (zero for flat fits).
    """

    spec: ModelSpec
    status: FitStatus
    n_obs: int
    df: int
    item_names: tuple[str, ...]
    factor_names: tuple[str, ...]
    loadings: np.ndarray | None = None
    psi: np.ndarray | None = None
    theta: np.ndarray | None = None
    structural: np.ndarray | None = None
    discrepancy: float | None = None
    chi_square: float | None = None
    sample_cov: np.ndarray | None = None
    iterations: int = 0
    message: str = ""
    options: FitOptions = field(default_factory=FitOptions)

    @property
    def converged(self) -> bool:
        return self.status is FitStatus.CONVERGED

    def factor_covariance(self) -> np.ndarray:
        """Model-implied covariance (correlation) matrix of all factors."""
        if self.loadings is None:
            raise ValueError("fit has no estimates")
        m = len(self.factor_names)
        inv_ib = np.linalg.inv(np.eye(m) - self.structural)
        C = inv_ib @ self.psi @ inv_ib.T
        return (C + C.T) / 2.0

    def direct_loadings(self) -> np.ndarray:
        """Item-on-factor loadings with indirect paths removed."""
        if self.loadings is None:
            raise ValueError("fit has no estimates")
        m = len(self.factor_names)
        return self.loadings @ (np.eye(m) - self.structural)

    def implied(self) -> np.ndarray:
        if self.loadings is None:
            raise ValueError("fit has no estimates")
        return implied_covariance(self.loadings, self.psi, self.theta)


def _failed_fit(spec, objective, n_obs, options, message, iterations=0, sample_cov=None):
    return FittedModel(
        spec=spec,
        status=FitStatus.NONCONVERGED,
        n_obs=n_obs,
        df=objective.df if objective is not None else 0,
        item_names=tuple(spec.variable_names),
        factor_names=tuple(spec.factor_names),
        sample_cov=sample_cov,
        iterations=iterations,
        message=message,
        options=options,
    )


def _fit(spec: ModelSpec, data: DataMatrix, options: FitOptions) -> FittedModel:
    sub = data.subset(spec.variable_names)
    S = sample_covariance(sub)
    if options.standardize:
        scale = 1.0 / np.sqrt(np.diag(S))
        S = S * np.outer(scale, scale)
        S = (S + S.T) / 2.0

    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return _failed_fit(
            spec, None, sub.n_obs, options,
            "sample covariance is not positive definite",
            sample_cov=S,
        )

    objective = DiscrepancyObjective(spec, S)
    if objective.df < 0:
        raise ValueError(
            f"model is not identified: {objective.n_params} free parameters "
            f"exceed {objective.p * (objective.p + 1) // 2} sample moments"
        )

    result = optimize.minimize(
        objective.value_and_grad,
        objective.start_values(),
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": options.max_iter,
            "ftol": options.tol_f,
            "gtol": options.tol_grad,
        },
    )

    if not result.success:
        return _failed_fit(
            spec, objective, sub.n_obs, options,
            f"optimizer did not converge: {result.message}",
            iterations=int(result.nit),
            sample_cov=S,
        )

    lam_d, B, C, disturbance, theta = objective.unpack(result.x)
    m = objective.m
    inv_ib = np.linalg.inv(np.eye(m) - B)
    lam_total = lam_d @ inv_ib

    status = FitStatus.CONVERGED
    notes = []
    rel_theta = theta / np.diag(S)
    if np.any(rel_theta < _HEYWOOD_REL):
        status = FitStatus.INADMISSIBLE
        worst = objective.items[int(np.argmin(rel_theta))]
        notes.append(f"residual variance of '{worst}' collapsed to zero")
    for k, (a, b) in enumerate(objective.exo_pairs):
        if abs(C[a, b]) > 1.0 - _HEYWOOD_REL:
            status = FitStatus.INADMISSIBLE
            notes.append(
                f"correlation between '{objective.factors[a]}' and "
                f"'{objective.factors[b]}' pinned at a boundary"
            )
            break
    for c, value in disturbance.items():
        if value <= _HEYWOOD_REL:
            status = FitStatus.INADMISSIBLE
            notes.append(
                f"disturbance variance of '{objective.factors[c]}' "
                "is not positive"
            )
            break
    if np.linalg.eigvalsh(C).min() < -1e-8:
        status = FitStatus.INADMISSIBLE
        notes.append("factor covariance is indefinite")

    # sign convention: a factor whose total-loading column sums negative
    # is reflected, which leaves the implied covariance untouched
    signs = np.where(lam_total.sum(axis=0) < 0.0, -1.0, 1.0)
    if np.any(signs < 0):
        D = np.diag(signs)
        lam_total = lam_total @ D
        lam_d = lam_d @ D
        B = D @ B @ D

    psi = np.zeros((m, m))
    for a in objective.exo:
        psi[a, a] = 1.0
    for k, (a, b) in enumerate(objective.exo_pairs):
        psi[a, b] = psi[b, a] = C[a, b] * signs[a] * signs[b]
    for c, value in disturbance.items():
        psi[c, c] = value

    sigma = implied_covariance(lam_total, psi, theta)
    try:
        discrepancy = ml_discrepancy(S, sigma)
    except ValueError:
        status = FitStatus.INADMISSIBLE
        notes.append("implied covariance is not positive definite")
        discrepancy = None

    chi_square = None
    if discrepancy is not None:
        chi_square = (sub.n_obs - 1) * discrepancy

    return FittedModel(
        spec=spec,
        status=status,
        n_obs=sub.n_obs,
        df=objective.df,
        item_names=tuple(spec.variable_names),
        factor_names=tuple(spec.factor_names),
        loadings=lam_total,
        psi=psi,
        theta=theta,
        structural=B,
        discrepancy=discrepancy,
        chi_square=chi_square,
        sample_cov=S,
        iterations=int(result.nit),
        message="; ".join(notes),
        options=options,
    )


def fit_cfa(spec: ModelSpec, data: DataMatrix, options: FitOptions | None = None) -> FittedModel:
    """Fit a flat (single-level) CFA with correlated factors."""
    if spec.levels != 1:
        raise ValueError(
            f"spec has {spec.levels} levels; fit_cfa handles flat models only "
            "(use fit_traditional)"
        )
    return _fit(spec, data, options or FitOptions())


def fit_traditional(spec: ModelSpec, data: DataMatrix, options: FitOptions | None = None) -> FittedModel:
    """Fit a hierarchical model simultaneously at all levels.

    The latent structure is estimated jointly: items load on their
    factors, lower factors load on higher ones, and the single implied
    covariance is fit to the sample covariance in one optimization.
    """
    if spec.levels < 2:
        raise ValueError("spec is flat; use fit_cfa")
    return _fit(spec, data, options or FitOptions())
