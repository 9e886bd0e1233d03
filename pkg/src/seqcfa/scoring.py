"""Factor scores from fitted models.

Bartlett weights W = (Lambda' Theta^{-1} Lambda)^{-1} Lambda' Theta^{-1}
give conditionally unbiased scores (W Lambda = I). Regression weights
W = Psi Lambda' Sigma^{-1} give shrunken best-linear-predictor scores.
For a hierarchical fit the weights act on the innovation vector, so the
raw scores are mixed through (I - B)^{-1} to land on the factors
themselves; for flat fits that mixing is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ScoringError
from .estimator import DataMatrix, FitStatus, FittedModel, implied_covariance

_COND_LIMIT = 1e10


@dataclass(frozen=True)
class FactorScores:
    values: np.ndarray
    factor_names: tuple[str, ...]
    method: str
    source_fit: FittedModel

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.factor_names.index(name)]


def bartlett_weights(loadings, theta) -> np.ndarray:
    """W = Gamma^{-1} Lambda' Theta^{-1}, factors x items.

    Raises ScoringError when Gamma = Lambda' Theta^{-1} Lambda is
    singular (an all-zero loading column, or the linearly dependent
    stacked columns of a hierarchical fit); callers must not score from
    such weights.
    """
    lam = np.atleast_2d(np.asarray(loadings, dtype=float))
    if lam.shape[0] == 1 and lam.shape[1] > 1:
        lam = lam.T
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 2:
        theta = np.diag(theta)
    if np.any(theta <= 0):
        raise ValueError("theta entries must be strictly positive")
    lam_over_theta = lam / theta[:, None]
    gamma = lam.T @ lam_over_theta
    if np.linalg.cond(gamma) > _COND_LIMIT:
        raise ScoringError(
            "Gamma = Lambda' Theta^{-1} Lambda is singular; Bartlett "
            "weights are undefined for this loading structure"
        )
    return np.linalg.solve(gamma, lam_over_theta.T)


def regression_weights(loadings, psi, theta) -> np.ndarray:
    """W = Psi Lambda' Sigma^{-1}, factors x items."""
    lam = np.asarray(loadings, dtype=float)
    psi = np.asarray(psi, dtype=float)
    sigma = implied_covariance(lam, psi, theta)
    return psi @ lam.T @ np.linalg.inv(sigma)


def bartlett_unbiasedness_gap(fit: FittedModel) -> float:
    """max |W Lambda - I| for a fit's Bartlett weights."""
    W = bartlett_weights(fit.loadings, fit.theta)
    m = W.shape[0]
    return float(np.abs(W @ fit.loadings - np.eye(m)).max())


def compute_scores(fit: FittedModel, data: DataMatrix, method: str = "bartlett") -> FactorScores:
    """Score observations under a converged fit.

    Data is centered with the scored sample's own column means (and, for
    a standardized fit, rescaled by its own standard deviations) before
    the weights apply.
    """
    if fit.status is not FitStatus.CONVERGED:
        raise ScoringError(f"cannot score from a fit with status {fit.status.value}")
    key = method.strip().lower()
    if key not in ("bartlett", "regression"):
        raise ValueError(f"unknown scoring method {method!r}")

    sub = data.subset(fit.item_names)
    X = sub.values - sub.values.mean(axis=0)
    if fit.options.standardize:
        X = X / X.std(axis=0, ddof=1)

    if key == "bartlett":
        W = bartlett_weights(fit.loadings, fit.theta)
    else:
        W = regression_weights(fit.loadings, fit.psi, fit.theta)

    raw = X @ W.T
    m = len(fit.factor_names)
    mixing = np.linalg.inv(np.eye(m) - fit.structural)
    scores = raw @ mixing.T
    return FactorScores(
        values=scores,
        factor_names=tuple(fit.factor_names),
        method="Bartlett" if key == "bartlett" else "Regression",
        source_fit=fit,
    )


def scores_to_csv(scores: FactorScores, path, ids=None) -> None:
    """Write scores as CSV: id column first, then one column per factor."""
    if ids is None:
        ids = np.arange(scores.n_obs)
    frame = pd.DataFrame({"id": np.asarray(ids)})
    for j, name in enumerate(scores.factor_names):
        frame[name] = scores.values[:, j]
    frame.to_csv(path, index=False, float_format="%.12g")
