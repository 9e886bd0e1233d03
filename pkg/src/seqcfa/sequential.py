"""Staged estimation: fit a level, score it, feed the scores upward.

Stage 1 fits all level-1 factors jointly on the raw items and computes
factor scores; each later stage treats the standardized scores from
below as its observed variables. Sample size is preserved at every
stage, which is the entire point of the construction: no collapsing to
group-level rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, SequentialStageError
from .estimator import (
    DataMatrix,
    FitOptions,
    FitStatus,
    FittedModel,
    fit_cfa,
    implied_covariance,
)
from .metrics import fit_indices
from .model import ModelSpec, stage_decomposition
from .scoring import FactorScores, bartlett_weights, compute_scores


@dataclass(frozen=True)
class PropagationReport:
    """How stage-1 scoring error enters the stage-2 covariance.

    ``cov_eta1_hat`` is the model-implied covariance of the stage-1
    factor scores: the factor covariance plus the score-error covariance
    Psi_nu. ``nu_variance`` holds the per-factor score-error variances
    (estimated as the diagonal of Gamma^{-1} when not supplied).
    ``cov_eta2_implied`` is the stage-2 model's implied covariance of the
    forwarded score vector, comparable against cov_eta1_hat up to the
    forwarding standardization; None until stage 2 exists.
    """

    cov_eta1_hat: np.ndarray
    cov_eta2_implied: np.ndarray | None
    nu_variance: np.ndarray


@dataclass(frozen=True)
class SequentialResult:
    stage_fits: tuple[FittedModel, ...]
    stage_scores: tuple[FactorScores, ...]
    final_scores: FactorScores
    propagation: PropagationReport

    @property
    def n_stages(self) -> int:
        return len(self.stage_fits)


def propagated_covariance(
    fit1: FittedModel,
    nu_variance=None,
    fit2: FittedModel | None = None,
) -> PropagationReport:
    """Error-propagation report for the first stage transition.

    With Bartlett weights the score is eta_hat = eta + W epsilon, so
    Cov(eta_hat) = Phi + W Theta W' = Phi + Gamma^{-1} exactly; passing
    ``nu_variance`` overrides the Gamma^{-1} estimate (zero gives the
    error-free signal covariance alone).
    """
    if fit1.status is not FitStatus.CONVERGED:
        raise ValueError(f"stage-1 fit has status {fit1.status.value}")
    phi = fit1.factor_covariance()
    m = phi.shape[0]
    if nu_variance is None:
        W = bartlett_weights(fit1.loadings, fit1.theta)
        psi_nu = W @ np.diag(fit1.theta) @ W.T
    else:
        nu = np.asarray(nu_variance, dtype=float).ravel()
        if nu.shape != (m,):
            raise ValueError(f"nu_variance must have {m} entries")
        if np.any(nu < 0):
            raise ValueError("nu_variance entries must be nonnegative")
        psi_nu = np.diag(nu)
    cov1 = phi + psi_nu
    cov1 = (cov1 + cov1.T) / 2.0

    cov2 = None
    if fit2 is not None and fit2.status is FitStatus.CONVERGED:
        cov2 = implied_covariance(fit2.loadings, fit2.psi, fit2.theta)

    return PropagationReport(
        cov_eta1_hat=cov1,
        cov_eta2_implied=cov2,
        nu_variance=np.diag(psi_nu).copy(),
    )


def _standardized(column: np.ndarray) -> np.ndarray:
    sd = column.std(ddof=1)
    if sd == 0:
        raise DataError("score column has zero variance")
    return (column - column.mean()) / sd


def fit_sequential(
    spec: ModelSpec,
    data: DataMatrix,
    options: FitOptions | None = None,
    scoring_method: str = "bartlett",
) -> SequentialResult:
    """Run the full staged pipeline for a hierarchical spec.

    Aborts with SequentialStageError on the first stage whose fit is not
    Converged (Inadmissible included: scores from a Heywood solution
    would silently poison the next stage). Downstream stages are never
    fabricated.
    """
    if spec.levels < 2:
        raise ValueError("spec is flat; staged estimation needs at least 2 levels")
    options = options or FitOptions()
    stages = stage_decomposition(spec)

    pool: dict[str, np.ndarray] = {
        name: data.subset([name]).values[:, 0] for name in data.column_names
    }

    stage_fits: list[FittedModel] = []
    stage_scores: list[FactorScores] = []
    for k, stage_spec in enumerate(stages, start=1):
        try:
            missing = [v for v in stage_spec.variable_names if v not in pool]
            if missing:
                raise DataError(f"columns missing from data: {missing}")
            stage_data = DataMatrix(
                np.column_stack([pool[v] for v in stage_spec.variable_names]),
                stage_spec.variable_names,
            )
            fit = fit_cfa(stage_spec, stage_data, options)
        except DataError as err:
            raise SequentialStageError(k, str(err)) from err
        if fit.status is not FitStatus.CONVERGED:
            raise SequentialStageError(
                k,
                f"fit status {fit.status.value}"
                + (f" ({fit.message})" if fit.message else ""),
                status=fit.status.value,
            )
        scores = compute_scores(fit, stage_data, scoring_method)
        stage_fits.append(fit)
        stage_scores.append(scores)
        if k < len(stages):
            for j, name in enumerate(scores.factor_names):
                try:
                    pool[name] = _standardized(scores.values[:, j])
                except DataError as err:
                    raise SequentialStageError(k, f"score '{name}': {err}") from err

    propagation = propagated_covariance(stage_fits[0], fit2=stage_fits[1])
    return SequentialResult(
        stage_fits=tuple(stage_fits),
        stage_scores=tuple(stage_scores),
        final_scores=stage_scores[-1],
        propagation=propagation,
    )


def mean_index(scores_or_items, weights=None) -> np.ndarray:
    """Weighted arithmetic index: I = sum(w x) / sum(w) per observation.

    Default weights are all 1 (a plain row mean). Weights must be
    nonnegative and not all zero.
    """
    if isinstance(scores_or_items, DataMatrix):
        X = scores_or_items.values
    elif isinstance(scores_or_items, FactorScores):
        X = scores_or_items.values
    else:
        X = np.asarray(scores_or_items, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] < 1:
        raise ValueError("need at least one column")
    if weights is None:
        weights = np.ones(X.shape[1])
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != (X.shape[1],):
        raise ValueError(f"weights must have {X.shape[1]} entries")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = w.sum()
    if total == 0:
        raise ValueError("weights must not all be zero")
    return X @ w / total


def sequential_to_json(result: SequentialResult, score_csv_path: str | None = None) -> dict:
    """JSON-ready summary: per-stage fit summary and indices, plus the
    final score CSV location when one was written."""
    stages = []
    for fit in result.stage_fits:
        block = fit_indices(fit, fit.sample_cov)
        stages.append(
            {
                "status": fit.status.value,
                "chi_square": fit.chi_square,
                "df": fit.df,
                "factor_names": list(fit.factor_names),
                "item_names": list(fit.item_names),
                "loadings": fit.loadings.tolist(),
                "fit_indices": {
                    "cfi": block.cfi,
                    "tli": block.tli,
                    "rmsea": block.rmsea,
                    "srmr": block.srmr,
                },
            }
        )
    return {
        "schema_version": 1,
        "stages": stages,
        "final_score_csv": score_csv_path,
    }
