"""Fit indices, reliability, and score-accuracy metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .estimator import FittedModel, ml_discrepancy


@dataclass(frozen=True)
class FitIndexBlock:
    """CFI/TLI/RMSEA/SRMR for one fitted model.

    TLI and RMSEA are None for a saturated model (df = 0); SRMR is None
    when no sample covariance was available to residualize.
    """

    chi_square: float
    df: int
    chi_square_baseline: float
    df_baseline: int
    n_obs: int
    cfi: float
    tli: float | None
    rmsea: float | None
    srmr: float | None


@dataclass(frozen=True)
class PairedTestResult:
    mean_diff: float
    ci_low: float
    ci_high: float
    t_stat: float
    df: int
    p_value: float
    confidence: float


def indices_from_chi_square(
    chi_square: float,
    df: int,
    chi_square_baseline: float,
    df_baseline: int,
    n_obs: int,
    srmr: float | None = None,
) -> FitIndexBlock:
    """Incremental and absolute fit indices from chi-square statistics."""
    excess_m = max(chi_square - df, 0.0)
    excess_b = max(chi_square_baseline - df_baseline, 0.0)
    denom = max(excess_b, excess_m)
    cfi = 1.0 if denom == 0 else 1.0 - excess_m / denom

    tli = None
    if df > 0 and df_baseline > 0:
        ratio_b = chi_square_baseline / df_baseline
        if ratio_b != 1.0:
            tli = (ratio_b - chi_square / df) / (ratio_b - 1.0)

    rmsea = None
    if df > 0:
        rmsea = float(np.sqrt(max(chi_square - df, 0.0) / (df * (n_obs - 1))))

    return FitIndexBlock(
        chi_square=float(chi_square),
        df=int(df),
        chi_square_baseline=float(chi_square_baseline),
        df_baseline=int(df_baseline),
        n_obs=int(n_obs),
        cfi=float(cfi),
        tli=tli,
        rmsea=rmsea,
        srmr=srmr,
    )


def _srmr(sample_cov, implied_cov) -> float:
    """Root mean square residual between observed and implied
    correlations, over the off-diagonal."""
    S = np.asarray(sample_cov, dtype=float)
    sigma = np.asarray(implied_cov, dtype=float)
    p = S.shape[0]
    if p < 2:
        return 0.0
    ds = 1.0 / np.sqrt(np.diag(S))
    dm = 1.0 / np.sqrt(np.diag(sigma))
    r_s = S * np.outer(ds, ds)
    r_m = sigma * np.outer(dm, dm)
    resid = r_s - r_m
    idx = np.triu_indices(p, k=1)
    return float(np.sqrt(np.mean(resid[idx] ** 2)))


def fit_indices(fit: FittedModel, sample_cov) -> FitIndexBlock:
    """Fit-index block for a converged fit against its sample covariance.

    The baseline model is the independence model (diagonal covariance),
    whose discrepancy has the closed form sum(ln s_ii) - ln det S.
    """
    if fit.chi_square is None:
        raise ValueError(f"fit has status {fit.status.value}; no indices available")
    S = np.asarray(sample_cov, dtype=float)
    p = S.shape[0]
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise ValueError("sample covariance is not positive definite")
    f_baseline = float(np.log(np.diag(S)).sum() - logdet)
    chi_b = (fit.n_obs - 1) * max(f_baseline, 0.0)
    df_b = p * (p - 1) // 2
    srmr = _srmr(S, fit.implied())
    return indices_from_chi_square(
        fit.chi_square, fit.df, chi_b, df_b, fit.n_obs, srmr=srmr
    )


def mcdonald_omega(loadings, theta) -> float:
    """Composite reliability omega = (sum lambda)^2 / ((sum lambda)^2 + sum theta)
    for one factor's standardized loadings and residual variances."""
    lam = np.asarray(loadings, dtype=float).ravel()
    resid = np.asarray(theta, dtype=float).ravel()
    if lam.size == 0 or lam.size != resid.size:
        raise ValueError("loadings and theta must be same-length vectors")
    if np.any(resid < 0):
        raise ValueError("residual variances must be nonnegative")
    total = lam.sum() ** 2
    return float(total / (total + resid.sum()))


def omega_per_factor(fit: FittedModel) -> dict[str, float]:
    """Omega per factor from a converged fit, on the standardized scale.

    Each factor uses the items with a nonzero column entry in the stacked
    loading matrix; loadings and residuals are standardized by the
    implied item variances.
    """
    if not fit.converged:
        raise ValueError(f"fit has status {fit.status.value}")
    sigma_diag = np.diag(fit.implied())
    scale = 1.0 / np.sqrt(sigma_diag)
    out = {}
    for j, name in enumerate(fit.factor_names):
        col = fit.loadings[:, j]
        mask = col != 0.0
        if not mask.any():
            continue
        lam_std = col[mask] * scale[mask]
        theta_std = fit.theta[mask] / sigma_diag[mask]
        out[name] = mcdonald_omega(lam_std, theta_std)
    return out


def _standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 values")
    sd = x.std()
    if sd == 0:
        raise ValueError("zero-variance vector cannot be standardized")
    return (x - x.mean()) / sd


def pearson_r(a, b) -> float:
    x = _standardize(a)
    y = _standardize(b)
    if x.size != y.size:
        raise ValueError("length mismatch")
    return float(np.mean(x * y))


def rmse_aligned(estimate, truth) -> float:
    """RMSE after standardizing both vectors and sign-aligning.

    Both vectors are centered and scaled to unit variance; the estimate
    is reflected when its correlation with the truth is negative, making
    the result sign-convention-free: rmse^2 = 2 (1 - |r|).
    """
    x = _standardize(estimate)
    y = _standardize(truth)
    if x.size != y.size:
        raise ValueError("length mismatch")
    r = float(np.mean(x * y))
    if r < 0:
        x = -x
    return float(np.sqrt(np.mean((x - y) ** 2)))


def paired_t_test(diffs, confidence: float = 0.95) -> PairedTestResult:
    """Two-sided one-sample t test on paired differences.

    Raises ValueError on fewer than 2 values or degenerate (zero)
    variance; no p-value is fabricated for those.
    """
    d = np.asarray(diffs, dtype=float).ravel()
    if d.size < 2:
        raise ValueError("need at least 2 paired differences")
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("paired differences have zero variance; t is undefined")
    n = d.size
    mean = float(d.mean())
    se = sd / np.sqrt(n)
    t_stat = mean / se
    df = n - 1
    p_value = float(2 * stats.t.sf(abs(t_stat), df))
    crit = float(stats.t.ppf(0.5 + confidence / 2, df))
    return PairedTestResult(
        mean_diff=mean,
        ci_low=mean - crit * se,
        ci_high=mean + crit * se,
        t_stat=float(t_stat),
        df=df,
        p_value=p_value,
        confidence=confidence,
    )
