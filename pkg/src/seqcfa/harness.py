"""Monte Carlo driver: run the condition grid, aggregate, and report.

Each replication generates one dataset and runs both estimation routes
on it, so the comparison is paired by construction. Replication seeds
derive deterministically from (grid seed, condition index, rep index),
which makes parallel and serial execution agree exactly.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import AllReplicationsFailedError, SequentialStageError
from .estimator import DataMatrix, FitOptions, FitStatus, fit_cfa, fit_traditional
from .metrics import PairedTestResult, fit_indices, paired_t_test, omega_per_factor, pearson_r, rmse_aligned
from .model import ModelSpec
from .scoring import bartlett_unbiasedness_gap, compute_scores
from .sequential import fit_sequential, mean_index
from .simgen import SimCondition, SimulatedDataset, builtin_design, generate

_DEFAULT_SIZES = {
    "Simple": (100, 500, 1000, 2000, 5000),
    "Complex": (100, 500, 1000, 2000, 5000),
    "MostComplex": (200, 500, 1000),
}

_FLOAT_FMT = "%.12g"


@dataclass(frozen=True)
class ReplicationResult:
    condition: SimCondition
    rep: int
    status_seq: str
    status_trad: str
    rmse_seq: float | None = None
    rmse_trad: float | None = None
    r_seq: float | None = None
    r_trad: float | None = None
    bartlett_gap: float | None = None
    data_checksum: str = ""
    wall_time: float = 0.0
    notes: str = ""


@dataclass(frozen=True)
class StratumRow:
    n_obs: int
    distribution: str
    residual_pattern: str
    mean_rmse_seq: float | None
    mean_rmse_trad: float | None
    mean_r_seq: float | None
    mean_r_trad: float | None
    converged_seq: int
    converged_trad: int
    n_reps: int


@dataclass(frozen=True)
class SummaryTable:
    rows: tuple[StratumRow, ...]
    rmse_test: PairedTestResult | None
    r_test: PairedTestResult | None
    n_results: int
    n_pairs: int
    notes: tuple[str, ...] = field(default=())


def default_grid(design_name: str) -> dict:
    """The appendix-style condition axes for a builtin design."""
    design = builtin_design(design_name)
    grid = {
        "sizes": _DEFAULT_SIZES[design.name],
        "error_levels": (0.2, 0.4, 0.6),
        "distributions": ("Normal", "Skewed"),
        "patterns": ("Homoskedastic", "Heteroskedastic"),
        "cross_loadings": (0.0, 0.2) if design.name == "MostComplex" else (0.0,),
    }
    return grid


def build_conditions(design, grid: dict | None = None) -> list[SimCondition]:
    """Expand a grid dict into the ordered condition list (seeds zeroed;
    run_grid assigns per-replication seeds)."""
    if isinstance(design, ModelSpec):
        name = design
        base = {
            "sizes": (100, 500, 1000),
            "error_levels": (0.2, 0.4, 0.6),
            "distributions": ("Normal", "Skewed"),
            "patterns": ("Homoskedastic", "Heteroskedastic"),
            "cross_loadings": (0.0,),
        }
    else:
        name = builtin_design(design).name
        base = default_grid(name)
    if grid:
        unknown = set(grid) - set(base)
        if unknown:
            raise ValueError(f"unknown grid axes: {sorted(unknown)}")
        base.update(grid)
    conditions = []
    for n in base["sizes"]:
        for dist in base["distributions"]:
            for pat in base["patterns"]:
                for e in base["error_levels"]:
                    for cl in base["cross_loadings"]:
                        conditions.append(
                            SimCondition(
                                design=name,
                                n_obs=int(n),
                                error_level=float(e),
                                distribution=dist,
                                residual_pattern=pat,
                                cross_loading=float(cl),
                                seed=0,
                            )
                        )
    return conditions


def _rep_seed(seed: int, cond_idx: int, rep: int) -> int:
    return int(np.random.SeedSequence((seed, cond_idx, rep)).generate_state(1)[0])


def run_replication(condition: SimCondition, rep: int,
                    options: FitOptions | None = None) -> ReplicationResult:
    """One paired replication: same dataset through both routes.

    Sequential stages are scored with Bartlett weights; the traditional
    fit is scored with the regression method, since its stacked loading
    matrix is rank-deficient by construction (a higher factor's column
    is an exact combination of its children's) and Bartlett weights do
    not exist for it.
    """
    start = time.perf_counter()
    options = options or FitOptions()
    notes = []
    dataset = generate(condition)
    checksum = dataset.data.checksum()
    true_top = dataset.top_latent

    rmse_seq = r_seq = gap = None
    try:
        seq = fit_sequential(dataset.spec, dataset.data, options)
        status_seq = FitStatus.CONVERGED.value
        top = seq.final_scores.values[:, 0]
        rmse_seq = rmse_aligned(top, true_top)
        r_seq = pearson_r(top, true_top)
        gap = max(bartlett_unbiasedness_gap(f) for f in seq.stage_fits)
    except SequentialStageError as err:
        status_seq = err.status or FitStatus.NONCONVERGED.value
        notes.append(f"sequential {err}")
    except ValueError as err:
        status_seq = FitStatus.NONCONVERGED.value
        notes.append(f"sequential: {err}")

    rmse_trad = r_trad = None
    try:
        trad = fit_traditional(dataset.spec, dataset.data, options)
        status_trad = trad.status.value
        if trad.status is FitStatus.CONVERGED:
            top_factor = trad.factor_names[
                int(np.argmax([dataset.spec.factor_level[f] for f in trad.factor_names]))
            ]
            scores = compute_scores(trad, dataset.data, method="regression")
            top = scores.column(top_factor)
            rmse_trad = rmse_aligned(top, true_top)
            r_trad = pearson_r(top, true_top)
        elif trad.message:
            notes.append(f"traditional: {trad.message}")
    except ValueError as err:
        status_trad = FitStatus.NONCONVERGED.value
        notes.append(f"traditional: {err}")

    return ReplicationResult(
        condition=condition,
        rep=rep,
        status_seq=status_seq,
        status_trad=status_trad,
        rmse_seq=rmse_seq,
        rmse_trad=rmse_trad,
        r_seq=r_seq,
        r_trad=r_trad,
        bartlett_gap=gap,
        data_checksum=checksum,
        wall_time=time.perf_counter() - start,
        notes="; ".join(notes),
    )


def _replicate(task) -> ReplicationResult:
    condition, rep, options = task
    return run_replication(condition, rep, options)


def run_grid(design, grid: dict | None = None, reps: int = 100, seed: int = 0,
             options: FitOptions | None = None, n_jobs: int = 1) -> list[ReplicationResult]:
    """All conditions x reps. Per-replication failures are recorded in
    the result statuses; nothing here is fatal."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    conditions = build_conditions(design, grid)
    tasks = []
    for cond_idx, cond in enumerate(conditions):
        for rep in range(reps):
            seeded = SimCondition(
                design=cond.design,
                n_obs=cond.n_obs,
                error_level=cond.error_level,
                distribution=cond.distribution,
                residual_pattern=cond.residual_pattern,
                cross_loading=cond.cross_loading,
                seed=_rep_seed(seed, cond_idx, rep),
                residual_skew=cond.residual_skew,
            )
            tasks.append((seeded, rep, options))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_replicate, tasks, chunksize=8))
    else:
        results = [_replicate(task) for task in tasks]
    return results


def _result_sort_key(r: ReplicationResult):
    c = r.condition
    return (c.n_obs, c.distribution, c.residual_pattern, c.error_level,
            c.cross_loading, r.rep, c.seed)


def summarize(results) -> SummaryTable:
    """Stratified means by (n, distribution, residual pattern), pooling
    error levels, plus overall paired tests.

    Per-method means use that method's converged replications; the
    paired tests use replications where both methods converged. A
    degenerate paired test (zero-variance differences) is reported as
    absent with a note instead of a fabricated p-value.
    """
    results = sorted(results, key=_result_sort_key)
    if not results:
        raise AllReplicationsFailedError("no replications to summarize")
    converged = FitStatus.CONVERGED.value
    if all(r.status_seq != converged and r.status_trad != converged for r in results):
        raise AllReplicationsFailedError(
            f"all {len(results)} replications failed for both methods"
        )

    strata: dict[tuple, list[ReplicationResult]] = {}
    for r in results:
        key = (r.condition.n_obs, r.condition.distribution, r.condition.residual_pattern)
        strata.setdefault(key, []).append(r)

    rows = []
    for key in sorted(strata):
        group = strata[key]
        seq_ok = [r for r in group if r.status_seq == converged]
        trad_ok = [r for r in group if r.status_trad == converged]
        rows.append(
            StratumRow(
                n_obs=key[0],
                distribution=key[1],
                residual_pattern=key[2],
                mean_rmse_seq=float(np.mean([r.rmse_seq for r in seq_ok])) if seq_ok else None,
                mean_rmse_trad=float(np.mean([r.rmse_trad for r in trad_ok])) if trad_ok else None,
                mean_r_seq=float(np.mean([r.r_seq for r in seq_ok])) if seq_ok else None,
                mean_r_trad=float(np.mean([r.r_trad for r in trad_ok])) if trad_ok else None,
                converged_seq=len(seq_ok),
                converged_trad=len(trad_ok),
                n_reps=len(group),
            )
        )

    pairs = [r for r in results if r.status_seq == converged and r.status_trad == converged]
    notes = []
    rmse_test = r_test = None
    if len(pairs) >= 2:
        rmse_diffs = np.array([r.rmse_seq - r.rmse_trad for r in pairs])
        r_diffs = np.array([r.r_seq - r.r_trad for r in pairs])
        try:
            rmse_test = paired_t_test(rmse_diffs)
        except ValueError:
            notes.append("RMSE paired test degenerate: zero-variance differences")
        try:
            r_test = paired_t_test(r_diffs)
        except ValueError:
            notes.append("Pearson paired test degenerate: zero-variance differences")
    else:
        notes.append(f"only {len(pairs)} both-converged pairs; paired tests skipped")

    return SummaryTable(
        rows=tuple(rows),
        rmse_test=rmse_test,
        r_test=r_test,
        n_results=len(results),
        n_pairs=len(pairs),
        notes=tuple(notes),
    )


def _fmt(value) -> str:
    if value is None:
        return "NA"
    return _FLOAT_FMT % value


def results_to_frame(results) -> pd.DataFrame:
    records = []
    for r in sorted(results, key=_result_sort_key):
        c = r.condition
        records.append(
            {
                "design": c.design_name,
                "n": c.n_obs,
                "error_level": c.error_level,
                "Distribution": c.distribution,
                "Residual Pattern": c.residual_pattern,
                "cross_loading": c.cross_loading,
                "seed": c.seed,
                "rep": r.rep,
                "status_seq": r.status_seq,
                "status_trad": r.status_trad,
                "rmse_seq": r.rmse_seq,
                "rmse_trad": r.rmse_trad,
                "r_seq": r.r_seq,
                "r_trad": r.r_trad,
                "bartlett_gap": r.bartlett_gap,
                "checksum": r.data_checksum,
                "wall_time": r.wall_time,
                "notes": r.notes,
            }
        )
    return pd.DataFrame.from_records(records)


def emit_reports(table: SummaryTable, out_dir, formats=("csv", "md"),
                 raw_results=None) -> list[str]:
    """Write summary tables (and optionally raw per-replication data and
    plot-ready RMSE distributions) under out_dir. Returns paths written.

    The RMSE summary reproduces the appendix layout exactly:
    n, Distribution, Residual Pattern, Sequential RMSE, Traditional RMSE.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    rmse_frame = pd.DataFrame(
        {
            "n": [row.n_obs for row in table.rows],
            "Distribution": [row.distribution for row in table.rows],
            "Residual Pattern": [row.residual_pattern for row in table.rows],
            "Sequential RMSE": [row.mean_rmse_seq for row in table.rows],
            "Traditional RMSE": [row.mean_rmse_trad for row in table.rows],
        }
    )
    pearson_frame = pd.DataFrame(
        {
            "n": [row.n_obs for row in table.rows],
            "Distribution": [row.distribution for row in table.rows],
            "Residual Pattern": [row.residual_pattern for row in table.rows],
            "Sequential r": [row.mean_r_seq for row in table.rows],
            "Traditional r": [row.mean_r_trad for row in table.rows],
        }
    )
    convergence_frame = pd.DataFrame(
        {
            "n": [row.n_obs for row in table.rows],
            "Distribution": [row.distribution for row in table.rows],
            "Residual Pattern": [row.residual_pattern for row in table.rows],
            "Sequential Converged": [row.converged_seq for row in table.rows],
            "Traditional Converged": [row.converged_trad for row in table.rows],
            "Replications": [row.n_reps for row in table.rows],
        }
    )
    tests_records = []
    for name, test in (("RMSE", table.rmse_test), ("Pearson r", table.r_test)):
        if test is not None:
            tests_records.append(
                {
                    "metric": name,
                    "mean_diff": test.mean_diff,
                    "ci_low": test.ci_low,
                    "ci_high": test.ci_high,
                    "t": test.t_stat,
                    "df": test.df,
                    "p": test.p_value,
                }
            )
    tests_frame = pd.DataFrame.from_records(
        tests_records,
        columns=["metric", "mean_diff", "ci_low", "ci_high", "t", "df", "p"],
    )

    if "csv" in formats:
        for name, frame in (
            ("summary_rmse.csv", rmse_frame),
            ("summary_pearson.csv", pearson_frame),
            ("convergence.csv", convergence_frame),
            ("paired_tests.csv", tests_frame),
        ):
            path = os.path.join(out_dir, name)
            frame.to_csv(path, index=False, float_format=_FLOAT_FMT)
            written.append(path)

    if "md" in formats:
        path = os.path.join(out_dir, "summary.md")
        lines = ["# Simulation summary", ""]
        lines.append("| n | Distribution | Residual Pattern | Sequential RMSE | Traditional RMSE | Sequential r | Traditional r | Converged (seq/trad/reps) |")
        lines.append("|---|---|---|---|---|---|---|---|")
        for row in table.rows:
            lines.append(
                f"| {row.n_obs} | {row.distribution} | {row.residual_pattern} "
                f"| {_fmt(row.mean_rmse_seq)} | {_fmt(row.mean_rmse_trad)} "
                f"| {_fmt(row.mean_r_seq)} | {_fmt(row.mean_r_trad)} "
                f"| {row.converged_seq}/{row.converged_trad}/{row.n_reps} |"
            )
        lines.append("")
        lines.append(f"Replications: {table.n_results}; both converged: {table.n_pairs}.")
        for name, test in (("RMSE", table.rmse_test), ("Pearson r", table.r_test)):
            if test is None:
                lines.append(f"Paired test on {name}: not available.")
            else:
                lines.append(
                    f"Paired test on {name} (sequential minus traditional): "
                    f"mean {_fmt(test.mean_diff)}, "
                    f"95% CI [{_fmt(test.ci_low)}, {_fmt(test.ci_high)}], "
                    f"t = {_fmt(test.t_stat)}, df = {test.df}, p = {_fmt(test.p_value)}."
                )
        for note in table.notes:
            lines.append(f"Note: {note}.")
        with open(path, "w", newline="\n") as handle:
            handle.write("\n".join(lines) + "\n")
        written.append(path)

    if raw_results is not None:
        path = os.path.join(out_dir, "raw_results.csv")
        results_to_frame(raw_results).to_csv(path, index=False, float_format=_FLOAT_FMT)
        written.append(path)

        converged = FitStatus.CONVERGED.value
        records = []
        for r in sorted(raw_results, key=_result_sort_key):
            if r.status_seq == converged:
                records.append({"method": "Sequential",
                                "data-type": r.condition.distribution,
                                "rmse": r.rmse_seq})
            if r.status_trad == converged:
                records.append({"method": "Traditional",
                                "data-type": r.condition.distribution,
                                "rmse": r.rmse_trad})
        dist_frame = pd.DataFrame.from_records(
            records, columns=["method", "data-type", "rmse"]
        )
        path = os.path.join(out_dir, "rmse_distributions.csv")
        dist_frame.to_csv(path, index=False, float_format=_FLOAT_FMT)
        written.append(path)

    return written


@dataclass(frozen=True)
class YearReport:
    year: object
    n_obs: int
    status_traditional: str
    stage_statuses: tuple[str, ...]
    indices_by_stage: tuple
    omega_final: dict | None
    score_vs_mean_index_r: float | None
    notes: str = ""


@dataclass(frozen=True)
class ValidationReport:
    spec: ModelSpec
    years: tuple[YearReport, ...]

    def to_frame(self) -> pd.DataFrame:
        """Year-by-year fit summary in the layout of the validation
        tables: one row per year with final-stage indices and omega."""
        records = []
        for yr in self.years:
            final = yr.indices_by_stage[-1] if yr.indices_by_stage else None
            omega = None
            if yr.omega_final:
                omega = float(np.mean(list(yr.omega_final.values())))
            records.append(
                {
                    "Year": yr.year,
                    "N": yr.n_obs,
                    "Traditional Status": yr.status_traditional,
                    "Sequential Status": "Converged"
                    if yr.stage_statuses
                    and all(s == "Converged" for s in yr.stage_statuses)
                    else (yr.stage_statuses[-1] if yr.stage_statuses else "NotRun"),
                    "ChiSq": final.chi_square if final else None,
                    "df": final.df if final else None,
                    "CFI": final.cfi if final else None,
                    "TLI": final.tli if final else None,
                    "RMSEA": final.rmsea if final else None,
                    "SRMR": final.srmr if final else None,
                    "Омega".replace("О", "O"): omega,
                    "r(score, mean index)": yr.score_vs_mean_index_r,
                }
            )
        return pd.DataFrame.from_records(records)


def validate_pipeline(panel, spec: ModelSpec, options: FitOptions | None = None) -> ValidationReport:
    """Fit each year group independently, the way the index validation
    workflow does: attempt the simultaneous fit for the record, run the
    stagewise pipeline, and put an arithmetic mean index beside the
    final scores for comparison.

    A flat spec is handled as the degenerate single-stage pipeline (the
    published index data starts at subfactor level, so its CFA has one
    stage). Per-year failures are recorded; only all years failing
    everything raises.
    """
    options = options or FitOptions()
    years = []
    converged = FitStatus.CONVERGED.value
    for year, data in panel.groups.items():
        notes = []
        if spec.levels >= 2:
            try:
                trad = fit_traditional(spec, data, options)
                status_trad = trad.status.value
                if trad.message:
                    notes.append(f"traditional: {trad.message}")
            except ValueError as err:
                status_trad = FitStatus.NONCONVERGED.value
                notes.append(f"traditional: {err}")
        else:
            status_trad = "NotApplicable"

        stage_fits = []
        stage_statuses = []
        final_scores = None
        final_input = None
        try:
            if spec.levels == 1:
                fit = fit_cfa(spec, data, options)
                stage_fits = [fit]
                stage_statuses = [fit.status.value]
                if fit.status is FitStatus.CONVERGED:
                    final_scores = compute_scores(fit, data)
                    final_input = data.subset(spec.variable_names)
                elif fit.message:
                    notes.append(f"stage 1: {fit.message}")
            else:
                seq = fit_sequential(spec, data, options)
                stage_fits = list(seq.stage_fits)
                stage_statuses = [f.status.value for f in seq.stage_fits]
                final_scores = seq.final_scores
                last_fit = seq.stage_fits[-1]
                final_input = DataMatrix(
                    np.column_stack(
                        [
                            (col - col.mean()) / col.std(ddof=1)
                            for col in [
                                seq.stage_scores[-2].values[:, j]
                                for j in range(seq.stage_scores[-2].values.shape[1])
                            ]
                        ]
                    ),
                    last_fit.item_names,
                ) if len(stage_fits) >= 2 else None
        except SequentialStageError as err:
            stage_statuses = stage_statuses or []
            stage_statuses.append(err.status or FitStatus.NONCONVERGED.value)
            notes.append(str(err))
        except ValueError as err:
            stage_statuses.append(FitStatus.NONCONVERGED.value)
            notes.append(str(err))

        blocks = []
        for f in stage_fits:
            if f.status is FitStatus.CONVERGED and f.sample_cov is not None:
                blocks.append(fit_indices(f, f.sample_cov))
        omega = None
        if stage_fits and stage_fits[-1].status is FitStatus.CONVERGED:
            omega = omega_per_factor(stage_fits[-1])

        r_index = None
        if final_scores is not None and final_input is not None:
            index = mean_index(final_input)
            try:
                r_index = pearson_r(final_scores.values[:, 0], index)
            except ValueError:
                notes.append("mean-index comparison degenerate")

        years.append(
            YearReport(
                year=year,
                n_obs=data.n_obs,
                status_traditional=status_trad,
                stage_statuses=tuple(stage_statuses),
                indices_by_stage=tuple(blocks),
                omega_final=omega,
                score_vs_mean_index_r=r_index,
                notes="; ".join(notes),
            )
        )

    if years and all(
        yr.status_traditional != converged
        and not any(s == converged for s in yr.stage_statuses)
        for yr in years
    ):
        raise AllReplicationsFailedError("every year failed both estimation routes")
    return ValidationReport(spec=spec, years=tuple(years))
