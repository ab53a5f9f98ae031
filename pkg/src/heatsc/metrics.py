"""Estimator evaluation against simulation ground truth, and pooling.

Imputation metrics compare each episode's imputed untreated path (point
estimates plus a 95% band) to the generator's truth. Bias, coverage and
interval length are evaluated on the post window, where the
counterfactual is genuinely missing; fit error is reported for both
windows. Bayesian point estimates are posterior medians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import HeatscError, IncompleteGridError, MisalignmentError


@dataclass(frozen=True)
class EpisodeEvaluation:
    """One episode's imputed paths aligned to its ground truth."""

    pre_estimate: np.ndarray
    post_estimate: np.ndarray
    post_lower: np.ndarray
    post_upper: np.ndarray
    truth_pre: np.ndarray
    truth_post: np.ndarray

    def __post_init__(self) -> None:
        pre = np.asarray(self.pre_estimate, dtype=float)
        post = np.asarray(self.post_estimate, dtype=float)
        if pre.shape != np.asarray(self.truth_pre).shape:
            raise MisalignmentError("pre estimate and truth lengths differ")
        for arr in (self.post_lower, self.post_upper, self.truth_post):
            if np.asarray(arr).shape != post.shape:
                raise MisalignmentError("post paths must share one length")


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    method: str
    abs_avg_bias: float
    rmse_pre: float
    rmse_post: float
    coverage_prob: float
    avg_ci_length: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.coverage_prob <= 1.0:
            raise HeatscError("coverage must lie in [0, 1]")
        if self.rmse_pre < 0 or self.rmse_post < 0:
            raise HeatscError("RMSE must be nonnegative")


def imputation_metrics(
    evaluations: list[EpisodeEvaluation], scenario: str, method: str
) -> MetricsRow:
    """Aggregate cell-level errors across episodes into one table row."""
    if not evaluations:
        raise HeatscError("need at least one evaluation")
    pre_err = np.concatenate(
        [np.asarray(e.pre_estimate) - np.asarray(e.truth_pre) for e in evaluations]
    )
    post_err = np.concatenate(
        [np.asarray(e.post_estimate) - np.asarray(e.truth_post) for e in evaluations]
    )
    lo = np.concatenate([np.asarray(e.post_lower) for e in evaluations])
    hi = np.concatenate([np.asarray(e.post_upper) for e in evaluations])
    truth = np.concatenate([np.asarray(e.truth_post) for e in evaluations])
    covered = (truth >= lo) & (truth <= hi)
    return MetricsRow(
        scenario=scenario,
        method=method,
        abs_avg_bias=float(np.mean(np.abs(post_err))),
        rmse_pre=float(np.sqrt(np.mean(pre_err**2))),
        rmse_post=float(np.sqrt(np.mean(post_err**2))),
        coverage_prob=float(covered.mean()),
        avg_ci_length=float(np.mean(hi - lo)),
    )


@dataclass(frozen=True)
class MetaInput:
    """Per-episode log relative risk and its variance."""

    log_rr: float
    variance: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_rr) or not np.isfinite(self.variance):
            raise HeatscError("meta inputs must be finite")
        if self.variance <= 0.0:
            raise HeatscError("meta input variance must be positive")


@dataclass(frozen=True)
class PooledEffect:
    rr: float
    lower: float
    upper: float
    tau2: float
    k: int
    log_rr: float
    se: float


def dl_meta(inputs: list[MetaInput], level: float = 0.95) -> PooledEffect:
    """Random-effects pooling of log relative risks (DerSimonian-Laird).

    The between-episode variance is the moment estimator
    tau^2 = max(0, (Q - (k-1)) / (sum w - sum w^2 / sum w)) with
    fixed-effect weights w = 1/v; the pooled effect then uses weights
    1/(v + tau^2) with a normal-theory interval, reported on the rate
    ratio scale. A single study is returned as is.
    """
    if not inputs:
        raise HeatscError("need at least one meta input")
    z = float(norm.ppf(0.5 + level / 2.0))
    y = np.array([m.log_rr for m in inputs])
    v = np.array([m.variance for m in inputs])
    k = y.size
    if k == 1:
        se = float(np.sqrt(v[0]))
        return PooledEffect(
            rr=float(np.exp(y[0])),
            lower=float(np.exp(y[0] - z * se)),
            upper=float(np.exp(y[0] + z * se)),
            tau2=0.0, k=1, log_rr=float(y[0]), se=se,
        )
    w = 1.0 / v
    fixed = float((w * y).sum() / w.sum())
    q = float((w * (y - fixed) ** 2).sum())
    c = float(w.sum() - (w**2).sum() / w.sum())
    tau2 = max(0.0, (q - (k - 1)) / c) if c > 0 else 0.0
    w_star = 1.0 / (v + tau2)
    pooled = float((w_star * y).sum() / w_star.sum())
    se = float(1.0 / np.sqrt(w_star.sum()))
    return PooledEffect(
        rr=float(np.exp(pooled)),
        lower=float(np.exp(pooled - z * se)),
        upper=float(np.exp(pooled + z * se)),
        tau2=float(tau2), k=k, log_rr=pooled, se=se,
    )


REPORT_COLUMNS = (
    "scenario", "method", "abs_avg_bias", "rmse_pre",
    "rmse_post", "coverage_prob", "avg_ci_length",
)


@dataclass(frozen=True)
class ScenarioReport:
    rows: tuple[MetricsRow, ...]
    missing: tuple[tuple[str, str], ...] = ()
    csv_text: str = field(default="", repr=False)

    def to_json_obj(self) -> dict:
        return {
            "columns": list(REPORT_COLUMNS),
            "rows": [
                {c: getattr(r, c) for c in REPORT_COLUMNS} for r in self.rows
            ],
            "missing": [list(m) for m in self.missing],
        }


def scenario_report(
    rows: list[MetricsRow],
    scenarios: tuple[str, ...],
    methods: tuple[str, ...],
    strict: bool = False,
) -> ScenarioReport:
    """Order rows into the scenario x method grid and render CSV.

    Missing grid cells are reported (and raise when ``strict``); the
    partial table is still produced.
    """
    by_key = {(r.scenario, r.method): r for r in rows}
    ordered, missing = [], []
    for s in scenarios:
        for m in methods:
            row = by_key.get((s, m))
            if row is None:
                missing.append((s, m))
            else:
                ordered.append(row)
    lines = [",".join(REPORT_COLUMNS)]
    for r in ordered:
        lines.append(
            ",".join(
                [r.scenario, r.method]
                + [repr(getattr(r, c)) for c in REPORT_COLUMNS[2:]]
            )
        )
    report = ScenarioReport(tuple(ordered), tuple(missing), "\n".join(lines) + "\n")
    if missing and strict:
        raise IncompleteGridError(f"missing grid cells: {missing}")
    return report
