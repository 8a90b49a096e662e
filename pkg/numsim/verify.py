"""
Statistical verification of the simulated ensemble.

Every check reduces the per-path summary columns of an `EnsembleState` to a
`TestReport` with a statistic, a threshold and a verdict; a check passes iff
its statistic does not exceed its threshold (stays below it, for the checks
that demand a strict margin).  Checks whose premise fails in the simulated
market (a zero growth rate makes the time of the minimum meaningless) return
a refusal instead of raising.

Thresholds are engineering choices: 1% critical values and three standard
errors.
"""
from enum import Enum
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy import stats

from numsim.battery import payoff
from numsim.enlarge import ConditionedEnsemble, Estimate
from numsim.market import MarketSpec
from numsim.state import EnsembleState
from numsim.validation import ValidationError

logger = logging.getLogger(__name__)

# asymptotic 1% critical value of the Kolmogorov-Smirnov statistic times sqrt(N)
KS_CRITICAL = 1.63
SE_BAND = 3.0
# two-sided 99% normal quantile
CI_QUANTILE = 2.576
SHORT_POSITION_TOLERANCE = 1e-10

ALL_TESTS = (
    'uniform_minimum',
    'mean_minimum',
    'supermartingale_at_rho',
    'strict_loss_at_rho',
    'doob_calibration',
    'stopped_price_martingale',
    'optional_sampling_identity',
    'short_position_identity',
    'hitting_probability',
    'hitting_level',
    'alternative_deflator',
    'alternative_deflator_distinct',
)


class Verdict(Enum):
    passed = 'pass'
    failed = 'fail'
    refused = 'refused'


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class TestReport(object):
    """Outcome of one statistical check."""

    __test__ = False

    name: str
    statistic: float
    threshold: float
    n_paths: int
    truncated_fraction: float
    verdict: Verdict
    details: str
    metrics: Dict[str, float] = attr.ib(factory=dict)

    @classmethod
    def judge(
        cls,
        name: str,
        statistic: float,
        threshold: float,
        ensemble: EnsembleState,
        details: str,
        strict: bool = False,
        **metrics: float,
    ) -> 'TestReport':
        """Pass iff ``statistic <= threshold``, or ``<`` when ``strict``."""
        passed = statistic < threshold if strict else statistic <= threshold
        verdict = Verdict.passed if passed else Verdict.failed
        report = cls(
            name=name,
            statistic=float(statistic),
            threshold=float(threshold),
            n_paths=ensemble.n_paths,
            truncated_fraction=truncated_fraction(ensemble),
            verdict=verdict,
            details=details,
            metrics={key: float(value) for key, value in metrics.items()},
        )
        logger.info('%s: %s (%r vs %r)', name, verdict.value, report.statistic, report.threshold)
        return report

    @classmethod
    def refuse(cls, name: str, ensemble: EnsembleState, reason: str) -> 'TestReport':
        logger.info('%s: refused, %s', name, reason)
        return cls(
            name=name,
            statistic=float('nan'),
            threshold=float('nan'),
            n_paths=ensemble.n_paths,
            truncated_fraction=truncated_fraction(ensemble),
            verdict=Verdict.refused,
            details=reason,
        )

    def as_dict(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'verdict': self.verdict.value,
            'statistic': self.statistic,
            'threshold': self.threshold,
            'n_paths': self.n_paths,
            'truncated_fraction': self.truncated_fraction,
            'details': self.details,
            'metrics': dict(sorted(self.metrics.items())),
        }


@attr.s(auto_attribs=True, frozen=True)
class AlternativeDeflatorSpec(object):
    """Loading ``nu`` of the extra exponential factor of ``L = Y E(int nu^T dW)``.

    ``L S`` stays drift free only if ``sigma nu = 0``, which needs more
    drivers than assets.
    """

    nu: np.ndarray = attr.ib(converter=lambda value: np.asarray(value, dtype=np.float64).ravel())

    def market(self, spec: MarketSpec) -> MarketSpec:
        """Return ``spec`` with enough drivers for ``nu``, checking ``sigma nu = 0``."""
        if self.nu.size < spec.m:
            raise ValidationError(
                f'nu has {self.nu.size} entries but the market has {spec.m} drivers', 'alt_nu'
            )
        padded = spec.with_drivers(self.nu.size)
        exposure = padded.sigma @ self.nu
        scale = max(float(np.abs(padded.sigma).max()) * float(np.abs(self.nu).max()), 1.0)
        if np.abs(exposure).max() > 1e-12 * scale:
            raise ValidationError(
                f'sigma nu must vanish for L S to be drift free, got {exposure.tolist()}', 'alt_nu'
            )
        return padded


def truncated_fraction(ensemble: EnsembleState) -> float:
    if 'truncated' not in ensemble or ensemble.n_paths == 0:
        return 0.0
    return float(np.mean(ensemble['truncated']))


def _zscore(difference: float, se: float) -> float:
    if se > 0:
        return difference / se
    if difference == 0:
        return 0.0
    return float(np.copysign(np.inf, difference))


def _no_minimum(growth_rate: float) -> Optional[str]:
    if growth_rate <= 0:
        return 'zero growth rate: the overall minimum of the numeraire portfolio is degenerate'
    return None


def _time_index(times: Sequence[float], t: float) -> int:
    for index, value in enumerate(times):
        if abs(value - t) <= 1e-12 * max(1.0, abs(t)):
            return index
    raise ValidationError(f'time {t} is not an observation time of the ensemble', 't')


def test_uniform_minimum(
    ensemble: EnsembleState, growth_rate: float, bridge_correction: bool = True
) -> TestReport:
    """Kolmogorov-Smirnov test of the corrected overall minimum against Uniform(0, 1).

    The grid minimum can only overshoot the true one; its KS distance and
    mean are reported next to the corrected statistic.
    """
    name = 'uniform_minimum'
    reason = _no_minimum(growth_rate)
    if reason:
        return TestReport.refuse(name, ensemble, reason)
    if not bridge_correction:
        return TestReport.refuse(name, ensemble, 'grid minima are biased upward without bridge')

    n = ensemble.n_paths
    result = stats.kstest(ensemble['i_inf_corrected'], 'uniform')
    raw = stats.kstest(ensemble['i_inf_raw'], 'uniform')
    return TestReport.judge(
        name,
        result.statistic,
        KS_CRITICAL / np.sqrt(n),
        ensemble,
        'KS distance of the corrected minimum to Uniform(0, 1)',
        pvalue=result.pvalue,
        raw_statistic=raw.statistic,
        raw_mean=float(np.mean(ensemble['i_inf_raw'])),
    )


def test_mean_minimum(ensemble: EnsembleState, growth_rate: float) -> TestReport:
    name = 'mean_minimum'
    reason = _no_minimum(growth_rate)
    if reason:
        return TestReport.refuse(name, ensemble, reason)
    n = ensemble.n_paths
    mean = float(np.mean(ensemble['i_inf_corrected']))
    return TestReport.judge(
        name,
        abs(mean - 0.5),
        SE_BAND / np.sqrt(12 * n),
        ensemble,
        'mean of the corrected minimum against 1/2',
        mean=mean,
    )


def _admissible(ensemble: EnsembleState, strategy: str) -> bool:
    key = f'admissible/{strategy}'
    return key not in ensemble or bool(np.all(ensemble[key]))


def test_supermartingale_at_rho(ensemble: EnsembleState, growth_rate: float) -> List[TestReport]:
    """Check E[X(rho)] <= X(0) for every tracked strategy.

    The numeraire portfolio is also checked two-sided against 1/2, since
    its value at rho is the uniformly distributed minimum.
    """
    reports = []
    reason = _no_minimum(growth_rate)
    strategies = ensemble.names('wealth_at_rho')
    if reason:
        return [
            TestReport.refuse(f'supermartingale_at_rho/{strategy}', ensemble, reason)
            for strategy in strategies
        ]

    for strategy in strategies:
        name = f'supermartingale_at_rho/{strategy}'
        if not _admissible(ensemble, strategy):
            reports.append(
                TestReport.refuse(name, ensemble, f'strategy {strategy} has negative wealth')
            )
            continue
        estimate = Estimate.of(ensemble[f'wealth_at_rho/{strategy}'])
        x0 = float(np.mean(ensemble[f'initial_wealth/{strategy}']))
        reports.append(
            TestReport.judge(
                name,
                _zscore(estimate.mean - x0, estimate.se),
                SE_BAND,
                ensemble,
                f'one-sided z-score of mean X(rho) against X(0) = {x0!r}',
                mean=estimate.mean,
                se=estimate.se,
                initial_wealth=x0,
            )
        )

        if strategy == 'numeraire':
            reports.append(
                TestReport.judge(
                    'supermartingale_at_rho/numeraire_uniform_mean',
                    abs(_zscore(estimate.mean - 0.5, estimate.se)),
                    SE_BAND,
                    ensemble,
                    'two-sided z-score of mean X^(rho) against 1/2',
                    mean=estimate.mean,
                    se=estimate.se,
                )
            )
    return reports


def test_strict_loss_at_rho(
    ensemble: EnsembleState, growth_rate: float, strategy: str = 'buy_and_hold'
) -> TestReport:
    """Check that a strategy loses strictly in mean when stopped at rho (z < -3)."""
    name = f'strict_loss_at_rho/{strategy}'
    reason = _no_minimum(growth_rate)
    if reason:
        return TestReport.refuse(name, ensemble, reason)
    estimate = Estimate.of(ensemble[f'wealth_at_rho/{strategy}'])
    x0 = float(np.mean(ensemble[f'initial_wealth/{strategy}']))
    return TestReport.judge(
        name,
        _zscore(estimate.mean - x0, estimate.se),
        -SE_BAND,
        ensemble,
        f'z-score of mean X(rho) below X(0) = {x0!r}',
        strict=True,
        mean=estimate.mean,
        se=estimate.se,
    )


@attr.s(auto_attribs=True, frozen=True)
class CalibrationBin(object):
    lower: float
    upper: float
    count: int
    mean_predictor: float
    frequency: float


def calibration_bins(
    predictor: np.ndarray, indicator: np.ndarray, bins: int = 20, min_count: int = 100
) -> Tuple[CalibrationBin, ...]:
    """Bin paths by predictor into equal-width bins on [0, 1].

    Consecutive bins are merged from the left until each holds at least
    ``min_count`` paths; a short remainder joins the last merged bin.
    """
    predictor = np.asarray(predictor, dtype=np.float64)
    indicator = np.asarray(indicator, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    index = np.clip(np.searchsorted(edges, predictor, side='right') - 1, 0, bins - 1)
    counts = np.bincount(index, minlength=bins)

    groups: List[List[int]] = []
    current: List[int] = []
    current_count = 0
    for b in range(bins):
        if counts[b] == 0:
            continue
        current.append(b)
        current_count += counts[b]
        if current_count >= min_count:
            groups.append(current)
            current, current_count = [], 0
    if current:
        if groups:
            groups[-1].extend(current)
        else:
            groups.append(current)

    result = []
    for group in groups:
        mask = np.isin(index, group)
        result.append(
            CalibrationBin(
                lower=float(edges[group[0]]),
                upper=float(edges[group[-1] + 1]),
                count=int(mask.sum()),
                mean_predictor=float(predictor[mask].mean()),
                frequency=float(indicator[mask].mean()),
            )
        )
    return tuple(result)


def test_doob_calibration(
    ensemble: EnsembleState,
    times: Sequence[float],
    t: float,
    growth_rate: float,
    bins: int = 20,
    min_count: int = 100,
    tolerance: float = 0.01,
) -> TestReport:
    """Compare the frequency of {rho > t} with the mean of I(t) Y(t) per predictor bin."""
    name = 'doob_calibration'
    reason = _no_minimum(growth_rate)
    if reason:
        return TestReport.refuse(name, ensemble, reason)
    column = _time_index(times, t)
    groups = calibration_bins(
        ensemble['obs/predictor'][:, column], ensemble['obs/rho_after'][:, column], bins, min_count
    )
    deviation = max(abs(g.frequency - g.mean_predictor) for g in groups)
    return TestReport.judge(
        name,
        deviation,
        tolerance,
        ensemble,
        f'largest bin deviation of P[rho > {t!r}] from I(t)Y(t) over {len(groups)} bins',
        bins=len(groups),
    )


def test_stopped_price_martingale(
    ensemble: EnsembleState,
    times: Sequence[float],
    s: float,
    t: float,
    f: str,
    event: str,
    growth_rate: float,
) -> TestReport:
    """Check E[S^rho(t) f(U(rho)) 1_B 1{rho > s}] = E[S^rho(s) f(U(rho)) 1_B 1{rho > s}].

    The statistic is the absolute mean paired difference of the asset with
    the largest z-score; the unrestricted form without ``1{rho > s}`` is
    reported in the metrics.  With a zero growth rate rho is 0 and ``U``
    vanishes, so the check compares the unstopped prices ``S(t)`` and
    ``S(s)`` weighted by ``f(0) 1_B``.
    """
    name = f'stopped_price_martingale/t={t!r}/f={f}/B={event}'
    if s > t:
        raise ValidationError(f'martingale test needs s <= t, got s={s}, t={t}', 's')
    s_col = _time_index(times, s)
    t_col = _time_index(times, t)
    degenerate = growth_rate <= 0
    prices = ensemble['obs/s' if degenerate else 'obs/s_stopped']
    weight = payoff(f)(1.0 - ensemble['i_inf_corrected']) * ensemble[f'event/{event}']
    difference = (prices[:, t_col, :] - prices[:, s_col, :]) * weight[:, None]
    if degenerate:
        restricted = difference
    else:
        restricted = difference * ensemble['obs/rho_after'][:, s_col, None]

    best: Tuple[float, float, float] = (-1.0, 0.0, 0.0)
    unrestricted_z = 0.0
    for asset in range(prices.shape[2]):
        estimate = Estimate.of(restricted[:, asset])
        z = abs(_zscore(estimate.mean, estimate.se))
        if z > best[0]:
            best = (z, abs(estimate.mean), SE_BAND * estimate.se)
        full = Estimate.of(difference[:, asset])
        unrestricted_z = max(unrestricted_z, abs(_zscore(full.mean, full.se)))

    z, statistic, threshold = best
    return TestReport.judge(
        name,
        statistic,
        threshold,
        ensemble,
        f'paired difference of the stopped prices between s={s!r} and t={t!r}',
        z=z,
        unrestricted_z=unrestricted_z,
    )


def test_optional_sampling_identity(
    ensemble: EnsembleState, functional: str, growth_rate: float
) -> TestReport:
    """Compare three estimators of E[V(rho)] for an optional functional ``V``.

    (i) V at rho, (ii) the Stieltjes sum of V Y dU and (iii) the u-grid
    average of E_u[V(eta_u)].  The statistic is the largest pairwise gap in
    units of the summed 99% half-widths.
    """
    name = f'optional_sampling_identity/{functional}'
    reason = _no_minimum(growth_rate)
    if reason:
        return TestReport.refuse(name, ensemble, reason)
    key = f'functional/{functional}'
    estimates = {
        label: Estimate.of(ensemble[f'{key}/{label}'])
        for label in ('at_rho', 'stieltjes', 'at_eta')
    }
    labels = list(estimates)
    statistic = 0.0
    for i, first in enumerate(labels):
        for second in labels[i + 1 :]:
            a, b = estimates[first], estimates[second]
            width = CI_QUANTILE * (a.se + b.se)
            statistic = max(statistic, abs(_zscore(a.mean - b.mean, width)))
    metrics = {f'{label}_mean': e.mean for label, e in estimates.items()}
    metrics.update({f'{label}_se': e.se for label, e in estimates.items()})
    return TestReport.judge(
        name,
        statistic,
        1.0,
        ensemble,
        'largest pairwise estimator gap over the summed 99% half-widths',
        **metrics,
    )


def test_short_position_identity(ensemble: EnsembleState) -> TestReport:
    """Median of |X(rho) X^(rho) exp(g rho) - 1| over paths."""
    residual = np.abs(ensemble['short_residual'])
    return TestReport.judge(
        'short_position_identity',
        float(np.median(residual)),
        SHORT_POSITION_TOLERANCE,
        ensemble,
        'median relative residual of the relative short position at rho',
        max_residual=float(residual.max()),
    )


def test_hitting_probability(
    ensemble: EnsembleState, levels: Sequence[float], growth_rate: float
) -> List[TestReport]:
    """Check P[eta_u < inf] = 1 - u within three standard errors for each level."""
    reports = []
    hits = ensemble['levels/hit']
    undetermined = ensemble['levels/undetermined']
    n = ensemble.n_paths
    for column, u in enumerate(levels):
        name = f'hitting_probability/u={u!r}'
        reason = _no_minimum(growth_rate)
        if reason:
            reports.append(TestReport.refuse(name, ensemble, reason))
            continue
        frequency = float(np.mean(hits[:, column]))
        se = float(np.sqrt(u * (1 - u) / n))
        reports.append(
            TestReport.judge(
                name,
                abs(_zscore(frequency - (1 - u), se)),
                SE_BAND,
                ensemble,
                f'z-score of the hit frequency against {1 - u!r}',
                frequency=frequency,
                undetermined_fraction=float(np.mean(undetermined[:, column])),
            )
        )
    return reports


def test_hitting_level(
    ensemble: EnsembleState, levels: Sequence[float], growth_rate: float, dt: float
) -> List[TestReport]:
    """Check E_u[U(eta_u)] = u up to the grid tolerance 2 |lambda| sqrt(dt)."""
    reports = []
    hits = ensemble['levels/hit']
    u_at_eta = ensemble['levels/u_at_eta']
    tolerance = 2.0 * np.sqrt(growth_rate * dt)
    for column, u in enumerate(levels):
        name = f'hitting_level/u={u!r}'
        reason = _no_minimum(growth_rate)
        if reason:
            reports.append(TestReport.refuse(name, ensemble, reason))
            continue
        conditioned = ConditionedEnsemble.from_hits(hits[:, column], u)
        if conditioned.degenerate:
            reports.append(TestReport.refuse(name, ensemble, f'no path reached u={u!r}'))
            continue
        conditional = conditioned.conditional_mean(u_at_eta[:, column])
        weighted = conditioned.weighted_mean(u_at_eta[:, column])
        normalization = conditioned.weighted_mean(np.ones(ensemble.n_paths))
        reports.append(
            TestReport.judge(
                name,
                abs(conditional.mean - u),
                tolerance,
                ensemble,
                'distance of the mean of U at the hitting time from the level',
                conditional_mean=conditional.mean,
                weighted_mean=weighted.mean,
                normalization=normalization.mean,
                members=conditioned.members.size,
            )
        )
    return reports


def test_alternative_deflator(ensemble: EnsembleState) -> List[TestReport]:
    """Check E[X(phi)] <= X(0) at the time phi of the maximum of an alternative deflator."""
    reports = []
    for strategy in ensemble.names('alt/wealth_at_phi'):
        name = f'alternative_deflator/{strategy}'
        if not _admissible(ensemble, strategy):
            reports.append(
                TestReport.refuse(name, ensemble, f'strategy {strategy} has negative wealth')
            )
            continue
        estimate = Estimate.of(ensemble[f'alt/wealth_at_phi/{strategy}'])
        x0 = float(np.mean(ensemble[f'initial_wealth/{strategy}']))
        reports.append(
            TestReport.judge(
                name,
                _zscore(estimate.mean - x0, estimate.se),
                SE_BAND,
                ensemble,
                f'one-sided z-score of mean X(phi) against X(0) = {x0!r}',
                mean=estimate.mean,
                se=estimate.se,
            )
        )
    return reports


def test_alternative_deflator_distinct(ensemble: EnsembleState, dt: float) -> TestReport:
    """Check that phi and rho are more than one step apart on more than half the paths."""
    distinct = np.abs(ensemble['alt/phi'] - ensemble['rho']) > dt * (1 + 1e-9)
    fraction = float(np.mean(distinct))
    return TestReport.judge(
        'alternative_deflator_distinct',
        1.0 - fraction,
        0.5,
        ensemble,
        'share of paths where phi and rho coincide within one step',
        strict=True,
        distinct_fraction=fraction,
    )
