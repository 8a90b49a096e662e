import numpy as np
import pytest

from numsim import verify
from numsim.market import MarketSpec, solve_numeraire_strategy
from numsim.simulate import SimConfig
from numsim.solver import EnsembleJob, SamplingPlan, run_iterator
from numsim.state import EnsembleState
from numsim.validation import ValidationError
from numsim.verify import Verdict

# as recorded by the ensembles of conftest.py
OBSERVATION_TIMES = (0.5, 1.0, 2.0)
HIT_LEVELS = (0.25, 0.5, 0.75)
FAST_GROWTH = 1.0


@pytest.fixture
def flat_ensemble(ensemble_factory, flat_market, sim_config):
    yield ensemble_factory(flat_market, sim_config)


def _by_name(reports):
    return {report.name: report for report in reports}


def test_uniform_minimum(ensemble):
    report = verify.test_uniform_minimum(ensemble, FAST_GROWTH)
    assert report.n_paths == 4000
    # one and a half times the 1% critical value
    assert report.statistic < 1.5 * report.threshold
    assert report.metrics['raw_statistic'] > 0


def test_uniform_minimum_without_bridge(ensemble):
    report = verify.test_uniform_minimum(ensemble, FAST_GROWTH, bridge_correction=False)
    assert report.verdict is Verdict.refused


def test_mean_minimum(ensemble):
    report = verify.test_mean_minimum(ensemble, FAST_GROWTH)
    assert report.metrics['mean'] == pytest.approx(0.5, abs=5 / np.sqrt(12 * 4000))


def test_supermartingale_at_rho(ensemble):
    reports = _by_name(verify.test_supermartingale_at_rho(ensemble, FAST_GROWTH))
    assert set(reports) == {
        'supermartingale_at_rho/numeraire',
        'supermartingale_at_rho/numeraire_uniform_mean',
        'supermartingale_at_rho/relative_short',
        'supermartingale_at_rho/cash',
        'supermartingale_at_rho/buy_and_hold',
    }
    numeraire = reports['supermartingale_at_rho/numeraire']
    assert numeraire.metrics['mean'] == pytest.approx(0.5, abs=0.05)
    assert numeraire.statistic < -10
    assert reports['supermartingale_at_rho/numeraire_uniform_mean'].statistic < 5
    assert reports['supermartingale_at_rho/cash'].statistic == 0
    assert reports['supermartingale_at_rho/buy_and_hold'].verdict is Verdict.passed


@pytest.fixture(scope='module')
def default_ensemble():
    # lambda = 0.5; with lambda = 1 the price at rho is too heavy tailed for a mean
    spec = MarketSpec(d=1, m=1, mu=[0.1], sigma=[[0.2]], s0=[1.0])
    config = SimConfig(
        dt=2.0 ** -5,
        t_init=16.0,
        tail_eps=1e-3,
        n_paths=20000,
        seed=31,
        chunk_size=2000,
        threads=4,
    )
    job = EnsembleJob(
        spec=spec,
        strategy=solve_numeraire_strategy(spec),
        config=config,
        plan=SamplingPlan(u_grid_size=4),
    )
    yield EnsembleState.from_chunks('', (columns for _, columns in run_iterator(job)))


def test_strict_loss_at_rho(default_ensemble):
    report = verify.test_strict_loss_at_rho(default_ensemble, 0.25)
    assert report.name == 'strict_loss_at_rho/buy_and_hold'
    assert report.threshold == -3
    assert report.statistic < -1
    assert report.metrics['mean'] < 1


def test_strict_loss_boundary(ensemble):
    report = verify.TestReport.judge('boundary', -3.0, -3.0, ensemble, 'z', strict=True)
    assert report.verdict is Verdict.failed


def test_raw_minimum_biased_upward(ensemble_factory, fast_market):
    config = SimConfig(dt=2.0 ** -3, t_init=4.0, n_paths=2000, seed=5, chunk_size=500)
    coarse = ensemble_factory(fast_market, config)
    report = verify.test_uniform_minimum(coarse, FAST_GROWTH)
    assert report.statistic < report.metrics['raw_statistic']
    assert report.metrics['raw_mean'] > 0.52

    raw = np.sort(coarse['i_inf_raw'])
    assert np.all(raw >= np.sort(coarse['i_inf_corrected']))
    n = raw.size
    below = np.max(raw - np.arange(n) / n)
    above = np.max(np.arange(1, n + 1) / n - raw)
    # the empirical law of the grid minimum lies below the uniform one
    assert below > above


def test_doob_calibration(ensemble):
    report = verify.test_doob_calibration(
        ensemble, OBSERVATION_TIMES, 1.0, FAST_GROWTH, bins=5, min_count=400, tolerance=0.1
    )
    assert report.verdict is Verdict.passed
    assert 1 <= report.metrics['bins'] <= 5


def test_doob_calibration_unknown_time(ensemble):
    with pytest.raises(ValidationError):
        verify.test_doob_calibration(ensemble, OBSERVATION_TIMES, 3.0, FAST_GROWTH)


def test_calibration_bins_single_bin():
    groups = verify.calibration_bins(np.ones(50), np.ones(50))
    assert len(groups) == 1
    assert groups[0].count == 50
    assert groups[0].mean_predictor == 1
    assert groups[0].frequency == 1


def test_calibration_bins_merge():
    predictor = np.concatenate((np.full(150, 0.01), np.full(30, 0.51), np.full(120, 0.99)))
    indicator = np.concatenate((np.zeros(150), np.ones(30), np.zeros(120)))
    groups = verify.calibration_bins(predictor, indicator, bins=20, min_count=100)
    assert [g.count for g in groups] == [150, 150]
    assert groups[1].lower == 0.5
    assert groups[1].upper == 1.0
    assert groups[1].frequency == pytest.approx(0.2)


@pytest.mark.parametrize('f', ['one', 'u', 'upper_half'])
@pytest.mark.parametrize('event', ['omega', 'up', 'low_minimum'])
def test_stopped_price_martingale(ensemble, f, event):
    report = verify.test_stopped_price_martingale(
        ensemble, OBSERVATION_TIMES, 0.5, 2.0, f, event, FAST_GROWTH
    )
    assert report.metrics['z'] < 5


def test_stopped_price_martingale_same_time(ensemble):
    report = verify.test_stopped_price_martingale(
        ensemble, OBSERVATION_TIMES, 0.5, 0.5, 'one', 'omega', FAST_GROWTH
    )
    assert report.statistic == 0
    assert report.verdict is Verdict.passed


def test_stopped_price_martingale_order(ensemble):
    with pytest.raises(ValidationError):
        verify.test_stopped_price_martingale(
            ensemble, OBSERVATION_TIMES, 1.0, 0.5, 'one', 'omega', FAST_GROWTH
        )


@pytest.mark.parametrize('functional', ['one', 'exp_decay', 'late_event'])
def test_optional_sampling_identity(ensemble, functional):
    report = verify.test_optional_sampling_identity(ensemble, functional, FAST_GROWTH)
    assert report.statistic < 2


def test_optional_sampling_constant(ensemble):
    report = verify.test_optional_sampling_identity(ensemble, 'one', FAST_GROWTH)
    assert report.metrics['at_rho_mean'] == 1
    assert report.metrics['stieltjes_mean'] == pytest.approx(1, abs=0.1)
    assert report.metrics['at_eta_mean'] == pytest.approx(1, abs=0.1)


def test_short_position_identity(ensemble):
    report = verify.test_short_position_identity(ensemble)
    assert report.verdict is Verdict.passed
    assert report.metrics['max_residual'] < 1e-9


def test_hitting_probability(ensemble):
    reports = verify.test_hitting_probability(ensemble, HIT_LEVELS, FAST_GROWTH)
    assert [r.name for r in reports] == [f'hitting_probability/u={u!r}' for u in HIT_LEVELS]
    for report in reports:
        assert report.statistic < 5


def test_hitting_level(ensemble):
    reports = verify.test_hitting_level(ensemble, HIT_LEVELS, FAST_GROWTH, 2.0 ** -6)
    for u, report in zip(HIT_LEVELS, reports):
        assert report.verdict is Verdict.passed
        assert report.metrics['conditional_mean'] >= u
        assert report.metrics['normalization'] == pytest.approx(1, abs=0.1)


def test_refusals_without_growth(flat_ensemble):
    reports = [
        verify.test_uniform_minimum(flat_ensemble, 0.0),
        verify.test_mean_minimum(flat_ensemble, 0.0),
        verify.test_strict_loss_at_rho(flat_ensemble, 0.0),
        verify.test_doob_calibration(flat_ensemble, OBSERVATION_TIMES, 1.0, 0.0),
        verify.test_optional_sampling_identity(flat_ensemble, 'one', 0.0),
    ]
    reports.extend(verify.test_supermartingale_at_rho(flat_ensemble, 0.0))
    reports.extend(verify.test_hitting_probability(flat_ensemble, HIT_LEVELS, 0.0))
    reports.extend(verify.test_hitting_level(flat_ensemble, HIT_LEVELS, 0.0, 2.0 ** -6))
    for report in reports:
        assert report.verdict is Verdict.refused
        assert np.isnan(report.statistic)
        assert 'zero growth rate' in report.details


def test_trivial_passes_without_growth(flat_ensemble):
    short = verify.test_short_position_identity(flat_ensemble)
    assert short.verdict is Verdict.passed
    assert short.statistic == 0

    # U vanishes, so f(U) = u weighs every path with 0
    martingale = verify.test_stopped_price_martingale(
        flat_ensemble, OBSERVATION_TIMES, 0.5, 2.0, 'u', 'up', 0.0
    )
    assert martingale.verdict is Verdict.passed
    assert martingale.statistic == 0


def test_plain_martingale_without_growth(flat_ensemble):
    report = verify.test_stopped_price_martingale(
        flat_ensemble, OBSERVATION_TIMES, 0.5, 2.0, 'one', 'omega', 0.0
    )
    # the unstopped prices move, so the comparison is not vacuous
    assert report.threshold > 0
    assert report.metrics['z'] < 5
    assert report.metrics['unrestricted_z'] == report.metrics['z']


def _mutated_ensemble(deflator_market, n_paths, plan_factory):
    config = SimConfig(dt=2.0 ** -6, t_init=4.0, n_paths=n_paths, seed=7, chunk_size=250)
    job = EnsembleJob(
        spec=deflator_market.with_drift([-0.4]),
        strategy=solve_numeraire_strategy(deflator_market),
        config=config,
        plan=plan_factory(),
    )
    return EnsembleState.from_chunks('', (columns for _, columns in run_iterator(job)))


def test_drift_mutation_detected(fast_market, plan_factory):
    mutated = _mutated_ensemble(fast_market, 1000, plan_factory)
    report = verify.test_stopped_price_martingale(
        mutated, OBSERVATION_TIMES, 0.5, 2.0, 'one', 'omega', FAST_GROWTH
    )
    assert report.verdict is Verdict.failed


def test_drift_mutation_detected_without_growth(flat_market, plan_factory):
    mutated = _mutated_ensemble(flat_market, 500, plan_factory)
    assert np.all(mutated['rho'] == 0)
    report = verify.test_stopped_price_martingale(
        mutated, OBSERVATION_TIMES, 0.5, 2.0, 'one', 'omega', 0.0
    )
    assert report.verdict is Verdict.failed
    assert report.metrics['z'] > 10


def test_alternative_deflator(alt_ensemble):
    reports = _by_name(verify.test_alternative_deflator(alt_ensemble))
    assert 'alternative_deflator/numeraire' in reports
    assert reports['alternative_deflator/cash'].statistic == 0
    assert reports['alternative_deflator/numeraire'].statistic < 5


def test_alternative_deflator_distinct(alt_ensemble):
    report = verify.test_alternative_deflator_distinct(alt_ensemble, 2.0 ** -6)
    assert report.metrics['distinct_fraction'] > 0.1
    assert report.statistic == pytest.approx(1 - report.metrics['distinct_fraction'])


@pytest.mark.parametrize(
    'phi,verdict',
    [
        # exactly half the paths are distinct
        ([0.0, 0.0, 2.0, 3.0], Verdict.failed),
        ([0.0, 1.0, 2.0, 3.0], Verdict.passed),
    ],
)
def test_alternative_deflator_distinct_boundary(phi, verdict):
    ensemble = EnsembleState(config='', columns={'rho': np.zeros(4), 'alt/phi': np.array(phi)})
    report = verify.test_alternative_deflator_distinct(ensemble, 0.5)
    assert report.verdict is verdict


def test_alternative_deflator_spec(market):
    padded = verify.AlternativeDeflatorSpec([0.0, 0.3]).market(market)
    assert padded.m == 2
    with pytest.raises(ValidationError):
        verify.AlternativeDeflatorSpec([0.3]).market(market)
    with pytest.raises(ValidationError):
        verify.AlternativeDeflatorSpec([]).market(market)


def test_alternative_deflator_spec_two_assets():
    spec = MarketSpec(d=2, m=2, mu=[0.1, 0.1], sigma=np.diag([0.2, 0.3]), s0=[1.0, 1.0])
    with pytest.raises(ValidationError):
        verify.AlternativeDeflatorSpec([0.1, 0.0, 0.5]).market(spec)
    padded = verify.AlternativeDeflatorSpec([0.0, 0.0, 0.5]).market(spec)
    assert padded.sigma.shape == (2, 3)


def test_report_judgement(ensemble):
    report = verify.TestReport.judge('boundary', 1.0, 1.0, ensemble, 'equal is a pass', x=2)
    assert report.verdict is Verdict.passed
    assert report.as_dict() == {
        'name': 'boundary',
        'verdict': 'pass',
        'statistic': 1.0,
        'threshold': 1.0,
        'n_paths': 4000,
        'truncated_fraction': report.truncated_fraction,
        'details': 'equal is a pass',
        'metrics': {'x': 2.0},
    }
    assert 0 <= report.truncated_fraction < 0.01
