import json
from pathlib import Path

from click.testing import CliRunner
import pytest

from numsim.cli import main

SMALL_RUN = """\
market.d = 1
market.mu = {mu}
market.sigma = 0.4
market.s0 = 1.0
simulation.dt = 0.015625
simulation.t_init = 4.0
simulation.n_paths = {n_paths}
simulation.seed = 5
simulation.chunk_size = 50
verify.tests = {tests}
verify.t = 2.0
verify.f = one
verify.events = omega
verify.mutate_drift_sign = {mutate}
output.directory = {directory}
output.sample_paths = 2
"""


@pytest.fixture
def runner():
    yield CliRunner()


@pytest.fixture
def write_config(tmp_path: Path):
    def write(name='run.txt', mu=0.4, n_paths=200, tests=None, mutate=False, directory='out'):
        text = SMALL_RUN.format(
            mu=mu,
            n_paths=n_paths,
            tests=tests or 'short_position_identity, hitting_level',
            mutate='true' if mutate else 'false',
            directory=tmp_path / directory,
        )
        config_file = tmp_path / name
        config_file.write_text(text)
        return config_file

    yield write


def test_run(runner, write_config, tmp_path):
    result = runner.invoke(main, ['run', str(write_config()), '--no-progress'])
    assert result.exit_code == 0, result.output

    output = tmp_path / 'out'
    reports = json.loads((output / 'reports.json').read_text())
    assert [r['name'] for r in reports][0] == 'short_position_identity'
    assert all(r['verdict'] == 'pass' for r in reports)
    summary = (output / 'summary.csv').read_text().splitlines()
    assert summary[0].startswith('name,verdict,statistic')
    assert len(summary) == len(reports) + 1
    for name in ('cdf_minimum.csv', 'doob_calibration.csv', 'sample_paths.csv'):
        assert (output / name).exists()


def test_run_without_drift(runner, write_config, tmp_path):
    tests = (
        'uniform_minimum, mean_minimum, supermartingale_at_rho, stopped_price_martingale, '
        'short_position_identity, hitting_probability'
    )
    config_file = write_config(mu=0.0, tests=tests)
    result = runner.invoke(main, ['run', str(config_file), '--no-progress'])
    assert result.exit_code == 0, result.output

    reports = json.loads((tmp_path / 'out' / 'reports.json').read_text())
    verdicts = {r['name']: r['verdict'] for r in reports}
    assert verdicts['uniform_minimum'] == 'refused'
    refused = next(r for r in reports if r['name'] == 'uniform_minimum')
    assert refused['statistic'] is None
    assert refused['threshold'] is None
    assert verdicts['short_position_identity'] == 'pass'
    assert verdicts['stopped_price_martingale/t=2.0/f=one/B=omega'] == 'pass'


def test_run_mutation_fails(runner, write_config):
    config_file = write_config(n_paths=1000, tests='stopped_price_martingale', mutate=True)
    result = runner.invoke(main, ['run', str(config_file), '--no-progress'])
    assert result.exit_code == 1, result.output


def test_run_malformed_config(runner, tmp_path):
    config_file = tmp_path / 'bad.txt'
    config_file.write_text('market.d = x\nsimulation.n_paths = 10\n')
    result = runner.invoke(main, ['run', str(config_file), '--no-progress'])
    assert result.exit_code == 2
    assert 'market.d (line 1): type mismatch' in result.output
    assert 'market.sigma (not set): missing required key' in result.output


def test_run_unexpected_error(runner, write_config, monkeypatch):
    def fail(*args, **kwargs):
        raise RuntimeError('broken check')

    monkeypatch.setattr('numsim.experiment.collect_reports', fail)
    result = runner.invoke(main, ['run', str(write_config()), '--no-progress'])
    assert result.exit_code == 2, result.output
    assert not isinstance(result.exception, RuntimeError)


def test_run_missing_file(runner, tmp_path):
    result = runner.invoke(main, ['run', str(tmp_path / 'missing.txt')])
    assert result.exit_code == 2


def test_thread_count_does_not_change_results(runner, write_config, tmp_path):
    tests = 'uniform_minimum, mean_minimum, hitting_probability, short_position_identity'
    single = write_config('single.txt', n_paths=300, tests=tests, directory='single')
    multi = write_config('multi.txt', n_paths=300, tests=tests, directory='multi')

    first = runner.invoke(main, ['run', str(single), '--threads', '1', '--no-progress'])
    second = runner.invoke(main, ['run', str(multi), '--threads', '3', '--no-progress'])
    assert first.exit_code == second.exit_code
    assert first.exit_code in (0, 1), first.output
    for name in ('reports.json', 'summary.csv', 'cdf_minimum.csv', 'sample_paths.csv'):
        assert (tmp_path / 'single' / name).read_bytes() == (tmp_path / 'multi' / name).read_bytes()


def test_validate(runner, write_config):
    result = runner.invoke(main, ['validate', str(write_config())])
    assert result.exit_code == 0, result.output
    assert 'market.m = 1\n' in result.output
    assert 'simulation.dt = 0.015625\n' in result.output
    assert '# NA1 holds' in result.output


def test_validate_no_viability(runner, tmp_path):
    config_file = tmp_path / 'run.txt'
    config_file.write_text(
        'market.d = 1\nmarket.mu = 0.1\nmarket.sigma = 0.0\nmarket.s0 = 1.0\n'
        'simulation.n_paths = 10\nsimulation.seed = 1\n'
    )
    result = runner.invoke(main, ['validate', str(config_file)])
    assert result.exit_code == 0, result.output
    assert '# NoViability' in result.output

    result = runner.invoke(main, ['run', str(config_file), '--no-progress'])
    assert result.exit_code == 2


def test_plots(runner, write_config, tmp_path):
    runner.invoke(main, ['run', str(write_config()), '--no-progress'])
    result = runner.invoke(main, ['plots', str(tmp_path / 'out')])
    assert result.exit_code == 0, result.output
    for name in ('cdf_minimum.png', 'doob_calibration.png', 'sample_paths.png'):
        assert (tmp_path / 'out' / name).stat().st_size > 0


def test_plots_without_data(runner, tmp_path):
    result = runner.invoke(main, ['plots', str(tmp_path)])
    assert result.exit_code == 2
