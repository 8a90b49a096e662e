"""
Orchestration of a verification run: simulate, summarize, test, report.

`run` returns the process exit code: 0 when every selected check passes or
is refused, 1 when any check fails and 2 on a configuration or runtime
error.  Reports collected before an error are still written.
"""
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
from tqdm import tqdm

from numsim import verify
from numsim.config import ALTERNATIVE_TESTS, RunConfig, format_config
from numsim.market import NumeraireStrategy, check_na1, solve_numeraire_strategy
from numsim.postprocess import emit_plot_data, emit_traces, write_reports
from numsim.random import PathStreams
from numsim.simulate import MinimumRecord, PathBundle, detect_minimum, simulate_path
from numsim.solver import EnsembleJob, run_iterator
from numsim.state import EnsembleState
from numsim.validation import ConfigError, ValidationError, context as validation_context
from numsim.verify import TestReport, Verdict

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

ARCHIVE_FILE = 'ensemble.hdf5'


def simulate_ensemble(job: EnsembleJob, config_text: str, progress: bool = False) -> EnsembleState:
    """Run all chunks of ``job`` and collect them into an `EnsembleState`."""
    chunks = []
    with tqdm(
        desc='Simulating paths',
        unit='path',
        total=job.config.n_paths,
        disable=not progress,
    ) as pbar:
        for (start, stop), columns in run_iterator(job):
            chunks.append(columns)
            pbar.update(stop - start)
    return EnsembleState.from_chunks(config_text, chunks)


def collect_reports(
    ensemble: EnsembleState, run_config: RunConfig, strategy: NumeraireStrategy
) -> List[TestReport]:
    """Run the selected checks on the main ensemble, in a fixed order."""
    v = run_config.verify
    sim = run_config.simulation
    g = strategy.growth_rate
    times = run_config.observation_times
    reports: List[TestReport] = []

    if v.selected('uniform_minimum'):
        reports.append(verify.test_uniform_minimum(ensemble, g, sim.bridge_correction))
    if v.selected('mean_minimum'):
        reports.append(verify.test_mean_minimum(ensemble, g))
    if v.selected('supermartingale_at_rho'):
        reports.extend(verify.test_supermartingale_at_rho(ensemble, g))
    if v.selected('strict_loss_at_rho'):
        reports.append(verify.test_strict_loss_at_rho(ensemble, g))
    if v.selected('doob_calibration'):
        reports.append(
            verify.test_doob_calibration(
                ensemble,
                times,
                v.doob_t,
                g,
                bins=v.bins,
                min_count=v.min_bin_count,
                tolerance=v.calibration_tolerance,
            )
        )
    if v.selected('stopped_price_martingale'):
        for t in v.t:
            for f in v.f:
                for event in v.events:
                    reports.append(
                        verify.test_stopped_price_martingale(ensemble, times, v.s, t, f, event, g)
                    )
    if v.selected('optional_sampling_identity'):
        for functional in v.functionals:
            reports.append(verify.test_optional_sampling_identity(ensemble, functional, g))
    if v.selected('short_position_identity'):
        reports.append(verify.test_short_position_identity(ensemble))
    if v.selected('hitting_probability'):
        reports.extend(verify.test_hitting_probability(ensemble, v.hit_levels, g))
    if v.selected('hitting_level'):
        reports.extend(verify.test_hitting_level(ensemble, v.hit_levels, g, sim.dt))
    return reports


def collect_alternative_reports(
    run_config: RunConfig, progress: bool = False
) -> Tuple[List[TestReport], Optional[EnsembleState]]:
    """Simulate the incomplete-market ensemble and check the time of the maximum of L."""
    v = run_config.verify
    alternative = run_config.alternative()
    if alternative is None or not any(v.selected(t) for t in ALTERNATIVE_TESTS):
        return [], None

    with validation_context('alternative deflator'):
        spec = alternative.market(run_config.market)
        strategy = solve_numeraire_strategy(spec)
        job = EnsembleJob(
            spec=spec,
            strategy=strategy,
            config=run_config.simulation,
            plan=run_config.sampling_plan(nu=alternative.nu),
        )
        ensemble = simulate_ensemble(job, format_config(run_config), progress)

    reports: List[TestReport] = []
    if v.selected('alternative_deflator'):
        reports.extend(verify.test_alternative_deflator(ensemble))
    if v.selected('alternative_deflator_distinct'):
        dt = run_config.simulation.dt
        reports.append(verify.test_alternative_deflator_distinct(ensemble, dt))
    return reports, ensemble


def sample_paths(
    job: EnsembleJob, count: int
) -> List[Tuple[int, PathBundle, MinimumRecord]]:
    """Re-simulate the first ``count`` paths of a job with their records."""
    samples = []
    for index in range(min(count, job.config.n_paths)):
        streams = PathStreams.create(job.config.seed, index)
        path = simulate_path(
            job.spec,
            job.strategy,
            job.config,
            index,
            strategies=job.strategies,
            streams=streams,
        )
        samples.append((index, path, detect_minimum(path, job.config, streams.bridge)))
    return samples


def exit_code(reports: Sequence[TestReport]) -> int:
    if any(report.verdict is Verdict.failed for report in reports):
        return EXIT_FAIL
    return EXIT_PASS


def run(run_config: RunConfig, progress: bool = False) -> int:
    """Execute a full verification run and return its exit code."""
    directory = Path(run_config.output.directory)
    formats = run_config.output.formats
    reports: List[TestReport] = []
    try:
        viability = check_na1(run_config.market)
        logger.info('viability: %s', viability.diagnostics)
        strategy = solve_numeraire_strategy(run_config.market)

        price_spec = run_config.market
        if run_config.verify.mutate_drift_sign:
            logger.warning('mutation run: prices are simulated with the drift sign flipped')
            price_spec = price_spec.with_drift(-price_spec.mu)

        job = EnsembleJob(
            spec=price_spec,
            strategy=strategy,
            config=run_config.simulation,
            plan=run_config.sampling_plan(),
        )
        with validation_context('simulation'):
            ensemble = simulate_ensemble(job, format_config(run_config), progress)

        directory.mkdir(parents=True, exist_ok=True)
        if run_config.output.archive:
            ensemble.save(directory / ARCHIVE_FILE)

        with validation_context('verification'):
            reports.extend(collect_reports(ensemble, run_config, strategy))
            alt_reports, _ = collect_alternative_reports(run_config, progress)
            reports.extend(alt_reports)

        if 'plot_data' in formats:
            column = run_config.observation_times.index(run_config.verify.doob_t)
            calibration = verify.calibration_bins(
                ensemble['obs/predictor'][:, column],
                ensemble['obs/rho_after'][:, column],
                run_config.verify.bins,
                run_config.verify.min_bin_count,
            )
            samples = sample_paths(job, run_config.output.sample_paths)
            emit_plot_data(
                directory,
                np.asarray(ensemble['i_inf_corrected']),
                calibration,
                samples,
                run_config.output.sample_stride,
            )
        if run_config.output.trace_paths:
            emit_traces(directory, sample_paths(job, run_config.output.trace_paths))

    except (ValidationError, ConfigError, OSError) as e:
        logger.error('run aborted: %s', e)
        if reports:
            write_reports(reports, directory, formats)
        return EXIT_ERROR
    except Exception:
        logger.exception('run aborted by an unexpected error')
        if reports:
            write_reports(reports, directory, formats)
        return EXIT_ERROR

    write_reports(reports, directory, formats)
    for report in reports:
        logger.info('%-60s %s', report.name, report.verdict.value)
    return exit_code(reports)


def with_threads(run_config: RunConfig, threads: Optional[int]) -> RunConfig:
    if threads is None:
        return run_config
    return attr.evolve(run_config, simulation=attr.evolve(run_config.simulation, threads=threads))
