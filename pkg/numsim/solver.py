"""
Ensemble engine.

Paths are simulated in chunks of ``chunk_size`` consecutive path indices.
Each path is reduced to a fixed set of summary columns right away, so that
the memory of a run does not grow with the horizon of its longest path.
Chunks may run on several threads but are always yielded and concatenated
in chunk order, and every path draws from its own streams, so the results
never depend on the thread count.
"""
from concurrent.futures import ThreadPoolExecutor
import logging
from typing import Dict, Iterator, Optional, Tuple

import attr
import numpy as np

from numsim.battery import OptionalFunctional, check_event_name, evaluate_events
from numsim.enlarge import hitting_times, log_floor, u_grid
from numsim.market import MarketSpec, NumeraireStrategy
from numsim.random import PathStreams, chunk_bounds
from numsim.simulate import (
    MaximumRecord,
    MinimumRecord,
    PathBundle,
    RegisteredStrategy,
    SimConfig,
    default_strategies,
    detect_alternative_maximum,
    detect_minimum,
    relative_short_wealth,
    simulate_path,
)
from numsim.validation import ValidationError, context as validation_context

logger = logging.getLogger(__name__)

Columns = Dict[str, np.ndarray]


def _as_tuple(value) -> tuple:
    return tuple(value)


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class SamplingPlan(object):
    """What is recorded on every path besides the minimum record.

    ``times`` are the observation times of the stopped prices and of the
    Doob predictor; events are evaluated at ``s``.
    """

    s: float = 0.5
    times: Tuple[float, ...] = attr.ib(default=(0.5, 1.0, 2.0), converter=_as_tuple)
    events: Tuple[str, ...] = attr.ib(default=('omega',), converter=_as_tuple)
    event_level: float = 0.9
    u_grid_size: int = 64
    hit_levels: Tuple[float, ...] = attr.ib(default=(0.25, 0.5, 0.75), converter=_as_tuple)
    functionals: Tuple[OptionalFunctional, ...] = attr.ib(default=(), converter=_as_tuple)
    strategies: Optional[Tuple[RegisteredStrategy, ...]] = None
    nu: Optional[np.ndarray] = attr.ib(default=None, eq=False)

    @property
    def event_names(self) -> Tuple[str, ...]:
        names = list(self.events)
        for functional in self.functionals:
            if functional.name == 'late_event' and functional.event not in names:
                names.append(functional.event)
        return tuple(names)

    def validate(self, spec: MarketSpec, config: SimConfig) -> None:
        """Check that all observation times lie on the initial grid."""
        for t in (self.s,) + self.times:
            config.grid_index(t)
            if t > config.t_init:
                raise ValidationError(
                    f'observation time {t} lies beyond the initial horizon {config.t_init}', 't'
                )
        for name in self.event_names:
            check_event_name(name, spec.d)


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class EnsembleJob(object):
    """Everything needed to simulate and summarize a range of paths.

    ``spec`` drives the prices while ``strategy`` drives the deflator; they
    only disagree in mutation runs.
    """

    spec: MarketSpec
    strategy: NumeraireStrategy
    config: SimConfig
    plan: SamplingPlan

    @property
    def strategies(self) -> Tuple[RegisteredStrategy, ...]:
        if self.plan.strategies is None:
            return default_strategies(self.spec)
        return self.plan.strategies


def _wealth_at(path: PathBundle, index: int, record: MinimumRecord) -> Columns:
    columns: Columns = {}
    for name, values in path.extra_wealth.items():
        value = values[index]
        if name == 'numeraire':
            # X^(rho) is the overall minimum itself
            value = record.i_inf_corrected
        columns[f'wealth_at_rho/{name}'] = np.float64(value)
        columns[f'initial_wealth/{name}'] = np.float64(values[0])
        columns[f'admissible/{name}'] = np.bool_(
            not np.isnan(values).any() and bool((values >= 0).all())
        )
    return columns


def _stieltjes_weights(path: PathBundle, record: MinimumRecord) -> np.ndarray:
    # d(int Y dU) on each grid decrement of I equals ln(I(t_{k-1}) / I(t_k))
    log_run_min = np.log(path.run_min)
    weights = np.zeros(path.steps + 1)
    weights[1:] = -np.diff(log_run_min)
    return weights


def summarize_path(
    path: PathBundle,
    record: MinimumRecord,
    plan: SamplingPlan,
    config: SimConfig,
    alt_record: Optional[MaximumRecord] = None,
) -> Columns:
    """Reduce one path to its summary columns."""
    columns: Columns = {
        'rho': np.float64(record.rho),
        'rho_index': np.int64(record.rho_index),
        'i_inf_raw': np.float64(record.i_inf_raw),
        'i_inf_corrected': np.float64(record.i_inf_corrected),
        'tail_mass': np.float64(record.tail_mass),
        'truncated': np.bool_(record.truncated),
        'horizon': np.float64(record.horizon),
        'extensions': np.int64(path.extensions),
    }
    columns.update(_wealth_at(path, record.rho_index, record))

    short = relative_short_wealth(path, path.strategy, record)
    columns['short_residual'] = np.float64(short.relative_residual)

    step_minima = record.step_log_minima
    floor = log_floor(path, step_minima)
    indices = np.array([config.grid_index(t) for t in plan.times])
    stopped = np.minimum(indices, record.rho_index)
    columns['obs/s'] = path.s[indices]
    columns['obs/s_stopped'] = path.s[stopped]
    columns['obs/run_min'] = path.run_min[indices]
    columns['obs/predictor'] = np.minimum(np.exp(floor[indices]) * path.yhat[indices], 1.0)
    columns['obs/rho_after'] = record.rho > np.asarray(plan.times)

    s_index = config.grid_index(plan.s)
    events = evaluate_events(
        plan.event_names, path.s[s_index], path.s[0], path.run_min[s_index], plan.event_level
    )
    for name, value in events.items():
        columns[f'event/{name}'] = np.bool_(value)

    grid = u_grid(plan.u_grid_size)
    grid_hits = hitting_times(path, grid, step_minima, config.tail_eps)
    eta = np.array([h.eta_u for h in grid_hits])
    hit = np.array([h.hit for h in grid_hits])
    columns['u_grid/eta'] = eta
    columns['u_grid/hit'] = hit

    level_hits = hitting_times(path, plan.hit_levels, step_minima, config.tail_eps)
    columns['levels/eta'] = np.array([h.eta_u for h in level_hits], dtype=np.float64)
    columns['levels/hit'] = np.array([h.hit for h in level_hits], dtype=bool)
    columns['levels/undetermined'] = np.array([h.undetermined for h in level_hits], dtype=bool)
    columns['levels/u_at_eta'] = np.array([h.u_at_eta for h in level_hits], dtype=np.float64)

    weights = _stieltjes_weights(path, record)
    bridge_term = np.log(record.i_inf_raw / record.i_inf_corrected)
    for functional in plan.functionals:
        key = f'functional/{functional.name}'
        columns[f'{key}/at_rho'] = np.float64(functional.evaluate(record.rho, events))
        decrements = np.flatnonzero(weights)
        stieltjes = functional.evaluate(path.times[decrements], events) @ weights[decrements]
        stieltjes += functional.evaluate(record.rho, events) * bridge_term
        columns[f'{key}/stieltjes'] = np.float64(stieltjes)
        at_eta = np.where(hit, functional.evaluate(eta, events), 0.0) / (1.0 - grid)
        columns[f'{key}/at_eta'] = np.float64(at_eta.mean())

    if alt_record is not None:
        columns['alt/phi'] = np.float64(alt_record.phi)
        columns['alt/phi_index'] = np.int64(alt_record.phi_index)
        columns['alt/truncated'] = np.bool_(alt_record.truncated)
        for name, values in path.extra_wealth.items():
            columns[f'alt/wealth_at_phi/{name}'] = np.float64(values[alt_record.phi_index])
    return columns


def simulate_and_summarize(job: EnsembleJob, path_index: int) -> Columns:
    streams = PathStreams.create(job.config.seed, path_index)
    path = simulate_path(
        job.spec,
        job.strategy,
        job.config,
        path_index,
        nu=job.plan.nu,
        strategies=job.strategies,
        streams=streams,
    )
    record = detect_minimum(path, job.config, streams.bridge)
    alt_record = None
    if job.plan.nu is not None:
        alt_record = detect_alternative_maximum(
            path, job.config, streams.bridge, uniforms=record.bridge_uniforms
        )
    return summarize_path(path, record, job.plan, job.config, alt_record)


def simulate_chunk(job: EnsembleJob, bounds: Tuple[int, int]) -> Columns:
    """Simulate the half-open range of path indices ``bounds``."""
    start, stop = bounds
    with validation_context(f'paths {start}-{stop - 1}'):
        summaries = [simulate_and_summarize(job, index) for index in range(start, stop)]
    return {key: np.stack([summary[key] for summary in summaries]) for key in summaries[0]}


def run_iterator(job: EnsembleJob) -> Iterator[Tuple[Tuple[int, int], Columns]]:
    """Simulate all chunks of a job, yielding them in chunk order.

    Chunks are evaluated by a pool of ``config.threads`` workers; the order
    of the yielded chunks is fixed by their index.
    """
    bounds = chunk_bounds(job.config.n_paths, job.config.chunk_size)
    logger.info(
        'simulating %d paths in %d chunks on %d threads',
        job.config.n_paths,
        len(bounds),
        job.config.threads,
    )
    if job.config.threads == 1:
        for chunk in bounds:
            yield chunk, simulate_chunk(job, chunk)
        return

    with ThreadPoolExecutor(max_workers=job.config.threads) as executor:
        for chunk, columns in zip(bounds, executor.map(lambda b: simulate_chunk(job, b), bounds)):
            yield chunk, columns
