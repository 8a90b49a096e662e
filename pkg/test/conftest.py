from io import BytesIO

from h5py import File
import numpy as np
from pytest import fixture

from numsim.battery import build_functionals
from numsim.config import SimulationConfig
from numsim.market import MarketSpec, solve_numeraire_strategy
from numsim.simulate import SimConfig
from numsim.solver import EnsembleJob, SamplingPlan, run_iterator
from numsim.state import EnsembleState

OBSERVATION_TIMES = (0.5, 1.0, 2.0)
HIT_LEVELS = (0.25, 0.5, 0.75)
FUNCTIONALS = ('one', 'exp_decay', 'late_event')


@fixture
def base_config():
    yield SimulationConfig()


@fixture
def market():
    # lambda = 0.5, growth rate 0.25
    yield MarketSpec(d=1, m=1, mu=[0.1], sigma=[[0.2]], s0=[1.0])


@fixture
def fast_market():
    # lambda = 1, growth rate 1; the minimum is reached quickly
    yield MarketSpec(d=1, m=1, mu=[0.4], sigma=[[0.4]], s0=[1.0])


@fixture
def flat_market():
    yield MarketSpec(d=1, m=1, mu=[0.0], sigma=[[0.2]], s0=[1.0])


@fixture
def sim_config():
    yield SimConfig(dt=2.0 ** -6, t_init=4.0, n_paths=64, seed=11, chunk_size=16)


def make_plan(**kwargs) -> SamplingPlan:
    options = dict(
        s=0.5,
        times=OBSERVATION_TIMES,
        events=('omega', 'up', 'low_minimum'),
        event_level=0.9,
        u_grid_size=64,
        hit_levels=HIT_LEVELS,
        functionals=tuple(build_functionals(FUNCTIONALS, 0.5, 'up').values()),
    )
    options.update(kwargs)
    return SamplingPlan(**options)


def make_ensemble(spec: MarketSpec, config: SimConfig, **plan_options) -> EnsembleState:
    job = EnsembleJob(
        spec=spec,
        strategy=solve_numeraire_strategy(spec),
        config=config,
        plan=make_plan(**plan_options),
    )
    return EnsembleState.from_chunks('', (columns for _, columns in run_iterator(job)))


@fixture
def plan_factory():
    yield make_plan


@fixture
def ensemble_factory():
    yield make_ensemble


@fixture(scope='session')
def ensemble():
    spec = MarketSpec(d=1, m=1, mu=[0.4], sigma=[[0.4]], s0=[1.0])
    config = SimConfig(dt=2.0 ** -6, t_init=4.0, n_paths=4000, seed=2024, chunk_size=500)
    yield make_ensemble(spec, config)


@fixture(scope='session')
def alt_ensemble():
    spec = MarketSpec(d=1, m=2, mu=[0.4], sigma=[[0.4, 0.0]], s0=[1.0])
    config = SimConfig(dt=2.0 ** -6, t_init=4.0, n_paths=2000, seed=99, chunk_size=500)
    yield make_ensemble(spec, config, nu=np.array([0.0, 0.6]))


@fixture
def hdf5_file():
    yield File(BytesIO(), 'w')
