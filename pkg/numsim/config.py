"""
Run configuration.

A config is a flat list of ``section.key = value`` lines.  Vectors are
comma separated and a matrix repeats its key once per row::

    market.d = 2
    market.sigma = 0.2, 0.0
    market.sigma = 0.0, 0.4

Each section maps onto an attrs class; the ``config`` metadata of its fields
selects how a value is parsed and written back.
"""
from configparser import ConfigParser
from io import StringIO, TextIOBase
import os
from pathlib import Path, PurePath
import re
from typing import Any, Dict, List, Mapping, Optional, TextIO, Tuple, Type, Union

import attr
import numpy as np

from numsim.battery import FUNCTIONAL_KINDS, PAYOFFS, build_functionals, check_event_name
from numsim.market import MarketSpec
from numsim.simulate import SimConfig
from numsim.solver import SamplingPlan
from numsim.validation import ConfigError, FieldError, ValidationError, positive
from numsim.verify import ALL_TESTS, AlternativeDeflatorSpec

ENV_OVERRIDES = {
    'NUMSIM_SEED': ('simulation', 'seed'),
    'NUMSIM_N_PATHS': ('simulation', 'n_paths'),
}
OUTPUT_FORMATS = ('json', 'csv', 'plot_data')
ALTERNATIVE_TESTS = ('alternative_deflator', 'alternative_deflator_distinct')

_LINE = re.compile(r'^(?P<section>[A-Za-z_]\w*)\.(?P<key>[A-Za-z_]\w*)\s*=\s*(?P<value>.*)$')
# fields whose default is derived from another key of the same section
_DERIVED = {('market', 'm'): 'sigma'}


class SimulationConfig(ConfigParser):
    """
    Internal representation of a run config.

    This is based on the standard Python ConfigParser class.  Sources are read
    in order and later sources override earlier ones key by key; text sources
    use the flat ``section.key = value`` format.
    """

    def __init__(self, *config_sources: Union[str, PurePath, TextIO, dict]) -> None:
        super().__init__(allow_no_value=False, inline_comment_prefixes=('#',), interpolation=None)
        self.lines: Dict[Tuple[str, str], int] = {}
        self.errors: List[FieldError] = []

        for config_source in config_sources:
            if isinstance(config_source, dict):
                self.read_dict(config_source)
            elif isinstance(config_source, TextIOBase):
                self.read_flat(config_source.read())
            else:
                self.read_flat(Path(config_source).read_text())

    def read_flat(self, text: str) -> None:
        values: Dict[Tuple[str, str], List[str]] = {}
        lines: Dict[Tuple[str, str], int] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            match = _LINE.match(line)
            if match is None:
                self.errors.append(
                    FieldError(line, number, 'expected a line of the form section.key = value')
                )
                continue
            section, key = match.group('section'), match.group('key')
            values.setdefault((section, key), []).append(match.group('value').strip())
            lines.setdefault((section, key), number)

        for (section, key), rows in values.items():
            if not self.has_section(section):
                self.add_section(section)
            self.set(section, key, '\n'.join(rows))
            self.lines[(section, key)] = lines[(section, key)]

    def line(self, section: str, option: str) -> Optional[int]:
        return self.lines.get((section, option))

    # Wrapper so that this fails when a parameter is missing
    def getint(self, section: str, option: str, **kwargs) -> int:
        result = super().getint(section, option, **kwargs)
        assert result is not None, f'Missing parameter {option} in section {section}'
        return result

    # Wrapper so that this fails when a parameter is missing
    def getfloat(self, section, option, **kwargs) -> float:
        result = super().getfloat(section, option, **kwargs)
        assert result is not None, f'Missing parameter {option} in section {section}'
        return result

    # Wrapper so that this fails when a parameter is missing
    def getboolean(self, section, option, **kwargs) -> bool:
        result = super().getboolean(section, option, **kwargs)
        assert result is not None, f'Missing parameter {option} in section {section}'
        return result

    # Wrapper so that this fails when a parameter is missing
    def get(self, section, option, **kwargs):
        result = super(ConfigParser, self).get(section, option, **kwargs)
        assert result is not None, f'Missing parameter {option} in section {section}'
        return result

    def getlist(self, section: str, option: str) -> List[str]:
        """
        Return a list of strings from a configuration value.

        The value is split by new lines, spaces, and commas; empty entries are
        dropped, so ``a,b,c``, ``a b c`` and ``a, b, c`` all give
        ``['a', 'b', 'c']``.
        """
        return self.parselist(self.get(section, option, fallback=''))

    def getfloats(self, section: str, option: str) -> List[float]:
        return [float(value) for value in self.getlist(section, option)]

    def getrows(self, section: str, option: str) -> List[List[float]]:
        """Return the rows of a matrix given by a repeated key."""
        rows = self.get(section, option).split('\n')
        return [[float(value) for value in self.parselist(row)] for row in rows]

    @classmethod
    def parselist(cls, value: str) -> List[str]:
        """
        Return a list of strings from a configuration value.

        This is a helper method for `getlist`, split out for code sharing.
        """
        return [val.strip() for val in re.split('[\n ,]+', value) if val.strip()]

    def __str__(self):
        f = StringIO()
        for section in self.sections():
            for option, value in self.items(section):
                for row in value.split('\n'):
                    f.write(f'{section}.{option} = {row}\n')
        return f.getvalue()


def _names(value) -> Tuple[str, ...]:
    if isinstance(value, str):
        return tuple(SimulationConfig.parselist(value))
    return tuple(str(v) for v in value)


def _floats(value) -> Tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(value))


def _subset(allowed: Tuple[str, ...]):
    def validate(instance, attribute: attr.Attribute, value: Tuple[str, ...]) -> None:
        unknown = [v for v in value if v not in allowed]
        if unknown:
            raise ValidationError(
                f'unknown {attribute.name} {unknown}, expected a subset of {list(allowed)}',
                attribute.name,
            )

    return validate


def _unit_levels(instance, attribute: attr.Attribute, value: Tuple[float, ...]) -> None:
    if not all(0 <= v < 1 for v in value):
        raise ValidationError(
            f'{attribute.name} must lie in [0, 1), got {list(value)}', attribute.name
        )


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class VerifyConfig(object):
    """Selection and parameters of the statistical checks."""

    tests: Tuple[str, ...] = attr.ib(
        default=tuple(t for t in ALL_TESTS if t not in ALTERNATIVE_TESTS),
        converter=_names,
        validator=_subset(ALL_TESTS),
        metadata={'config': 'names'},
    )
    s: float = attr.ib(default=0.5, converter=float, metadata={'config': 'float'})
    t: Tuple[float, ...] = attr.ib(
        default=(1.0, 2.0), converter=_floats, metadata={'config': 'floats'}
    )
    f: Tuple[str, ...] = attr.ib(
        default=tuple(PAYOFFS),
        converter=_names,
        validator=_subset(tuple(PAYOFFS)),
        metadata={'config': 'names'},
    )
    events: Tuple[str, ...] = attr.ib(
        default=('omega', 'up', 'low_minimum'), converter=_names, metadata={'config': 'names'}
    )
    event_level: float = attr.ib(default=0.9, converter=float, metadata={'config': 'float'})
    functionals: Tuple[str, ...] = attr.ib(
        default=FUNCTIONAL_KINDS,
        converter=_names,
        validator=_subset(FUNCTIONAL_KINDS),
        metadata={'config': 'names'},
    )
    functional_event: str = attr.ib(default='up', converter=str, metadata={'config': 'str'})
    hit_levels: Tuple[float, ...] = attr.ib(
        default=(0.25, 0.5, 0.75),
        converter=_floats,
        validator=_unit_levels,
        metadata={'config': 'floats'},
    )
    u_grid: int = attr.ib(default=64, converter=int, validator=positive, metadata={'config': 'int'})
    bins: int = attr.ib(default=20, converter=int, validator=positive, metadata={'config': 'int'})
    min_bin_count: int = attr.ib(
        default=100, converter=int, validator=positive, metadata={'config': 'int'}
    )
    calibration_tolerance: float = attr.ib(
        default=0.01, converter=float, validator=positive, metadata={'config': 'float'}
    )
    doob_t: float = attr.ib(default=1.0, converter=float, metadata={'config': 'float'})
    alt_nu: Tuple[float, ...] = attr.ib(
        default=(), converter=_floats, metadata={'config': 'floats'}
    )
    mutate_drift_sign: bool = attr.ib(default=False, metadata={'config': 'bool'})

    @t.validator
    def _check_t(self, attribute, value):
        if not value:
            raise ValidationError('at least one observation time is required', 't')
        if any(t < self.s for t in value):
            raise ValidationError(
                f'observation times {list(value)} must not precede s={self.s}', 't'
            )

    @tests.validator
    def _check_alternative(self, attribute, value):
        if not self.alt_nu and any(t in ALTERNATIVE_TESTS for t in value):
            raise ValidationError('the alternative deflator tests need verify.alt_nu', 'tests')

    def selected(self, test: str) -> bool:
        return test in self.tests


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class OutputConfig(object):
    directory: str = attr.ib(default='output', converter=str, metadata={'config': 'str'})
    formats: Tuple[str, ...] = attr.ib(
        default=OUTPUT_FORMATS,
        converter=_names,
        validator=_subset(OUTPUT_FORMATS),
        metadata={'config': 'names'},
    )
    # hdf5 archive of the per-path summaries
    archive: bool = attr.ib(default=False, metadata={'config': 'bool'})
    trace_paths: int = attr.ib(default=0, converter=int, metadata={'config': 'int'})
    sample_paths: int = attr.ib(default=10, converter=int, metadata={'config': 'int'})
    sample_stride: int = attr.ib(
        default=16, converter=int, validator=positive, metadata={'config': 'int'}
    )

    @trace_paths.validator
    @sample_paths.validator
    def _check_count(self, attribute, value):
        if value < 0:
            raise ValidationError(
                f'{attribute.name} must be nonnegative, got {value}', attribute.name
            )


SECTIONS: Dict[str, Type] = {
    'market': MarketSpec,
    'simulation': SimConfig,
    'verify': VerifyConfig,
    'output': OutputConfig,
}


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class RunConfig(object):
    market: MarketSpec
    simulation: SimConfig
    verify: VerifyConfig = attr.Factory(VerifyConfig)
    output: OutputConfig = attr.Factory(OutputConfig)

    @property
    def observation_times(self) -> Tuple[float, ...]:
        times = {self.verify.s, self.verify.doob_t, *self.verify.t}
        return tuple(sorted(times))

    def sampling_plan(self, nu: Optional[np.ndarray] = None) -> SamplingPlan:
        functionals = build_functionals(
            self.verify.functionals, self.verify.s, self.verify.functional_event
        )
        return SamplingPlan(
            s=self.verify.s,
            times=self.observation_times,
            events=self.verify.events,
            event_level=self.verify.event_level,
            u_grid_size=self.verify.u_grid,
            hit_levels=self.verify.hit_levels,
            functionals=tuple(functionals.values()),
            nu=nu,
        )

    def alternative(self) -> Optional[AlternativeDeflatorSpec]:
        if not self.verify.alt_nu:
            return None
        return AlternativeDeflatorSpec(np.array(self.verify.alt_nu))


def _convert(config: SimulationConfig, section: str, option: str, kind: str) -> Any:
    if kind == 'int':
        return config.getint(section, option)
    if kind == 'float':
        return config.getfloat(section, option)
    if kind == 'bool':
        return config.getboolean(section, option)
    if kind == 'vector':
        return np.array(config.getfloats(section, option))
    if kind == 'matrix':
        rows = config.getrows(section, option)
        if len({len(row) for row in rows}) != 1:
            raise ValueError('matrix rows differ in length')
        return np.array(rows)
    if kind == 'floats':
        return tuple(config.getfloats(section, option))
    if kind == 'names':
        return tuple(config.getlist(section, option))
    return config.get(section, option)


def _format_value(value: Any, kind: str) -> List[str]:
    if kind == 'bool':
        return ['true' if value else 'false']
    if kind == 'float':
        return [repr(float(value))]
    if kind == 'int':
        return [str(int(value))]
    if kind in ('vector', 'floats'):
        return [', '.join(repr(float(v)) for v in value)]
    if kind == 'matrix':
        return [', '.join(repr(float(v)) for v in row) for row in np.atleast_2d(value)]
    if kind == 'names':
        return [', '.join(value)]
    return [str(value)]


def _build_section(
    config: SimulationConfig, section: str, cls: Type, errors: List[FieldError]
) -> Optional[Any]:
    fields = {field.name: field for field in attr.fields(cls)}
    present = dict(config.items(section)) if config.has_section(section) else {}

    for option in present:
        if option not in fields:
            errors.append(
                FieldError(f'{section}.{option}', config.line(section, option), 'unknown key')
            )

    kwargs: Dict[str, Any] = {}
    for name, field in fields.items():
        key = f'{section}.{name}'
        if name not in present:
            if field.default is attr.NOTHING and (section, name) not in _DERIVED:
                errors.append(FieldError(key, None, 'missing required key'))
            continue
        try:
            kwargs[name] = _convert(config, section, name, field.metadata['config'])
        except ValueError as e:
            errors.append(FieldError(key, config.line(section, name), f'type mismatch: {e}'))

    if section == 'market' and 'm' not in present and 'sigma' in kwargs:
        # the driver count defaults to the number of sigma columns
        kwargs['m'] = np.atleast_2d(kwargs['sigma']).shape[1]

    if any(error.key.startswith(f'{section}.') for error in errors):
        return None
    try:
        return cls(**kwargs)
    except ValidationError as e:
        name = e.field or ''
        errors.append(
            FieldError(f'{section}.{name}', config.line(section, name), f'invariant: {e.message}')
        )
    return None


def _cross_check(run_config: RunConfig, config: SimulationConfig, errors: List[FieldError]) -> None:
    plan = run_config.sampling_plan()
    try:
        plan.validate(run_config.market, run_config.simulation)
    except ValidationError as e:
        name = 'events' if e.field == 'events' else 't'
        errors.append(FieldError(f'verify.{name}', config.line('verify', name), e.message))
    if run_config.verify.functional_event not in run_config.verify.events:
        try:
            check_event_name(run_config.verify.functional_event, run_config.market.d)
        except ValidationError as e:
            errors.append(
                FieldError(
                    'verify.functional_event', config.line('verify', 'functional_event'), e.message
                )
            )
    alternative = run_config.alternative()
    if alternative is not None:
        try:
            alternative.market(run_config.market)
        except ValidationError as e:
            errors.append(FieldError('verify.alt_nu', config.line('verify', 'alt_nu'), e.message))


def build_run_config(config: SimulationConfig) -> RunConfig:
    """Validate every section of ``config`` and assemble a `RunConfig`.

    Raises `ConfigError` listing every field-level problem found.
    """
    errors: List[FieldError] = list(config.errors)
    for section in config.sections():
        if section not in SECTIONS:
            errors.append(FieldError(section, None, 'unknown section'))

    built = {
        section: _build_section(config, section, cls, errors) for section, cls in SECTIONS.items()
    }
    if errors:
        raise ConfigError(errors)

    run_config = RunConfig(**built)
    _cross_check(run_config, config, errors)
    if errors:
        raise ConfigError(errors)
    return run_config


def parse_config(text: str) -> RunConfig:
    """Parse a flat ``section.key = value`` config into a validated `RunConfig`."""
    return build_run_config(SimulationConfig(StringIO(text)))


def format_config(run_config: RunConfig) -> str:
    """Serialize a `RunConfig` back into the flat format, floats at full precision."""
    f = StringIO()
    for section in SECTIONS:
        instance = getattr(run_config, section)
        for field in attr.fields(type(instance)):
            for row in _format_value(getattr(instance, field.name), field.metadata['config']):
                f.write(f'{section}.{field.name} = {row}'.rstrip() + '\n')
    return f.getvalue()


def environment_overrides(environ: Mapping[str, str]) -> Dict[str, Dict[str, str]]:
    overrides: Dict[str, Dict[str, str]] = {}
    for variable, (section, option) in ENV_OVERRIDES.items():
        if variable in environ:
            overrides.setdefault(section, {})[option] = environ[variable]
    return overrides


def load_config(
    path: Union[str, PurePath], environ: Optional[Mapping[str, str]] = None
) -> RunConfig:
    """Read a config file, apply environment overrides and validate it."""
    if environ is None:
        environ = os.environ
    config = SimulationConfig(path, environment_overrides(environ))
    return build_run_config(config)
