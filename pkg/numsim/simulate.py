r"""
Exact simulation of prices, the numéraire portfolio and wealth processes.

All processes are stepped in log coordinates with the exact geometric
Brownian motion update, so pathwise identities hold to rounding:
\[
    \log \widehat{X}(t_{k+1}) = \log \widehat{X}(t_k) + \tfrac12 |\lambda|^2 \Delta t
        + \lambda^\top \Delta W_k .
\]
The overall minimum of \( \widehat{X} \) is located on the grid and refined
with the exact law of the minimum of a Brownian bridge between grid points.
The horizon is doubled until the Doob tail bound
\( P[\rho > T \mid \mathcal{F}(T)] = I(T) \widehat{Y}(T) \) drops below
``tail_eps``.
"""
import logging
from typing import Dict, Optional, Sequence, Tuple, Union

import attr
from numba import jit
import numpy as np
from numpy.random import Generator

from numsim.market import MarketSpec, NumeraireStrategy
from numsim.random import PathStreams, brownian_increments, open_uniforms
from numsim.validation import (
    HorizonError,
    ValidationError,
    nonnegative,
    positive,
    tail_threshold,
)

logger = logging.getLogger(__name__)


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class SimConfig(object):
    """Time grid, horizon policy and random streams of an ensemble.

    ``threads`` only controls how many chunks are simulated concurrently;
    results never depend on it.
    """

    dt: float = attr.ib(
        default=2.0 ** -10, converter=float, validator=positive, metadata={'config': 'float'}
    )
    t_init: float = attr.ib(
        default=8.0, converter=float, validator=positive, metadata={'config': 'float'}
    )
    tail_eps: float = attr.ib(
        default=1e-4, converter=float, validator=tail_threshold, metadata={'config': 'float'}
    )
    max_extensions: int = attr.ib(
        default=20, converter=int, validator=nonnegative, metadata={'config': 'int'}
    )
    n_paths: int = attr.ib(converter=int, validator=positive, metadata={'config': 'int'})
    seed: int = attr.ib(converter=int, validator=nonnegative, metadata={'config': 'int'})
    bridge_correction: bool = attr.ib(default=True, metadata={'config': 'bool'})
    chunk_size: int = attr.ib(
        default=1000, converter=int, validator=positive, metadata={'config': 'int'}
    )
    threads: int = attr.ib(default=1, converter=int, validator=positive, metadata={'config': 'int'})

    @t_init.validator
    def _check_t_init(self, attribute, value):
        if value < self.dt:
            raise ValidationError(
                f't_init ({value}) must be at least one step ({self.dt})', 't_init'
            )

    @property
    def initial_steps(self) -> int:
        return max(1, int(round(self.t_init / self.dt)))

    def grid_index(self, t: float) -> int:
        """Return the grid index of time ``t``, which must be a grid point."""
        index = int(round(t / self.dt))
        if t < 0 or abs(index * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValidationError(f'time {t} is not on the grid of step {self.dt}')
        return index


@attr.s(auto_attribs=True, frozen=True)
class ShareCounts(object):
    """Share holdings, constant ``(d,)`` or per step ``(steps, d)`` at left endpoints."""

    shares: np.ndarray = attr.ib(converter=lambda value: np.asarray(value, dtype=np.float64))


@attr.s(auto_attribs=True, frozen=True)
class WealthFractions(object):
    """Constant fractions of current wealth invested in each asset."""

    fractions: np.ndarray = attr.ib(converter=lambda value: np.asarray(value, dtype=np.float64))


Holdings = Union[ShareCounts, WealthFractions]


@attr.s(auto_attribs=True, frozen=True)
class RegisteredStrategy(object):
    """A strategy whose wealth is tracked on every simulated path.

    When ``x0`` is None the initial capital is the cost of the initial
    holdings, which makes constant share counts a self-financing buy-and-hold.
    """

    name: str
    holdings: Holdings
    x0: Optional[float] = None


def default_strategies(spec: MarketSpec) -> Tuple[RegisteredStrategy, ...]:
    buy_and_hold = np.zeros(spec.d)
    buy_and_hold[0] = 1.0
    return (
        RegisteredStrategy('cash', ShareCounts(np.zeros(spec.d)), x0=1.0),
        RegisteredStrategy('buy_and_hold', ShareCounts(buy_and_hold)),
    )


@attr.s(auto_attribs=True, kw_only=True, eq=False, repr=False)
class PathBundle(object):
    """One simulated path on the grid ``times``.

    ``w`` and ``s`` have one row per grid point; ``dw`` holds the increments
    the path was built from.  ``extra_wealth`` maps strategy names to wealth
    series on the same grid; the exact ``numeraire`` and ``relative_short``
    series are always present.  ``log_alt`` is the log of an alternative
    deflator when one was requested.
    """

    spec: MarketSpec
    strategy: NumeraireStrategy
    times: np.ndarray
    dw: np.ndarray
    w: np.ndarray
    s: np.ndarray
    log_xhat: np.ndarray
    xhat: np.ndarray
    yhat: np.ndarray
    run_min: np.ndarray
    extra_wealth: Dict[str, np.ndarray] = attr.ib(factory=dict)
    strategies: Tuple[RegisteredStrategy, ...] = ()
    nu: Optional[np.ndarray] = None
    log_alt: Optional[np.ndarray] = None
    extensions: int = 0

    def __repr__(self):
        return f'PathBundle(steps={self.steps}, horizon={self.horizon})'

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def tail_mass(self) -> float:
        """Return I(T) Y(T), the conditional probability that the minimum is still ahead."""
        return float(self.run_min[-1] * self.yhat[-1])

    @property
    def alt_variance_rate(self) -> float:
        """Return the quadratic variation rate of log L, |lambda|^2 + |nu|^2."""
        nu = self.nu if self.nu is not None else np.zeros(0)
        return self.strategy.growth_rate + float(nu @ nu)

    @property
    def alt_tail_mass(self) -> float:
        """Return L(T) / max L on [0, T], the chance that the maximum of L is still ahead."""
        if self.log_alt is None:
            return 0.0
        return float(np.exp(self.log_alt[-1] - self.log_alt.max()))


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class BridgeMinimum(object):
    """Bridge-corrected extremum of a log path.

    ``step_log_extrema`` holds one sampled extremum per grid step and
    ``rho_index`` is the grid endpoint of the attaining step with the smaller
    value.  ``uniforms`` are the per-step draws the extrema were sampled from.
    """

    level: float
    rho: float
    rho_index: int
    step_log_extrema: np.ndarray = attr.ib(eq=False)
    uniforms: Optional[np.ndarray] = attr.ib(default=None, eq=False)


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class MinimumRecord(object):
    rho: float
    rho_index: int
    i_inf_raw: float
    i_inf_corrected: float
    tail_mass: float
    truncated: bool
    horizon: float
    bridge: Optional[BridgeMinimum] = attr.ib(default=None, eq=False)

    @property
    def step_log_minima(self) -> Optional[np.ndarray]:
        return None if self.bridge is None else self.bridge.step_log_extrema

    @property
    def bridge_uniforms(self) -> Optional[np.ndarray]:
        return None if self.bridge is None else self.bridge.uniforms


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class MaximumRecord(object):
    """Time and level of the overall maximum of an alternative deflator."""

    phi: float
    phi_index: int
    level: float
    tail_mass: float
    truncated: bool


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class WealthSeries(object):
    """A discretized wealth process.

    Values after the first negative value are NaN; such a series does not
    belong to the admissible class.
    """

    values: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    admissible: bool
    violation_index: Optional[int] = None


@attr.s(auto_attribs=True, kw_only=True, frozen=True, eq=False)
class ShortPosition(object):
    """Wealth of the relative short position and its pathwise identity.

    ``log_identity`` is log X(t) + log X^(t) + g t on the grid, zero up to
    rounding.  ``residual`` and ``relative_residual`` are evaluated at rho when
    a minimum record is given.
    """

    wealth: np.ndarray
    log_identity: np.ndarray
    residual: Optional[float] = None
    relative_residual: Optional[float] = None


@jit(cache=True)
def bridge_log_minimum(x0, x1, variance, v):
    """Sample the minimum of a Brownian bridge from x0 to x1.

    ``variance`` is the quadratic variation accumulated over the step and
    ``v`` is uniform on (0, 1].
    """
    return 0.5 * (x0 + x1 - np.sqrt((x1 - x0) ** 2 - 2.0 * variance * np.log(v)))


def _log_relative_short(dw: np.ndarray, lam: np.ndarray, growth_rate: float, dt: float):
    increments = -1.5 * growth_rate * dt - dw @ lam
    return np.concatenate(([0.0], np.cumsum(increments)))


def assemble_path(
    spec: MarketSpec,
    strategy: NumeraireStrategy,
    dw: np.ndarray,
    dt: float,
    *,
    nu: Optional[np.ndarray] = None,
    strategies: Sequence[RegisteredStrategy] = (),
    extensions: int = 0,
) -> PathBundle:
    """Build a path from Brownian increments with the exact log-step updates."""
    dw = np.asarray(dw, dtype=np.float64).reshape(-1, spec.m)
    steps = dw.shape[0]
    times = np.arange(steps + 1) * dt
    lam = strategy.lam
    if lam.shape != (spec.m,):
        raise ValidationError(f'strategy has {lam.size} risk loadings, market has {spec.m} drivers')

    zero_row = np.zeros((1, spec.m))
    w = np.concatenate((zero_row, np.cumsum(dw, axis=0)))

    price_drift = (spec.mu - 0.5 * np.diag(spec.c_rel)) * dt
    log_returns = price_drift + dw @ spec.sigma.T
    log_s = np.log(spec.s0) + np.concatenate(
        (np.zeros((1, spec.d)), np.cumsum(log_returns, axis=0))
    )
    s = np.exp(log_s)

    log_xhat = np.concatenate(([0.0], np.cumsum(0.5 * strategy.growth_rate * dt + dw @ lam)))
    xhat = np.exp(log_xhat)
    yhat = 1.0 / xhat
    run_min = np.minimum.accumulate(xhat)

    log_alt = None
    if nu is not None:
        nu = np.asarray(nu, dtype=np.float64)
        log_alt = -log_xhat + w @ nu - 0.5 * float(nu @ nu) * times

    path = PathBundle(
        spec=spec,
        strategy=strategy,
        times=times,
        dw=dw,
        w=w,
        s=s,
        log_xhat=log_xhat,
        xhat=xhat,
        yhat=yhat,
        run_min=run_min,
        strategies=tuple(strategies),
        nu=nu,
        log_alt=log_alt,
        extensions=extensions,
    )
    path.extra_wealth['numeraire'] = xhat
    path.extra_wealth['relative_short'] = np.exp(
        _log_relative_short(dw, lam, strategy.growth_rate, dt)
    )
    for registered in path.strategies:
        path.extra_wealth[registered.name] = wealth_process(
            path, registered.holdings, registered.x0
        ).values
    return path


def simulate_path(
    spec: MarketSpec,
    strategy: NumeraireStrategy,
    config: SimConfig,
    path_index: int,
    *,
    nu: Optional[np.ndarray] = None,
    strategies: Optional[Sequence[RegisteredStrategy]] = None,
    streams: Optional[PathStreams] = None,
) -> PathBundle:
    """Simulate one path from its own random stream, extending the horizon if needed."""
    if not 0 <= path_index < config.n_paths:
        raise ValueError(f'path index {path_index} outside [0, {config.n_paths})')
    if streams is None:
        streams = PathStreams.create(config.seed, path_index)
    if strategies is None:
        strategies = default_strategies(spec)

    dw = brownian_increments(streams.noise, config.initial_steps, spec.m, config.dt)
    path = assemble_path(spec, strategy, dw, config.dt, nu=nu, strategies=strategies)
    if strategy.growth_rate > 0:
        path = adaptive_horizon(path, config, streams.noise)
    return path


def adaptive_horizon(path: PathBundle, config: SimConfig, rng: Generator) -> PathBundle:
    """Double the horizon until the tail mass is at most ``tail_eps``.

    Paths still above the threshold after ``max_extensions`` doublings are
    returned as they are and reported as truncated by `detect_minimum`.
    """
    if path.strategy.growth_rate <= 0:
        raise HorizonError(
            'zero growth rate: the time of the overall minimum is not almost surely finite'
        )

    extensions = path.extensions
    while (
        max(path.tail_mass, path.alt_tail_mass) > config.tail_eps
        and extensions < config.max_extensions
    ):
        extra = brownian_increments(rng, path.steps, path.spec.m, path.dt)
        extensions += 1
        path = assemble_path(
            path.spec,
            path.strategy,
            np.concatenate((path.dw, extra)),
            path.dt,
            nu=path.nu,
            strategies=path.strategies,
            extensions=extensions,
        )
    return path


def wealth_process(
    path: PathBundle, theta: Holdings, x0: Optional[float] = None
) -> WealthSeries:
    """Return the wealth of a strategy with left-point (predictable) holdings.

    Share counts give ``X <- X + theta^T (S(t_{k+1}) - S(t_k))``; wealth
    fractions hold ``pi X / S`` shares at the left endpoint of every step.
    """
    if x0 is not None and x0 < 0:
        raise ValidationError(f'initial capital must be nonnegative, got {x0}')
    price_changes = np.diff(path.s, axis=0)

    if isinstance(theta, ShareCounts):
        shares = theta.shares
        if x0 is None:
            x0 = float(np.atleast_2d(shares)[0] @ path.s[0])
        if shares.ndim == 1:
            gains = price_changes @ shares
        else:
            gains = np.einsum('kd,kd->k', shares[: path.steps], price_changes)
        values = x0 + np.concatenate(([0.0], np.cumsum(gains)))
    elif isinstance(theta, WealthFractions):
        if x0 is None:
            x0 = 1.0
        growth = 1.0 + (path.s[1:] / path.s[:-1] - 1.0) @ theta.fractions
        values = x0 * np.concatenate(([1.0], np.cumprod(growth)))
    else:
        raise TypeError(f'unsupported holdings {theta!r}')

    negative = np.flatnonzero(values < 0)
    if negative.size:
        violation_index = int(negative[0])
        values = values.copy()
        values[violation_index + 1 :] = np.nan
        return WealthSeries(values=values, admissible=False, violation_index=violation_index)
    return WealthSeries(values=values, admissible=True)


def _bridge_extremum(
    log_values: np.ndarray, variance: np.ndarray, v: np.ndarray, maximum: bool
) -> Tuple[np.ndarray, int, int]:
    sign = -1.0 if maximum else 1.0
    x = sign * log_values
    x0 = x[:-1]
    x1 = x[1:]
    step = np.minimum(bridge_log_minimum(x0, x1, variance, v), np.minimum(x0, x1))
    k = int(np.argmin(step))
    endpoint = k if x0[k] <= x1[k] else k + 1
    return sign * step, k, endpoint


def bridge_corrected_minimum(path: PathBundle, rng: Generator) -> BridgeMinimum:
    """Refine the overall minimum of X^ between grid points.

    Each step draws the minimum of log X^ from the Brownian-bridge law given
    its endpoints.  With a zero market price of risk the correction is the
    identity.
    """
    x = path.log_xhat
    variance = path.strategy.growth_rate * np.diff(path.times)
    v = open_uniforms(rng, path.steps)
    if path.strategy.growth_rate <= 0:
        step = np.minimum(x[:-1], x[1:])
        rho_index = int(np.argmin(x))
        return BridgeMinimum(
            level=float(path.xhat[rho_index]),
            rho=float(path.times[rho_index]),
            rho_index=rho_index,
            step_log_extrema=step,
            uniforms=v,
        )

    step, _, rho_index = _bridge_extremum(x, variance, v, maximum=False)
    level = float(np.exp(min(step.min(), x.min())))
    return BridgeMinimum(
        level=level,
        rho=float(path.times[rho_index]),
        rho_index=rho_index,
        step_log_extrema=step,
        uniforms=v,
    )


def detect_minimum(
    path: PathBundle, config: SimConfig, rng: Optional[Generator] = None
) -> MinimumRecord:
    """Locate the overall minimum of X^ (earliest argmin) and its tail mass."""
    grid_index = int(np.argmin(path.log_xhat))
    i_inf_raw = float(path.xhat[grid_index])
    tail_mass = path.tail_mass

    bridge = None
    rho_index = grid_index
    i_inf_corrected = i_inf_raw
    if config.bridge_correction:
        if rng is None:
            raise ValueError('bridge correction requires a random generator')
        bridge = bridge_corrected_minimum(path, rng)
        rho_index = bridge.rho_index
        i_inf_corrected = min(bridge.level, i_inf_raw)

    return MinimumRecord(
        rho=float(path.times[rho_index]),
        rho_index=rho_index,
        i_inf_raw=i_inf_raw,
        i_inf_corrected=i_inf_corrected,
        tail_mass=tail_mass,
        truncated=tail_mass > config.tail_eps,
        horizon=path.horizon,
        bridge=bridge,
    )


def detect_alternative_maximum(
    path: PathBundle,
    config: SimConfig,
    rng: Optional[Generator] = None,
    uniforms: Optional[np.ndarray] = None,
) -> MaximumRecord:
    """Locate the overall maximum of the alternative deflator L (earliest argmax).

    Passing the ``uniforms`` of the bridge-corrected minimum couples the two
    bridges step by step; with ``nu = 0`` the deflators coincide and so do
    ``phi`` and ``rho``.
    """
    if path.log_alt is None:
        raise ValueError('path was simulated without an alternative deflator')
    x = path.log_alt
    tail_mass = path.alt_tail_mass
    if config.bridge_correction and path.alt_variance_rate > 0:
        if uniforms is None:
            if rng is None:
                raise ValueError('bridge correction requires a random generator')
            uniforms = open_uniforms(rng, path.steps)
        elif uniforms.shape != (path.steps,):
            raise ValueError(f'expected {path.steps} bridge uniforms, got {uniforms.shape}')
        variance = path.alt_variance_rate * np.diff(path.times)
        step, _, phi_index = _bridge_extremum(x, variance, uniforms, True)
        level = float(np.exp(max(step.max(), x.max())))
    else:
        phi_index = int(np.argmax(x))
        level = float(np.exp(x[phi_index]))
    return MaximumRecord(
        phi=float(path.times[phi_index]),
        phi_index=phi_index,
        level=level,
        tail_mass=tail_mass,
        truncated=tail_mass > config.tail_eps,
    )


def relative_short_wealth(
    path: PathBundle, strategy: NumeraireStrategy, record: Optional[MinimumRecord] = None
) -> ShortPosition:
    """Simulate X = E(-int xi^T dS) and check X(rho) = exp(-g rho) / X^(rho)."""
    g = strategy.growth_rate
    log_wealth = _log_relative_short(path.dw, strategy.lam, g, path.dt)
    wealth = np.exp(log_wealth)
    log_identity = log_wealth + path.log_xhat + g * path.times

    if record is None:
        return ShortPosition(wealth=wealth, log_identity=log_identity)

    k = record.rho_index
    rho = float(path.times[k])
    residual = float(wealth[k] - np.exp(-g * rho) / path.xhat[k])
    relative_residual = float(wealth[k] * path.xhat[k] * np.exp(g * rho) - 1.0)
    return ShortPosition(
        wealth=wealth,
        log_identity=log_identity,
        residual=residual,
        relative_residual=relative_residual,
    )

