r"""
Constant-coefficient market model and its numéraire portfolio.

Prices follow the relative parametrization
\[
    \frac{dS^i}{S^i} = \mu^i \, dt + \sum_k \sigma^{ik} \, dW^k,
\]
so that the relative covariance \( c_{rel} = \sigma \sigma^\top \) and the
drift are constant.  The absolute quantities of a general continuous-path
market are recovered as \( a = \mathrm{diag}(S) \mu \) and
\( c = \mathrm{diag}(S) \, c_{rel} \, \mathrm{diag}(S) \).  The operational
clock is calendar time, \( G(t) = t \).

The numéraire portfolio invests the wealth fractions \( \pi \) solving the
structure condition \( c_{rel} \pi = \mu \); per unit of wealth it holds
\( \xi^i = \pi^i / S^i \) shares, and \( \xi^\top c \, \xi = \pi^\top c_{rel} \pi \).
"""
import logging
from typing import Union

import attr
import numpy as np
from scipy.linalg import pinvh

from numsim.validation import NoViability, ValidationError, positive

logger = logging.getLogger(__name__)

# relative tolerance of the pseudo-inverse and of the range test
SOLVE_RTOL = 1e-10


def _frozen_array(value, ndmin: int = 1) -> np.ndarray:
    array = np.array(value, dtype=np.float64, ndmin=ndmin)
    array.flags['WRITEABLE'] = False
    return array


def _vector(value) -> np.ndarray:
    return _frozen_array(value, ndmin=1).reshape(-1)


def _matrix(value) -> np.ndarray:
    return _frozen_array(value, ndmin=2)


def _array_field(converter, kind: str, **kwargs):
    return attr.ib(
        converter=converter,
        eq=attr.cmp_using(eq=np.array_equal),
        metadata={'config': kind},
        **kwargs,
    )


@attr.s(kw_only=True, frozen=True, repr=False)
class MarketSpec(object):
    """A multi-dimensional Black-Scholes market in relative parametrization.

    Parameters
    ----------
    d : int
        number of assets
    m : int
        number of Brownian drivers
    mu : np.ndarray
        relative drift per asset, units 1/time
    sigma : np.ndarray
        ``d x m`` relative diffusion matrix, units 1/sqrt(time)
    s0 : np.ndarray
        strictly positive initial prices
    """

    d: int = attr.ib(converter=int, validator=positive, metadata={'config': 'int'})
    m: int = attr.ib(converter=int, validator=positive, metadata={'config': 'int'})
    mu: np.ndarray = _array_field(_vector, 'vector')
    sigma: np.ndarray = _array_field(_matrix, 'matrix')
    s0: np.ndarray = _array_field(_vector, 'vector')

    @mu.validator
    def _check_mu(self, attribute, value):
        if value.shape != (self.d,):
            raise ValidationError(f'mu must have {self.d} entries, got {value.size}', 'mu')
        if not np.isfinite(value).all():
            raise ValidationError('mu must be finite', 'mu')

    @sigma.validator
    def _check_sigma(self, attribute, value):
        if value.shape != (self.d, self.m):
            raise ValidationError(
                f'sigma must be a {self.d}x{self.m} matrix, got shape {value.shape}', 'sigma'
            )
        if not np.isfinite(value).all():
            raise ValidationError('sigma must be finite', 'sigma')

    @s0.validator
    def _check_s0(self, attribute, value):
        if value.shape != (self.d,):
            raise ValidationError(f's0 must have {self.d} entries, got {value.size}', 's0')
        if not (value > 0).all():
            raise ValidationError('initial prices s0 must be strictly positive', 's0')

    def __repr__(self):
        return f'MarketSpec(d={self.d}, m={self.m}, mu={self.mu.tolist()})'

    @property
    def c_rel(self) -> np.ndarray:
        """Return the relative covariance matrix sigma sigma^T."""
        return self.sigma @ self.sigma.T

    @staticmethod
    def clock(t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """Return the operational clock G(t); constant coefficients use calendar time."""
        return t

    def drift_density(self, s: np.ndarray) -> np.ndarray:
        """Return the absolute drift density a = diag(S) mu at prices ``s``."""
        return np.asarray(s) * self.mu

    def covariance(self, s: np.ndarray) -> np.ndarray:
        """Return the absolute covariance c = diag(S) c_rel diag(S) at prices ``s``."""
        s = np.asarray(s)
        return s[..., :, None] * self.c_rel * s[..., None, :]

    def with_drift(self, mu: np.ndarray) -> 'MarketSpec':
        return attr.evolve(self, mu=mu)

    def with_drivers(self, m: int) -> 'MarketSpec':
        """Pad sigma with zero columns up to ``m`` drivers; c_rel is unchanged."""
        if m < self.m:
            raise ValidationError(f'cannot reduce the driver count from {self.m} to {m}', 'm')
        sigma = np.zeros((self.d, m))
        sigma[:, : self.m] = self.sigma
        return attr.evolve(self, m=m, sigma=sigma)


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class NumeraireStrategy(object):
    """Wealth fractions of the numéraire portfolio.

    ``pi`` solves ``c_rel pi = mu`` with minimal norm, ``lam`` is the market
    price of risk ``sigma^T pi`` and ``growth_rate`` is ``pi^T c_rel pi``,
    the density of the growth integral with respect to the clock.
    """

    pi: np.ndarray = attr.ib(converter=_vector, eq=attr.cmp_using(eq=np.array_equal))
    lam: np.ndarray = attr.ib(converter=_vector, eq=attr.cmp_using(eq=np.array_equal))
    growth_rate: float = attr.ib(converter=float)
    residual: float = attr.ib(converter=float, default=0.0)

    def share_counts(self, s: np.ndarray) -> np.ndarray:
        """Return xi = pi / S, the shares held per unit of wealth."""
        return self.pi / np.asarray(s)


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class ViabilityReport(object):
    na1_holds: bool
    asymptotically_suboptimal: bool
    diagnostics: str


def _structure_solution(spec: MarketSpec):
    c_rel = spec.c_rel
    c_pinv = pinvh(c_rel, rtol=SOLVE_RTOL)
    pi = c_pinv @ spec.mu
    residual = float(np.linalg.norm(c_rel @ pi - spec.mu))
    in_range = residual <= SOLVE_RTOL * float(np.linalg.norm(spec.mu))
    return pi, residual, in_range


def solve_numeraire_strategy(spec: MarketSpec) -> NumeraireStrategy:
    """Solve the structure condition for the numéraire portfolio.

    Raises `NoViability` when the drift is not in the range of c_rel, in which
    case no strategy exists and the market admits arbitrage of the first kind.
    """
    pi, residual, in_range = _structure_solution(spec)
    if not in_range:
        raise NoViability(
            f'mu is not in the range of c_rel (residual {residual:.3e}); '
            'the market allows arbitrage of the first kind'
        )

    lam = spec.sigma.T @ pi
    growth_rate = float(pi @ spec.c_rel @ pi)
    logger.debug('numeraire fractions %s, growth rate %r', pi.tolist(), growth_rate)
    return NumeraireStrategy(pi=pi, lam=lam, growth_rate=max(growth_rate, 0.0), residual=residual)


def check_na1(spec: MarketSpec) -> ViabilityReport:
    """Report NA1 and asymptotic suboptimality of the discounting process."""
    pi, residual, in_range = _structure_solution(spec)
    if not in_range:
        return ViabilityReport(
            na1_holds=False,
            asymptotically_suboptimal=False,
            diagnostics=(
                f'NoViability: mu is not in the range of c_rel (residual {residual:.3e}); '
                'arbitrage of the first kind'
            ),
        )

    growth_rate = float(pi @ spec.c_rel @ pi)
    suboptimal = growth_rate > 0
    if suboptimal:
        diagnostics = f'NA1 holds; growth rate {growth_rate!r} so the growth integral diverges'
    else:
        diagnostics = 'NA1 holds; zero growth rate, the numeraire portfolio is constant'
    return ViabilityReport(
        na1_holds=True, asymptotically_suboptimal=suboptimal, diagnostics=diagnostics
    )


def growth_integral(strategy: NumeraireStrategy, t: float) -> float:
    """Return the integral of xi^T c xi dG over [0, t]."""
    if t < 0:
        raise ValueError(f'growth integral requires t >= 0, got {t}')
    return t * strategy.growth_rate
