r"""
Objects of the initial enlargement of the filtration by the overall minimum.

For a level \( u \in [0, 1) \) the hitting time
\[
    \eta_u = \inf \{ t \ge 0 : \widehat{Y}(t) = 1 / (1 - u) \}
\]
is finite exactly when the overall minimum of the numéraire portfolio dips
to \( 1 - u \), an event of probability \( 1 - u \).  Conditioning on it
gives the measure \( P_u \), estimated here by reweighting the hit paths
with \( 1 / (1 - u) \).  The process \( U = 1 - I \) and the atoms of
Doob's maximal identity complete the set.
"""
import logging
from typing import Optional, Sequence, Tuple

import attr
import numpy as np

from numsim.simulate import MinimumRecord, PathBundle
from numsim.validation import ValidationError

logger = logging.getLogger(__name__)

# stratified midpoint grid for integrals over u
DEFAULT_U_GRID = 64


def u_grid(k: int = DEFAULT_U_GRID) -> np.ndarray:
    """Return the midpoints (j - 1/2) / k, j = 1..k, of a uniform partition of [0, 1]."""
    if k < 1:
        raise ValidationError(f'u-grid size must be positive, got {k}', 'u_grid')
    return (np.arange(1, k + 1) - 0.5) / k


@attr.s(auto_attribs=True, kw_only=True, frozen=True)
class HittingTimeRecord(object):
    """First time the deflator reaches ``1 / (1 - u)``.

    ``eta_u`` is ``inf`` when the level is not reached by the final horizon;
    ``undetermined`` is then set if the chance of a later crossing,
    ``Y(T) (1 - u)``, is above the tail threshold.  ``u_at_eta`` is ``U`` at
    the first grid point at or after ``eta_u``.
    """

    u: float
    eta_u: float
    hit: bool
    undetermined: bool = False
    index: Optional[int] = None
    u_at_eta: float = float('nan')


@attr.s(auto_attribs=True, frozen=True)
class Estimate(object):
    """A Monte Carlo mean with its standard error."""

    mean: float
    se: float
    n: int

    @classmethod
    def of(cls, values: np.ndarray) -> 'Estimate':
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return cls(mean=float('nan'), se=float('nan'), n=0)
        se = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float('inf')
        return cls(mean=float(values.mean()), se=se, n=n)


def _step_log_minima(path: PathBundle, step_log_minima: Optional[np.ndarray]) -> np.ndarray:
    if step_log_minima is not None:
        return np.asarray(step_log_minima)
    x = path.log_xhat
    return np.minimum(x[:-1], x[1:])


def log_floor(path: PathBundle, step_log_minima: Optional[np.ndarray] = None) -> np.ndarray:
    """Return log I on the grid, including sampled minima between grid points."""
    x = path.log_xhat
    floor = np.empty_like(x)
    floor[0] = x[0]
    floor[1:] = np.minimum(x[0], np.minimum.accumulate(_step_log_minima(path, step_log_minima)))
    return floor


def hitting_times(
    path: PathBundle,
    levels: Sequence[float],
    step_log_minima: Optional[np.ndarray] = None,
    tail_eps: float = 1e-4,
) -> Tuple[HittingTimeRecord, ...]:
    """Compute the hitting records of several levels on one path at once."""
    us = np.asarray(levels, dtype=np.float64)
    if us.size and not ((us >= 0) & (us < 1)).all():
        raise ValidationError(f'hitting levels must lie in [0, 1), got {us.tolist()}', 'u')

    x = path.log_xhat
    times = path.times
    dt = path.dt
    step = _step_log_minima(path, step_log_minima)
    floor = log_floor(path, step)
    # nonincreasing, so the first crossing step is found by bisection
    running = np.minimum.accumulate(step)
    targets = np.log1p(-us)
    first_steps = np.searchsorted(-running, -targets, side='left')
    tail = float(path.yhat[-1])

    records = []
    for u, target, k in zip(us.tolist(), targets.tolist(), first_steps.tolist()):
        if x[0] <= target:
            records.append(HittingTimeRecord(u=u, eta_u=0.0, hit=True, index=0, u_at_eta=0.0))
            continue
        if k >= step.size:
            records.append(
                HittingTimeRecord(
                    u=u, eta_u=float('inf'), hit=False, undetermined=tail * (1 - u) > tail_eps
                )
            )
            continue

        x0, low = x[k], step[k]
        # a minimum strictly inside the step sits at its midpoint
        position = 1.0 if low >= x[k + 1] else 0.5
        fraction = position * (x0 - target) / (x0 - low)
        records.append(
            HittingTimeRecord(
                u=u,
                eta_u=float(times[k] + fraction * dt),
                hit=True,
                index=k + 1,
                u_at_eta=float(-np.expm1(floor[k + 1])),
            )
        )
    return tuple(records)


def compute_eta_u(
    path: PathBundle,
    u: float,
    step_log_minima: Optional[np.ndarray] = None,
    tail_eps: float = 1e-4,
) -> HittingTimeRecord:
    """Return the first time the deflator reaches ``1 / (1 - u)`` on ``path``.

    The crossing is located with linear interpolation in ``log Y`` between the
    left grid point and the minimum of the first step that reaches the level.
    """
    return hitting_times(path, [u], step_log_minima, tail_eps)[0]


def u_process(path: PathBundle, step_log_minima: Optional[np.ndarray] = None) -> np.ndarray:
    """Return ``U = 1 - I`` on the grid; its final value is ``1 - I(inf)``."""
    return -np.expm1(log_floor(path, step_log_minima))


def doob_identity_sample(path: PathBundle, record: MinimumRecord, t: float) -> Tuple[bool, float]:
    """Return ``(1{rho > t}, I(t) Y(t))`` for a grid time ``t``.

    Past the final horizon the predictor is the tail mass at the horizon,
    which bounds the true conditional probability.
    """
    if t < 0:
        raise ValidationError(f'observation time must be nonnegative, got {t}', 't')
    index = int(round(t / path.dt))
    if abs(index * path.dt - t) > 1e-9 * max(1.0, t):
        raise ValidationError(f'time {t} is not on the grid of step {path.dt}', 't')
    index = min(index, path.steps)
    floor = log_floor(path, record.step_log_minima)
    predictor = float(np.exp(floor[index]) * path.yhat[index])
    return record.rho > t, min(predictor, 1.0)


@attr.s(auto_attribs=True, kw_only=True, frozen=True, eq=False)
class ConditionedEnsemble(object):
    """Paths that reached ``1 / (1 - u)``, representing the measure ``P_u``.

    Values passed to the estimators are indexed by path over the whole
    ensemble; ``members`` selects the hit paths.
    """

    u: float
    n_paths: int
    members: np.ndarray

    @property
    def weight(self) -> float:
        """Return the density dP_u/dP on the members."""
        return 1.0 / (1.0 - self.u)

    @property
    def hit_fraction(self) -> float:
        return self.members.size / self.n_paths

    @property
    def degenerate(self) -> bool:
        return self.members.size == 0

    def weighted_mean(self, values: np.ndarray) -> Estimate:
        """Estimate E_u[f] as (1 / (1 - u)) mean over all paths of f 1{hit}."""
        values = np.asarray(values, dtype=np.float64)
        weighted = np.zeros(self.n_paths)
        weighted[self.members] = values[self.members] * self.weight
        return Estimate.of(weighted)

    def conditional_mean(self, values: np.ndarray) -> Estimate:
        """Estimate E_u[f] as the plain mean of f over the members."""
        return Estimate.of(np.asarray(values, dtype=np.float64)[self.members])

    @classmethod
    def from_hits(cls, hits: np.ndarray, u: float) -> 'ConditionedEnsemble':
        hits = np.asarray(hits, dtype=bool)
        if not 0 <= u < 1:
            raise ValidationError(f'level must lie in [0, 1), got {u}', 'u')
        members = np.flatnonzero(hits)
        ensemble = cls(u=float(u), n_paths=hits.size, members=members)
        if ensemble.degenerate:
            logger.warning('no path reached the level of u=%r among %d paths', u, hits.size)
        return ensemble


def build_conditioned_ensemble(
    records: Sequence[HittingTimeRecord], u: float
) -> ConditionedEnsemble:
    """Collect the paths whose hitting record for level ``u`` is a hit.

    ``records`` is in path-index order, one record per path.
    """
    for record in records:
        if record.u != u:
            raise ValidationError(f'record of level {record.u} given for level {u}', 'u')
    return ConditionedEnsemble.from_hits(np.array([r.hit for r in records], dtype=bool), u)
