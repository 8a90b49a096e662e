"""
Test battery of the verification suite.

Three small families are used to exercise the stopped price processes:

* payoffs ``f`` on [0, 1] applied to ``U(rho)``,
* events ``B`` measurable with respect to the path up to time ``s``,
* bounded optional functionals ``V(t)`` evaluated at random times.

Names are the tokens accepted by the ``verify`` section of a config.
"""
from typing import Callable, Dict, Iterable, Mapping, Sequence

import attr
import numpy as np

from numsim.validation import ValidationError

Payoff = Callable[[np.ndarray], np.ndarray]

PAYOFFS: Dict[str, Payoff] = {
    'one': lambda u: np.ones_like(u, dtype=np.float64),
    'u': lambda u: np.asarray(u, dtype=np.float64),
    'u2': lambda u: np.asarray(u, dtype=np.float64) ** 2,
    'upper_half': lambda u: (np.asarray(u) > 0.5).astype(np.float64),
}

EVENT_KINDS = ('omega', 'up', 'low_minimum')
FUNCTIONAL_KINDS = ('one', 'exp_decay', 'late_event')


def payoff(name: str) -> Payoff:
    try:
        return PAYOFFS[name]
    except KeyError:
        raise ValidationError(f'unknown payoff "{name}", expected one of {sorted(PAYOFFS)}', 'f')


def _event_asset(name: str) -> int:
    # "up" is asset 1, "up:i" is asset i (1-based)
    if name == 'up':
        return 0
    asset = name.partition(':')[2]
    if not asset.isdigit() or int(asset) < 1:
        raise ValidationError(f'invalid event "{name}"', 'events')
    return int(asset) - 1


def check_event_name(name: str, d: int) -> None:
    if name in ('omega', 'low_minimum'):
        return
    if name == 'up' or name.startswith('up:'):
        if _event_asset(name) >= d:
            raise ValidationError(f'event "{name}" refers to a missing asset', 'events')
        return
    raise ValidationError(f'unknown event "{name}", expected one of {EVENT_KINDS}', 'events')


def evaluate_events(
    names: Iterable[str], s_at: np.ndarray, s0: np.ndarray, run_min_at: float, level: float
) -> Dict[str, bool]:
    """Evaluate events from the path observed up to ``s``.

    ``s_at`` are the prices at ``s`` and ``run_min_at`` is the grid running
    minimum of the numeraire portfolio at ``s``.
    """
    events = {}
    for name in names:
        if name == 'omega':
            events[name] = True
        elif name == 'low_minimum':
            events[name] = bool(run_min_at < level)
        else:
            asset = _event_asset(name)
            events[name] = bool(s_at[asset] > s0[asset])
    return events


@attr.s(auto_attribs=True, frozen=True)
class OptionalFunctional(object):
    """A bounded optional process ``V``.

    ``late_event`` is ``1{t > s} 1_B``, which only needs ``B`` once ``t``
    has passed ``s``.
    """

    name: str = attr.ib()
    s: float = 0.0
    event: str = 'omega'

    @name.validator
    def _check_name(self, attribute, value):
        if value not in FUNCTIONAL_KINDS:
            raise ValidationError(
                f'unknown functional "{value}", expected one of {FUNCTIONAL_KINDS}', 'functionals'
            )

    def evaluate(self, times, events: Mapping[str, bool]) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64)
        if self.name == 'one':
            return np.ones_like(times)
        if self.name == 'exp_decay':
            # unreached times are +inf and evaluate to 0
            return np.exp(-times)
        late = times > self.s
        return (late & bool(events[self.event])).astype(np.float64)


def build_functionals(
    names: Sequence[str], s: float, event: str
) -> Dict[str, OptionalFunctional]:
    return {name: OptionalFunctional(name, s=s, event=event) for name in names}
