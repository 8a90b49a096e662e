from contextlib import contextmanager
import logging
from typing import Iterator, List, Optional

import attr

logger = logging.getLogger(__name__)


class ValidationError(Exception):
    """
    An error type raised when a model or configuration invariant is violated.

    This also provides the ability to report the context of a validation
    error... that is, to report which configuration section or which stage of
    a run was executing when the invariant failed.  Errors raised from attrs
    validators carry the offending field name so that configuration errors can
    be traced back to a key and line.
    """

    def __init__(self, msg: str, field: Optional[str] = None):
        super().__init__(msg)
        self.field = field
        self._ctx: List[str] = []

    def push_context(self, ctx: str) -> None:
        """Push a new execution context onto the exception."""
        self._ctx.append(ctx)

    @property
    def message(self) -> str:
        return super().__str__()

    def __str__(self) -> str:
        msg = super().__str__()
        for ctx in self._ctx:
            msg = f'After execution of "{ctx}": ' + msg
        return msg


class NoViability(ValidationError):
    """The drift is outside the range of the covariance: arbitrage of the first kind exists."""


class HorizonError(ValidationError):
    """The time of the overall minimum is not almost surely finite (zero growth rate)."""


@attr.s(auto_attribs=True, frozen=True)
class FieldError(object):
    key: str
    line: Optional[int]
    message: str

    def __str__(self) -> str:
        where = f'line {self.line}' if self.line is not None else 'not set'
        return f'{self.key} ({where}): {self.message}'


class ConfigError(Exception):
    """An aggregate of field-level configuration errors."""

    def __init__(self, errors: List[FieldError]):
        super().__init__('\n'.join(str(error) for error in errors))
        self.errors = errors

    @property
    def keys(self) -> List[str]:
        return [error.key for error in self.errors]


@contextmanager
def context(name: str) -> Iterator[None]:
    """Create a new "validation context".

    This returns a context manager.  Any validation error thrown within this context
    will contain a reference to the value provided.
    """
    try:
        yield
    except ValidationError as e:
        e.push_context(name)
        raise
    except Exception:
        logger.exception('Unhandled exception raised while executing "%s"', name)
        raise


def positive(instance, attribute: attr.Attribute, value) -> None:
    if not value > 0:
        raise ValidationError(f'{attribute.name} must be positive, got {value}', attribute.name)


def nonnegative(instance, attribute: attr.Attribute, value) -> None:
    if not value >= 0:
        raise ValidationError(f'{attribute.name} must be nonnegative, got {value}', attribute.name)


def tail_threshold(instance, attribute: attr.Attribute, value) -> None:
    # 1 is accepted and disables horizon extension
    if not 0 < value <= 1:
        raise ValidationError(f'{attribute.name} must lie in (0, 1], got {value}', attribute.name)
