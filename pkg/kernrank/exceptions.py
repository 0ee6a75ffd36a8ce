from __future__ import annotations

from typing import Any, Callable, TypeAlias

__all__ = [
    'FuncExceptT',

    'CustomError', 'CustomValueError', 'CustomRuntimeError',

    'ValidationError', 'UnknownKernelError',
    'DomainViolation', 'SubsetNotContained', 'OutOfChart',
    'SingularExpansion', 'IllConditionedFit',
    'SingularSystem',
    'QuadratureNotConverged', 'NonConvergent',
    'MismatchDetected'
]

FuncExceptT: TypeAlias = str | Callable[..., Any] | None
"""Function (or its name) that raised the error, shown as a prefix of the message."""


class CustomError(Exception):
    """
    Base of every error raised by kernrank.

    The message is a ``str.format`` template filled with the keyword arguments,
    which also stay available as attributes of the exception.
    """

    exit_code: int = 1
    """Process exit status the command line maps this error to."""

    def __init__(self, message: str | None = None, func: FuncExceptT = None, **kwargs: Any) -> None:
        self.message = message or 'An unknown error occurred!'
        self.func = func
        self.kwargs = kwargs

        for key, value in kwargs.items():
            setattr(self, key, value)

        super().__init__(str(self))

    @property
    def func_name(self) -> str | None:
        if self.func is None:
            return None

        if isinstance(self.func, str):
            return self.func

        return getattr(self.func, '__qualname__', getattr(self.func, '__name__', repr(self.func)))

    def __str__(self) -> str:
        try:
            message = self.message.format(**self.kwargs)
        except (KeyError, IndexError):
            message = self.message

        if (name := self.func_name) is not None:
            return f'({name}) {message}'

        return message


class CustomValueError(CustomError, ValueError):
    """Thrown when a specified value is invalid."""


class CustomRuntimeError(CustomError, RuntimeError):
    """Thrown when a computation cannot be carried out."""


class ValidationError(CustomValueError):
    """Raised when a parameter or a configuration fails validation."""

    exit_code = 2


class UnknownKernelError(ValidationError):
    """Raised when a kernel string can not be parsed into a known family."""

    def __init__(
        self, func: FuncExceptT, kernel: str, message: str = 'Unknown kernel "{kernel}"! {detail}',
        detail: str = '', **kwargs: Any
    ) -> None:
        super().__init__(message, func, kernel=kernel, detail=detail, **kwargs)


class DomainViolation(CustomValueError):
    """Raised when a point lies outside the open domain it is supposed to belong to."""

    exit_code = 3

    def __init__(
        self, func: FuncExceptT, message: str = 'Point {point} is not inside {domain}!', **kwargs: Any
    ) -> None:
        super().__init__(message, func, **kwargs)


class SubsetNotContained(DomainViolation):
    """Raised when a sampling subset is not contained in its parent domain."""

    def __init__(
        self, func: FuncExceptT, subset: Any, domain: Any,
        message: str = '{subset} is not contained in {domain}!', **kwargs: Any
    ) -> None:
        super().__init__(func, message, subset=subset, domain=domain, **kwargs)


class OutOfChart(DomainViolation):
    """Raised when a point is outside the open unit ball parametrizing the north hemisphere."""

    def __init__(
        self, func: FuncExceptT, point: Any,
        message: str = 'Chart point {point} must have norm < 1, got {norm}!', **kwargs: Any
    ) -> None:
        super().__init__(func, message, point=point, **kwargs)


class SingularExpansion(CustomValueError):
    """Raised when a series composition is expanded at a singular point of the outer function."""

    exit_code = 3

    def __init__(
        self, func: FuncExceptT, message: str = 'Can not expand around {value}: {detail}', **kwargs: Any
    ) -> None:
        super().__init__(message, func, **kwargs)


class IllConditionedFit(CustomValueError):
    """Raised when a polynomial fit can not be resolved at the requested degree."""

    exit_code = 2

    def __init__(
        self, func: FuncExceptT, degree: int,
        message: str = 'Polynomial fit of degree {degree} is ill conditioned: {detail}', **kwargs: Any
    ) -> None:
        super().__init__(message, func, degree=degree, **kwargs)


class SingularSystem(CustomRuntimeError):
    """Raised when a discrete system is numerically singular; carries the numerical rank."""

    exit_code = 4

    def __init__(
        self, func: FuncExceptT, rank: int, size: int,
        message: str = 'The {size}x{size} system is singular, numerical rank is {rank}!', **kwargs: Any
    ) -> None:
        super().__init__(message, func, rank=rank, size=size, **kwargs)


class QuadratureNotConverged(CustomRuntimeError):
    """Raised when doubling the quadrature nodes keeps changing the result beyond the tolerance."""

    exit_code = 5

    def __init__(
        self, func: FuncExceptT, nodes: int, change: float,
        message: str = 'Quadrature did not converge with {nodes} nodes per panel (relative change {change:.3e})!',
        **kwargs: Any
    ) -> None:
        super().__init__(message, func, nodes=nodes, change=change, **kwargs)


class NonConvergent(CustomRuntimeError):
    """Raised when a truncated series does not settle within its term cap."""

    exit_code = 5

    def __init__(
        self, func: FuncExceptT, message: str = 'Series did not converge within {terms} terms!', **kwargs: Any
    ) -> None:
        super().__init__(message, func, **kwargs)


class MismatchDetected(CustomRuntimeError):
    """Raised when a re-executed run does not reproduce its recorded payload."""

    exit_code = 6

    def __init__(
        self, func: FuncExceptT, field: str,
        message: str = 'Payload mismatch at "{field}": recorded {recorded!r}, reproduced {reproduced!r}',
        **kwargs: Any
    ) -> None:
        super().__init__(message, func, field=field, **kwargs)
