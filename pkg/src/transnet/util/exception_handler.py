import time  # python in-built module
import logging  # python in-built module
import functools
from typing import Tuple, Type


class TransNetError(Exception):
    """Base class for every error raised by the transnet package."""


class ShapeError(TransNetError, ValueError):
    """Tensor extents do not fit the operation."""


class InputError(TransNetError, ValueError):
    """An argument is out of its valid range (labels, head indices, groups, configs)."""


class FormatError(TransNetError, ValueError):
    """A file on disk does not follow the expected layout."""


class DivergenceError(TransNetError, ArithmeticError):
    """Training produced a non-finite loss."""


def timing_decorator(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        result = func(*args, **kwargs)
        end_time = time.time()
        logging.getLogger(func.__module__).info(f"{func.__name__} executed in {end_time - start_time:.3f} seconds.")
        return result

    return wrapper


def exception_handler(default_return_value=None, exceptions: Tuple[Type[BaseException], ...] = (Exception,)):
    """
    A decorator factory to catch exceptions, log them, and return a specified default value.

    Args:
        default_return_value: The value to return in case an exception is caught. Defaults to None.
        exceptions: The exception types that are swallowed. Anything else propagates.

    Returns:
        A decorator that wraps the function and provides exception handling.
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except exceptions as e:
                logging.getLogger(func.__module__).error(f"An error occurred in {func.__name__}: {str(e)}")
                # Return the specified default value in case of an exception.
                return default_return_value

        return wrapper

    return decorator
