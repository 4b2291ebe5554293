from transnet.util.logger import setup_logging
from transnet.util.exception_handler import (
    exception_handler,
    timing_decorator,
    TransNetError,
    ShapeError,
    InputError,
    FormatError,
    DivergenceError,
)
