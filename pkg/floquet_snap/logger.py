"""
Structured logging configuration with JSON-safe rendering of numeric values.
"""
import structlog
import logging
import sys
from typing import Any, Dict
import numpy as np


# Arrays larger than this are summarized instead of rendered element by element
MAX_INLINE_ARRAY = 16


def coerce_numeric(value: Any) -> Any:
    """Convert numpy and complex values into something JSONRenderer accepts."""
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(np.real(value)), "im": float(np.imag(value))}
    if isinstance(value, np.ndarray):
        if value.size > MAX_INLINE_ARRAY:
            return {"shape": list(value.shape), "dtype": str(value.dtype)}
        return [coerce_numeric(v) for v in value.tolist()] if value.ndim else coerce_numeric(value.item())
    if isinstance(value, (list, tuple)):
        return [coerce_numeric(v) for v in value]
    return value


def add_numeric_coercion(logger: Any, method_name: str, event_dict: Dict) -> Dict:
    """Processor that makes numeric event values JSON-serializable."""
    for key, value in event_dict.items():
        event_dict[key] = coerce_numeric(value)
    return event_dict


def configure_logging(log_level: str = "INFO"):
    """Configure structured logging."""
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stdout,
        level=getattr(logging, log_level.upper()),
    )
    logging.getLogger().setLevel(getattr(logging, log_level.upper()))

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            add_numeric_coercion,
            structlog.processors.JSONRenderer()
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def get_logger(name: str):
    """Get a configured logger instance."""
    return structlog.get_logger(name)


# Configure on module import
configure_logging()
