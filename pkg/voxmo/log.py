"""Logging for the codec modules.

Notes
-----
Every module asks for its logger with `get(module_name)`; all of them hang off the `voxmo`
logger, whose handlers and levels come from `settings.LOG_CONFIG`.
"""

import logging
import logging.config
import settings

ROOT = "voxmo"

def configure(config=None):
    """Applies a `logging.config.dictConfig` dictionary, `settings.LOG_CONFIG` by default."""
    logging.config.dictConfig(settings.LOG_CONFIG if config is None else config)

configure()

def get(module_name):
    """Acquires a logger for a module.

    Parameters
    ----------
    module_name : str
        Module name where the logger is being acquired.

    Returns
    -------
    logging.Logger
        Child of the `voxmo` logger named after the module.
    """
    return logging.getLogger(f"{ROOT}.{module_name}")

def enable_quiet_mode():
    """Drops INFO and WARNING records everywhere; used by the `--quiet` flag."""
    logging.disable(logging.WARNING)

def disable_quiet_mode():
    logging.disable(logging.NOTSET)
