"""
logging_utils.py

Logging for the testing lab. Messages carry a bracketed component tag
([PROTOCOLS], [RISK LAB], ...), nested steps are indented by five spaces.
Records go to stderr so the CSV on stdout stays byte-reproducible.

ENABLE_LOGGING (off when LAB_ENV=production) silences everything;
LAB_LOG_LEVEL sets the threshold of the "lab" logger.
"""

import logging
import sys

from config import ENABLE_LOGGING, LOG_LEVEL

logger = logging.getLogger("lab")
if not logger.handlers:
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
    logger.addHandler(_handler)
logger.setLevel(LOG_LEVEL)


def log_msg(msg: str, level: str = "info", cond: bool = True) -> None:
    """
    Logs a message when logging is enabled and the caller's condition holds.

    Parameters:
        msg (str): Message, prefixed with a bracketed component tag.
        level (str): 'debug', 'info', 'warning' or 'error'.
        cond (bool): Additional condition to trigger logging.

    Returns:
        None
    """
    if not (ENABLE_LOGGING and cond):
        return
    try:
        getattr(logger, level)(msg)
    except AttributeError:
        logger.warning(f"Logging failure: unknown level {level!r} for {msg!r}")
