"""
Logging setup for the command line and the viewer
"""

import logging

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity=0):
    """
    Configure the root logger once.

    Args:
        verbosity: -1 quiet (WARNING), 0 normal (INFO), 1+ verbose (DEBUG)
    """
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    return logging.getLogger("carve")
