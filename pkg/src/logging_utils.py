import logging
import os

import config
from settings import LOG_DIR, ensure_dirs


def setup_logging(level=None, log_file=None):
    """
    Configure the root logger with a console handler and an optional file handler.

    :param level: Level name or number; defaults to config.LOGGING_CONFIG['level']
    :param log_file: File name placed under LOG_DIR (or an absolute path)
    :return: the root logger
    """
    level = level or config.LOGGING_CONFIG['level']
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    log_file = log_file or config.LOGGING_CONFIG.get('log_file')

    formatter = logging.Formatter(config.LOGGING_CONFIG['format'])
    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console = logging.StreamHandler()
    console.setFormatter(formatter)
    root.addHandler(console)

    if log_file:
        if not os.path.isabs(log_file):
            ensure_dirs(LOG_DIR)
            log_file = os.path.join(LOG_DIR, log_file)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    return root


def print_bar(length=70, char='='):
    """
    Print a horizontal bar with a given length and character.

    :param length: Length of the bar to be printed
    :param char: Character to use for printing the bar
    """
    print(char * length)


def print_stage(tag, message):
    """Print a tagged progress line, e.g. ``[Index] Built 20000 documents``."""
    print(f"[{tag}] {message}")
