"""Настройка логирования для проекта."""

import logging
import os
import sys
from typing import List, Optional

from colorama import Fore, Style, init as colorama_init
from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

_LEVEL_COLORS = {
    logging.DEBUG: Fore.CYAN,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.MAGENTA,
}


class ColorFormatter(logging.Formatter):
    """Форматтер, раскрашивающий имя уровня для терминала."""

    def format(self, record: logging.LogRecord) -> str:
        original = record.levelname
        color = _LEVEL_COLORS.get(record.levelno)
        if color:
            record.levelname = f"{color}{original}{Style.RESET_ALL}"
        try:
            return super().format(record)
        finally:
            record.levelname = original


def default_level() -> int:
    """Уровень из переменной окружения EQF_LOG_LEVEL (по умолчанию INFO)."""
    name = os.getenv("EQF_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def setup_logger(name: str = "eqf", level: Optional[int] = None) -> logging.Logger:
    """
    Настраивает и возвращает логгер.

    Повторный вызов для того же имени не добавляет обработчики.

    Args:
        name: Имя логгера.
        level: Уровень логирования; по умолчанию из EQF_LOG_LEVEL.

    Returns:
        Настроенный логгер.
    """
    logger = logging.getLogger(name)
    level = default_level() if level is None else level
    logger.setLevel(level)
    logger.propagate = False

    if any(getattr(h, "_eqf_console", False) for h in logger.handlers):
        for handler in logger.handlers:
            handler.setLevel(level)
        return logger

    stream = sys.stdout
    if stream.isatty():
        colorama_init()
        formatter: logging.Formatter = ColorFormatter(LOG_FORMAT, datefmt=DATE_FORMAT)
    else:
        formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    console_handler = logging.StreamHandler(stream)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    console_handler._eqf_console = True  # type: ignore[attr-defined]
    logger.addHandler(console_handler)

    return logger


def _project_loggers() -> List[logging.Logger]:
    return [
        logger for logger in logging.Logger.manager.loggerDict.values()
        if isinstance(logger, logging.Logger) and any(getattr(h, "_eqf_console", False) for h in logger.handlers)
    ]


def set_global_level(level: int) -> None:
    """Меняет уровень всех логгеров проекта (флаг --log-level)."""
    os.environ["EQF_LOG_LEVEL"] = logging.getLevelName(level)
    for logger in _project_loggers():
        logger.setLevel(level)
        for handler in logger.handlers:
            handler.setLevel(level)


def add_file_handler(path: str) -> logging.FileHandler:
    """
    Добавляет общий файловый обработчик (run.log в каталоге результатов) ко всем логгерам проекта.

    Args:
        path: Путь к файлу.

    Returns:
        Созданный обработчик.
    """
    file_handler = logging.FileHandler(path, encoding="utf-8")
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    for logger in _project_loggers():
        logger.addHandler(file_handler)
    return file_handler


def remove_file_handler(handler: logging.FileHandler) -> None:
    for logger in _project_loggers():
        if handler in logger.handlers:
            logger.removeHandler(handler)
    handler.close()
