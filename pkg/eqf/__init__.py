"""Библиотека эквивариантных фильтров для визуально-инерциальной навигации."""

__version__ = "0.1.0"
