"""Утилиты для проекта."""
