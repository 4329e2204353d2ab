"""Эксперименты: симулятор, метрики, прогоны фильтров и замеры производительности."""
