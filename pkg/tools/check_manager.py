"""Менеджер для регистрации и вызова проверок эквивалентности."""

import inspect
import re
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional

from utils.logger import setup_logger

logger = setup_logger("tools.check_manager")

CHECK_PREFIX = "check_"


def docstring_summary(doc: str) -> str:
    """
    Описание проверки из docstring в стиле Google: текст до секций Args и Returns.

    Args:
        doc: Docstring функции.

    Returns:
        Описание одной строкой.
    """
    if not doc:
        return ""
    description = re.split(r"\n\s*(?:Args|Returns):", doc)[0]
    return " ".join(description.split())


@dataclass
class CheckOutcome:
    """Значение, которое возвращает проверка: метрика и допуск."""

    passed: bool
    value: float
    tolerance: float
    details: Dict[str, Any] = field(default_factory=dict)


@dataclass
class CheckResult:
    """Результат вызова проверки реестром."""

    name: str
    description: str
    passed: bool
    value: Optional[float] = None
    tolerance: Optional[float] = None
    seconds: float = 0.0
    error: Optional[str] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class CheckManager:
    """Реестр именованных проверок для подкоманды verify."""

    def __init__(self):
        self.checks: Dict[str, Callable[..., CheckOutcome]] = {}

    def register_check(self, name: str, func: Callable[..., CheckOutcome]) -> None:
        """
        Регистрирует проверку.

        Args:
            name: Имя проверки.
            func: Синхронная функция, возвращающая CheckOutcome.
        """
        if not callable(func) or inspect.iscoroutinefunction(func):
            raise ValueError(f"Проверка {name} должна быть синхронной функцией")
        self.checks[name] = func

    def register_checks_from_instance(self, instance: Any, prefix: str = CHECK_PREFIX) -> None:
        """
        Регистрирует все публичные методы экземпляра с заданным префиксом.

        Args:
            instance: Экземпляр класса с проверками.
            prefix: Префикс имен методов-проверок.
        """
        for name, method in inspect.getmembers(instance, predicate=inspect.ismethod):
            if name.startswith(prefix):
                self.register_check(name[len(prefix):], method)

    def describe(self, name: str) -> str:
        return docstring_summary(self.checks[name].__doc__ or "") or f"Проверка {name}"

    def run_check(self, name: str) -> CheckResult:
        """
        Вызывает проверку; исключение превращается в проваленный результат.

        Args:
            name: Имя проверки.

        Returns:
            CheckResult.
        """
        if name not in self.checks:
            return CheckResult(name, "", False, error=f"Проверка '{name}' не найдена")

        description = self.describe(name)
        start = time.perf_counter()
        try:
            outcome = self.checks[name]()
        except Exception as e:
            logger.error(f"Ошибка при выполнении проверки '{name}': {str(e)}", exc_info=True)
            return CheckResult(
                name, description, False, seconds=time.perf_counter() - start,
                error=f"{type(e).__name__}: {str(e)}",
            )
        return CheckResult(
            name,
            description,
            bool(outcome.passed),
            value=float(outcome.value),
            tolerance=float(outcome.tolerance),
            seconds=time.perf_counter() - start,
            details=outcome.details,
        )

    def run_all(self, names: Optional[List[str]] = None) -> List[CheckResult]:
        results = []
        for name in names or list(self.checks):
            result = self.run_check(name)
            status = "OK" if result.passed else "FAIL"
            logger.info(f"[{status}] {name}: {result.value} (допуск {result.tolerance}) за {result.seconds:.2f} с")
            results.append(result)
        return results

    def get_check_definitions(self) -> List[Dict[str, str]]:
        """Имена и описания зарегистрированных проверок в порядке регистрации."""
        return [{"name": name, "description": self.describe(name)} for name in self.checks]
