"""Иерархия исключений библиотеки."""


class EqfError(Exception):
    """Базовое исключение всех ошибок оценивания."""


class ChartDomainError(EqfError, ValueError):
    """Состояние вне области определения локальной карты (угол поворота близок к pi)."""


class DimensionMismatchError(EqfError, ValueError):
    """Несовпадение размерностей (число ориентиров, размер матриц)."""


class NonMonotonicTimeError(EqfError, ValueError):
    """Временные метки не возрастают строго."""


class BehindCameraError(EqfError, ValueError):
    """Ориентир находится за камерой или слишком близко к ней."""


class MisalignedError(EqfError, ValueError):
    """Оценки и эталонная траектория не выровнены по времени."""


class NumericalFailureError(EqfError, ArithmeticError):
    """Численная процедура дала вырожденный результат."""


class NonFiniteJacobianError(EqfError, ArithmeticError):
    """В якобиане или матрице перехода появились inf/nan."""


class NotPSDError(EqfError, ArithmeticError):
    """Ковариация не является симметричной неотрицательно определенной."""


class SingularInnovationError(EqfError, ArithmeticError):
    """Ковариация невязки не обратима."""


class SingularCovarianceError(EqfError, ArithmeticError):
    """Блок ковариации не обратим при вычислении NEES."""
