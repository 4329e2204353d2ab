"""Конфигурация экспериментов: модели pydantic, загрузка из JSON, окружения и переопределений."""

import hashlib
import json
import os
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

from eqf.charts import FilterVariant
from eqf.filters import FilterSettings, Strategy
from eqf.vins_model import CameraModel, NoiseSpec
from experiments.simulator import TrajectorySpec, WorldSettings

load_dotenv()

SCHEMA_VERSION = 1


class FilterSection(FilterSettings):
    """Параметры фильтров эксперимента и начального приближения."""

    variants: List[FilterVariant] = Field(
        default_factory=lambda: [FilterVariant.T_EQF, FilterVariant.SD_EQF, FilterVariant.ESKF]
    )
    strategies: List[Strategy] = Field(default_factory=lambda: [Strategy.TC])
    prior_sigma_theta: float = Field(0.02, gt=0.0)
    prior_sigma_velocity: float = Field(0.05, gt=0.0)
    prior_sigma_position: float = Field(0.02, gt=0.0)
    prior_sigma_gyro_bias: float = Field(0.01, gt=0.0)
    prior_sigma_accel_bias: float = Field(0.05, gt=0.0)
    landmark_sigma: float = Field(0.05, gt=0.0)
    perturb_initial: bool = True
    zero_initial_bias: bool = False

    def settings(self, variant: FilterVariant, strategy: Strategy) -> FilterSettings:
        """Параметры одного фильтра."""
        values = self.model_dump(include=set(FilterSettings.model_fields))
        values.update(variant=variant, strategy=strategy)
        return FilterSettings(**values)

    def prior_sigmas(self) -> np.ndarray:
        sigmas = (
            self.prior_sigma_theta,
            self.prior_sigma_velocity,
            self.prior_sigma_position,
            self.prior_sigma_gyro_bias,
            self.prior_sigma_accel_bias,
        )
        return np.repeat(sigmas, 3)

    def prior_covariance(self) -> np.ndarray:
        """Начальная ковариация ядра в координатах ESKF."""
        return np.diag(self.prior_sigmas() ** 2)


class MonteCarloSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    runs: int = Field(100, ge=1)
    alpha: float = Field(0.05, gt=0.0, lt=1.0)


class BenchSection(BaseModel):
    """Параметры замеров времени (сетки по m, q и p)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    m_grid: List[int] = Field(default_factory=lambda: [20, 40, 80, 160])
    q_grid: List[int] = Field(default_factory=lambda: [20])
    batch_grid: List[int] = Field(default_factory=lambda: [1, 4])
    variants: List[FilterVariant] = Field(default_factory=lambda: [FilterVariant.T_EQF])
    strategies: List[Strategy] = Field(default_factory=lambda: [Strategy.NAIVE, Strategy.TP, Strategy.TC])
    frames: int = Field(3, ge=1)
    warmup: int = Field(1, ge=0)
    baseline: bool = True


class VerifySection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    random_states: int = Field(10, ge=1)
    landmarks: int = Field(4, ge=1)
    duration: float = Field(1.0, gt=0.0)
    strategy_tolerance: float = Field(1e-6, gt=0.0)
    transform_tolerance: float = Field(1e-5, gt=0.0)


class ObservabilitySection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    duration: float = Field(1.0, gt=0.0)
    frame_every: int = Field(10, ge=1)
    imu_rate: int = Field(100, gt=0)
    landmarks: int = Field(6, ge=1)
    perturbation_sigma: float = Field(0.1, ge=0.0)
    tolerance: float = Field(1e-8, gt=0.0)


class ExperimentConfig(BaseModel):
    """Полная конфигурация эксперимента; неизвестные ключи запрещены."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "results"
    workers: int = Field(1, ge=1)
    trajectory: TrajectorySpec = Field(default_factory=TrajectorySpec)
    world: WorldSettings = Field(default_factory=WorldSettings)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    camera: CameraModel = Field(default_factory=CameraModel)
    filter: FilterSection = Field(default_factory=FilterSection)
    monte_carlo: MonteCarloSection = Field(default_factory=MonteCarloSection)
    bench: BenchSection = Field(default_factory=BenchSection)
    verify: VerifySection = Field(default_factory=VerifySection)
    observability: ObservabilitySection = Field(default_factory=ObservabilitySection)


_ENV_KEYS: Tuple[Tuple[str, str], ...] = (
    ("EQF_OUTPUT_DIR", "output_dir"),
    ("EQF_WORKERS", "workers"),
    ("EQF_SEED", "seed"),
)


def parse_override(item: str) -> Tuple[List[str], Any]:
    """
    Разбирает переопределение вида "filter.batches=3".

    Args:
        item: Строка "путь.через.точки=значение"; значение читается как JSON, иначе как строка.

    Returns:
        Кортеж (путь, значение).
    """
    if "=" not in item:
        raise ValueError(f"Переопределение должно иметь вид ключ=значение: {item}")
    key, raw = item.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ValueError(f"Пустой ключ в переопределении: {item}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def _set_path(data: Dict[str, Any], path: Sequence[str], value: Any) -> None:
    node = data
    for part in path[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[path[-1]] = value


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Sequence[str]] = None,
    use_env: bool = True,
) -> ExperimentConfig:
    """
    Собирает конфигурацию: значения по умолчанию, файл JSON, окружение, переопределения.

    Args:
        path: Путь к файлу JSON.
        overrides: Переопределения "a.b=value" (наивысший приоритет).
        use_env: Учитывать EQF_OUTPUT_DIR, EQF_WORKERS и EQF_SEED.

    Returns:
        Проверенная ExperimentConfig.
    """
    data: Dict[str, Any] = {}
    if path:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise ValueError(f"Конфигурация {path} должна быть объектом JSON")

    if use_env:
        for env_key, field_name in _ENV_KEYS:
            value = os.getenv(env_key)
            if value:
                data[field_name] = value

    for item in overrides or ():
        key_path, value = parse_override(item)
        _set_path(data, key_path, value)

    return ExperimentConfig.model_validate(data)


def config_hash(config: ExperimentConfig) -> str:
    """Первые 12 шестнадцатеричных знаков SHA-256 канонического JSON конфигурации."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
