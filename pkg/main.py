"""Точка входа для экспериментов с фильтрами EqF визуально-инерциальной одометрии."""

import argparse
import asyncio
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from eqf.charts import FilterVariant
from eqf.errors import EqfError
from eqf.filters import Strategy
from experiments.bench import bench, write_bench_csv
from experiments.metrics import compare_ensembles, summarize, write_json, write_nees_csv, write_run_csv
from experiments.runner import observability_summary, run_filter, run_monte_carlo, simulate_run
from experiments.simulator import export_csv
from tools.check_manager import CheckManager
from tools.checks import VerificationChecks
from utils.config import ExperimentConfig, config_hash, load_config
from utils.logger import add_file_handler, remove_file_handler, set_global_level, setup_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3

logger = setup_logger("main")


def build_parser() -> argparse.ArgumentParser:
    """Парсер командной строки с подкомандами."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Файл конфигурации JSON")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Переопределение параметра, например filter.batches=3 (можно повторять)",
    )
    common.add_argument("--output", help="Каталог результатов")
    common.add_argument("--seed", type=int, help="Seed эксперимента")
    common.add_argument("--workers", type=int, help="Число процессов для Монте-Карло")
    common.add_argument("--log-level", default=None, help="Уровень логирования (DEBUG, INFO, ...)")

    parser = argparse.ArgumentParser(description="Эксперименты с фильтрами EqF для VINS")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="Сгенерировать потоки ИНС и камеры")
    simulate.add_argument("--run-index", type=int, default=0)

    run = commands.add_parser("run", parents=[common], help="Один прогон фильтра")
    run.add_argument("--variant", type=FilterVariant, default=FilterVariant.T_EQF)
    run.add_argument("--strategy", type=Strategy, default=Strategy.TC)
    run.add_argument("--run-index", type=int, default=0)

    mc = commands.add_parser("mc", parents=[common], help="Ансамбль Монте-Карло")
    mc.add_argument("--variant", type=FilterVariant, action="append", help="Вариант (по умолчанию из конфигурации)")
    mc.add_argument("--strategy", type=Strategy, help="Реализация (по умолчанию первая из конфигурации)")
    mc.add_argument("--runs", type=int, help="Число прогонов")

    commands.add_parser("bench", parents=[common], help="Замеры времени и FLOP на кадр")
    commands.add_parser("observability", parents=[common], help="Отчет о ненаблюдаемых направлениях")

    verify = commands.add_parser("verify", parents=[common], help="Проверки эквивалентности")
    verify.add_argument("--only", nargs="*", default=None, help="Запустить только указанные проверки")
    verify.add_argument("--list", action="store_true", help="Показать список проверок и выйти")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides: List[str] = list(args.overrides)
    if args.output:
        overrides.append(f"output_dir={json.dumps(args.output)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    return load_config(args.config, overrides)


def _stamp(config: ExperimentConfig) -> Dict[str, Any]:
    return {"config_hash": config_hash(config), "seed": config.seed}


def cmd_simulate(config: ExperimentConfig, args: argparse.Namespace) -> int:
    sim = simulate_run(config, args.run_index)
    paths = export_csv(sim, config.output_dir, config_hash(config), config.seed)
    print(f"✅ Симуляция: {len(sim.imu)} отсчетов ИНС, {len(sim.frames)} кадров")
    for path in paths:
        print(f"   📄 {path}")
    return EXIT_OK


def cmd_run(config: ExperimentConfig, args: argparse.Namespace) -> int:
    record = run_filter(config, args.variant, args.strategy, run_index=args.run_index, progress=True)
    path = os.path.join(config.output_dir, f"run_{args.variant.value}_{args.strategy.value}_{args.run_index}.csv")
    write_run_csv(record, path, config_hash(config))
    errors = record.position_errors()
    print(f"✅ {args.variant.value}/{args.strategy.value}: конечная ошибка положения {errors[-1]:.3f} м")
    print(f"   📄 {path}")
    return EXIT_OK


async def cmd_mc(config: ExperimentConfig, args: argparse.Namespace) -> int:
    variants = args.variant or list(config.filter.variants)
    strategy = args.strategy or config.filter.strategies[0]
    stamp = _stamp(config)
    summaries = []
    for variant in variants:
        records = await run_monte_carlo(config, variant, strategy, runs=args.runs)
        summary = summarize(records, config.monte_carlo.alpha)
        summaries.append(summary)
        base = os.path.join(config.output_dir, f"mc_{variant.value}_{strategy.value}")
        write_json(summary.to_dict(**stamp), f"{base}_summary.json")
        write_nees_csv(summary, f"{base}_nees.csv", **stamp)
        lo, hi = summary.bounds
        print(
            f"✅ {variant.value}: NEES ориентации (последняя треть) "
            f"{summary.final_third(summary.nees_orientation).mean():.2f}, границы [{lo:.2f}, {hi:.2f}]"
        )
        print(f"   📄 {base}_summary.json, {base}_nees.csv")

    comparisons = compare_ensembles(summaries)
    if comparisons:
        path = os.path.join(config.output_dir, f"mc_comparison_{strategy.value}.json")
        write_json({**stamp, "comparisons": [c.to_dict() for c in comparisons]}, path)
        for c in comparisons:
            print(
                f"⚖️  {c.other.value} / {c.reference.value}: NEES ориентации x{c.nees_orientation_final_ratio:.2f}, "
                f"RMSE {c.reference.value} не хуже в {c.rmse_win_fraction:.0%} прогонов"
            )
        print(f"   📄 {path}")
    return EXIT_OK


def cmd_bench(config: ExperimentConfig, args: argparse.Namespace) -> int:
    section = config.bench
    rows = bench(
        section.variants, section.strategies, section.m_grid, section.q_grid, section.batch_grid,
        frames=section.frames, warmup=section.warmup, baseline=section.baseline, seed=config.seed,
    )
    stamp = _stamp(config)
    write_bench_csv(rows, os.path.join(config.output_dir, "bench.csv"), **stamp)
    write_json({**stamp, "rows": [row.to_dict() for row in rows]}, os.path.join(config.output_dir, "bench.json"))
    seen = set()
    for row in rows:
        key = (row.variant, row.strategy, row.q, row.p, row.phase)
        if row.slope is not None and key not in seen:
            seen.add(key)
            print(f"📈 {row.variant}/{row.strategy} q={row.q} p={row.p} {row.phase}: наклон {row.slope:.2f}")
    print(f"✅ Замеры сохранены в {config.output_dir}")
    return EXIT_OK


def cmd_observability(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = observability_summary(config)
    path = os.path.join(config.output_dir, "observability.json")
    write_json({**_stamp(config), **report}, path)
    for name, entry in report["variants"].items():
        print(f"🔭 {name}: ядро {entry['nullspace_dim']}, при возмущенных оценках {entry['perturbed_nullspace_dim']}")
    print(f"   📄 {path}")
    return EXIT_OK


def cmd_verify(config: ExperimentConfig, args: argparse.Namespace) -> int:
    manager = CheckManager()
    manager.register_checks_from_instance(VerificationChecks(config))
    logger.info(f"Зарегистрировано проверок: {len(manager.checks)}")

    if args.list:
        for definition in manager.get_check_definitions():
            print(f"• {definition['name']}: {definition['description']}")
        return EXIT_OK

    results = manager.run_all(args.only)
    passed = all(result.passed for result in results)
    path = os.path.join(config.output_dir, "verify.json")
    write_json({**_stamp(config), "passed": passed, "checks": [r.to_dict() for r in results]}, path)

    print("\n" + "=" * 60)
    for result in results:
        mark = "✅" if result.passed else "❌"
        detail = result.error or f"{result.value:.3e} (допуск {result.tolerance:.0e})"
        print(f"{mark} {result.name}: {detail}")
        print(f"   {result.description}")
    print("=" * 60)
    print(f"{'✅ Все проверки пройдены' if passed else '❌ Есть проваленные проверки'}; отчет: {path}")
    return EXIT_OK if passed else EXIT_FAILURE


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "mc": cmd_mc,
    "bench": cmd_bench,
    "observability": cmd_observability,
    "verify": cmd_verify,
}


def report_error(exc: BaseException, code: int) -> int:
    """Печатает машиночитаемую ошибку в stderr и возвращает код выхода."""
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
    return code


async def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Основная функция запуска.

    Args:
        argv: Аргументы командной строки (по умолчанию sys.argv).

    Returns:
        Код выхода.
    """
    load_dotenv()
    args = build_parser().parse_args(argv)
    if args.log_level:
        level = logging.getLevelName(args.log_level.upper())
        if isinstance(level, int):
            set_global_level(level)
        else:
            logger.warning(f"Неизвестный уровень логирования: {args.log_level}")

    try:
        config = config_from_args(args)
        os.makedirs(config.output_dir, exist_ok=True)
    except (ValidationError, ValueError, OSError) as e:
        logger.error(f"Ошибка конфигурации: {str(e)}", exc_info=True)
        print(f"❌ Ошибка конфигурации: {str(e)}")
        return report_error(e, EXIT_CONFIG)

    handler = add_file_handler(os.path.join(config.output_dir, "run.log"))
    logger.info(f"Команда {args.command}, конфигурация {config_hash(config)}, seed {config.seed}")
    try:
        result = COMMANDS[args.command](config, args)
        if asyncio.iscoroutine(result):
            result = await result
        return result
    except EqfError as e:
        logger.error(f"Ошибка оценивания: {str(e)}", exc_info=True)
        print(f"❌ Ошибка оценивания: {str(e)}")
        return report_error(e, EXIT_ESTIMATION)
    except ValidationError as e:
        logger.error(f"Ошибка конфигурации: {str(e)}", exc_info=True)
        return report_error(e, EXIT_CONFIG)
    except Exception as e:
        logger.error(f"Критическая ошибка: {str(e)}", exc_info=True)
        print(f"❌ Произошла критическая ошибка: {str(e)}")
        return report_error(e, EXIT_FAILURE)
    finally:
        remove_file_handler(handler)


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        print("\n\n👋 Программа завершена.")
        sys.exit(130)
