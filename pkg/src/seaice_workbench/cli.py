#!/usr/bin/env python3
"""
Командная строка seaice-workbench

Подкоманды покрывают весь процесс: генерация синтетических каталогов,
сборка датасетов, обучение, оценка, поиск снимков, отчёты сравнения,
сравнение с натурными наблюдениями и экспорт траекторий метрик.
"""

import argparse
import logging
import sys
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .catalog import MANIFEST_NAME, OBSERVATIONS_NAME, read_manifest, read_observations, write_manifest, \
    write_observations
from .checkpoint import load_checkpoint
from .config import Config, RunConfig, model_config_from, setup_logging
from .errors import ConfigError, DataFormatError, MissingDatasetError, ModelError, WorkbenchError
from .evaluation import (
    SearchQuery,
    comparison_report,
    export_trajectories,
    final_metrics_table,
    insitu_compare,
    search_catalog,
    write_insitu_report,
)
from .geogrid import GeoPoint
from .gradcheck import finite_difference_check
from .losses import LOSSES
from .models import Model, build_model, count_parameters, predict_batch
from .pipeline import build_dataset, discover_dataset, load_charts_lookup
from .raster_io import read_chart
from .seeding import derive_seed, make_rng
from .synth import catalog_layout, gen_catalog, gen_insitu_observations, read_truth
from .training import evaluate_batches, export_metrics, read_metrics, run_name, train

logger = logging.getLogger(__name__)


# --- Обработчики подкоманд ------------------------------------------------------

def _regions(run: RunConfig, requested: Optional[Sequence[str]]) -> List[str]:
    if not requested:
        return list(run.regions)
    unknown = [r for r in requested if r not in run.regions]
    if unknown:
        raise ConfigError(f"unknown regions {unknown}; configured: {sorted(run.regions)}")
    return list(requested)


def cmd_synth(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    for region_id in _regions(run, args.region):
        out_dir = run.catalogs_dir / region_id
        entries = gen_catalog(
            derive_seed(run.seed, f"catalog-{region_id}"), run.n_entries, run.regions[region_id],
            run.date_range, run.mislabel_rate, out_dir, params=run.scene, jobs=run.jobs,
            progress=not args.quiet,
        )
        write_manifest(out_dir / MANIFEST_NAME, entries)
        truth, _ = read_truth(catalog_layout(out_dir, entries[0].id)["truth"])
        observations = gen_insitu_observations(derive_seed(run.seed, f"insitu-{region_id}"), truth,
                                               args.insitu, args.insitu_sd)
        write_observations(out_dir / OBSERVATIONS_NAME, observations)
        print(f"✅ {region_id}: {len(entries)} снимков, {len(observations)} наблюдений -> {out_dir}")
    return 0


def cmd_build_dataset(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    for region_id in _regions(run, args.region):
        catalog_dir = run.catalogs_dir / region_id
        entries = read_manifest(catalog_dir / MANIFEST_NAME)
        summary = build_dataset(region_id, entries, load_charts_lookup(catalog_dir), run.datasets_dir,
                                run.build, progress=not args.quiet)
        print(f"✅ {region_id}: сохранено {summary['kept']}, отклонено {summary['rejected']}, "
              f"батчей train/test {summary['train_batches']}/{summary['test_batches']}")
    return 0


def cmd_train(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    strategy = run.strategy
    ids = [s.dataset_id for s in strategy.stages] + [strategy.test_dataset_id]
    datasets = {i: discover_dataset(run.datasets_dir, i) for i in dict.fromkeys(ids)}
    if args.resume:
        model, _ = load_checkpoint(args.resume)
    else:
        model = build_model(run.model, seed=run.seed)
    name = run_name(model.config.family, strategy)
    run_dir = run.runs_dir / name
    model, log = train(model, strategy, datasets, checkpoint_dir=run_dir, prefetch=run.prefetch,
                       progress=not args.quiet)
    metrics_path = export_metrics(log, run_dir / "metrics.csv")
    last = log.records[-1]
    print(f"✅ {name}: {log.epochs} эпох, test wMAE={last.test['weighted_mae']:.4f}, "
          f"test MAE={last.test['mae']:.4f} -> {metrics_path}")
    return 0


def cmd_evaluate(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    model, name = load_checkpoint(args.checkpoint)
    name = name or Path(args.checkpoint).stem
    splits = discover_dataset(run.datasets_dir, args.dataset)
    paths = splits.test if args.split == "test" else splits.train
    if not paths:
        raise MissingDatasetError(f"dataset {args.dataset!r} has no {args.split} batches")
    values = evaluate_batches(model, paths, run.prefetch)
    out = Path(args.out) if args.out else run.runs_dir / "evaluation" / f"{name}_{args.dataset}_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    row = {"run": name, "dataset": args.dataset, "split": args.split, "batches": len(paths), **values}
    pd.DataFrame([row]).to_csv(out, index=False, float_format="%.17g", lineterminator="\n")
    print(f"📊 {name} на {args.dataset}/{args.split}: " + ", ".join(f"{k}={v:.4f}" for k, v in values.items()))
    return 0


def _load_catalog(run: RunConfig, region_ids: Sequence[str]):
    entries = []
    for region_id in region_ids:
        manifest = run.catalogs_dir / region_id / MANIFEST_NAME
        if not manifest.exists():
            logger.warning(f"⚠️ Манифест {manifest} не найден, каталог {region_id} пуст")
            continue
        entries.extend(read_manifest(manifest))
    return entries


def _find_entry(run: RunConfig, region_id: str, entry_id: Optional[str]):
    entries = read_manifest(run.catalogs_dir / region_id / MANIFEST_NAME)
    if not entries:
        raise DataFormatError(f"catalog {region_id} is empty")
    if entry_id is None:
        return entries[0]
    for entry in entries:
        if entry.id == entry_id:
            return entry
    raise DataFormatError(f"entry {entry_id!r} not found in catalog {region_id}")


def cmd_search(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    query = SearchQuery(GeoPoint(args.lat, args.lon), args.date_from, args.date_to, args.max_results)
    results = search_catalog(_load_catalog(run, _regions(run, args.region)), query)
    print(f"{len(results)} results")
    for entry in results:
        print(f"{entry.id}\t{entry.timestamp.isoformat()}\t{entry.reported_direction.value}\t{entry.image_path}")
    return 0


def _load_models(paths: Sequence[str]) -> Dict[str, Model]:
    models: Dict[str, Model] = {}
    for path in paths:
        model, name = load_checkpoint(path)
        name = name or Path(path).stem
        if name in models:
            name = Path(path).stem
        models[name] = model
    return models


def cmd_report(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    entry = _find_entry(run, args.region, args.entry)
    chart = read_chart(catalog_layout(run.catalogs_dir / args.region, entry.id)["chart"])
    out_dir = Path(args.out) if args.out else run.reports_dir / "compare"
    report = comparison_report(entry, _load_models(args.checkpoint or []), chart, out_dir)
    print(f"✅ Отчёт {entry.id}: {len(report.files)} файлов -> {report.directory}")
    return 0


def cmd_insitu(args, config: Config) -> int:
    run = RunConfig.from_config(config)
    catalog_dir = run.catalogs_dir / args.region
    entry = _find_entry(run, args.region, args.entry)
    chart = read_chart(catalog_layout(catalog_dir, entry.id)["chart"])
    observations = read_observations(args.observations or catalog_dir / OBSERVATIONS_NAME)
    report = insitu_compare(observations, chart)
    out_dir = Path(args.out) if args.out else run.reports_dir / "insitu" / entry.id
    write_insitu_report(report, chart, out_dir)
    s = report.summary()
    print(f"📊 {entry.id}: n={s['count']}, bias={s['mean_bias']:+.4f}, MAE={s['mae']:.4f}, "
          f"SD={s['error_sd']:.4f}, пропущено {report.skipped_outside + report.skipped_date} -> {out_dir}")
    return 0


def cmd_export_trajectories(args, config: Config) -> int:
    if args.metrics:
        paths = [Path(p) for p in args.metrics]
    else:
        run = RunConfig.from_config(config)
        paths = sorted(run.runs_dir.glob("*/metrics.csv"))
    if not paths:
        raise DataFormatError("no metrics files found")
    logs = [log for path in paths for log in read_metrics(path)]
    out = export_trajectories(logs, args.out)
    if args.summary:
        final_metrics_table(logs).to_csv(args.summary, index=False, float_format="%.17g", lineterminator="\n")
    print(f"✅ {len(logs)} запусков -> {out}")
    return 0


def cmd_count_params(args, config: Config) -> int:
    print(count_parameters(model_config_from(config.get_model_config())))
    return 0


def cmd_gradcheck(args, config: Config) -> int:
    model_config = model_config_from(config.get_model_config())
    seed = int(config.get("runtime.seed", 0))
    model = build_model(model_config, seed=seed)
    rng = make_rng(seed, "gradcheck-input")
    x = rng.uniform(0.0, 1.0, size=(args.batch, args.size, args.size, model_config.input_channels))
    pred = predict_batch(model, x)
    # Метка далеко от предсказания: разности не пересекают излом |e|
    conc = np.where(pred > 0.5, 0.0, 1.0)
    label = np.concatenate([conc, rng.uniform(0.0, 0.9, size=conc.shape)], axis=-1)
    result = finite_difference_check(model, LOSSES[args.loss], x, label, eps=args.eps,
                                     max_per_parameter=args.max_per_parameter, seed=seed)
    print(f"max relative error {result.max_relative_error:.3e} ({result.checked} checked, worst {result.worst})")
    if result.max_relative_error > args.tolerance:
        raise ModelError(f"gradient check failed: {result.max_relative_error:.3e} > {args.tolerance:g}")
    return 0


# --- Разбор аргументов -----------------------------------------------------------

def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--preset", help="Готовая конфигурация: cnn, unet, densenet")
    p.add_argument("--family", help="Семейство: fcnn (cnn), unet, densenet")
    p.add_argument("--layers", type=int, help="Число слоёв / уровней / плотных блоков")
    p.add_argument("--dense-layers", type=int, help="Слоёв в плотном блоке (DenseNet)")
    p.add_argument("--init", type=int, help="Начальное число фильтров")
    p.add_argument("--growth", type=int, help="Рост числа фильтров")
    p.add_argument("--growth-mult", dest="growth_mult", action="store_true", default=None,
                   help="Рост умножением (U-Net: фильтры x growth на уровень)")
    p.add_argument("--dropout", type=float, help="Доля dropout")
    p.add_argument("--in-ch", type=int, help="Число входных каналов")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Путь к config.yaml (по умолчанию ищется от текущей папки вверх)")
    common.add_argument("--seed", type=int, help="Основной seed")
    common.add_argument("--jobs", type=int, help="Число потоков (1 - воспроизводимый режим)")
    common.add_argument("--data-root", help="Корневая папка данных")
    common.add_argument("--quiet", action="store_true", help="Без индикаторов прогресса и информационных логов")

    parser = argparse.ArgumentParser(
        prog="seaice-workbench",
        description="Верстак оценки концентрации морского льда по SAR-подобным снимкам",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Примеры использования:
  seaice-workbench synth --seed 7                         # каталоги N и S
  seaice-workbench build-dataset                          # датасеты из каталогов
  seaice-workbench train --stages N:32,S:18 --test-dataset S --augment
  seaice-workbench count-params --preset cnn              # 3043937
  seaice-workbench search --lat -61.5 --lon 2.0 --from 2019-07-01 --to 2019-07-31
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="Сгенерировать синтетические каталоги")
    p.add_argument("--region", action="append", help="Регион из конфигурации (можно несколько)")
    p.add_argument("--n-entries", type=int, help="Число снимков в каталоге")
    p.add_argument("--mislabel-rate", type=float, help="Доля снимков с ошибкой направления прохода")
    p.add_argument("--scene-size", type=int, help="Размер сцены, пиксели")
    p.add_argument("--patch-size", type=int, help="Размер quicklook и патча, пиксели")
    p.add_argument("--coarse-factor", type=int, help="Коэффициент огрубления карты")
    p.add_argument("--insitu", type=int, default=200, help="Число натурных наблюдений")
    p.add_argument("--insitu-sd", type=float, default=0.05, help="СКО шума наблюдений")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("build-dataset", parents=[common], help="Собрать датасеты из каталогов")
    p.add_argument("--region", action="append", help="Регион (датасет) для сборки")
    p.add_argument("--patch-size", type=int, help="Размер патча")
    p.add_argument("--variance-threshold", type=float, help="Порог дисперсии концентрации")
    p.add_argument("--test-fraction", type=float, help="Доля тестовых образцов")
    p.add_argument("--batch-size", type=int, help="Размер батча")
    p.add_argument("--no-median", dest="median_filter", action="store_false", default=None,
                   help="Не применять медианный фильтр 5x5")
    p.set_defaults(handler=cmd_build_dataset)

    p = sub.add_parser("train", parents=[common], help="Обучить модель")
    _add_model_flags(p)
    p.add_argument("--stages", help="Этапы вида N:32,S:18")
    p.add_argument("--test-dataset", help="Тестовый датасет")
    p.add_argument("--augment", action="store_true", default=None, help="Аугментация на лету")
    p.add_argument("--batch-size", type=int, help="Размер батча")
    p.add_argument("--learning-rate", type=float, help="Скорость обучения Adam")
    p.add_argument("--resume", help="Продолжить с чекпойнта")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="Оценить чекпойнт на датасете")
    p.add_argument("--checkpoint", required=True, help="Файл .sicm")
    p.add_argument("--dataset", required=True, help="Идентификатор датасета")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", help="CSV с результатом")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("search", parents=[common], help="Найти снимки по точке и датам")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--from", dest="date_from", type=date.fromisoformat, required=True)
    p.add_argument("--to", dest="date_to", type=date.fromisoformat, required=True)
    p.add_argument("--max-results", type=int, default=10)
    p.add_argument("--region", action="append", help="Искать только в этих каталогах")
    p.set_defaults(handler=cmd_search)

    p = sub.add_parser("report", parents=[common], help="Отчёт сравнения моделей для снимка")
    p.add_argument("--region", required=True)
    p.add_argument("--entry", help="Идентификатор снимка (по умолчанию первый)")
    p.add_argument("--checkpoint", action="append", help="Чекпойнт модели (можно несколько)")
    p.add_argument("--out", help="Папка отчётов")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("insitu", parents=[common], help="Сравнить карту с натурными наблюдениями")
    p.add_argument("--region", required=True)
    p.add_argument("--entry", help="Снимок, карта которого сравнивается (по умолчанию первый)")
    p.add_argument("--observations", help="Таблица наблюдений (по умолчанию insitu.tsv каталога)")
    p.add_argument("--out", help="Папка отчёта")
    p.set_defaults(handler=cmd_insitu)

    p = sub.add_parser("export-trajectories", parents=[common], help="Объединить журналы метрик")
    p.add_argument("--metrics", nargs="+", help="Файлы metrics.csv (по умолчанию все запуски)")
    p.add_argument("--out", required=True, help="Итоговая таблица траекторий")
    p.add_argument("--summary", help="Таблица метрик последней эпохи по запускам")
    p.set_defaults(handler=cmd_export_trajectories)

    p = sub.add_parser("count-params", parents=[common], help="Посчитать параметры архитектуры")
    _add_model_flags(p)
    p.set_defaults(handler=cmd_count_params)

    p = sub.add_parser("gradcheck", parents=[common], help="Проверить градиенты конечными разностями")
    _add_model_flags(p)
    p.add_argument("--loss", choices=sorted(LOSSES), default="uw_mae")
    p.add_argument("--size", type=int, default=6, help="Размер входа H = W")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-per-parameter", type=int, default=None)
    p.set_defaults(handler=cmd_gradcheck, family="fcnn", layers=2, init=4, growth=4)
    return parser


def _error_line(code: int, error: BaseException) -> str:
    message = " ".join(str(error).split()).replace('"', '\\"')
    return f'error code={code} kind={type(error).__name__} message="{message}"'


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Точка входа; возвращает код выхода"""
    args = build_parser().parse_args(argv)
    try:
        overrides = {k: v for k, v in vars(args).items() if k != "handler"}
        config = Config(args.config).with_overrides(overrides)
        setup_logging(config, quiet=args.quiet)
        return args.handler(args, config)
    except WorkbenchError as e:
        print(_error_line(e.exit_code, e), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.debug("Непредвиденная ошибка", exc_info=True)
        print(_error_line(1, e), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
