# SPDX-License-Identifier: MIT

"""Command-line entry point: ``mlconv train|eval|analyze|convert|bench|
tables|rerun``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

import contextlib
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import click

from ._analysis import BenchResult, bench_forward, cost_csv, cost_report, \
    format_cost_table, format_variant_table, normalized_times, variant_table
from ._checkpoint import load_network, save_network
from ._config import ModelConfig, load_model_config, variant_config
from ._constants import BENCH_REPS, CONVERT_MAX_ITERS, CONVERT_TOL, E_GRID, \
    __version__
from ._convert import convert_cnn_to_mlconv, fit_csv
from ._datasets import Dataset, load_dataset
from ._exceptions import CheckpointError, ConfigError, MlconvError
from ._manifest import RunManifest, read_manifest, rerun_argv, \
    write_manifest
from ._network import Network
from ._optim import Adam, SGDMomentum, named_schedule
from ._training import Augmentation, TrainConfig, build_network, evaluate, \
    median_final_error, metrics_csv, train

logger = logging.getLogger(__name__)

CONFIGS_DIR = Path(__file__).parent / 'configs'
DATASETS = ('cifar10', 'cifar100', 'mnist')


class RuntimeFailure(click.ClickException):
    exit_code = 1


class ValidationFailure(click.ClickException):
    exit_code = 2


@contextlib.contextmanager
def _reported() -> Iterator[None]:
    """Turns library errors into click exceptions with our exit codes."""
    try:
        yield
    except (ConfigError, CheckpointError) as e:
        raise ValidationFailure(str(e))
    except MlconvError as e:
        raise RuntimeFailure(str(e))
    except OSError as e:
        raise RuntimeFailure(str(e))


def print_banner(title: str, at: str):
    click.echo()
    click.echo('== ' + title.upper() + ' ' +
               ('=' * max(80 - len(at) - len(title) - 4 - 4, 2)) +
               ' ' + at + ' ==')


def recorded_argv() -> Tuple[str, ...]:
    """Arguments that repeat the current command, rebuilt from its parsed
    parameters."""
    ctx = click.get_current_context()
    argv = [ctx.info_name or ctx.command.name or '']
    for param in ctx.command.params:
        value = ctx.params.get(param.name or '')
        if value is None or not isinstance(param, click.Option):
            continue
        if param.is_flag:
            if value:
                argv.append(param.opts[0])
            elif param.secondary_opts:
                argv.append(param.secondary_opts[0])
        elif param.multiple:
            for item in value:
                argv += [param.opts[0], str(item)]
        else:
            argv += [param.opts[0], str(value)]
    return tuple(argv)


def _dataset_shape(dataset: str) -> Tuple[Tuple[int, int, int], int]:
    if dataset == 'mnist':
        return (28, 28, 1), 10
    return (32, 32, 3), 100 if dataset == 'cifar100' else 10


def resolve_config(value: str, classes: int = 10, width: float = 1.0,
                   input_shape: Tuple[int, int, int] = (32, 32, 3)
                   ) -> ModelConfig:
    """A config file, the stem of a shipped config (``baseline_mlconv2``) or
    a variant name (``cnn``, ``mlconv2``, ``lr26``, ``mlconv4*``)."""
    path = Path(value)
    if path.is_file():
        return load_model_config(path)
    shipped = CONFIGS_DIR / f"{value}.cfg"
    if shipped.is_file():
        return load_model_config(shipped)
    if path.suffix == '.cfg' or '/' in value:
        raise ConfigError(f"config file {value} not found")
    return variant_config(value, classes=classes, width=width,
                          input_shape=input_shape)


def _parse_resolution(ctx, param, value: Optional[str]
                      ) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    x, sep, y = value.lower().partition('x')
    try:
        resolution = (int(x), int(y))
    except ValueError:
        raise click.BadParameter(f"expected HxW, got {value!r}")
    if not sep or min(resolution) < 1:
        raise click.BadParameter(f"expected HxW, got {value!r}")
    return resolution


@click.group()
@click.version_option(__version__, prog_name='mlconv')
@click.option('-v', '--verbose', count=True,
              help="Log progress (-v) or debug details (-vv) to stderr.")
def main(verbose: int):
    """Multilinear convolution filters: training, conversion and cost
    analysis."""
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')


# train #######################################################################

def _load_split(dataset: str, data: Path, split: str,
                subset: Optional[int], subset_seed: int) -> Dataset:
    loaded = load_dataset(dataset, data, split)
    if subset is not None:
        loaded = loaded.subset(subset, subset_seed)
    logger.info("%s %s: %d samples", dataset, split, len(loaded))
    return loaded


@main.command('train')
@click.option('--config', 'config_name', required=True,
              help="Config file, shipped config name or variant name.")
@click.option('--data', type=click.Path(exists=True, path_type=Path),
              required=True, help="Dataset file or directory.")
@click.option('--dataset', type=click.Choice(DATASETS), required=True)
@click.option('--out', type=click.Path(file_okay=False, path_type=Path),
              required=True, help="Output directory.")
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--epochs', type=click.IntRange(min=0), default=20,
              show_default=True)
@click.option('--subset', type=click.IntRange(min=1), default=None,
              help="Train on a seeded random subset of this size.")
@click.option('--test-subset', type=click.IntRange(min=1), default=None)
@click.option('--subset-seed', type=int, default=0, show_default=True)
@click.option('--optimizer', type=click.Choice(['sgd', 'adam']),
              default='sgd', show_default=True)
@click.option('--schedule', type=click.Choice(['sc1', 'sc2']), default='sc2',
              show_default=True)
@click.option('--e-epochs', type=click.IntRange(min=1), default=E_GRID[0],
              show_default=True,
              help="Epochs per learning-rate step; the baseline runs use "
                   + ", ".join(map(str, E_GRID)) + ".")
@click.option('--batch-size', type=click.IntRange(min=1), default=200,
              show_default=True)
@click.option('--max-norm', type=float, default=None)
@click.option('--weight-decay', type=float, default=0.0, show_default=True)
@click.option('--dropout-in', type=float, default=0.0, show_default=True)
@click.option('--dropout-pool', type=float, default=0.0, show_default=True)
@click.option('--flip/--no-flip', default=False, show_default=True)
@click.option('--translate', type=click.IntRange(min=0), default=0,
              show_default=True, help="Maximum random shift in pixels.")
@click.option('--width', type=float, default=1.0, show_default=True,
              help="Width multiplier for variant names.")
@click.option('--repeats', type=click.IntRange(min=1), default=1,
              show_default=True, help="Train seeds seed..seed+N-1.")
@click.option('--no-timing', is_flag=True,
              help="Write 0 as wall_seconds so metrics are reproducible.")
def cmd_train(config_name: str, data: Path, dataset: str, out: Path,
              seed: int, epochs: int, subset: Optional[int],
              test_subset: Optional[int], subset_seed: int, optimizer: str,
              schedule: str, e_epochs: int, batch_size: int,
              max_norm: Optional[float], weight_decay: float,
              dropout_in: float, dropout_pool: float, flip: bool,
              translate: int, width: float, repeats: int, no_timing: bool):
    """Train a network and write checkpoint, metrics CSV and manifest."""
    with _reported():
        input_shape, classes = _dataset_shape(dataset)
        model_config = resolve_config(config_name, classes, width,
                                      input_shape)
        train_set = _load_split(dataset, data, 'train', subset, subset_seed)
        test_set = _load_split(dataset, data, 'test', test_subset,
                               subset_seed)
        base = TrainConfig(
            optimizer=Adam() if optimizer == 'adam' else SGDMomentum(),
            schedule=tuple(named_schedule(schedule, e_epochs)),
            batch_size=batch_size, max_epochs=epochs,
            weight_decay=weight_decay, max_norm=max_norm,
            dropout_input=dropout_in, dropout_pool=dropout_pool, seed=seed,
            augmentation=Augmentation(flip=flip, max_translate=translate),
            record_time=not no_timing)

        out.mkdir(parents=True, exist_ok=True)
        runs = []
        for run_seed in range(seed, seed + repeats):
            run_dir = out if repeats == 1 else out / f"seed_{run_seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            if repeats > 1:
                print_banner(f"seed {run_seed}", str(run_dir))
            config = dataclasses.replace(base, seed=run_seed)
            network = build_network(model_config, config)
            rows = train(network, train_set, test_set, config)
            save_network(network, run_dir / 'checkpoint.mlcv',
                         epoch=len(rows), seed=run_seed)
            (run_dir / 'metrics.csv').write_text(metrics_csv(rows),
                                                 encoding='utf-8')
            runs.append(rows)
            if rows:
                click.echo(f"seed {run_seed}: final test error "
                           f"{100 * rows[-1].test_err:.2f}%")
            else:
                click.echo(f"seed {run_seed}: untrained checkpoint written")

        write_manifest(RunManifest(
            command='train', argv=recorded_argv(),
            config_path=config_name, dataset_paths=(str(data),), seed=seed,
            output_dir=str(out), settings=tuple(base.describe())), out)
        if repeats > 1 and epochs > 0:
            click.echo(f"median final test error over {repeats} seeds: "
                       f"{100 * median_final_error(runs):.2f}%")


# eval ########################################################################

@main.command('eval')
@click.option('--checkpoint', type=click.Path(exists=True, dir_okay=False,
                                              path_type=Path), required=True)
@click.option('--config', 'config_name', required=True)
@click.option('--data', type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option('--dataset', type=click.Choice(DATASETS), required=True)
@click.option('--split', type=click.Choice(['train', 'test']), default='test',
              show_default=True)
@click.option('--width', type=float, default=1.0, show_default=True)
def cmd_eval(checkpoint: Path, config_name: str, data: Path, dataset: str,
             split: str, width: float):
    """Print the error rate and per-class accuracy CSV of a checkpoint."""
    with _reported():
        input_shape, classes = _dataset_shape(dataset)
        config = resolve_config(config_name, classes, width, input_shape)
        network, _ = load_network(checkpoint, config)
        result = evaluate(network, load_dataset(dataset, data, split))
        click.echo(f"{split} error: {100 * result.error:.2f}% "
                   f"({result.count} samples)")
        click.echo("class,accuracy")
        for k, accuracy in enumerate(result.per_class_accuracy):
            click.echo(f"{k},{accuracy:.6f}")


# analyze #####################################################################

@main.command('analyze')
@click.option('--config', 'config_name', required=True)
@click.option('--baseline', default=None,
              help="Config to compute parameter and MAC gains against.")
@click.option('--resolution', callback=_parse_resolution, default=None,
              help="Input resolution as HxW; defaults to the config's.")
@click.option('--classes', type=click.IntRange(min=1), default=10,
              show_default=True, help="Class count for variant names.")
@click.option('--csv', 'as_csv', is_flag=True, help="Emit CSV instead.")
def cmd_analyze(config_name: str, baseline: Optional[str],
                resolution: Optional[Tuple[int, int]], classes: int,
                as_csv: bool):
    """Print per-layer parameter and multiply-accumulate counts."""
    with _reported():
        report = cost_report(resolve_config(config_name, classes),
                             resolution)
        base = None
        if baseline is not None:
            base = cost_report(resolve_config(baseline, classes),
                               resolution or report.resolution)
        if as_csv:
            click.echo(cost_csv(report), nl=False)
        else:
            click.echo(format_cost_table(report, base), nl=False)


# convert #####################################################################

@main.command('convert')
@click.option('--from', 'source', required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Checkpoint of a dense network.")
@click.option('--config', 'config_name', required=True,
              help="Target config with mlconv layers.")
@click.option('--out', required=True,
              type=click.Path(dir_okay=False, path_type=Path))
@click.option('--rank', type=click.IntRange(min=1), default=None,
              help="Rank for every mlconv layer, overriding the config.")
@click.option('--max-iters', type=click.IntRange(min=1),
              default=CONVERT_MAX_ITERS, show_default=True)
@click.option('--tol', type=float, default=CONVERT_TOL, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
def cmd_convert(source: Path, config_name: str, out: Path,
                rank: Optional[int], max_iters: int, tol: float, seed: int):
    """Initialize an MLconv network from a trained dense network."""
    with _reported():
        network, checkpoint = load_network(source)
        target_config = resolve_config(config_name, network.config.classes,
                                       input_shape=network.config.input_shape)
        target, fits = convert_cnn_to_mlconv(network, target_config,
                                             rank=rank, max_iters=max_iters,
                                             tol=tol, seed=seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_network(target, out,
                     epoch=int(checkpoint.meta.get('epoch', '0')), seed=seed)
        fit_path = out.with_suffix('.fit.csv')
        fit_path.write_text(fit_csv(fits), encoding='utf-8')
        write_manifest(RunManifest(
            command='convert', argv=recorded_argv(),
            config_path=config_name, seed=seed, output_dir=str(out.parent)),
            out.with_suffix('.manifest.txt'))
        click.echo(fit_csv(fits), nl=False)


# bench #######################################################################

@main.command('bench')
@click.option('--config', 'config_names', required=True, multiple=True,
              help="Config to time; repeat the option to time several.")
@click.option('--baseline', default=None)
@click.option('--reps', type=click.IntRange(min=3), default=BENCH_REPS,
              show_default=True)
@click.option('--resolution', callback=_parse_resolution, default=None)
@click.option('--seed', type=int, default=0, show_default=True)
def cmd_bench(config_names: Tuple[str, ...], baseline: Optional[str],
              reps: int, resolution: Optional[Tuple[int, int]], seed: int):
    """Time single-sample forward passes. Prints CSV; ratio is the
    baseline's mean time over each network's."""
    with _reported():
        names: List[str] = list(config_names)
        if baseline is not None and baseline not in names:
            names.insert(0, baseline)
        results = {}
        for name in names:
            network = Network(resolve_config(name), seed=seed)
            results[name] = bench_forward(network, resolution, reps, seed)
        ratios = normalized_times(results, baseline or names[0])
        click.echo("config,mean_s,stdev_s,median_s,ratio")
        for name in names:
            r: BenchResult = results[name]
            click.echo(f"{name},{r.mean:.6g},{r.stdev:.6g},{r.median:.6g},"
                       f"{ratios[name]:.4f}")


# tables ######################################################################

@main.command('tables')
@click.option('--classes', type=click.Choice(['10', '100']), multiple=True,
              default=('10', '100'), show_default=True)
@click.option('--resolution', callback=_parse_resolution, default='32x32',
              show_default=True)
def cmd_tables(classes: Tuple[str, ...], resolution: Tuple[int, int]):
    """Parameter counts and theoretical speedups of the standard variants
    of the baseline network."""
    with _reported():
        for count in classes:
            print_banner(f"{count} classes", f"{resolution[0]}x"
                                             f"{resolution[1]}")
            click.echo(format_variant_table(
                variant_table(int(count), resolution)), nl=False)


# rerun #######################################################################

@main.command('rerun')
@click.argument('manifest', type=click.Path(exists=True, path_type=Path))
@click.pass_context
def cmd_rerun(ctx: click.Context, manifest: Path):
    """Repeat the run a manifest file (or its directory) records."""
    with _reported():
        if manifest.is_dir():
            manifest = manifest / 'manifest.txt'
        argv = rerun_argv(read_manifest(manifest))
    logger.info("rerunning: %s", " ".join(argv))
    main.main(args=argv, prog_name=ctx.find_root().info_name,
              standalone_mode=False)
