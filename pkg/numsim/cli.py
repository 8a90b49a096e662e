import logging
from pathlib import Path
import sys
from typing import Optional

import click
import click_pathlib

from numsim.validation import ConfigError, ValidationError

InputFilePath = click_pathlib.Path(exists=True, file_okay=True, dir_okay=False, readable=True)
ReportDirPath = click_pathlib.Path(exists=True, file_okay=False, dir_okay=True, readable=True)

EXIT_ERROR = 2


@click.group()
@click.option('-v', '--verbose', count=True, help='Increase logging verbosity.')
def main(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')


def _load(config_file: Path):
    from numsim.config import load_config

    try:
        return load_config(config_file)
    except ConfigError as e:
        for error in e.errors:
            click.echo(f'error: {error}', err=True)
    except (ValidationError, OSError) as e:
        click.echo(f'error: {e}', err=True)
    sys.exit(EXIT_ERROR)


@main.command()
@click.argument('config_file', type=InputFilePath)
@click.option(
    '--threads',
    type=click.IntRange(min=1),
    default=None,
    help='Number of worker threads; results do not depend on it.',
)
@click.option('--progress/--no-progress', default=True, show_default=True)
def run(config_file: Path, threads: Optional[int], progress: bool) -> None:
    """Simulate, verify and write reports for a config."""
    # Don't import the experiment module unless it's needed for this command
    from numsim.experiment import run as run_experiment
    from numsim.experiment import with_threads

    run_config = with_threads(_load(config_file), threads)
    code = run_experiment(run_config, progress=progress)
    click.echo(f'reports written to {Path(run_config.output.directory).resolve()}')
    sys.exit(code)


@main.command()
@click.argument('config_file', type=InputFilePath)
def validate(config_file: Path) -> None:
    """Check a config without running it."""
    from numsim.config import format_config
    from numsim.market import check_na1

    run_config = _load(config_file)
    report = check_na1(run_config.market)
    click.echo(format_config(run_config), nl=False)
    click.echo(f'# {report.diagnostics}')


@main.command()
@click.argument('report_dir', type=ReportDirPath)
def plots(report_dir: Path) -> None:
    """Render PNG figures from the plot data of a finished run."""
    from numsim.postprocess import render_plots

    written = render_plots(report_dir)
    if not written:
        click.echo(f'no plot data found in {report_dir.resolve()}', err=True)
        sys.exit(EXIT_ERROR)
    for path in written:
        click.echo(f'wrote {path}')


if __name__ == '__main__':
    main()
