"""Command line entry point: ``laserctl <command>``."""

import logging
import os
import sys

import click

from laserctl import __version__, create_toolkit
from laserctl.errors import LaserCtlError
from laserctl.plots import emit_plots
from laserctl.runner import run
from laserctl.schemas import VARIANTS, build_config, parse_config
from laserctl.utils import format_check

logger = logging.getLogger(__name__)

EXIT_ACCEPTANCE = 1
EXIT_ERROR = 2


def _scenario_overrides(ctx):
    """Group options as a ``scenario`` section override (unset flags are dropped)."""
    options = ctx.obj['options']
    return {'scenario': {key: value for key, value in options.items() if value is not None}}


def _execute(ctx, config):
    try:
        manifest = run(config, toolkit=ctx.obj['toolkit'], output_dir=ctx.obj['output_dir'])
    except LaserCtlError as e:
        kind = getattr(e, 'scenario', config.kind.value)
        click.echo(f'Error ({kind}): {str(e)}', err=True)
        sys.exit(EXIT_ERROR)
    for name, check in manifest.acceptance.items():
        mark = 'ok' if check['passed'] else 'FAILED'
        click.echo(f"{name}: {format_check(check)} {mark}")
    if not manifest.passed:
        sys.exit(EXIT_ACCEPTANCE)


def _load(ctx, path, **sections):
    overrides = _scenario_overrides(ctx)
    for name, values in sections.items():
        overrides.setdefault(name, {}).update({k: v for k, v in values.items() if v is not None})
    try:
        return parse_config(path, settings=ctx.obj['toolkit'].config, overrides=overrides)
    except LaserCtlError as e:
        click.echo(f'Error: {str(e)}', err=True)
        sys.exit(EXIT_ERROR)


def _build(ctx, kind, **sections):
    overrides = _scenario_overrides(ctx)
    for name, values in sections.items():
        overrides.setdefault(name, {}).update({k: v for k, v in values.items() if v is not None})
    try:
        return build_config(kind, settings=ctx.obj['toolkit'].config, **overrides)
    except LaserCtlError as e:
        click.echo(f'Error: {str(e)}', err=True)
        sys.exit(EXIT_ERROR)


@click.group()
@click.version_option(__version__, prog_name='laserctl')
@click.option('--config-name', default=lambda: os.environ.get('LASERCTL_ENV', 'development'),
              show_default='$LASERCTL_ENV or development', help='Toolkit configuration class.')
@click.option('--output-dir', type=click.Path(file_okay=False), default=None, help='Run directory.')
@click.option('--threads', type=click.IntRange(min=1), default=None, help='Worker threads for scans.')
@click.option('--seed', type=click.IntRange(min=0), default=None, help='Seed for randomized start vectors.')
@click.option('--force', is_flag=True, default=None, help='Allow fields above the intensity guard.')
@click.pass_context
def cli(ctx, config_name, output_dir, threads, seed, force):
    """Laser control of a three-well bifurcating molecular model."""
    ctx.ensure_object(dict)
    ctx.obj['toolkit'] = create_toolkit(config_name)
    ctx.obj['output_dir'] = output_dir
    ctx.obj['options'] = {'threads': threads, 'seed': seed, 'force': force or None}


@cli.command()
@click.option('--variant', type=click.Choice(VARIANTS), default='qcisd', show_default=True)
@click.pass_context
def calibrate(ctx, variant):
    """Fit the surrogate surface and cache it in the data directory."""
    _execute(ctx, _build(ctx, 'calibrate', scenario={'variant': variant}))


@cli.command()
@click.option('--variant', type=click.Choice(VARIANTS), default='qcisd', show_default=True)
@click.option('--count', type=click.IntRange(min=1), default=None, help='Number of eigenstates.')
@click.option('--solver', type=click.Choice(['relax', 'dvr']), default=None)
@click.pass_context
def eigen(ctx, variant, count, solver):
    """Eigenvalue table and eigenstates of the calibrated surface."""
    _execute(ctx, _build(ctx, 'eigen', scenario={'variant': variant},
                         grid={'eigen_count': count, 'solver': solver}))


@cli.command('run')
@click.argument('config_path', metavar='CONFIG', type=click.Path(exists=True, dir_okay=False))
@click.pass_context
def run_command(ctx, config_path):
    """Run the scenario described by a scenario file."""
    _execute(ctx, _load(ctx, config_path))


@cli.command()
@click.argument('config_path', metavar='CONFIG', type=click.Path(exists=True, dir_okay=False))
@click.option('--distributed', is_flag=True, default=None, help='Fan scan points out to Celery workers.')
@click.pass_context
def scan(ctx, config_path, distributed):
    """Robustness scan over (rabi, delay) using the [scan] section of CONFIG."""
    _execute(ctx, _load(ctx, config_path, scenario={'kind': 'robustness-scan'},
                        scan={'distributed': distributed}))


@cli.command()
@click.argument('field_csv', type=click.Path(exists=True, dir_okay=False))
@click.option('--tau-ps', type=float, default=None, help='Blackman window width (ps).')
@click.option('--n-omega', type=int, default=None, help='Number of frequency bins.')
@click.option('--omega-max-cm1', type=float, default=None, help='Upper frequency (cm^-1).')
@click.pass_context
def gabor(ctx, field_csv, tau_ps, n_omega, omega_max_cm1):
    """Gabor spectrograms of a field CSV (t_au, Ex_au, Ey_au)."""
    _execute(ctx, _build(ctx, 'gabor', gabor={'field_file': os.path.abspath(field_csv), 'tau_ps': tau_ps,
                                                'n_omega': n_omega, 'omega_max_cm1': omega_max_cm1}))


@cli.command()
@click.argument('run_dir', type=click.Path(exists=True, file_okay=False))
def plots(run_dir):
    """Render the figures of an existing run directory."""
    try:
        written = emit_plots(run_dir)
    except LaserCtlError as e:
        click.echo(f'Error: {str(e)}', err=True)
        sys.exit(EXIT_ERROR)
    click.echo(f'{len(written)} plot(s) written to {os.path.join(run_dir, "plots")}')


if __name__ == '__main__':
    cli()
