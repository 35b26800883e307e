"""
KGDA - Knowledge Graph Data Augmentation
Command-line entry point: mine, augment, fuse, train, eval, sweep, check.
"""

import json
import logging
import sys
from functools import wraps

import click

from config import KgdaError, load_config, parse_ratios
from oracles import SUITES
from pipeline import Pipeline, StageError
from run_ledger import RunLedger

logger = logging.getLogger('kgda')

EXIT_DOMAIN_ERROR = 1
EXIT_UNEXPECTED = 2


def banner(title):
    click.echo("=" * 60)
    click.echo(title)
    click.echo("=" * 60)


def diagnostic(stage, error, message):
    click.echo(json.dumps({'stage': stage, 'error': error, 'message': message}, sort_keys=True),
               err=True)


def configure_logging(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
        force=True,
    )


def resolve_config(options):
    config = load_config(options['config'])
    ratios = parse_ratios(options['ratios']) if options.get('ratios') else None
    return config.with_overrides(out=options.get('out'), seed=options.get('seed'),
                                 variant=options.get('variant'), ratios=ratios)


# ----------------------------------------------------------------------
# Shared options and run wrapper
# ----------------------------------------------------------------------
def run_options(func):
    @click.option('--config', 'config', default='configs/pop.json', show_default=True,
                  type=click.Path(dir_okay=False), help='JSON run configuration')
    @click.option('--out', 'out', default=None, type=click.Path(file_okay=False),
                  help='output directory (overrides config and KGDA_OUTPUT_DIR)')
    @click.option('--seed', 'seed', default=None, type=int, help='seed (overrides config)')
    @click.option('--variant', 'variant', default=None,
                  type=click.Choice(['baseline', 'augmented', 'both']))
    @click.option('--ratios', 'ratios', default=None, help='comma list, e.g. 0.1,0.3')
    @wraps(func)
    def wrapper(**kwargs):
        return func(**kwargs)
    return wrapper


def execute(command, options, action):
    """Resolve config, record the run in the ledger, run the action, report"""
    try:
        config = resolve_config(options)
    except KgdaError as e:
        diagnostic('config', type(e).__name__, str(e))
        sys.exit(EXIT_DOMAIN_ERROR)

    ledger = RunLedger.for_output_dir(config.output_dir)
    run_id = ledger.start_run(command, config.config_hash(), config.evaluation.seeds[0])
    banner(f"KGDA {command} | {config.dataset_name} | config {config.config_hash()[:12]}")

    try:
        result = action(Pipeline(config, ledger, run_id))
    except StageError as e:
        ledger.finish_run(run_id, 'failed')
        click.echo(f"❌ {e.stage} failed: {e}")
        diagnostic(e.stage, e.error_name, str(e))
        sys.exit(EXIT_DOMAIN_ERROR)
    except KgdaError as e:
        ledger.finish_run(run_id, 'failed')
        click.echo(f"❌ {command} failed: {e}")
        diagnostic(command, type(e).__name__, str(e))
        sys.exit(EXIT_DOMAIN_ERROR)
    except Exception as e:
        logger.exception("unexpected error in %s", command)
        ledger.finish_run(run_id, 'failed')
        diagnostic(command, type(e).__name__, str(e))
        sys.exit(EXIT_UNEXPECTED)

    ledger.finish_run(run_id, 'success')
    click.echo(f"✅ {command} complete -> {config.output_dir}")
    click.echo("=" * 60)
    return result


def _print_details(manifest):
    for key, value in manifest['details'].items():
        if key != 'summary':
            click.echo(f"  {key}: {json.dumps(value, sort_keys=True)}")


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
@click.group()
@click.option('--verbose', '-v', is_flag=True, help='debug logging')
def cli(verbose):
    """Knowledge-graph data augmentation with biclusters and Tucker inference."""
    configure_logging(verbose)


@cli.command()
@run_options
def mine(**options):
    """Mine biclusters from the normalized table."""
    execute('mine', options, lambda p: _print_details(p.mine()))


@cli.command()
@run_options
def augment(**options):
    """Write bicluster distance features and their bin schemes."""
    execute('augment', options, lambda p: _print_details(p.augment()))


@cli.command()
@run_options
def fuse(**options):
    """Write original, augmented and fused triple files."""
    execute('fuse', options, lambda p: _print_details(p.fuse()))


@cli.command()
@run_options
def train(**options):
    """Train a Tucker model per variant on the first ratio and seed."""
    execute('train', options, lambda p: _print_details(p.train()))


@cli.command(name='eval')
@run_options
def evaluate(**options):
    """Evaluate the trained checkpoints on the held-out patients."""
    execute('eval', options, lambda p: _print_details(p.evaluate()))


@cli.command()
@run_options
def sweep(**options):
    """Run every ratio x variant x seed cell and write the reports."""
    def action(pipeline):
        manifest = pipeline.sweep()
        click.echo(f"  cells: {manifest['details']['cells']}")
        for row in manifest['details']['summary']:
            acc = row['acc']
            click.echo(f"  ratio {row['ratio']:<4g} {row['variant']:<12} "
                       f"acc {'n/a' if acc is None else f'{acc:.4f}'}")
    execute('sweep', options, action)


@cli.command()
@run_options
@click.option('--suite', 'suites', multiple=True, type=click.Choice(sorted(SUITES)),
              help='run only these oracle suites (repeatable)')
@click.option('--variance-trials', default=100, show_default=True, type=click.IntRange(min=1))
def check(suites, variance_trials, **options):
    """Run the oracle property suites and the variance-reduction experiment."""
    def action(pipeline):
        manifest = pipeline.check(suites or None, variance_trials)
        for name in manifest['details']['passed']:
            click.echo(f"  ✅ {name}")
        for name in manifest['details']['failed']:
            click.echo(f"  ❌ {name}")
        return manifest

    manifest = execute('check', options, action)
    if manifest['details']['failed']:
        diagnostic('check', 'CheckFailed', f"failed: {', '.join(manifest['details']['failed'])}")
        sys.exit(EXIT_DOMAIN_ERROR)


if __name__ == '__main__':
    cli()
