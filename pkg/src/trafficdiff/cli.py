"""``trafficdiff`` command line: one verb per pipeline stage."""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import RunConfig, load_config
from .traces import TraceFormatError


def _options(f):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="YAML run configuration.")
    @click.option("--seed", type=int, default=None, help="Override the configured seed.")
    @click.option("--force", is_flag=True, help="Rerun even if the stage is up to date.")
    @click.option("--stage-dir", type=click.Path(file_okay=False), default=None,
                  help="Artifact root (else $TRAFFICDIFF_ROOT, else the config's artifact_root).")
    @functools.wraps(f)
    def wrapper(config_path, seed, force, stage_dir, **kw):
        if config_path is not None and not Path(config_path).is_file():
            click.echo(f"error: config file not found: {config_path}", err=True)
            sys.exit(2)
        cfg = load_config(config_path) if config_path else RunConfig()
        if seed is not None:
            cfg.seed = seed
        root = cfg.root(stage_dir)
        root.mkdir(parents=True, exist_ok=True)
        try:
            result = f(cfg, root, force, **kw)
        except pipeline.StageError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except FileNotFoundError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(2)
        except TraceFormatError as e:
            click.echo(f"error: malformed trace files ({len(e.problems)}):", err=True)
            for path, why in e.problems:
                click.echo(f"  {path}: {why}", err=True)
            sys.exit(1)
        _report(result)
    return wrapper


def _report(result):
    results = result if isinstance(result, dict) and "stage" not in result else {"": result}
    for r in results.values():
        state = "up to date" if r["skipped"] else "done"
        click.echo(f"{r['stage']}: {state} ({len(r['files'])} files)")


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Trace -> GASF -> diffusion -> fidelity and downstream evaluation."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_options
def ingest(cfg, root, force):
    """Load or generate traces, normalize and split."""
    return pipeline.cmd_ingest(cfg, root, force)


@cli.command()
@_options
def encode(cfg, root, force):
    """GASF-encode every ingested trace."""
    return pipeline.cmd_encode(cfg, root, force)


@cli.command()
@_options
def enhance(cfg, root, force):
    """Quantize, gamma-correct and resize the GASF images."""
    return pipeline.cmd_enhance(cfg, root, force)


@cli.command("train-dm")
@_options
def train_dm(cfg, root, force):
    """Train one diffusion model per dataset."""
    return pipeline.cmd_train_dm(cfg, root, force)


@cli.command()
@click.option("--count", type=click.IntRange(min=0), default=None, help="Samples per class.")
@_options
def sample(cfg, root, force, count):
    """Draw synthetic images from the trained models."""
    return pipeline.cmd_sample(cfg, root, force, count)


@cli.command()
@_options
def fid(cfg, root, force):
    """Per-class FID and pixel histograms, synthetic vs original."""
    return pipeline.cmd_fid(cfg, root, force)


@cli.command("eval")
@click.option("--protocol", type=click.Choice(pipeline.PROTOCOLS), multiple=True,
              help="Protocol(s) to run; default is every protocol in the config.")
@_options
def eval_(cfg, root, force, protocol):
    """Downstream classification protocols."""
    chosen = protocol or [p for p in pipeline.PROTOCOLS if p in cfg.experiments] or ["hierarchical"]
    return {p: pipeline.cmd_eval(cfg, root, p, force) for p in chosen}


@cli.command()
@_options
def report(cfg, root, force):
    """Tables and figures from the evaluation outputs."""
    return pipeline.cmd_report(cfg, root, force)


@cli.command()
@_options
def run(cfg, root, force):
    """Every stage in order."""
    return pipeline.run_all(cfg, root, force)


def main(argv=None):
    cli.main(args=argv, prog_name="trafficdiff")


if __name__ == "__main__":
    main()
