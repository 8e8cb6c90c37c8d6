"""Command line entry point for the exporter."""

import sys
from pathlib import Path

import click

from .export import (
    BridgeError,
    BridgeJob,
    DEFAULT_BATCH_SIZE,
    DEFAULT_MODEL,
    run_job,
)


@click.group()
def main():
    """Encode summary texts into an embedding cache file."""


@main.command()
@click.argument("input_path", type=click.Path(path_type=Path))
@click.option("-o", "--output", "output_path", required=True,
              type=click.Path(path_type=Path),
              help="Cache file to write.")
@click.option("--model", "model_name", default=DEFAULT_MODEL, show_default=True,
              help="Sentence encoder to load.")
@click.option("--batch-size", default=DEFAULT_BATCH_SIZE, show_default=True,
              help="Texts per encoder call.")
def export(input_path: Path, output_path: Path, model_name: str, batch_size: int):
    """Encode INPUT_PATH (line-delimited JSON with id and text) to a cache."""
    try:
        job = BridgeJob(input_path=input_path, output_path=output_path,
                        model_name=model_name, batch_size=batch_size)
        count, dim = run_job(job)
    except BridgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {count} records at dim {dim} to {output_path}")


if __name__ == "__main__":
    main()
