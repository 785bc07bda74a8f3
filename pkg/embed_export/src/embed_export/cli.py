"""embed-export command line: vectors and scores subcommands."""
from __future__ import annotations

import sys

import click

from . import __version__
from .exporter import export_embeddings, export_pair_scores
from .jobs import ExportError, ExportJob


@click.group(name="embed-export")
@click.version_option(version=__version__, prog_name="embed-export")
def cli() -> None:
    """Export sentence embeddings and pair scores as interchange files."""


@cli.command("vectors")
@click.option("--input", "input_path", required=True, type=click.Path(),
              help='Sentences JSONL: {"id", "text"} per line.')
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--model", default="hash-ngram-v1", show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=32,
              show_default=True)
@click.option("--normalize", is_flag=True, help="L2-normalize before writing.")
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_vectors(input_path, output_path, model, batch_size, normalize, seed):
    """Encode sentences into a binary vector file."""
    report = export_embeddings(ExportJob(
        input_path=input_path, output_path=output_path, model=model,
        batch_size=batch_size, normalize=normalize, seed=seed))
    click.echo(f"wrote {report.count} vectors (dim {report.dim}) -> {output_path}")


@cli.command("scores")
@click.option("--pairs", "input_path", required=True, type=click.Path(),
              help='Pairs JSONL with "pair_id" and the two finding texts.')
@click.option("--output", "output_path", required=True, type=click.Path())
@click.option("--model", default="dice-prob-v1", show_default=True)
@click.option("--strict", is_flag=True, help="Fail if any pair goes unscored.")
def cmd_scores(input_path, output_path, model, strict):
    """Score pairs into a value file with a range-declaring header."""
    report = export_pair_scores(ExportJob(
        input_path=input_path, output_path=output_path, model=model,
        strict=strict))
    note = f", {len(report.missing)} unscored" if report.missing else ""
    click.echo(f"wrote {report.count} scores ({report.value_range}){note} "
               f"-> {output_path}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (ExportError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # noqa: BLE001 - documented catch-all exit
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
