import click
from rich.table import Table

from app.commands.options import config_options, console, guarded, run_stage
from app.services.pipeline_service import pipeline_service


@click.command()
@config_options
@guarded
def ingest(config_path, **overrides):
    """Validate posts, incidents and the CPE map and load them into the corpus store."""
    summary = run_stage(pipeline_service.ingest, config_path, overrides)
    table = Table(title="Corpus summary")
    table.add_column("key")
    table.add_column("value", justify="right")
    for key, value in summary.items():
        table.add_row(key, str(value))
    console.print(table)
