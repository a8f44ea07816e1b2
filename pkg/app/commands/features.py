import click

from app.commands.options import config_options, console, guarded, run_stage
from app.services.pipeline_service import pipeline_service


@click.command()
@config_options
@guarded
def features(config_path, **overrides):
    """Build reply networks, extract experts and write the daily feature tables."""
    values, _ = run_stage(pipeline_service.features, config_path, overrides)
    console.print(f"[green]{values.shape[1]} feature series over {values.shape[0]} days")
