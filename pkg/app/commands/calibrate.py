import click

from app.commands.options import config_options, console, guarded, run_stage
from app.services.pipeline_service import pipeline_service


@click.command()
@config_options
@guarded
def calibrate(config_path, **overrides):
    """Grid-search the reply thresholds against a power-law in-degree fit."""
    params = run_stage(pipeline_service.calibrate, config_path, overrides)
    console.print(f"[green]thresh_spat={params.thresh_spat} thresh_temp_minutes={params.thresh_temp_minutes}")
