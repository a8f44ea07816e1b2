import click

from app.commands.options import config_options, console, guarded, run_stage
from app.services.evaluation_service import evaluation_service
from app.services.pipeline_service import pipeline_service


@click.command()
@config_options
@guarded
def detect(config_path, **overrides):
    """Unsupervised attack prediction from SPE anomalies of each feature."""
    reports = run_stage(pipeline_service.detect, config_path, overrides)
    evaluation_service.render(reports, "Unsupervised detection (test days)", console)
