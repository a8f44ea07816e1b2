import click

from app.commands.options import config_options, console, guarded, run_stage
from app.services.evaluation_service import evaluation_service
from app.services.pipeline_service import pipeline_service


@click.command()
@config_options
@guarded
def train(config_path, **overrides):
    """Train ridge and group-lasso logit models on the training days."""
    models = run_stage(pipeline_service.train, config_path, overrides)
    console.print(f"[green]{len(models)} models trained")


@click.command()
@config_options
@guarded
def predict(config_path, **overrides):
    """Daily attack probabilities from every trained model."""
    predictions = run_stage(pipeline_service.predict, config_path, overrides)
    console.print(f"[green]{len(predictions)} predictions written")


@click.command()
@config_options
@guarded
def evaluate(config_path, **overrides):
    """Precision, recall, F1 and AUC of stored predictions on the test days."""
    reports = run_stage(pipeline_service.evaluate, config_path, overrides)
    evaluation_service.render(reports, "Evaluation", console)
