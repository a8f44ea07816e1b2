import click

from app.commands.calibrate import calibrate
from app.commands.detect import detect
from app.commands.features import features
from app.commands.ingest import ingest
from app.commands.simulate import simulate
from app.commands.supervised import evaluate, predict, train
from app.commands.ttest import ttest
from app.config import settings
from app.core.logging import setup_logging


@click.group()
@click.version_option(version="1.0.0", prog_name=settings.PROJECT_NAME)
@click.option("--log-level", default=settings.LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level):
    """Predict cyber attacks from expert attention in forum reply networks."""
    setup_logging(log_level)


# Register commands
cli.add_command(ingest)
cli.add_command(features)
cli.add_command(detect)
cli.add_command(train)
cli.add_command(predict)
cli.add_command(evaluate)
cli.add_command(simulate)
cli.add_command(calibrate)
cli.add_command(ttest)


if __name__ == "__main__":
    cli()
