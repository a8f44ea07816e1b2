import click

from app.commands.options import config_options, console, guarded, run_stage
from app.services.pipeline_service import pipeline_service


@click.command()
@click.option("--control", is_flag=True, help="Sample event-free weeks instead of event days.")
@config_options
@guarded
def ttest(control, config_path, **overrides):
    """Test whether experts interact more than other CVE posters ahead of events."""
    result = run_stage(lambda config: pipeline_service.ttest(config, control), config_path, overrides)
    verdict = "rejects" if result.reject else "does not reject"
    console.print(f"t={result.t_statistic:.4f} p={result.p_value:.4g}: {verdict} at alpha={result.alpha}")
