from pathlib import Path

import click

from app.commands.options import console, guarded, model_options
from app.config import resolve_scenario, settings
from app.schemas.corpus import SyntheticScenario
from app.services.pipeline_service import pipeline_service


@click.command()
@click.option("--scenario", "scenario_path", type=click.Path(dir_okay=False), default=None,
              help="Flat key=value scenario file.")
@click.option("--output-dir", default=None, help="Directory for posts, attacks, CPE map and plan files.")
@model_options(SyntheticScenario)
@guarded
def simulate(scenario_path, output_dir, **overrides):
    """Write a synthetic forum corpus with attention bursts planted before attacks."""
    scenario = resolve_scenario(scenario_path, overrides)
    target = Path(output_dir or settings.OUTPUT_DIR or "synthetic")
    synthetic = pipeline_service.simulate(scenario, target)
    console.print(f"[green]{synthetic.corpus.post_count()} posts, {len(synthetic.plan.attack_days)} planted attacks "
                  f"written to {target}")
