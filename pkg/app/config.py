import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.corpus import SyntheticScenario
from app.schemas.pipeline import PipelineConfig

# Try CWD .env first (when running from project root)
load_dotenv(dotenv_path=Path(".env"), override=False)
# Also try project-root .env relative to this file, in case CWD differs
project_root_env = Path(__file__).resolve().parents[1] / ".env"
if project_root_env.exists():
    load_dotenv(dotenv_path=project_root_env, override=False)


class Settings:
    # Environment overrides are honoured for paths only
    POSTS_PATH: Optional[str] = os.getenv("FORUMCAST_POSTS_PATH")
    ATTACKS_PATH: Optional[str] = os.getenv("FORUMCAST_ATTACKS_PATH")
    CPE_PATH: Optional[str] = os.getenv("FORUMCAST_CPE_PATH")
    OUTPUT_DIR: Optional[str] = os.getenv("FORUMCAST_OUTPUT_DIR")
    DATABASE_URL: Optional[str] = os.getenv("FORUMCAST_DATABASE_URL")

    LOG_LEVEL: str = os.getenv("FORUMCAST_LOG_LEVEL", "INFO")

    PROJECT_NAME: str = "forumcast"
    RESOLVED_CONFIG_NAME: str = "resolved_config.env"
    STORE_NAME: str = "corpus.db"

    def path_overrides(self) -> Dict[str, str]:
        overrides = {
            "posts_path": self.POSTS_PATH,
            "attacks_path": self.ATTACKS_PATH,
            "cpe_path": self.CPE_PATH,
            "output_dir": self.OUTPUT_DIR,
        }
        return {key: value for key, value in overrides.items() if value}

    def database_url(self, output_dir: str) -> str:
        if self.DATABASE_URL:
            return self.DATABASE_URL
        return f"sqlite:///{Path(output_dir) / self.STORE_NAME}"


settings = Settings()


def read_config_file(path: Optional[str]) -> Dict[str, str]:
    """Flat key=value file, dotenv syntax. Keys are case-insensitive."""
    if not path:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(detail=f"Config file not found: {path}")
    values = dotenv_values(config_path)
    return {key.strip().lower(): value for key, value in values.items() if value is not None}


def resolve_config(
    config_path: Optional[str] = None,
    cli_overrides: Optional[Dict[str, Any]] = None,
) -> PipelineConfig:
    """Defaults < config file < environment (paths only) < command-line flags."""
    merged: Dict[str, Any] = {}
    merged.update(read_config_file(config_path))
    merged.update(settings.path_overrides())
    merged.update({key: value for key, value in (cli_overrides or {}).items() if value is not None})

    unknown = sorted(set(merged) - set(PipelineConfig.model_fields))
    if unknown:
        raise ConfigError(detail=f"Unknown config keys: {', '.join(unknown)}")
    try:
        return PipelineConfig(**merged)
    except ValidationError as e:
        raise ConfigError(detail=f"Invalid configuration: {e}")


def write_resolved_config(config: PipelineConfig, output_dir: Path) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    target = output_dir / settings.RESOLVED_CONFIG_NAME
    lines = [f"{key}={value}" for key, value in sorted(config.flat_items())]
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return target


def resolve_scenario(
    scenario_path: Optional[str] = None,
    cli_overrides: Optional[Dict[str, Any]] = None,
) -> SyntheticScenario:
    """Scenario file (same key=value syntax) overridden by command-line flags."""
    merged: Dict[str, Any] = dict(read_config_file(scenario_path))
    merged.update({key: value for key, value in (cli_overrides or {}).items() if value is not None})
    unknown = sorted(set(merged) - set(SyntheticScenario.model_fields))
    if unknown:
        raise ConfigError(detail=f"Unknown scenario keys: {', '.join(unknown)}")
    try:
        return SyntheticScenario(**merged)
    except ValidationError as e:
        raise ConfigError(detail=f"Invalid scenario: {e}")
