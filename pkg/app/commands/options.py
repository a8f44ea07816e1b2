import inspect
import logging
import typing
from enum import Enum
from functools import wraps
from typing import Any, Callable, Dict, Optional, Type, TypeVar

import click
from pydantic import BaseModel
from rich.console import Console

from app.config import resolve_config
from app.core.errors import ForumcastError
from app.schemas.pipeline import PipelineConfig

logger = logging.getLogger(__name__)

console = Console()

T = TypeVar("T")


def click_type(annotation: Any):
    """Map a pydantic field annotation onto a click parameter type; lists and dates stay text."""
    if typing.get_origin(annotation) is typing.Union:
        annotation = next(arg for arg in typing.get_args(annotation) if arg is not type(None))
    if not inspect.isclass(annotation):
        return click.STRING
    if issubclass(annotation, Enum):
        return click.Choice([member.value for member in annotation])
    if annotation is bool:
        return click.BOOL
    if annotation is int:
        return click.INT
    if annotation is float:
        return click.FLOAT
    return click.STRING


def model_options(model: Type[BaseModel]) -> Callable:
    """One --flag per model field, defaulting to None so unset flags never override."""

    def decorate(func: Callable) -> Callable:
        for name, field in reversed(list(model.model_fields.items())):
            func = click.option(
                f"--{name.replace('_', '-')}",
                name,
                type=click_type(field.annotation),
                default=None,
                help=field.description or f"Override {name}.",
            )(func)
        return func

    return decorate


def config_options(func: Callable) -> Callable:
    func = model_options(PipelineConfig)(func)
    return click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="Flat key=value pipeline config file.",
    )(func)


def guarded(func: Callable) -> Callable:
    """Turn a ForumcastError into a logged error and its exit code."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ForumcastError as e:
            ctx = click.get_current_context()
            logger.error(f"{ctx.info_name} failed: {e.detail}")
            ctx.exit(e.exit_code)

    return wrapper


def run_stage(stage: Callable[[PipelineConfig], T], config_path: Optional[str], overrides: Dict[str, Any]) -> T:
    config = resolve_config(config_path, overrides)
    return stage(config)
