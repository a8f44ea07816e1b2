class ForumcastError(Exception):
    """Base error. Carries the process exit code the CLI should return."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: int | None = None) -> None:
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(ForumcastError):
    exit_code = 2


class DataError(ForumcastError):
    exit_code = 3


class DegenerateError(ForumcastError):
    """Numeric degeneracy: single-class labels, empty graphs, infeasible schedules."""

    exit_code = 4
