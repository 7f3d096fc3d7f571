from __future__ import annotations

import os
from dataclasses import Field, dataclass, field, fields
from difflib import get_close_matches
from typing import Any

from ultralytics.utils import LOGGER

from ltc_rerank.constants import DEFAULT_PROJECT_NAME, LTC_COLORSTR


@dataclass
class Settings:
    """Run-level settings for ltc-rerank.

    Holds everything that is not a model, compression or training hyperparameter: experiment tracking, worker
    threads and console behavior. Supports parsing values from `LTC_*` environment variables.
    """

    project_name: str = field(default=DEFAULT_PROJECT_NAME, metadata={"description": "3LC project name"})
    """The name of the 3LC project runs are recorded under. Default: 'ltc-rerank'"""

    run_name: str | None = field(default=None, metadata={"description": "3LC run name"})
    """The name of the 3LC run. Default: None"""

    run_description: str | None = field(default=None, metadata={"description": "3LC run description"})
    """The description of the 3LC run. Default: None"""

    tracking: bool = field(default=False, metadata={"description": "Record training and sweeps as 3LC runs"})
    """Whether to record training and sweeps as 3LC runs. Requires the `tracking` extra. Default: False"""

    num_threads: int = field(default=1, metadata={"description": "Worker threads for per-query stages"})
    """Number of worker threads for per-query reranking. Default: 1"""

    progress: bool = field(default=True, metadata={"description": "Show progress bars"})
    """Whether to show progress bars. Default: True"""

    @classmethod
    def from_env(cls) -> Settings:
        """Build settings from `LTC_<FIELD>` environment variables, warning about unknown `LTC_*` names."""
        known = {_env_name(f): f for f in fields(cls)}
        _warn_unknown(sorted(name for name in os.environ if name.startswith(ENV_PREFIX) and name not in known), cls)

        values = {f.name: _parse(name, os.environ[name], f.type) for name, f in known.items() if name in os.environ}
        return cls(**values)

    def verify(self) -> None:
        """Check the settings, raising AssertionError with a readable message on the first problem."""
        assert self.num_threads >= 1, f"Number of threads {self.num_threads} is not positive."
        assert self.project_name, "Project name must be a non-empty string."
        if self.tracking:
            from ltc_rerank.utils.tracking import check_tlc_version

            check_tlc_version()

    @classmethod
    def describe_env(cls) -> str:
        """One line per supported variable with its description and default."""
        defaults = cls()
        return "\n".join(
            f"  - {_env_name(f)}: {f.metadata['description']} (default: {getattr(defaults, f.name)!r})"
            for f in fields(cls)
        )


ENV_PREFIX = "LTC_"
_TRUE, _FALSE = {"y", "yes", "1", "true"}, {"n", "no", "0", "false"}


def _env_name(settings_field: Field) -> str:
    return ENV_PREFIX + settings_field.name.upper()


def _warn_unknown(names: list[str], cls: type[Settings]) -> None:
    if not names:
        return
    if len(names) == 1:
        guess = get_close_matches(names[0], [_env_name(f) for f in fields(cls)], n=1, cutoff=0.4)
        hint = f"Did you mean {guess[0]}?" if guess else f"Supported variables:\n{cls.describe_env()}"
        LOGGER.warning(f"{LTC_COLORSTR}Ignoring unknown environment variable {names[0]}. {hint}")
    else:
        LOGGER.warning(
            f"{LTC_COLORSTR}Ignoring unknown environment variables {', '.join(names)}. "
            f"Supported variables:\n{cls.describe_env()}"
        )


def _parse(name: str, value: str, annotation: str) -> Any:
    if annotation == "bool":
        lowered = value.lower()
        if lowered in _TRUE or lowered in _FALSE:
            return lowered in _TRUE
        raise ValueError(f"{name}={value!r} is not a boolean, use one of y/n, yes/no, 1/0 or true/false.")
    if annotation == "int":
        try:
            return int(value)
        except ValueError as e:
            raise ValueError(f"{name}={value!r} is not an integer.") from e
    if annotation in ("str", "str | None"):
        return value
    raise ValueError(f"No parser for {name} of type {annotation}.")
