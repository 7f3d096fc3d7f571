from __future__ import annotations

from typing import Any

from packaging import version
from ultralytics.utils import LOGGER

from ltc_rerank.constants import LTC_COLORSTR, TLC_REQUIRED_VERSION
from ltc_rerank.settings import Settings


def _import_tlc():
    try:
        import tlc
    except ImportError as e:
        raise ImportError(
            "Tracking requires the 3LC package. Install it with 'pip install ltc-rerank[tracking]'."
        ) from e
    return tlc


def check_tlc_version():
    """Check the 3LC version."""
    tlc = _import_tlc()
    installed_version = version.parse(tlc.__version__)
    if installed_version < version.parse(TLC_REQUIRED_VERSION):
        raise ValueError(
            f"3LC version {tlc.__version__} is too old to use with ltc-rerank. "
            f"Please upgrade to version {TLC_REQUIRED_VERSION} or later by running 'pip install --upgrade 3lc'."
        )


class RunTracker:
    """Records parameters and per-step output values to a 3LC run when tracking is enabled, otherwise does nothing."""

    def __init__(self, settings: Settings, default_description: str):
        self._run = None
        if not settings.tracking:
            return

        tlc = _import_tlc()
        self._run = tlc.init(
            project_name=settings.project_name,
            description=settings.run_description if settings.run_description else default_description,
            run_name=settings.run_name,
        )
        LOGGER.info(f"{LTC_COLORSTR}Created run named '{self._run.url.parts[-1]}' in project {self._run.project_name}.")
        self._run.set_status_running()

    @property
    def enabled(self) -> bool:
        return self._run is not None

    def set_parameters(self, parameters: dict[str, Any]) -> None:
        if self._run is not None:
            self._run.set_parameters(parameters)

    def add_output_value(self, value: dict[str, Any]) -> None:
        if self._run is not None:
            self._run.add_output_value(value)

    def complete(self) -> None:
        if self._run is not None:
            self._run.set_status_completed()
