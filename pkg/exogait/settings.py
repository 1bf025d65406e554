"""
Run-time configuration.

A setting ``NAME`` is resolved in the following order:

1. attribute ``EXOGAIT_NAME`` of the settings module named by ``EXOGAIT_SETTINGS_MODULE``;
2. environment variable ``EXOGAIT_NAME``;
3. the built-in default from :data:`DEFAULTS`.

Example:
    >>> setting("GRID_SIZE")
    101
    >>> setting("TREADMILL_LIMIT")
    3.2
"""
import os
from importlib import import_module
from types import ModuleType
from typing import Any, Callable, Dict, Optional, Union

PREFIX = "EXOGAIT_"

DEFAULTS: Dict[str, Any] = {
    "GRID_SIZE": 101,
    "TREADMILL_LIMIT": 3.2,
    "SPEED_UNIT": "km/h",
    "STEPWISE_ALPHA": 0.01,
    "BISQUARE_TUNING": 4.685,
    "IRLS_TOLERANCE": 1e-8,
    "IRLS_MAX_ITER": 50,
    "MIN_ROWS": 10,
    "SEED": 0,
    "LEVEL_FRACTIONS": (40, 55, 70),
    "LEVEL_TOLERANCE": 10.0,
    "SPEED_ENVELOPE_MARGIN": 0.10,
    "MIN_SEPARATION": 1.0,
    "MAX_NUDGE": 3.0,
}


class _EnvironSettings(object):
    """
    Lookups attribute accesses in `os.environ`.
    """

    def __getattr__(self, item):
        item = os.environ.get(item)
        # Support `hasattr()`
        if item is None:
            raise AttributeError
        return item


def get_module() -> Union[_EnvironSettings, ModuleType]:
    """
    Attempts to load the settings module.
    If ``EXOGAIT_SETTINGS_MODULE`` is not defined, returns :class:`_EnvironSettings()` object.
    """
    module = os.environ.get(PREFIX + "SETTINGS_MODULE")
    if module is None:
        return _EnvironSettings()
    module = module.replace(".py", "").replace("/", ".")
    return import_module(module)


def _cast_like(default: Any) -> Callable[[Any], Any]:
    if isinstance(default, bool):
        return lambda x: x if isinstance(x, bool) else str(x).lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return lambda x: (
            tuple(x)
            if isinstance(x, (list, tuple))
            else tuple(type(default[0])(v) for v in str(x).split(","))
        )
    return lambda x: x


def setting(
    name: str, default: Any = None, cast: Optional[Callable[[Any], Any]] = None
) -> Any:
    """
    Resolves one setting.

    :param name: setting name without the ``EXOGAIT_`` prefix
    :param default: fallback value, defaults to :code:`DEFAULTS[name]`
    :param cast: converter applied to overrides, inferred from the default's type if omitted
    :return: the resolved value
    """
    if default is None:
        default = DEFAULTS.get(name)
    module = get_module()
    key = PREFIX + name
    if hasattr(module, key):
        value = getattr(module, key)
    elif key in os.environ:
        value = os.environ[key]
    else:
        return default
    cast = cast or _cast_like(default)
    return cast(value)


def resolved() -> Dict[str, Any]:
    """
    Returns every known setting after overrides.
    """
    return {name: setting(name) for name in DEFAULTS}
