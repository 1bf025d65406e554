import hashlib
import logging
from typing import Any, Dict, Iterator, Mapping

import toml


class Record(Mapping):
    """
    A read-only row of converted values that remembers where it was read from.
    Fields are reachable both as keys and as attributes.

    Example:
        >>> r = Record({"id": "S01", "height": 1.76}, source="subjects.csv:2")
        >>> r.id, r["height"], len(r)
        ('S01', 1.76, 2)
        >>> r.height = 1.8
        Traceback (most recent call last):
            ...
        TypeError: Record fields are read-only
        >>> r.mass
        Traceback (most recent call last):
            ...
        KeyError: 'No field `mass` in subjects.csv:2.'
    """

    __slots__ = ("_fields", "source")

    def __init__(self, fields: Mapping[str, Any], source: str = "<record>"):
        object.__setattr__(self, "_fields", dict(fields))
        object.__setattr__(self, "source", source)

    def __getitem__(self, name: str) -> Any:
        try:
            return self._fields[name]
        except KeyError:
            raise KeyError(f"No field `{name}` in {self.source}.") from None

    def __getattr__(self, name: str) -> Any:
        if name.startswith("_"):
            raise AttributeError(name)
        return self[name]

    def __setattr__(self, key: str, value: Any):
        raise TypeError("Record fields are read-only")

    def __setitem__(self, key: str, value: Any):
        raise TypeError("Record fields are read-only")

    def __iter__(self) -> Iterator[str]:
        return iter(self._fields)

    def __len__(self) -> int:
        return len(self._fields)

    def to_dict(self) -> Dict[str, Any]:
        return dict(self._fields)

    def __repr__(self) -> str:
        return f"Record({self._fields!r}, source={self.source!r})"


class PipelineLog(object):
    """
    The package-wide log, writing to the :code:`exogait` logger.
    Messages are dropped while it is disabled, and a broken handler never breaks the pipeline.

    >>> from exogait.utils import log
    >>> log
    PipelineLog(enabled=True)
    >>> log.disable(); log.enabled
    False
    >>> log.enable()
    """

    def __init__(self, name: str = "exogait"):
        self.logger = logging.getLogger(name)
        self.enabled = True

    def disable(self):
        self.enabled = False

    def enable(self):
        self.enabled = True

    def log(self, level: int, msg: str, *args, **kwargs):
        """
        Forwards one message to the logger if the log is enabled.

        :param level: logging level
        :param msg: message, formatted lazily with :code:`args`
        :return: None
        """
        if not self.enabled:
            return
        try:
            self.logger.log(level, msg, *args, **kwargs)
        except Exception as e:
            self.logger.error(f"Failed to log {msg!r} on level {level}: {e}")

    def error(self, msg: str, *args, **kwargs):
        self.log(logging.ERROR, msg, *args, **kwargs)

    def warning(self, msg: str, *args, **kwargs):
        self.log(logging.WARNING, msg, *args, **kwargs)

    def info(self, msg: str, *args, **kwargs):
        self.log(logging.INFO, msg, *args, **kwargs)

    def debug(self, msg: str, *args, **kwargs):
        self.log(logging.DEBUG, msg, *args, **kwargs)

    def __repr__(self) -> str:
        return f"PipelineLog(enabled={self.enabled})"


def config_hash(config: Mapping[str, Any]) -> str:
    """
    Returns a short, order-independent digest of a configuration mapping.

    >>> config_hash({"a": 1, "b": "x"}) == config_hash({"b": "x", "a": 1})
    True
    >>> len(config_hash({}))
    16

    :param config: a mapping of TOML-serializable values
    :return: first 16 hex digits of the SHA-256 of the canonical TOML dump
    """
    text = toml.dumps(_sorted(dict(config)))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _sorted(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {
            str(k): _sorted(value[k])
            for k in sorted(value, key=str)
            if value[k] is not None
        }
    if isinstance(value, (list, tuple)):
        return [_sorted(v) for v in value]
    return value


log = PipelineLog()
