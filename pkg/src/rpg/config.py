"""Flat ``key = value`` config files.

Blank lines and ``#`` comments are ignored.  Values are returned as strings;
callers coerce them against their own typed defaults.
"""
from __future__ import annotations

from pathlib import Path


class ConfigFileError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigFileError(f"{source}:{lineno}: empty key")
        if key in out and key != "contact":
            raise ConfigFileError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value if key not in out else out[key] + "\n" + value
    return out


def load_kv(path: str | Path) -> dict[str, str]:
    p = Path(path)
    return parse_kv(p.read_text(), str(p))


def coerce(value: str, like, key: str):
    """Convert ``value`` to the type of the default ``like``."""
    try:
        if isinstance(like, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(int(v) for v in value.replace(",", " ").split())
    except ValueError:
        raise ConfigFileError(f"bad value for {key!r}: {value!r}") from None
    return value
