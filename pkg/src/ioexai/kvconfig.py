"""Flat ``key = value`` text files used for scenarios, pipeline configs and mappings."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Malformed or invalid configuration; carries the offending line when known."""

    def __init__(self, message: str, source: str | None = None, lineno: int | None = None):
        self.source = source
        self.lineno = lineno
        where = ""
        if source is not None and lineno is not None:
            where = f"{source}:{lineno}: "
        elif lineno is not None:
            where = f"line {lineno}: "
        super().__init__(where + message)


def parse_kv(text: str, source: str = "<string>") -> list[tuple[int, str, str]]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys may repeat."""
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", source, lineno)
        entries.append((lineno, key, value.strip()))
    return entries


def read_kv(path: str | Path) -> list[tuple[int, str, str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", str(path)) from exc
    return parse_kv(text, str(path))


def format_kv(items: dict[str, object]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in items.items())
