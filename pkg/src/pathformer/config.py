"""Flat ``key = value`` config files."""

from __future__ import annotations

import configparser
import dataclasses
import typing


def read_config(path) -> dict[str, str]:
    """Parse a sectionless ``key = value`` file; ``#`` and ``;`` start comments."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_string("[config]\n" + fh.read())
    return dict(parser["config"])


def coerce(cls, mapping: dict, strict: bool = True) -> dict:
    """Convert string values to the types of ``cls``'s dataclass fields."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    out = {}
    for key, raw in mapping.items():
        if key not in names:
            if strict:
                raise KeyError(f"unknown {cls.__name__} key {key!r}")
            continue
        out[key] = _convert(hints[key], raw)
    return out


def _convert(hint, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if text.lower() in ("", "none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        return text.lower() in ("1", "true", "yes", "on")
    if hint in (int, float, str):
        return hint(text)
    return text
