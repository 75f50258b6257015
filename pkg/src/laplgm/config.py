"""Run configuration files.

A small indentation-based key/value grammar with nesting:

    # comment
    seed: 7
    mesh:
      kind: structured
      nx: 12
    components:
      - name: intercept
        kind: fixed_effect
        covariate: const

Mappings are `key: value` lines; a bare `key:` opens a nested block
(mapping or list) at deeper indentation; list items start with `- `.
Scalars are parsed as int, float, true/false, null/NA, or strings
(quotes optional).  Tabs are rejected.  Unknown keys are rejected when
the configuration is interpreted, not at parse time.
"""
from __future__ import annotations

from .errors import ParseError


def _parse_scalar(text):
    s = text.strip()
    if s.startswith('"') and s.endswith('"') and len(s) >= 2:
        return s[1:-1]
    if s.startswith("'") and s.endswith("'") and len(s) >= 2:
        return s[1:-1]
    low = s.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    if low in ("null", "none", "na", "nan", ""):
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


class _Line:
    __slots__ = ("no", "indent", "text")

    def __init__(self, no, indent, text):
        self.no = no
        self.indent = indent
        self.text = text


def _logical_lines(text):
    lines = []
    for no, raw in enumerate(text.splitlines(), start=1):
        if "\t" in raw:
            raise ParseError(f"line {no}: tabs are not allowed, use spaces")
        stripped = raw.split(" #", 1)[0] if " #" in raw else raw
        if stripped.strip() == "" or stripped.lstrip().startswith("#"):
            continue
        indent = len(stripped) - len(stripped.lstrip(" "))
        lines.append(_Line(no, indent, stripped.strip()))
    return lines


def _parse_block(lines, pos, indent):
    """Parse one block (mapping or list) at a fixed indentation level."""
    if pos >= len(lines):
        raise ParseError("empty block")
    is_list = lines[pos].text.startswith("- ") or lines[pos].text == "-"
    return (_parse_list if is_list else _parse_mapping)(lines, pos, indent)


def _parse_mapping(lines, pos, indent):
    out = {}
    while pos < len(lines) and lines[pos].indent == indent:
        ln = lines[pos]
        if ln.text.startswith("- "):
            raise ParseError(f"line {ln.no}: list item inside a mapping")
        if ":" not in ln.text:
            raise ParseError(f"line {ln.no}: expected 'key: value'")
        key, _, rest = ln.text.partition(":")
        key = key.strip()
        if not key:
            raise ParseError(f"line {ln.no}: empty key")
        if key in out:
            raise ParseError(f"line {ln.no}: duplicate key {key!r}")
        rest = rest.strip()
        pos += 1
        if rest:
            out[key] = _parse_scalar(rest)
        else:
            if pos >= len(lines) or lines[pos].indent <= indent:
                out[key] = None
            else:
                out[key], pos = _parse_block(lines, pos, lines[pos].indent)
        if pos < len(lines) and lines[pos].indent > indent:
            raise ParseError(f"line {lines[pos].no}: unexpected indentation")
    return out, pos


def _parse_list(lines, pos, indent):
    out = []
    while pos < len(lines) and lines[pos].indent == indent:
        ln = lines[pos]
        if not (ln.text.startswith("- ") or ln.text == "-"):
            raise ParseError(f"line {ln.no}: expected a '- ' list item")
        body = ln.text[2:].strip() if ln.text != "-" else ""
        if body and ":" not in body:
            out.append(_parse_scalar(body))
            pos += 1
            continue
        # mapping item: first pair is inline, the rest indented deeper
        item = {}
        item_indent = indent + 2
        if body:
            key, _, rest = body.partition(":")
            item[key.strip()] = _parse_scalar(rest) if rest.strip() else None
        pos += 1
        if pos < len(lines) and lines[pos].indent > indent:
            sub, pos = _parse_mapping(lines, pos, lines[pos].indent)
            dup = set(sub) & set(item)
            if dup:
                raise ParseError(f"line {ln.no}: duplicate keys {sorted(dup)} in list item")
            item.update(sub)
        out.append(item if item else _parse_scalar(body))
    return out, pos


def parse_config_text(text):
    lines = _logical_lines(text)
    if not lines:
        return {}
    if lines[0].indent != 0:
        raise ParseError(f"line {lines[0].no}: top level must not be indented")
    out, pos = _parse_mapping(lines, 0, 0)
    if pos != len(lines):
        raise ParseError(f"line {lines[pos].no}: inconsistent indentation")
    return out


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        return parse_config_text(text)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def check_keys(section, allowed, context):
    """Reject unknown keys with their context."""
    if section is None:
        return
    unknown = set(section) - set(allowed)
    if unknown:
        raise ParseError(
            f"{context}: unknown keys {sorted(unknown)}; allowed: {sorted(allowed)}")


def require(section, key, context):
    if section is None or key not in section or section[key] is None:
        raise ParseError(f"{context}: missing required key {key!r}")
    return section[key]
