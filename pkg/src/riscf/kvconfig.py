"""Plain ``key = value`` configuration files.

One entry per line, ``#`` starts a comment.  Values are parsed as JSON when
possible (numbers, booleans, lists, nested lists) and kept as bare strings
otherwise, so ``schemes = ["cbf", "fd_bf"]`` and ``output = out.csv`` both
work.
"""

import json
from pathlib import Path


def parse_kv(text):
    """Parse key-value text into a dict, preserving key order."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def format_kv(mapping):
    lines = []
    for key, value in mapping.items():
        lines.append(f"{key} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def load_kv(path):
    return parse_kv(Path(path).read_text())


def dump_kv(mapping, path):
    Path(path).write_text(format_kv(mapping))
