"""Prompt template files and the line-dropping renderer.

Templates are plain text files with ``{placeholder}`` markers. Rendering
substitutes the provided values and drops every line that references a
placeholder whose value is None, which is how conditioning is switched on
and off: a step that does not condition on the intent simply renders with
``intent=None`` and the intent line disappears from its prompt.

Leading lines starting with ``#`` are template comments and never reach the
prompt. Only ``{lower_snake_case}`` markers are treated as placeholders, so
prompt prose may contain brackets and braces freely. A placeholder that is
referenced by a template but missing from the mapping is an error; unused
mapping entries are fine.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class TemplateError(ValueError):
    pass


def load_template(name: str, template_dir: str | Path | None = None) -> str:
    """Read a template by name, e.g. ``"cof/step2_intent"``.

    A configured directory takes precedence; otherwise the packaged default
    is used. Comment header lines are stripped here so callers always see
    renderable text.
    """
    relative = f"{name}.txt"
    if template_dir is not None:
        path = Path(template_dir) / relative
        if not path.exists():
            raise TemplateError(f"template {relative} not found under {template_dir}")
        raw = path.read_text(encoding="utf-8")
    else:
        try:
            package_root = resources.files("cofnlu").joinpath("templates")
            raw = package_root.joinpath(relative).read_text(encoding="utf-8")
        except (FileNotFoundError, ModuleNotFoundError) as exc:
            raise TemplateError(f"packaged template {relative} not found") from exc
    lines = raw.splitlines()
    while lines and lines[0].startswith("#"):
        lines.pop(0)
    return "\n".join(lines).strip("\n")


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(template))


def render(template: str, values: dict[str, str | None]) -> str:
    """Substitute placeholders, dropping lines whose value is None."""
    out_lines = []
    for line in template.splitlines():
        names = _PLACEHOLDER_RE.findall(line)
        missing = [n for n in names if n not in values]
        if missing:
            raise TemplateError(f"template references unknown placeholders: {missing}")
        if any(values[n] is None for n in names):
            continue
        rendered = _PLACEHOLDER_RE.sub(lambda m: str(values[m.group(1)]), line)
        out_lines.append(rendered)
    text = "\n".join(out_lines)
    # Collapse blank runs left behind by dropped lines.
    text = re.sub(r"\n{3,}", "\n\n", text)
    return text.strip("\n")
