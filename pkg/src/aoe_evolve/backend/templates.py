from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .base import TemplateError

TEMPLATE_IDS = (
    "init_plain",
    "init_kb",
    "code_to_chain",
    "chain_to_code",
    "mutate_direct",
    "mutate_kb",
    "state_judge",
    "state_merge",
)

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@lru_cache(maxsize=None)
def load_template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise TemplateError(f"unknown template {template_id!r}")
    try:
        return resources.files(__package__).joinpath("templates", f"{template_id}.txt").read_text("utf-8")
    except FileNotFoundError:
        raise TemplateError(f"template file for {template_id!r} is missing") from None


def placeholders(text: str) -> set[str]:
    return set(_PLACEHOLDER.findall(text))


def render(template_id: str, **values: object) -> str:
    """Substitute ``{name}`` placeholders; every placeholder must be supplied.

    Braces that are not a bare identifier (JSON examples) are left alone.
    """
    text = load_template(template_id)
    missing = placeholders(text) - set(values)
    if missing:
        raise TemplateError(f"template {template_id!r} needs {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), text)
