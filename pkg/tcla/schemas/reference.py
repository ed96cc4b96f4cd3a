"""
Config Reference Page
Renders every ExperimentConfig field with its default and description as markdown
"""

import typing
from typing import List, Optional

from pydantic import BaseModel

from tcla.schemas.experiment import ExperimentConfig

TABLE_HEADER = ["| field | default | description |", "|---|---|---|"]


def _nested_model(annotation) -> Optional[type]:
    """Model class of a field annotated as a model or a list of models"""
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return annotation
    if typing.get_origin(annotation) in (list, List):
        (item,) = typing.get_args(annotation)
        if isinstance(item, type) and issubclass(item, BaseModel):
            return item
    return None


def _format_default(value) -> str:
    if isinstance(value, BaseModel):
        return ""
    return f"`{value.value if hasattr(value, 'value') else value}`"


def _describe(model: type, defaults: Optional[BaseModel], prefix: str, lines: List[str]) -> None:
    """Scalar fields of one model as a table, then one section per nested model"""
    lines.append("")
    lines.extend(TABLE_HEADER)
    nested = []
    for name, field in model.model_fields.items():
        path = f"{prefix}{name}"
        child = _nested_model(field.annotation)
        if child is not None:
            value = getattr(defaults, name, None) if defaults is not None else None
            if value is None and not field.is_required():
                value = field.get_default(call_default_factory=True)
            nested.append((child, value if isinstance(value, BaseModel) else None, path, field))
            continue
        if defaults is not None:
            default = _format_default(getattr(defaults, name))
        elif field.is_required():
            default = "required"
        else:
            default = _format_default(field.get_default(call_default_factory=True))
        lines.append(f"| `{path}` | {default} | {field.description or ''} |")

    for child, value, path, field in nested:
        is_list = _nested_model(field.annotation) is not field.annotation
        title = f"{path}[]" if is_list else path
        lines.extend(["", f"### `{title}`"])
        if field.description:
            lines.extend(["", field.description])
        _describe(child, value, f"{title}.", lines)


def render_config_reference() -> str:
    """Markdown reference of the experiment config schema"""
    lines = [
        "# Experiment config reference",
        "",
        "Generated from `tcla.schemas.ExperimentConfig`; do not edit by hand.",
    ]
    _describe(ExperimentConfig, None, "", lines)
    return "\n".join(lines) + "\n"
