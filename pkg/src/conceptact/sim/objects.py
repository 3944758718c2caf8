"""Object space shared by both tasks and the Task 1 sorting rule."""
from __future__ import annotations

from dataclasses import dataclass

SHAPES = ("cube", "rectangle", "cylinder")
COLORS = ("red", "green", "blue", "yellow")
VALID_COLORS = {
    "cube": ("red", "green", "yellow"),
    "rectangle": ("red", "blue", "green", "yellow"),
    "cylinder": ("red", "blue", "green"),
}
AREAS = ("A", "B")


class InvalidObjectError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ObjectSpec:
    shape: str
    color: str

    def __post_init__(self):
        if self.shape not in VALID_COLORS:
            raise InvalidObjectError(f"unknown shape {self.shape!r}")
        if self.color not in VALID_COLORS[self.shape]:
            raise InvalidObjectError(f"color {self.color!r} is not available for shape {self.shape!r}")

    @property
    def label(self) -> str:
        return f"{self.shape}-{self.color}"

    @classmethod
    def parse(cls, label: str) -> "ObjectSpec":
        shape, _, color = label.partition("-")
        return cls(shape, color)


def valid_objects() -> list[ObjectSpec]:
    """All shape-color pairs, shapes in SHAPES order then colors in COLORS order."""
    return [ObjectSpec(s, c) for s in SHAPES for c in COLORS if c in VALID_COLORS[s]]


def sorting_target(spec: ObjectSpec, rule: str = "equation") -> str:
    """Collection area for ``spec``.

    ``rule="equation"``: A iff (cube and red/green) or (cylinder and blue).
    ``rule="prose"``: A iff red, or rectangle of any non-yellow color.
    """
    if not isinstance(spec, ObjectSpec):
        spec = ObjectSpec(*spec)
    if rule == "equation":
        hit = (spec.shape == "cube" and spec.color in ("red", "green")) or \
              (spec.shape == "cylinder" and spec.color == "blue")
    elif rule == "prose":
        hit = spec.color == "red" or (spec.shape == "rectangle" and spec.color != "yellow")
    else:
        raise ValueError(f"unknown sorting rule {rule!r}")
    return "A" if hit else "B"
