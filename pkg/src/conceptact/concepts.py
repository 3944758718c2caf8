"""Concept classes, episode annotations and the episode-to-step broadcast."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConceptError(ValueError):
    """Base class for annotation validation failures."""


class MissingClassError(ConceptError):
    pass


class UnknownValueError(ConceptError):
    pass


class DuplicateClassError(ConceptError):
    pass


class EmptyEpisodeError(ConceptError):
    pass


@dataclass(frozen=True)
class ConceptClass:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if len(self.values) < 2:
            raise ConceptError(f"concept class {self.name!r} needs at least two values")
        if len(set(self.values)) != len(self.values):
            raise ConceptError(f"duplicate value names in concept class {self.name!r}")

    @property
    def cardinality(self) -> int:
        return len(self.values)

    def index(self, value: str) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise UnknownValueError(f"{value!r} is not a value of concept class {self.name!r}") from None


@dataclass(frozen=True)
class ConceptSchema:
    classes: tuple[ConceptClass, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ConceptError("a concept schema needs at least one class")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise DuplicateClassError(f"duplicate concept class names in {names}")

    @classmethod
    def from_dict(cls, spec) -> "ConceptSchema":
        """Build from ``[[name, [values...]], ...]`` or an ordered ``{name: values}`` dict."""
        items = spec.items() if isinstance(spec, dict) else spec
        return cls(tuple(ConceptClass(name, tuple(values)) for name, values in items))

    def to_list(self) -> list:
        return [[c.name, list(c.values)] for c in self.classes]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    @property
    def cardinalities(self) -> list[int]:
        return [c.cardinality for c in self.classes]

    @property
    def total_width(self) -> int:
        return sum(self.cardinalities)

    def __getitem__(self, name: str) -> ConceptClass:
        for c in self.classes:
            if c.name == name:
                return c
        raise MissingClassError(f"no concept class named {name!r}")

    def __len__(self) -> int:
        return len(self.classes)

    def slices(self) -> list[slice]:
        """Column slice of each class inside a concatenated concept row."""
        out, start = [], 0
        for n in self.cardinalities:
            out.append(slice(start, start + n))
            start += n
        return out


@dataclass
class EpisodeAnnotation:
    """One one-hot vector per schema class, keyed by class name."""

    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self, schema: ConceptSchema) -> None:
        if set(self.vectors) != set(schema.names):
            missing = set(schema.names) - set(self.vectors)
            if missing:
                raise MissingClassError(f"annotation lacks classes {sorted(missing)}")
            raise UnknownValueError(f"annotation has unknown classes {sorted(set(self.vectors) - set(schema.names))}")
        for c in schema.classes:
            v = np.asarray(self.vectors[c.name])
            if v.shape != (c.cardinality,):
                raise ConceptError(f"class {c.name!r}: expected length {c.cardinality}, got {v.shape}")
            if not (np.isin(v, (0, 1)).all() and v.sum() == 1):
                raise ConceptError(f"class {c.name!r}: annotation is not one-hot: {v.tolist()}")

    def indices(self, schema: ConceptSchema) -> list[int]:
        return [int(np.argmax(self.vectors[c.name])) for c in schema.classes]

    def values(self, schema: ConceptSchema) -> dict[str, str]:
        return {c.name: c.values[i] for c, i in zip(schema.classes, self.indices(schema))}

    def concatenated(self, schema: ConceptSchema) -> np.ndarray:
        return np.concatenate([np.asarray(self.vectors[c.name], dtype=np.float32) for c in schema.classes])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EpisodeAnnotation) or set(self.vectors) != set(other.vectors):
            return False
        return all(np.array_equal(self.vectors[k], other.vectors[k]) for k in self.vectors)


def encode_annotation(schema: ConceptSchema, chosen) -> EpisodeAnnotation:
    """One-hot encode ``chosen`` (class name -> value name) in schema value order.

    ``chosen`` may be a mapping or a sequence of (class, value) pairs; a pair
    sequence that names a class twice raises :class:`DuplicateClassError`.
    """
    pairs = list(chosen.items()) if isinstance(chosen, dict) else list(chosen)
    seen: dict[str, str] = {}
    for name, value in pairs:
        if name in seen:
            raise DuplicateClassError(f"concept class {name!r} chosen more than once")
        seen[name] = value
    vectors = {}
    for c in schema.classes:
        if c.name not in seen:
            raise MissingClassError(f"no value chosen for concept class {c.name!r}")
        vec = np.zeros(c.cardinality, dtype=np.int8)
        vec[c.index(seen[c.name])] = 1
        vectors[c.name] = vec
    extra = set(seen) - set(schema.names)
    if extra:
        raise MissingClassError(f"classes not in schema: {sorted(extra)}")
    return EpisodeAnnotation(vectors)


def broadcast_to_steps(annotation: EpisodeAnnotation, episode_length: int,
                       schema: ConceptSchema | None = None) -> np.ndarray:
    """(T, total_width) matrix whose every row is the concatenated annotation."""
    if episode_length < 1:
        raise EmptyEpisodeError("cannot broadcast an annotation onto an empty episode")
    names = schema.names if schema is not None else list(annotation.vectors)
    row = np.concatenate([np.asarray(annotation.vectors[n], dtype=np.float32) for n in names])
    return np.tile(row, (episode_length, 1))
