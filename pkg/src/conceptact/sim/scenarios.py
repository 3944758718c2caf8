"""Scenario enumeration for both tasks, the ordering constraint system and
the concept schemas / annotations derived from scenarios."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from ..concepts import ConceptSchema, EpisodeAnnotation, encode_annotation
from .objects import AREAS, COLORS, SHAPES, ObjectSpec, sorting_target, valid_objects

LOCATIONS = (1, 2, 3, 4, 5)
ORDERING_SLOTS = (1, 3, 5)
COLOR_RANK = {"red": 0, "green": 0, "yellow": 1, "blue": 2}


@dataclass(frozen=True)
class Scenario:
    task: str                                       # "sorting" | "ordering"
    objects: tuple[tuple[ObjectSpec, int], ...]     # (spec, pickup location)
    target: object                                  # "A"/"B" or tuple of 3 ObjectSpec, bottom to top

    def __post_init__(self):
        if self.task == "sorting" and len(self.objects) != 1:
            raise ValueError("sorting scenarios have exactly one object")
        if self.task == "ordering" and len(self.objects) != 3:
            raise ValueError("ordering scenarios have exactly three objects")
        if self.task not in ("sorting", "ordering"):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def id(self) -> str:
        objs = "+".join(f"{s.label}@{loc}" for s, loc in self.objects)
        if self.task == "sorting":
            return f"sorting:{objs}->{self.target}"
        return f"ordering:{objs}->" + ">".join(s.label for s in self.target)

    def to_dict(self) -> dict:
        target = self.target if self.task == "sorting" else [s.label for s in self.target]
        return {"task": self.task, "id": self.id,
                "objects": [{"spec": s.label, "location": loc} for s, loc in self.objects],
                "target": target}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        objects = tuple((ObjectSpec.parse(o["spec"]), int(o["location"])) for o in d["objects"])
        target = d["target"] if d["task"] == "sorting" else tuple(ObjectSpec.parse(t) for t in d["target"])
        return cls(d["task"], objects, target)


@dataclass
class Partition:
    train: list[Scenario]
    heldout: list[Scenario]
    notes: dict = field(default_factory=dict)

    @property
    def all(self) -> list[Scenario]:
        return self.train + self.heldout


# -- Task 1 -------------------------------------------------------------------

DEFAULT_SORTING_HOLDOUT = (ObjectSpec("cube", "red"), ObjectSpec("rectangle", "yellow"))
REFERENCE_SORTING_COUNT = 42


def enumerate_sorting_scenarios(holdout=DEFAULT_SORTING_HOLDOUT, rule: str = "equation") -> Partition:
    """Every valid (shape, color) x location, split by held-out object specs."""
    held = set(holdout)
    train, test = [], []
    for spec in valid_objects():
        for loc in LOCATIONS:
            sc = Scenario("sorting", ((spec, loc),), sorting_target(spec, rule))
            (test if spec in held else train).append(sc)
    notes = {"total": len(train) + len(test), "reference_total": REFERENCE_SORTING_COUNT,
             "valid_pairs": len(valid_objects())}
    return Partition(train, test, notes)


# -- Task 2 -------------------------------------------------------------------

REFERENCE_ORDERING_COUNT = 26


@dataclass(frozen=True)
class OrderingRules:
    """Readings of the under-specified hierarchy and adjacency rules.

    ascending:   color rank grows bottom-to-top (False: top-to-bottom)
    strict:      ranks must strictly increase (False: non-decreasing)
    rank_adjacency: red and green (equal rank) count as "identical" for the
                 adjacency rule (False: only literally equal colors)
    distinct:    the three objects must be pairwise different
    """
    ascending: bool = True
    strict: bool = False
    rank_adjacency: bool = True
    distinct: bool = False

    def flags(self) -> dict:
        return {"ascending": self.ascending, "strict": self.strict,
                "rank_adjacency": self.rank_adjacency, "distinct": self.distinct}


def ordering_is_valid(seq, rules: OrderingRules = OrderingRules()) -> bool:
    seq = tuple(seq)
    if len(seq) != 3:
        return False
    shapes = [o.shape for o in seq]
    if not 1 <= shapes.count("rectangle") <= 2:
        return False
    if shapes.count("cube") > 2 or shapes.count("cylinder") > 1:
        return False
    for pos, o in enumerate(seq, start=1):
        if o.shape == "cylinder" and pos != 3:
            return False
        if o.shape == "rectangle" and pos not in (1, 2):
            return False
    ranks = [COLOR_RANK[o.color] for o in seq]
    if not rules.ascending:
        ranks = ranks[::-1]
    for lo, hi in zip(ranks, ranks[1:]):
        if hi < lo or (rules.strict and hi == lo):
            return False
    if rules.rank_adjacency:
        same = lambda a, b: COLOR_RANK[a.color] == COLOR_RANK[b.color]
    else:
        same = lambda a, b: a.color == b.color
    # with three slots the only non-adjacent pair is (bottom, top)
    if same(seq[0], seq[2]) and not same(seq[0], seq[1]):
        return False
    if rules.distinct and len(set(seq)) < 3:
        return False
    return True


def enumerate_valid_orderings(rules: OrderingRules = OrderingRules()) -> list[tuple[ObjectSpec, ...]]:
    """Brute force over all 10^3 shape-color triples, in lexicographic product order."""
    objs = valid_objects()
    return [seq for seq in itertools.product(objs, repeat=3) if ordering_is_valid(seq, rules)]


def all_rule_combinations() -> list[OrderingRules]:
    return [OrderingRules(*flags) for flags in itertools.product((True, False), repeat=4)]


def nearest_to_reference_count() -> tuple[OrderingRules, int]:
    best = min(all_rule_combinations(),
               key=lambda r: (abs(len(enumerate_valid_orderings(r)) - REFERENCE_ORDERING_COUNT),
                              not r.ascending, r.strict, not r.rank_adjacency, r.distinct))
    return best, len(enumerate_valid_orderings(best))


def ordering_scenario(seq, index: int) -> Scenario:
    """Place the target sequence onto the three pickup slots using permutation ``index % 6``."""
    perm = list(itertools.permutations(range(3)))[index % 6]
    objects = tuple((seq[perm[slot]], loc) for slot, loc in enumerate(ORDERING_SLOTS))
    return Scenario("ordering", objects, tuple(seq))


def enumerate_ordering_scenarios(rules: OrderingRules = OrderingRules(), holdout_fraction: float = 6 / 26,
                                 seed: int = 0) -> Partition:
    seqs = enumerate_valid_orderings(rules)
    scenarios = [ordering_scenario(s, i) for i, s in enumerate(seqs)]
    n_test = int(round(holdout_fraction * len(scenarios)))
    rng = np.random.default_rng(seed)
    test_idx = set(rng.permutation(len(scenarios))[:n_test].tolist())
    train = [s for i, s in enumerate(scenarios) if i not in test_idx]
    test = [s for i, s in enumerate(scenarios) if i in test_idx]
    return Partition(train, test, {"total": len(scenarios), "reference_total": REFERENCE_ORDERING_COUNT,
                                   "rules": rules.flags()})


# -- concept schemas ------------------------------------------------------------

def sorting_schema(include_location: bool = False, include_target: bool = True) -> ConceptSchema:
    classes = [("shape", SHAPES), ("color", COLORS)]
    if include_location:
        classes.append(("location", tuple(str(l) for l in LOCATIONS)))
    if include_target:
        classes.append(("target", AREAS))
    return ConceptSchema.from_dict(classes)


def ordering_schema() -> ConceptSchema:
    classes = []
    for i in range(3):
        classes += [(f"obj{i}_shape", SHAPES), (f"obj{i}_color", COLORS)]
    classes.append(("ordering", ("slot0", "slot1", "slot2")))
    return ConceptSchema.from_dict(classes)


def schema_for(task: str, **kwargs) -> ConceptSchema:
    return sorting_schema(**kwargs) if task == "sorting" else ordering_schema()


def annotate(scenario: Scenario, schema: ConceptSchema) -> EpisodeAnnotation:
    """Fill the episode annotation from the scenario's ground truth."""
    chosen = {}
    if scenario.task == "sorting":
        spec, loc = scenario.objects[0]
        full = {"shape": spec.shape, "color": spec.color, "location": str(loc), "target": scenario.target}
    else:
        full = {}
        for i, (spec, _) in enumerate(scenario.objects):
            full[f"obj{i}_shape"] = spec.shape
            full[f"obj{i}_color"] = spec.color
        bottom = scenario.target[0]
        slot = next(i for i, (spec, _) in enumerate(scenario.objects) if spec == bottom)
        full["ordering"] = f"slot{slot}"
    for name in schema.names:
        chosen[name] = full[name]
    return encode_annotation(schema, chosen)


def export_scenarios(partition: Partition) -> str:
    return json.dumps({"train": [s.to_dict() for s in partition.train],
                       "heldout": [s.to_dict() for s in partition.heldout],
                       "notes": partition.notes}, indent=1)
