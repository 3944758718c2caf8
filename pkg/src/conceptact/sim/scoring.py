"""Hierarchical task scores."""
from __future__ import annotations

from .scenarios import Scenario
from .world import SimConfig, WorldState, in_rect

MAX_SCORE = {"sorting": 3, "ordering": 6}


def score_sorting(world: WorldState, scenario: Scenario, cfg: SimConfig = SimConfig()) -> int:
    """0 never grasped, 1 grasped but not resting in an area, 2 wrong area, 3 correct area."""
    obj = world.objects[0]
    if not obj.grasped_ever:
        return 0
    if world.held == 0:
        return 1
    x, y = obj.pos[:2]
    for area in ("A", "B"):
        if in_rect(x, y, cfg.areas[area]):
            return 3 if area == scenario.target else 2
    return 1


def stack_levels(world: WorldState, cfg: SimConfig = SimConfig()) -> dict[int, list[int]]:
    """Object indices resting in the collection area, keyed by 1-based stack level."""
    levels: dict[int, list[int]] = {}
    for i, o in enumerate(world.objects):
        if i == world.held or not in_rect(o.pos[0], o.pos[1], cfg.areas["collection"]):
            continue
        level = int(round(o.pos[2] / cfg.object_height)) + 1
        levels.setdefault(level, []).append(i)
    return levels


def score_ordering(world: WorldState, scenario: Scenario, cfg: SimConfig = SimConfig()) -> int:
    """+2 per stack position holding the target object; -1 per grasped object
    left outside the collection area; floored at 0."""
    levels = stack_levels(world, cfg)
    score = 0
    for pos, want in enumerate(scenario.target, start=1):
        here = levels.get(pos, [])
        if len(here) == 1 and world.objects[here[0]].spec == want:
            score += 2
    placed = {i for ids in levels.values() for i in ids}
    for i, o in enumerate(world.objects):
        if o.grasped_ever and i not in placed:
            score -= 1
    return max(score, 0)


def score(world: WorldState, scenario: Scenario, cfg: SimConfig = SimConfig()) -> int:
    if scenario.task == "sorting":
        return score_sorting(world, scenario, cfg)
    return score_ordering(world, scenario, cfg)
