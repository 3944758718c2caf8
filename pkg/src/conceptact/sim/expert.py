"""Scripted waypoint expert that stands in for human demonstrators."""
from __future__ import annotations

import math

import numpy as np

from ..concepts import ConceptSchema
from ..dataset import Dataset, Episode
from .scenarios import Scenario, annotate, schema_for
from .world import SimConfig, WorldState, render, reset, step


class GenerationError(RuntimeError):
    pass


def _segment(start: np.ndarray, end: np.ndarray, vmax: float) -> list[np.ndarray]:
    n = max(1, math.ceil(float(np.linalg.norm(end[:3] - start[:3])) / (vmax * 0.999)))
    return [start + (end - start) * (i / n) for i in range(1, n + 1)]


def plan(world: WorldState, scenario: Scenario, cfg: SimConfig, rng: np.random.Generator | None,
         jitter: float = 0.03, dwell: int = 3) -> list[np.ndarray]:
    """Pose commands for approach, descend, grasp, lift, transport, descend, release, lift."""
    j = (lambda s: rng.uniform(-s, s)) if rng is not None and jitter > 0 else (lambda s: 0.0)
    h = cfg.object_height
    pose = world.gripper.copy()
    cmds: list[np.ndarray] = []

    def go(x, y, z, grip):
        nonlocal pose
        target = np.array([x, y, z, grip])
        if grip != pose[3]:
            cmds.extend([target.copy() for _ in range(dwell)])
        else:
            cmds.extend(_segment(pose, target, cfg.max_step))
        pose = target

    if scenario.task == "sorting":
        area = cfg.areas[scenario.target]
        drops = [((area[0] + area[2]) / 2 + j(0.08), (area[1] + area[3]) / 2 + j(0.08))]
        order = [0]
    else:
        cx0, cy0, cx1, cy1 = cfg.areas["collection"]
        base = ((cx0 + cx1) / 2 + j(0.03), (cy0 + cy1) / 2 + j(0.03))
        order, used = [], set()
        for want in scenario.target:
            idx = next(i for i, o in enumerate(world.objects) if o.spec == want and i not in used)
            used.add(idx)
            order.append(idx)
        drops = [base] * 3
    support = 0.0
    for n, (idx, (px, py)) in enumerate(zip(order, drops)):
        ox, oy, oz = world.objects[idx].pos
        travel = cfg.travel_z + j(0.05)
        go(pose[0], pose[1], travel, 0.0)
        go(ox + j(0.02), oy + j(0.02), travel, 0.0)
        go(pose[0], pose[1], oz + h, 0.0)
        go(pose[0], pose[1], oz + h, 1.0)
        go(pose[0], pose[1], travel, 1.0)
        go(px, py, travel, 1.0)
        place_z = (support if scenario.task == "ordering" else 0.0) + h
        go(px, py, place_z, 1.0)
        go(px, py, place_z, 0.0)
        go(px, py, travel, 0.0)
        if scenario.task == "ordering":
            support += h
    return cmds


def scripted_expert(scenario: Scenario, noise_seed: int | None = 0, cfg: SimConfig = SimConfig(),
                    schema: ConceptSchema | None = None, steps: int | None = None) -> Episode:
    """Roll out the expert plan, recording observations before each action.

    Poses after the plan completes are held until the episode budget.
    """
    rng = np.random.default_rng(noise_seed) if noise_seed is not None else None
    world = reset(scenario, cfg, rng)
    cmds = plan(world, scenario, cfg, rng)
    T = steps or cfg.steps_for(scenario.task)
    if len(cmds) > T:
        raise GenerationError(f"expert plan needs {len(cmds)} steps, budget is {T}")
    cmds += [cmds[-1].copy() for _ in range(T - len(cmds))]
    proprio, actions, images = [], [], []
    for a in cmds:
        proprio.append(world.proprio())
        images.append(render(world, cfg))
        actions.append(np.asarray(a, dtype=np.float32))
        world = step(world, a, cfg)
    schema = schema or schema_for(scenario.task)
    ep = Episode(np.stack(proprio), np.stack(actions), np.stack(images), annotate(scenario, schema),
                 scenario.id, scenario.to_dict())
    return ep


def replay(episode: Episode, scenario: Scenario, cfg: SimConfig = SimConfig(),
           noise_seed: int | None = 0) -> WorldState:
    """Final world after executing an episode's recorded actions from the same reset."""
    rng = np.random.default_rng(noise_seed) if noise_seed is not None else None
    world = reset(scenario, cfg, rng)
    for a in episode.actions:
        world = step(world, a, cfg)
    return world


class ExpertPolicy:
    """Open-loop replay of the expert plan as a policy (for evaluation plumbing)."""

    def __init__(self, cfg: SimConfig = SimConfig()):
        self.cfg = cfg
        self._cmds: list | None = None

    def reset(self, world: WorldState, scenario: Scenario) -> None:
        self._cmds = plan(world, scenario, self.cfg, None)
        self._t = 0

    def act(self, proprio: np.ndarray, images: np.ndarray) -> np.ndarray:
        a = self._cmds[min(self._t, len(self._cmds) - 1)]
        self._t += 1
        return a


def generate_dataset(scenarios: list[Scenario], n_episodes: int, seed: int = 0, cfg: SimConfig = SimConfig(),
                     schema: ConceptSchema | None = None) -> Dataset:
    """``n_episodes`` demonstrations cycling through a seeded shuffle of ``scenarios``."""
    if not scenarios:
        raise GenerationError("no scenarios to demonstrate")
    rng = np.random.default_rng([seed, 5])
    order = []
    while len(order) < n_episodes:
        order.extend(rng.permutation(len(scenarios)).tolist())
    task = scenarios[0].task
    schema = schema or schema_for(task)
    eps = [scripted_expert(scenarios[i], noise_seed=seed * 100_003 + n, cfg=cfg, schema=schema)
           for n, i in enumerate(order[:n_episodes])]
    return Dataset(schema, eps, task)
