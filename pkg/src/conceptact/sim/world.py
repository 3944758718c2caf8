"""2-D top-down kinematic world with a height channel for stacking."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .objects import ObjectSpec
from .scenarios import Scenario

Rect = tuple[float, float, float, float]  # x0, y0, x1, y1

RGB = {
    "red": (220, 40, 40),
    "green": (40, 190, 60),
    "blue": (40, 80, 230),
    "yellow": (235, 215, 40),
}
BACKGROUND = (96, 96, 96)


@dataclass
class SimConfig:
    max_step: float = 0.06          # per-step gripper displacement limit
    grasp_radius: float = 0.08      # xy distance for a successful grasp
    grasp_z_tol: float = 0.06       # gripper must be this close to the object top
    travel_z: float = 0.7
    object_height: float = 0.15
    image_size: int = 32
    wrist_halfwidth: float = 0.5    # wrist camera sees gripper xy +- this
    cameras: tuple[str, ...] = ("scene", "wrist")
    episode_steps: dict = field(default_factory=lambda: {"sorting": 120, "ordering": 300})
    pickup_y: float = 0.55
    cell_half: float = 0.2
    areas: dict = field(default_factory=lambda: {
        "A": (-0.95, -0.95, -0.25, -0.35),
        "B": (0.25, -0.95, 0.95, -0.35),
        "collection": (-0.3, -0.95, 0.3, -0.35),
    })
    home: tuple[float, float] = (0.0, 0.0)

    def cell_center(self, location: int) -> tuple[float, float]:
        return (-0.8 + 0.4 * (location - 1), self.pickup_y)

    def cell_rect(self, location: int) -> Rect:
        cx, cy = self.cell_center(location)
        h = self.cell_half
        return (cx - h, cy - h, cx + h, cy + h)

    def steps_for(self, task: str) -> int:
        return int(self.episode_steps[task])


# the cylinder is drawn smaller than the cube so the two stay apart at 32 px
HALF_EXTENTS = {"cube": (0.15, 0.15), "rectangle": (0.2, 0.1), "cylinder": (0.11, 0.11)}


@dataclass
class SimObject:
    spec: ObjectSpec
    pos: np.ndarray                 # x, y, z (z = bottom)
    grasped_ever: bool = False


@dataclass
class WorldState:
    gripper: np.ndarray             # x, y, z, grip (1 closed, 0 open)
    objects: list[SimObject]
    held: int | None = None
    t: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    def proprio(self) -> np.ndarray:
        return self.gripper.astype(np.float32)

    def same_as(self, other: "WorldState") -> bool:
        return (np.array_equal(self.gripper, other.gripper) and self.held == other.held
                and len(self.objects) == len(other.objects)
                and all(a.spec == b.spec and np.array_equal(a.pos, b.pos) and a.grasped_ever == b.grasped_ever
                        for a, b in zip(self.objects, other.objects)))


class ActionError(ValueError):
    pass


def in_rect(x: float, y: float, rect: Rect) -> bool:
    x0, y0, x1, y1 = rect
    return x0 <= x <= x1 and y0 <= y <= y1


def reset(scenario: Scenario, cfg: SimConfig = SimConfig(), rng: np.random.Generator | None = None,
          jitter: float = 0.04) -> WorldState:
    """Initial world for ``scenario``; ``rng`` adds small offsets to object and gripper poses."""
    objects = []
    for spec, loc in scenario.objects:
        cx, cy = cfg.cell_center(loc)
        if rng is not None and jitter > 0:
            cx += rng.uniform(-jitter, jitter)
            cy += rng.uniform(-jitter, jitter)
        objects.append(SimObject(spec, np.array([cx, cy, 0.0])))
    hx, hy = cfg.home
    if rng is not None and jitter > 0:
        hx += rng.uniform(-jitter, jitter)
        hy += rng.uniform(-jitter, jitter)
    return WorldState(np.array([hx, hy, cfg.travel_z, 0.0]), objects)


def _support_height(world: WorldState, x: float, y: float, exclude: int, cfg: SimConfig) -> float:
    top = 0.0
    for i, o in enumerate(world.objects):
        if i == exclude:
            continue
        if np.hypot(o.pos[0] - x, o.pos[1] - y) < 0.1:
            top = max(top, o.pos[2] + cfg.object_height)
    return top


def step(world: WorldState, action, cfg: SimConfig = SimConfig()) -> WorldState:
    """Advance one tick.  ``action`` = (x, y, z, grip) target pose; grip > 0.5 closes."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (4,):
        raise ActionError(f"action must have 4 entries, got {a.shape}")
    if not np.isfinite(a).all():
        raise ActionError("non-finite action")
    w = world.copy()
    target = a[:3].copy()
    target[:2] = np.clip(target[:2], -1.0, 1.0)
    target[2] = np.clip(target[2], 0.0, 1.0)
    delta = target - w.gripper[:3]
    dist = float(np.linalg.norm(delta))
    if dist > cfg.max_step:
        delta *= cfg.max_step / dist
    w.gripper[:3] = w.gripper[:3] + delta
    closing = a[3] > 0.5
    gx, gy, gz = w.gripper[:3]
    if closing and w.gripper[3] < 0.5:
        best, best_d = None, cfg.grasp_radius
        for i, o in enumerate(w.objects):
            d = float(np.hypot(o.pos[0] - gx, o.pos[1] - gy))
            top = o.pos[2] + cfg.object_height
            if d <= best_d and abs(gz - top) <= cfg.grasp_z_tol:
                best, best_d = i, d
        if best is not None:
            w.held = best
            w.objects[best].grasped_ever = True
    elif not closing and w.gripper[3] > 0.5 and w.held is not None:
        o = w.objects[w.held]
        o.pos = np.array([gx, gy, _support_height(w, gx, gy, w.held, cfg)])
        w.held = None
    w.gripper[3] = 1.0 if closing else 0.0
    if w.held is not None:
        w.objects[w.held].pos = np.array([gx, gy, max(gz - cfg.object_height, 0.0)])
    w.t += 1
    return w


# -- rendering ------------------------------------------------------------------

def _mask(spec: ObjectSpec, px: np.ndarray, py: np.ndarray, cx: float, cy: float) -> np.ndarray:
    hx, hy = HALF_EXTENTS[spec.shape]
    if spec.shape == "cylinder":
        return (px - cx) ** 2 + (py - cy) ** 2 <= hx * hx
    return (np.abs(px - cx) <= hx) & (np.abs(py - cy) <= hy)


def _render_window(world: WorldState, x0: float, y0: float, x1: float, y1: float, size: int) -> np.ndarray:
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[...] = BACKGROUND
    cols = x0 + (np.arange(size) + 0.5) * (x1 - x0) / size
    rows = y1 - (np.arange(size) + 0.5) * (y1 - y0) / size
    px, py = np.meshgrid(cols, rows)
    order = sorted(range(len(world.objects)), key=lambda i: (world.objects[i].pos[2], i))
    for i in order:
        o = world.objects[i]
        img[_mask(o.spec, px, py, o.pos[0], o.pos[1])] = RGB[o.spec.color]
    return img


def render(world: WorldState, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """(cameras, H, W, 3) uint8.  Scene camera: whole workspace; wrist: window on the gripper."""
    frames = []
    for cam in cfg.cameras:
        if cam == "scene":
            frames.append(_render_window(world, -1.0, -1.0, 1.0, 1.0, cfg.image_size))
        elif cam == "wrist":
            gx, gy = world.gripper[:2]
            h = cfg.wrist_halfwidth
            frames.append(_render_window(world, gx - h, gy - h, gx + h, gy + h, cfg.image_size))
        else:
            raise ValueError(f"unknown camera {cam!r}")
    if not frames:
        return np.zeros((0, cfg.image_size, cfg.image_size, 3), dtype=np.uint8)
    return np.stack(frames)


def pixel_rect(rect: Rect, size: int) -> tuple[int, int, int, int]:
    """Scene-camera pixel bounds (row0, col0, row1, col1), inclusive-exclusive, covering ``rect``."""
    x0, y0, x1, y1 = rect
    to_col = lambda x: (x + 1.0) / 2.0 * size
    to_row = lambda y: (1.0 - y) / 2.0 * size
    return (int(np.floor(to_row(y1))), int(np.floor(to_col(x0))),
            int(np.ceil(to_row(y0))), int(np.ceil(to_col(x1))))
