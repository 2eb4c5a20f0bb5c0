"""2D continuous world: unicycle agent, circular obstacles, ray-scan sensor.

The pose is evaluation-only state; the agent sees nothing but the normalized
ray scan returned by :func:`observe`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ContractError, WorldError

V_MAX = 1.0
W_MAX = 1.0
CONTACT_MARGIN = 1e-6


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = theta - 2.0 * math.pi * math.floor((theta + math.pi) / (2.0 * math.pi))
    return math.pi if t == -math.pi else t


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Action:
    v: float
    w: float

    def __post_init__(self):
        object.__setattr__(self, "v", float(min(max(self.v, 0.0), V_MAX)))
        object.__setattr__(self, "w", float(min(max(self.w, -W_MAX), W_MAX)))

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w])


@dataclass(frozen=True, eq=False)
class World:
    bounds: tuple[float, float, float, float]
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    agent_radius: float = 0.25
    n_rays: int = 32
    max_range: float = 10.0
    dt: float = 0.5
    start: Pose | None = None
    goal: Pose | None = None
    name: str = "world"

    def __post_init__(self):
        obs = np.ascontiguousarray(np.asarray(self.obstacles, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "obstacles", obs)
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise WorldError(f"degenerate bounds {self.bounds}")
        if self.agent_radius <= 0:
            raise WorldError("agent radius must be positive")
        if self.n_rays < 8:
            raise WorldError("need at least 8 rays")
        for cx, cy, r in obs:
            if r <= 0 or not (xmin <= cx <= xmax and ymin <= cy <= ymax):
                raise WorldError(f"obstacle ({cx}, {cy}, {r}) outside bounds or degenerate")

    @property
    def width(self) -> float:
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self) -> float:
        return self.bounds[3] - self.bounds[1]

    def is_free(self, x: float, y: float, clearance: float | None = None) -> bool:
        """True if a disc of the agent's radius (or ``clearance``) at (x, y) touches nothing."""
        r = self.agent_radius if clearance is None else clearance
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin + r <= x <= xmax - r and ymin + r <= y <= ymax - r):
            return False
        if len(self.obstacles) == 0:
            return True
        d2 = (self.obstacles[:, 0] - x) ** 2 + (self.obstacles[:, 1] - y) ** 2
        return bool(np.all(d2 >= (self.obstacles[:, 2] + r) ** 2))

    # -- occupancy grids (cached per world) --------------------------------

    @cached_property
    def nav_grid(self) -> "Grid":
        """Configuration-space grid for the geodesic oracle (cell = radius / 2)."""
        return Grid.build(self, cell=self.agent_radius / 2.0, inflate=self.agent_radius)

    @cached_property
    def eval_grid(self) -> "Grid":
        """Workspace free-area grid for coverage (no inflation)."""
        return Grid.build(self, cell=0.1, inflate=0.0)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "bounds": list(self.bounds),
            "obstacles": self.obstacles.tolist(),
            "agent_radius": self.agent_radius,
            "n_rays": self.n_rays,
            "max_range": self.max_range,
            "dt": self.dt,
        }
        if self.start is not None:
            d["start"] = [self.start.x, self.start.y, self.start.theta]
        if self.goal is not None:
            d["goal"] = [self.goal.x, self.goal.y, self.goal.theta]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        return cls(
            bounds=tuple(d["bounds"]),
            obstacles=np.array(d.get("obstacles", []), dtype=np.float64),
            agent_radius=float(d.get("agent_radius", 0.25)),
            n_rays=int(d.get("n_rays", 32)),
            max_range=float(d.get("max_range", 10.0)),
            dt=float(d.get("dt", 0.5)),
            start=Pose(*d["start"]) if d.get("start") is not None else None,
            goal=Pose(*d["goal"]) if d.get("goal") is not None else None,
            name=d.get("name", "world"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "World":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> "World":
        d = dict(bounds=self.bounds, obstacles=self.obstacles, agent_radius=self.agent_radius,
                 n_rays=self.n_rays, max_range=self.max_range, dt=self.dt,
                 start=self.start, goal=self.goal, name=self.name)
        d.update(changes)
        return World(**d)


@dataclass(frozen=True, eq=False)
class Grid:
    x0: float
    y0: float
    cell: float
    free: np.ndarray  # uint8 (ny, nx)

    @classmethod
    def build(cls, world: World, cell: float, inflate: float) -> "Grid":
        xmin, ymin, xmax, ymax = world.bounds
        nx = max(int(math.ceil(world.width / cell)), 1)
        ny = max(int(math.ceil(world.height / cell)), 1)
        xs = xmin + (np.arange(nx) + 0.5) * cell
        ys = ymin + (np.arange(ny) + 0.5) * cell
        X, Y = np.meshgrid(xs, ys)
        free = (X >= xmin + inflate) & (X <= xmax - inflate) & (Y >= ymin + inflate) & (Y <= ymax - inflate)
        for cx, cy, r in world.obstacles:
            free &= (X - cx) ** 2 + (Y - cy) ** 2 >= (r + inflate) ** 2
        return cls(xmin, ymin, cell, np.ascontiguousarray(free.astype(np.uint8)))

    def index(self, x: float, y: float) -> tuple[int, int]:
        ny, nx = self.free.shape
        ix = min(max(int((x - self.x0) / self.cell), 0), nx - 1)
        iy = min(max(int((y - self.y0) / self.cell), 0), ny - 1)
        return iy, ix

    def center(self, iy: int, ix: int) -> tuple[float, float]:
        return self.x0 + (ix + 0.5) * self.cell, self.y0 + (iy + 0.5) * self.cell

    def nearest_free(self, x: float, y: float, max_cells: int = 8) -> tuple[int, int] | None:
        iy, ix = self.index(x, y)
        if self.free[iy, ix]:
            return iy, ix
        ny, nx = self.free.shape
        best, best_d = None, math.inf
        for r in range(1, max_cells + 1):
            for jy in range(max(iy - r, 0), min(iy + r, ny - 1) + 1):
                for jx in range(max(ix - r, 0), min(ix + r, nx - 1) + 1):
                    if self.free[jy, jx]:
                        cx, cy = self.center(jy, jx)
                        d = (cx - x) ** 2 + (cy - y) ** 2
                        if d < best_d:
                            best, best_d = (jy, jx), d
            if best is not None:
                return best
        return None


# -- dynamics and sensing -------------------------------------------------------


def step(world: World, pose: Pose, action: Action) -> tuple[Pose, bool]:
    """Integrate one unicycle step; on contact the agent stops at the contact point."""
    v, w = action.v, action.w
    x1 = pose.x + v * math.cos(pose.theta) * world.dt
    y1 = pose.y + v * math.sin(pose.theta) * world.dt
    theta1 = pose.theta + w * world.dt
    if v == 0.0:
        return Pose(pose.x, pose.y, theta1), False
    s = kernels.sweep(pose.x, pose.y, x1, y1, world.agent_radius, world.obstacles, world.bounds)
    if s >= 1.0:
        return Pose(x1, y1, theta1), False
    length = v * world.dt
    s = max(s - CONTACT_MARGIN / length, 0.0)
    return Pose(pose.x + s * (x1 - pose.x), pose.y + s * (y1 - pose.y), theta1), True


def observe(world: World, pose: Pose) -> np.ndarray:
    """Normalized ray scan in [0, 1], ray 0 along the heading, counter-clockwise."""
    d = kernels.raycast(pose.x, pose.y, pose.theta, world.n_rays, world.max_range,
                        world.obstacles, world.bounds)
    return np.clip(d / world.max_range, 0.0, 1.0)


def line_of_sight(world: World, p: tuple[float, float], q: tuple[float, float]) -> bool:
    """True if the agent disc can slide from p to q without contact."""
    return kernels.sweep(p[0], p[1], q[0], q[1], world.agent_radius,
                         world.obstacles, world.bounds) >= 1.0


def geodesic_path(world: World, p1, p2) -> list[tuple[float, float]] | None:
    """Shortest collision-free polyline p1 -> p2 (grid A* then string pulling), or None."""
    p1 = (float(p1[0]), float(p1[1]))
    p2 = (float(p2[0]), float(p2[1]))
    for p in (p1, p2):
        if not world.is_free(*p):
            raise ContractError(f"point {p} is not in free space")
    if p1 == p2:
        return [p1, p2]
    if line_of_sight(world, p1, p2):
        return [p1, p2]
    grid = world.nav_grid
    a = grid.nearest_free(*p1)
    b = grid.nearest_free(*p2)
    if a is None or b is None:
        return None
    cost, cells = kernels.grid_astar(grid.free, a[0], a[1], b[0], b[1])
    if not math.isfinite(cost):
        return None
    pts = [p1] + [grid.center(int(iy), int(ix)) for iy, ix in cells] + [p2]
    # string pulling: keep a point only when the previous anchor loses sight of the next one
    out = [pts[0]]
    anchor = pts[0]
    for i in range(1, len(pts) - 1):
        if not line_of_sight(world, anchor, pts[i + 1]):
            anchor = pts[i]
            out.append(anchor)
    out.append(pts[-1])
    return out


def path_length(path) -> float:
    return float(sum(math.dist(a, b) for a, b in zip(path[:-1], path[1:])))


def geodesic(world: World, p1, p2) -> float:
    """Shortest collision-free path length in meters; ``inf`` when disconnected."""
    path = geodesic_path(world, p1, p2)
    return math.inf if path is None else path_length(path)


# -- world construction -----------------------------------------------------------


def sample_free_pose(world: World, rng: np.random.Generator, clearance: float | None = None,
                     tries: int = 1000) -> Pose:
    xmin, ymin, xmax, ymax = world.bounds
    for _ in range(tries):
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        if world.is_free(x, y, clearance):
            return Pose(x, y, rng.uniform(-math.pi, math.pi))
    raise WorldError("could not sample a free pose")


def make_world(spec=None, seed: int | None = None, *, size=(20.0, 20.0), n_obstacles: int = 12,
               radius_range=(0.5, 1.5), start=None, goal=None, min_geodesic: float = 0.0,
               clearance: float = 1.0, retries: int = 200, **kwargs) -> World:
    """Build a validated world from a spec dict / JSON path, or from a seed.

    Seeded worlds place ``n_obstacles`` circles by rejection sampling; each
    candidate that disconnects start and goal (or violates ``min_geodesic``)
    is redrawn.
    """
    if spec is not None:
        if isinstance(spec, (str, Path)):
            spec = json.loads(Path(spec).read_text())
        world = World.from_dict(spec)
        if world.start is not None and world.goal is not None:
            if not math.isfinite(geodesic(world, world.start.xy(), world.goal.xy())):
                raise WorldError("start and goal are not connected")
        return world
    if seed is None:
        raise ValueError("need a spec or a seed")
    rng = np.random.default_rng(seed)
    w, h = size
    start = Pose(*start) if start is not None else None
    goal = Pose(*goal) if goal is not None else None
    base = World(bounds=(0.0, 0.0, w, h), start=start, goal=goal, name=f"seed{seed}", **kwargs)
    keep_clear = [p for p in (start, goal) if p is not None]
    for _ in range(retries):
        obstacles: list[tuple[float, float, float]] = []
        attempts = 0
        while len(obstacles) < n_obstacles and attempts < 50 * max(n_obstacles, 1):
            attempts += 1
            r = rng.uniform(*radius_range)
            cx = rng.uniform(r, w - r)
            cy = rng.uniform(r, h - r)
            if any(math.hypot(cx - p.x, cy - p.y) < r + base.agent_radius + clearance for p in keep_clear):
                continue
            obstacles.append((cx, cy, r))
        if len(obstacles) < n_obstacles:
            continue
        world = base.replace(obstacles=np.array(obstacles))
        if start is not None and goal is not None:
            g = geodesic(world, start.xy(), goal.xy())
            if not math.isfinite(g) or g < min_geodesic:
                continue
        return world
    raise WorldError(f"could not satisfy world spec after {retries} retries")
