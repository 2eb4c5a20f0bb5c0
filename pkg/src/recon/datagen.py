"""Self-supervised data: correlated random-walk collection, collision segmentation, relabeling."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CollectionError, ContractError
from .simworld import V_MAX, W_MAX, Action, Pose, World, observe, sample_free_pose, step, wrap_angle

RHO = 0.9
L_MAX = 100
T_MAX = 30
BACKUP_STEPS = 4
BACKUP_JITTER = 0.3
MAX_WEDGED = 20

_BOX_LO = np.array([0.0, -W_MAX])
_BOX_HI = np.array([V_MAX, W_MAX])


def random_walk_action(prev: Action, rng: np.random.Generator, rho: float = RHO) -> Action:
    """AR(1) blend of the previous action with a fresh uniform draw over the action box."""
    u = rng.uniform(_BOX_LO, _BOX_HI)
    a = rho * prev.as_array() + (1.0 - rho) * u
    return Action(a[0], a[1])


def uniform_action(rng: np.random.Generator) -> Action:
    u = rng.uniform(_BOX_LO, _BOX_HI)
    return Action(u[0], u[1])


def backup_maneuver(world: World, pose: Pose, rng: np.random.Generator, retry: int = 0) -> tuple[Pose, list[Pose]]:
    """Turn in place by pi +/- jitter over a fixed number of control steps.

    The platform has no reverse gear (v >= 0), so the escape is a pure rotation
    executed by the low-level controller rather than through the policy's
    clamped action box. On a retry (the previous escape collided at once) the
    controller instead faces the ``retry``-th most open bearing of the scan,
    which gets it out of cusps between touching obstacles.
    """
    if retry:
        rays = observe(world, pose)
        k = len(rays)
        window = np.min([np.roll(rays, s) for s in range(-2, 3)], axis=0)
        order = np.argsort(-window, kind="stable")
        turn = wrap_angle(2.0 * math.pi * order[(retry - 1) % k] / k)
    else:
        turn = math.pi + rng.uniform(-BACKUP_JITTER, BACKUP_JITTER)
    poses = []
    for _ in range(BACKUP_STEPS):
        pose = Pose(pose.x, pose.y, wrap_angle(pose.theta + turn / BACKUP_STEPS))
        poses.append(pose)
    return pose, poses


@dataclass
class Trajectory:
    observations: np.ndarray  # (L, K), last row is the terminal observation
    actions: np.ndarray  # (L - 1, 2)
    collided: bool = False
    poses: np.ndarray | None = None  # (L, 3), evaluation only

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(-1, 2)
        if len(self.observations) < 2:
            raise ContractError("a trajectory needs at least two observations")
        if len(self.actions) != len(self.observations) - 1:
            raise ContractError("need exactly one action between consecutive observations")

    def __len__(self) -> int:
        return len(self.observations)

    def to_dict(self) -> dict:
        d = {"obs": self.observations.tolist(), "act": self.actions.tolist(), "collided": self.collided}
        if self.poses is not None:
            d["poses"] = self.poses.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        poses = np.array(d["poses"]) if "poses" in d else None
        return cls(np.array(d["obs"]), np.array(d["act"]), bool(d["collided"]), poses)


@dataclass
class Quadruple:
    o: np.ndarray
    g: np.ndarray
    a: np.ndarray
    d: int


class Dataset:
    """Quadruples stored as indices into a shared observation bank."""

    def __init__(self, bank, i_t, i_g, actions, dists, meta: dict | None = None):
        self.bank = np.ascontiguousarray(np.asarray(bank, dtype=np.float64))
        self.i_t = np.asarray(i_t, dtype=np.int64)
        self.i_g = np.asarray(i_g, dtype=np.int64)
        self.actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2)
        self.dists = np.asarray(dists, dtype=np.float64)
        self.meta = dict(meta or {})
        n = len(self.i_t)
        if not (len(self.i_g) == len(self.actions) == len(self.dists) == n):
            raise ContractError("quadruple columns differ in length")
        if n and np.any(self.dists < 0):
            raise ContractError("negative timestep distance")

    @classmethod
    def from_arrays(cls, obs, goals, actions, dists, meta=None) -> "Dataset":
        obs = np.asarray(obs, dtype=np.float64)
        n = len(obs)
        return cls(np.concatenate([obs, np.asarray(goals, dtype=np.float64)]), np.arange(n),
                   np.arange(n, 2 * n), actions, dists, meta)

    @classmethod
    def empty(cls, n_rays: int) -> "Dataset":
        return cls(np.zeros((0, n_rays)), [], [], np.zeros((0, 2)), [])

    def __len__(self) -> int:
        return len(self.i_t)

    @property
    def n_rays(self) -> int:
        return self.bank.shape[1]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.bank[self.i_t[idx]], self.bank[self.i_g[idx]], self.actions[idx], self.dists[idx]

    def arrays(self):
        return self.batch(slice(None))

    def __iter__(self):
        for k in range(len(self)):
            yield Quadruple(self.bank[self.i_t[k]], self.bank[self.i_g[k]], self.actions[k], int(self.dists[k]))

    def extend(self, other: "Dataset") -> "Dataset":
        off = len(self.bank)
        return Dataset(np.concatenate([self.bank, other.bank]),
                       np.concatenate([self.i_t, other.i_t + off]),
                       np.concatenate([self.i_g, other.i_g + off]),
                       np.concatenate([self.actions, other.actions]),
                       np.concatenate([self.dists, other.dists]), self.meta)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.bank, self.i_t[idx], self.i_g[idx], self.actions[idx], self.dists[idx], self.meta)

    def digest(self) -> str:
        h = hashlib.sha256()
        o, g, a, d = self.arrays()
        for arr in (o, g, a, d):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # one quadruple per line: {"o": [...], "g": [...], "a": [v, w], "d": int}
    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for q in self:
                f.write(json.dumps({"o": q.o.tolist(), "g": q.g.tolist(), "a": q.a.tolist(), "d": q.d}))
                f.write("\n")

    @classmethod
    def from_jsonl(cls, path, meta=None) -> "Dataset":
        o, g, a, d = [], [], [], []
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                rec = json.loads(line)
                o.append(rec["o"])
                g.append(rec["g"])
                a.append(rec["a"])
                d.append(rec["d"])
        if not o:
            raise ContractError(f"{path}: no quadruples")
        return cls.from_arrays(o, g, a, d, meta)


def relabel(traj: Trajectory, t_max: int = T_MAX) -> Dataset:
    """Every pair (t, g) with t < g <= t + t_max becomes (o_t, o_g, a_t, g - t)."""
    if t_max < 1:
        raise ContractError("t_max must be >= 1")
    n = len(traj)
    i_t, i_g = [], []
    for t in range(n - 1):
        for g in range(t + 1, min(t + t_max, n - 1) + 1):
            i_t.append(t)
            i_g.append(g)
    i_t = np.array(i_t, dtype=np.int64)
    i_g = np.array(i_g, dtype=np.int64)
    return Dataset(traj.observations, i_t, i_g, traj.actions[i_t], (i_g - i_t).astype(np.float64))


def self_goals(traj: Trajectory) -> Dataset:
    """One (o_t, o_t, stop, 0) pair per observation.

    Relabeling never pairs an observation with itself, so without these the
    model has to extrapolate both the zero distance and the stop action at
    the goal.
    """
    n = len(traj)
    idx = np.arange(n)
    return Dataset(traj.observations, idx, idx, np.zeros((n, 2)), np.zeros(n))


def relabel_all(trajs, t_max: int = T_MAX, meta: dict | None = None) -> Dataset:
    parts = [relabel(tr, t_max) for tr in trajs]
    if not parts:
        raise ContractError("no trajectories to relabel")
    return concat(parts, meta)


def concat(parts, meta: dict | None = None) -> Dataset:
    offsets = np.cumsum([0] + [len(p.bank) for p in parts[:-1]])
    return Dataset(np.concatenate([p.bank for p in parts]),
                   np.concatenate([p.i_t + off for p, off in zip(parts, offsets)]),
                   np.concatenate([p.i_g + off for p, off in zip(parts, offsets)]),
                   np.concatenate([p.actions for p in parts]),
                   np.concatenate([p.dists for p in parts]), meta)


def collect(world: World, n_steps: int, seed: int, start: Pose | None = None,
            rho: float = RHO, l_max: int = L_MAX) -> list[Trajectory]:
    """Run the correlated random walk for ``n_steps`` control steps.

    A collision closes the current trajectory (collision-terminated), triggers
    the backup maneuver, and opens a new one; trajectories are also cut at
    ``l_max`` actions. Backup steps count against ``n_steps`` but are not
    recorded.
    """
    rng = np.random.default_rng(seed)
    pose = start if start is not None else sample_free_pose(world, rng, clearance=world.agent_radius + 0.3)
    if not world.is_free(pose.x, pose.y):
        raise ContractError("start pose is not in free space")
    trajs: list[Trajectory] = []
    obs = [observe(world, pose)]
    poses = [pose]
    acts: list[np.ndarray] = []
    prev = uniform_action(rng)
    wedged = 0
    steps = 0

    def close(collided: bool):
        trajs.append(Trajectory(np.array(obs), np.array(acts), collided,
                                np.array([[p.x, p.y, p.theta] for p in poses])))

    while steps < n_steps:
        a = random_walk_action(prev, rng, rho)
        new_pose, collided = step(world, pose, a)
        steps += 1
        acts.append(a.as_array())
        obs.append(observe(world, new_pose))
        poses.append(new_pose)
        pose = new_pose
        prev = a
        if collided:
            close(True)
            wedged = wedged + 1 if len(acts) <= 1 else 0
            if wedged >= MAX_WEDGED:
                raise CollectionError(f"agent wedged at ({pose.x:.2f}, {pose.y:.2f}) after "
                                      f"{wedged} consecutive immediate collisions")
            pose, _ = backup_maneuver(world, pose, rng, retry=wedged)
            steps += BACKUP_STEPS
            prev = uniform_action(rng)
            obs, poses, acts = [observe(world, pose)], [pose], []
        elif len(acts) >= l_max:
            close(False)
            obs, poses, acts = [obs[-1]], [poses[-1]], []
    if acts:
        close(False)
    return trajs


def cross_world_negatives(parts: list[Dataset], frac: float, d_far: float, seed: int) -> Dataset:
    """Pair observations with goals drawn from other worlds, labeled ``d_far``.

    Different worlds are mutually unreachable, so these are the only pairs
    whose large distance is known without poses. The action label is the one
    actually taken at o_t, as for ordinary relabeled pairs.
    """
    if len(parts) < 2:
        raise ContractError("negatives need at least two worlds")
    if not 0 < frac:
        raise ContractError("frac must be positive")
    rng = np.random.default_rng([seed, 5])
    offsets = np.cumsum([0] + [len(p.bank) for p in parts[:-1]])
    i_t, i_g, acts = [], [], []
    for k, part in enumerate(parts):
        n = int(round(frac * len(part)))
        rows = rng.integers(0, len(part), n)
        other = rng.integers(0, len(parts) - 1, n)
        other += other >= k
        for j in np.unique(other):
            sel = other == j
            i_t.append(part.i_t[rows[sel]] + offsets[k])
            i_g.append(rng.integers(0, len(parts[j].bank), int(sel.sum())) + offsets[j])
            acts.append(part.actions[rows[sel]])
    i_t = np.concatenate(i_t)
    return Dataset(np.concatenate([p.bank for p in parts]), i_t, np.concatenate(i_g), np.concatenate(acts),
                   np.full(len(i_t), float(d_far)))


def collect_dataset(worlds, n_steps: int, seed: int, t_max: int = T_MAX,
                    negatives: float = 0.0, with_self_goals: bool = True) -> tuple[Dataset, list[Trajectory]]:
    """Collect in each world (one RNG stream per world) and relabel everything.

    ``with_self_goals`` adds the pairs from :func:`self_goals`; ``negatives > 0`` appends that fraction of cross-world pairs labeled
    ``2 * t_max`` (see :func:`cross_world_negatives`).
    """
    trajs: list[Trajectory] = []
    parts = []
    for k, world in enumerate(worlds):
        tr = collect(world, n_steps, seed=seed * 1000 + k)
        trajs += tr
        part = relabel_all(tr, t_max)
        if with_self_goals:
            part = concat([part] + [self_goals(t) for t in tr])
        parts.append(part)
    meta = {"worlds": [w.name for w in worlds], "seed": seed, "n_steps": n_steps, "t_max": t_max,
            "n_trajectories": len(trajs), "negatives": negatives,
            "self_goals": with_self_goals}
    if negatives > 0:
        ds = concat([concat(parts), cross_world_negatives(parts, negatives, 2 * t_max, seed)], meta)
    else:
        ds = concat(parts, meta)
    ds.meta["n_quadruples"] = len(ds)
    return ds, trajs


def save_trajectories(path, trajs) -> None:
    with open(path, "w") as f:
        for tr in trajs:
            f.write(json.dumps(tr.to_dict()))
            f.write("\n")


def load_trajectories(path) -> list[Trajectory]:
    with open(path) as f:
        return [Trajectory.from_dict(json.loads(line)) for line in f if line.strip()]
