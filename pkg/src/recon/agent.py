"""Control loops: latent-goal rollouts, graph-guided exploration, and goal navigation."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datagen import BACKUP_STEPS, MAX_WEDGED, Dataset, backup_maneuver, concat, random_walk_action, uniform_action
from .errors import CollectionError, ContractError, NoPath
from .latentmodel import (LatentGoal, ModelParams, decode, encode_mean, feasibility_score, predicted_distance,
                          sample_prior, train)
from .nncore import AdamState
from .simworld import Action, Pose, World, observe, step
from .topomap import (DELTA_1, DELTA_2, W_MAX_EDGE, TopoGraph, associate_to_vertex, expand_graph,
                      increment_count, least_explored_neighbor, shortest_path)

METHODS = ("recon", "reactive", "random-actions", "vanilla")
GOAL_RADIUS = 2.0


@dataclass
class ExploreConfig:
    delta_1: float = DELTA_1
    delta_2: float = DELTA_2
    eps: float = 1e-2
    beta: float | None = None  # None: keep the checkpoint's own beta when fine-tuning
    gamma: int = 10
    horizon: int = 10
    budget: int = 2000
    seed: int = 0
    lr: float = 1e-4
    w_max: float = W_MAX_EDGE
    # goals predicted further than this are treated as infeasible; None disables the guard
    reach: float | None = DELTA_2
    # per-leg cap on fine-tuning samples (gamma * |D| otherwise); None = full passes
    finetune_cap: int | None = 4096
    # navigate-mode legs toward the goal that must each end with the goal still predicted < delta_1
    verify_legs: int = 1
    # goal-branch legs last ceil(predicted distance) steps (capped at the horizon)
    short_goal_legs: bool = True
    nav_budget: int = 1000
    approach_legs: int = 3
    max_replans: int = 20
    goal_radius: float = GOAL_RADIUS

    def __post_init__(self):
        for name in ("delta_1", "delta_2", "eps", "lr", "w_max", "goal_radius"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.verify_legs < 1:
            raise ContractError("verify_legs must be >= 1")
        if self.budget < 0 or self.nav_budget < 0 or self.gamma < 0:
            raise ContractError("budgets and epochs must be non-negative")
        if not self.eps < 1:
            raise ContractError("eps must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExploreConfig":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


class Session:
    """The agent's body in a world: steps the simulator and logs poses.

    Poses are recorded for evaluation only; the control code sees
    observations. A collision is followed by :meth:`recover`, the platform's
    backup reflex, whose steps count against the budget.
    """

    def __init__(self, world: World, pose: Pose | None = None, seed: int = 0):
        pose = pose if pose is not None else world.start
        if pose is None:
            raise ContractError("no start pose given and the world has none")
        if not world.is_free(pose.x, pose.y):
            raise ContractError("start pose is not in free space")
        self.world = world
        self.pose = pose
        self.rng = np.random.default_rng([seed, 7])
        self.steps = 0
        self.collisions = 0
        self.poses: list[Pose] = [pose]
        self._fresh = False  # no action since the last recovery
        self._wedged = 0

    def observe(self) -> np.ndarray:
        return observe(self.world, self.pose)

    def act(self, a: Action) -> bool:
        self.pose, collided = step(self.world, self.pose, a)
        self.steps += 1
        self.poses.append(self.pose)
        if collided:
            self.collisions += 1
            self._wedged = self._wedged + 1 if self._fresh else 0
        self._fresh = False
        return collided

    def recover(self) -> None:
        if self._wedged >= MAX_WEDGED:
            raise CollectionError(f"agent wedged at ({self.pose.x:.2f}, {self.pose.y:.2f})")
        self.pose, poses = backup_maneuver(self.world, self.pose, self.rng, retry=self._wedged)
        self.poses += poses
        self.steps += BACKUP_STEPS
        self._fresh = True

    def trace_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.theta] for p in self.poses])


@dataclass
class Leg:
    data: Dataset
    o_end: np.ndarray
    collided: bool
    n_actions: int


def _leg_data(obs: list, acts: list) -> Dataset:
    # endpoint relabeling: (o_t, o_H, a_t, H - t)
    n = len(acts)
    bank = np.array(obs)
    if n == 0:
        return Dataset.empty(bank.shape[1])
    t = np.arange(n)
    return Dataset(bank, t, np.full(n, n), np.array(acts), (n - t).astype(np.float64))


def _run_leg(session: Session, policy, H: int, max_steps: int | None) -> Leg:
    obs = [session.observe()]
    acts: list[np.ndarray] = []
    collided = False
    for _ in range(H):
        if max_steps is not None and session.steps >= max_steps:
            break
        a = policy(obs[-1])
        collided = session.act(a)
        acts.append(a.as_array())
        obs.append(session.observe())
        if collided:
            break
    data = _leg_data(obs, acts)
    if collided:
        session.recover()
    return Leg(data, session.observe(), collided, len(acts))


def subgoal_navigate(session: Session, params: ModelParams, z_w, H: int, mode: str = "explore",
                     rng: np.random.Generator | None = None, max_steps: int | None = None) -> Leg:
    """Roll the decoder policy toward a fixed latent goal for up to ``H`` steps.

    In ``explore`` mode actions are drawn from the decoded Gaussian, in
    ``navigate`` mode the mean is used. The leg stops early on collision (then
    the backup reflex runs) or when the session reaches ``max_steps``.
    """
    z = np.asarray(z_w.z if isinstance(z_w, LatentGoal) else z_w, dtype=np.float64)
    if z.shape != (params.latent_dim,):
        raise ContractError(f"latent goal must have {params.latent_dim} dims")
    if H < 1:
        raise ContractError("H must be >= 1")
    if mode not in ("explore", "navigate"):
        raise ContractError(f"unknown mode {mode!r}")
    if mode == "explore" and rng is None:
        raise ContractError("explore mode needs an rng")

    def policy(o):
        pred = decode(params, o, z)
        if mode == "navigate":
            return pred.mean_action()
        d = pred.dist
        a = d.mu[:2] + d.sigma[:2] * rng.standard_normal(2)
        return Action(a[0], a[1])

    return _run_leg(session, policy, H, max_steps)


def random_burst(session: Session, H: int, rng: np.random.Generator, max_steps: int | None = None) -> Leg:
    """Time-correlated random actions, the same AR(1) process used for collection."""
    state = {"prev": uniform_action(rng)}

    def policy(_o):
        a = random_walk_action(state["prev"], rng)
        state["prev"] = a
        return a

    return _run_leg(session, policy, H, max_steps)


@dataclass
class ExploreResult:
    graph: TopoGraph | None
    dataset: Dataset
    params: ModelParams
    discovered: bool
    stopped: bool
    steps: int
    poses: np.ndarray
    decisions: list = field(default_factory=list)
    loss_trace: list = field(default_factory=list)

    def branch_histogram(self) -> dict:
        hist: dict[str, int] = {}
        for d in self.decisions:
            key = d["branch"] if d["branch"] != "explore-frontier" else f"explore-frontier/{d['z_origin']}"
            hist[key] = hist.get(key, 0) + 1
        return hist

    def summary(self) -> dict:
        return {
            "discovered": self.discovered,
            "stopped": self.stopped,
            "steps": self.steps,
            "legs": len(self.decisions),
            "graph_vertices": len(self.graph) if self.graph is not None else 0,
            "dataset_size": len(self.dataset),
            "branches": self.branch_histogram(),
        }


def is_feasible(params: ModelParams, o, o_goal, cfg: ExploreConfig, d_goal: float | None = None) -> bool:
    """Prior-density test on the encoder mean, optionally guarded by predicted reach."""
    if not feasibility_score(params, o, o_goal) > cfg.eps:
        return False
    if cfg.reach is None:
        return True
    if d_goal is None:
        d_goal = predicted_distance(params, o, o_goal)
    return d_goal < cfg.reach


def _goal_reached(world: World, pose: Pose, goal_xy, radius: float) -> bool:
    return math.hypot(pose.x - goal_xy[0], pose.y - goal_xy[1]) <= radius


def explore(session: Session, params: ModelParams, o_goal, cfg: ExploreConfig, method: str = "recon",
            goal_xy=None, force_infeasible: bool = False, allow_prior: bool = True) -> ExploreResult:
    """Search for the goal observation, building the topological graph on the way.

    Each iteration picks exactly one branch: go to the goal when it looks
    feasible, sample a prior goal when already at the frontier, otherwise head
    to the least-visited nearby vertex. The agent stops when the goal is
    predicted within ``delta_1`` twice around a navigate-mode leg toward it.
    ``goal_xy`` is only used to score discovery.

    ``force_infeasible`` (never go for the goal, never stop) and
    ``allow_prior=False`` reduce the loop to pure frontier-following (test
    harness).
    """
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}")
    o_goal = np.asarray(o_goal, dtype=np.float64)
    if o_goal.shape != (params.n_rays,):
        raise ContractError(f"goal observation must have {params.n_rays} rays")
    use_graph = method != "reactive"
    p = params.copy()
    rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamState(lr=cfg.lr)
    G = TopoGraph(p.n_rays) if use_graph else None
    parts: list[Dataset] = []
    data = Dataset.empty(p.n_rays)
    decisions: list[dict] = []
    losses: list[float] = []
    budget = session.steps + cfg.budget
    stopped = False
    verified = 0

    o = session.observe()
    if use_graph and cfg.budget > 0:
        expand_graph(G, p, o, cfg.delta_1)

    while session.steps < budget:
        d_goal = predicted_distance(p, o, o_goal)
        if d_goal < cfg.delta_1 and not force_infeasible:
            if verified >= cfg.verify_legs:
                stopped = True
                break
            verified += 1
        else:
            verified = 0
        verifying = verified > 0
        rec = {"leg": len(decisions), "step": session.steps, "d_goal": round(d_goal, 4)}
        if verifying:
            branch, z, mode = "goal", encode_mean(p, o, o_goal), "navigate"
        else:
            feasible = not force_infeasible and is_feasible(p, o, o_goal, cfg, d_goal)
            mode = "explore"
            if feasible:
                branch, z = "goal", encode_mean(p, o, o_goal)
            elif not use_graph:
                branch, z = "explore-frontier", sample_prior(p.latent_dim, rng)
            else:
                o_n, d_n, node = least_explored_neighbor(G, p, o, cfg.delta_2)
                rec["frontier"] = node.id
                if d_n < cfg.delta_1:
                    branch = "explore-frontier"
                    z = sample_prior(p.latent_dim, rng) if allow_prior and method != "random-actions" else None
                else:
                    branch, z = "to-frontier", encode_mean(p, o, o_n)
        rec["branch"] = branch
        rec["verify"] = verifying
        rec["z_origin"] = z.origin if z is not None else "random-burst"
        if z is None:
            leg = random_burst(session, cfg.horizon, rng, budget)
        else:
            # a goal leg lasts as long as the goal is predicted to be away, so it can end on it
            h = min(cfg.horizon, max(1, math.ceil(d_goal))) if branch == "goal" and cfg.short_goal_legs else cfg.horizon
            rec["horizon"] = h
            leg = subgoal_navigate(session, p, z, h, mode, rng, budget)
        o = leg.o_end
        rec["collided"] = leg.collided
        if len(leg.data):
            parts.append(leg.data)
        if use_graph:
            v = associate_to_vertex(G, p, o)
            increment_count(G, v.id)
            node, is_new = expand_graph(G, p, o, cfg.delta_1)
            rec["new_vertex"] = is_new
            rec["graph_size"] = len(G)
        decisions.append(rec)
        if parts and cfg.gamma > 0:
            data = concat([data] + parts) if len(data) else concat(parts)
            parts = []
            losses.append(_finetune(p, data, cfg, opt, rng))

    if parts:
        data = concat([data] + parts) if len(data) else concat(parts)
    discovered = bool(stopped and goal_xy is not None
                      and _goal_reached(session.world, session.pose, goal_xy, cfg.goal_radius))
    data.meta.update({"method": method, "seed": cfg.seed})
    return ExploreResult(G, data, p, discovered, stopped, session.steps, session.trace_array(), decisions, losses)


def _finetune(p: ModelParams, data: Dataset, cfg: ExploreConfig, opt: AdamState, rng) -> float:
    sub = data
    if cfg.finetune_cap is not None and cfg.gamma * len(data) > cfg.finetune_cap:
        k = max(1, cfg.finetune_cap // cfg.gamma)
        sub = data.subset(np.sort(rng.choice(len(data), size=k, replace=False)))
    if cfg.beta is not None:
        p.beta = cfg.beta
    _, trace = train(p, sub, cfg.gamma, batch_size=min(128, len(sub)), seed=int(rng.integers(2**31)),
                     opt=opt, copy=False)
    return trace[-1]


@dataclass
class NavResult:
    success: bool
    steps: int
    legs: int
    replans: int
    path: list
    poses: np.ndarray
    reason: str = ""

    def summary(self) -> dict:
        return {"success": self.success, "steps": self.steps, "legs": self.legs, "replans": self.replans,
                "path": self.path, "reason": self.reason}


def goal_navigate(session: Session, params: ModelParams, G: TopoGraph | None, o_goal, cfg: ExploreConfig,
                  goal_xy=None) -> NavResult:
    """Follow the graph's shortest path to the goal vertex, then approach the goal.

    Each path vertex is a navigate-mode leg toward its observation. If a leg
    ends predicted further than ``delta_2`` from the vertex it aimed at, the
    agent re-associates and re-plans. With ``G=None`` the agent heads straight
    for the goal observation (no memory).
    """
    o_goal = np.asarray(o_goal, dtype=np.float64)
    start = session.steps
    budget = start + cfg.nav_budget
    legs = replans = 0
    o = session.observe()
    path: list[int] = []

    def leg_to(target):
        nonlocal o, legs
        leg = subgoal_navigate(session, params, encode_mean(params, o, target), cfg.horizon, "navigate",
                               max_steps=budget)
        o = leg.o_end
        legs += 1

    reason = ""
    if G is not None:
        if len(G) == 0:
            raise ContractError("graph is empty")
        v_g = associate_to_vertex(G, params, o_goal).id
        try:
            path = shortest_path(G, associate_to_vertex(G, params, o).id, v_g, cfg.w_max)
        except NoPath:
            return NavResult(False, 0, 0, 0, [], session.trace_array(), "no-path")
        queue = list(path[1:] if len(path) > 1 else path)
        while queue and session.steps < budget:
            v = queue[0]
            leg_to(G.nodes[v].o)
            if predicted_distance(params, o, G.nodes[v].o) > cfg.delta_2 and replans < cfg.max_replans:
                replans += 1
                try:
                    new = shortest_path(G, associate_to_vertex(G, params, o).id, v_g, cfg.w_max)
                except NoPath:
                    reason = "no-path"
                    break
                queue = new[1:] if len(new) > 1 else new
            else:
                queue.pop(0)
        approach = cfg.approach_legs
    else:
        approach = cfg.nav_budget
    while approach > 0 and session.steps < budget and predicted_distance(params, o, o_goal) >= cfg.delta_1:
        leg_to(o_goal)
        approach -= 1
    success = goal_xy is not None and _goal_reached(session.world, session.pose, goal_xy, cfg.goal_radius)
    if not reason:
        reason = "reached" if success else ("budget" if session.steps >= budget else "missed")
    return NavResult(bool(success), session.steps - start, legs, replans, path, session.trace_array(), reason)
