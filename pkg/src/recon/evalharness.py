"""Metrics, ablation variants, perturbations, and multi-seed experiments."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agent import METHODS, ExploreConfig, Session, explore, goal_navigate, random_burst, subgoal_navigate
from .errors import ContractError, WorldError
from .kernels import cover_trace
from .datagen import collect_dataset
from .latentmodel import HIDDEN, ModelParams, init_params, sample_prior, train
from .simworld import V_MAX, Pose, World, geodesic, make_world, observe

COVERAGE_RADIUS = 2.0

# standard desk-scale suites: 20 x 20 m training worlds and elongated test worlds
# whose start and goal sit at opposite ends (geodesic > 30 m)
TRAIN_WORLD_SEEDS = (100, 101, 102, 103)
TEST_WORLD_SEEDS = (200, 201, 202)
# elongated practice worlds with the test worlds' shape but disjoint seeds
WIDE_WORLD_SEEDS = (110, 111, 112, 113)


def train_world(seed: int) -> World:
    return make_world(seed=seed, size=(20.0, 20.0), n_obstacles=12)


def wide_world(seed: int) -> World:
    return make_world(seed=seed, size=(36.0, 14.0), n_obstacles=14)


def pretraining_worlds() -> list[World]:
    return [train_world(s) for s in TRAIN_WORLD_SEEDS] + [wide_world(s) for s in WIDE_WORLD_SEEDS]


def pretrain(beta: float, steps: int = 5000, epochs: int = 12, seed: int = 0, lr: float = 1e-3,
             hidden: int = HIDDEN):
    """The standard offline checkpoint: collect in every pretraining world, then fit.

    Returns (params, loss trace, dataset). Takes a minute or two on one core.
    """
    ds, _ = collect_dataset(pretraining_worlds(), steps, seed=seed + 1)
    params = init_params(ds.n_rays, seed=seed, beta=beta, hidden=hidden)
    params, trace = train(params, ds, epochs, lr=lr, seed=seed)
    params.meta["pretrain"] = {"steps": steps, "epochs": epochs, "seed": seed, "lr": lr}
    return params, trace, ds


def test_world(seed: int) -> World:
    # the goal faces a side wall; see the README for why the heading matters
    return make_world(seed=seed, size=(36.0, 14.0), n_obstacles=14, start=(2.0, 7.0, 0.0),
                      goal=(34.0, 7.0, math.pi / 2), min_geodesic=30.0)


# -- metrics -------------------------------------------------------------------------


def coverage_curve(poses, world: World, radius: float = COVERAGE_RADIUS) -> np.ndarray:
    """Covered free-area fraction after each pose of the trace."""
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3) if len(poses) else np.zeros((0, 3))
    grid = world.eval_grid
    total = int(grid.free.sum())
    if len(poses) == 0 or total == 0:
        return np.zeros(len(poses))
    counts = cover_trace(np.ascontiguousarray(poses[:, 0]), np.ascontiguousarray(poses[:, 1]), float(radius),
                         grid.x0, grid.y0, grid.cell, grid.free)
    return np.asarray(counts, dtype=np.float64) / total


def coverage(poses, world: World, radius: float = COVERAGE_RADIUS) -> float:
    """Fraction of free space within ``radius`` of any visited pose (0 for an empty trace)."""
    c = coverage_curve(poses, world, radius)
    return float(c[-1]) if len(c) else 0.0


def optimal_steps(world: World, start, goal) -> int:
    g = geodesic(world, tuple(start)[:2], tuple(goal)[:2])
    if not math.isfinite(g):
        raise ContractError("goal is unreachable")
    return max(1, int(math.ceil(g / (V_MAX * world.dt))))


def sct(success: bool, t_agent: int, t_optimal: int) -> float:
    """Success weighted by completion time."""
    if t_optimal < 1:
        raise ContractError("t_optimal must be >= 1")
    if not success:
        return 0.0
    return t_optimal / max(t_agent, t_optimal)


# -- rollouts used for the coverage comparison ------------------------------------


def rollout_coverage(world: World, params: ModelParams | None, mode: str, steps: int, seed: int,
                     horizon: int = 10, start: Pose | None = None) -> np.ndarray:
    """Chain legs of prior-sampled latent goals (``prior``) or random action bursts (``random``).

    Returns the coverage curve over the pose trace.
    """
    if mode not in ("prior", "random"):
        raise ContractError(f"unknown rollout mode {mode!r}")
    if mode == "prior" and params is None:
        raise ContractError("prior rollouts need model params")
    session = Session(world, start, seed=seed)
    rng = np.random.default_rng([seed, 3])
    while session.steps < steps:
        if mode == "prior":
            subgoal_navigate(session, params, sample_prior(params.latent_dim, rng), horizon, "explore", rng, steps)
        else:
            random_burst(session, horizon, rng, steps)
    return coverage_curve(session.trace_array(), world)


# -- single runs ------------------------------------------------------------------


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for a in params.params():
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


@dataclass
class RunReport:
    method: str
    seed: int
    world: str
    discovered: bool
    explore_steps: int
    nav_steps: int | None
    nav_success: bool
    sct: float
    t_optimal: int
    coverage: list  # [[step, fraction], ...]
    branches: dict
    stopped: bool = False
    budget: int = 0
    checkpoint: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.sct <= 1.0:
            raise ContractError("SCT must lie in [0, 1]")
        fr = [c[1] for c in self.coverage]
        if any(b < a - 1e-12 for a, b in zip(fr, fr[1:])):
            raise ContractError("coverage must be non-decreasing")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _sampled_curve(curve: np.ndarray, every: int) -> list:
    if len(curve) == 0:
        return [[0, 0.0]]
    idx = list(range(0, len(curve), every))
    if idx[-1] != len(curve) - 1:
        idx.append(len(curve) - 1)
    return [[int(i), round(float(curve[i]), 6)] for i in idx]


def run_method(method: str, world: World, params: ModelParams, cfg: ExploreConfig, seed: int,
               coverage_every: int = 50, return_result: bool = False):
    """Explore with one method from the world's start, then navigate back to the goal if found.

    ``vanilla`` expects a checkpoint trained without the bottleneck (beta = 0);
    ``reactive`` explores and navigates without the graph.
    """
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "vanilla" and params.beta != 0:
        raise ContractError("vanilla sampling needs a checkpoint trained with beta = 0")
    if world.start is None or world.goal is None:
        raise ContractError("world needs start and goal poses")
    cfg = ExploreConfig.from_dict(dict(cfg.to_dict(), seed=seed))
    o_goal = observe(world, world.goal)
    goal_xy = world.goal.xy()
    res = explore(Session(world, seed=seed), params, o_goal, cfg, method=method, goal_xy=goal_xy)
    t_opt = optimal_steps(world, world.start.xy(), goal_xy)
    nav = None
    if res.discovered:
        G = res.graph if method != "reactive" else None
        nav = goal_navigate(Session(world, seed=seed + 1), res.params, G, o_goal, cfg, goal_xy=goal_xy)
    report = RunReport(
        method=method, seed=seed, world=world.name,
        discovered=res.discovered,
        explore_steps=res.steps,
        nav_steps=nav.steps if nav is not None else None,
        nav_success=bool(nav is not None and nav.success),
        sct=sct(nav is not None and nav.success, nav.steps if nav else 0, t_opt),
        t_optimal=t_opt,
        coverage=_sampled_curve(coverage_curve(res.poses, world), coverage_every),
        branches=res.branch_histogram(),
        stopped=res.stopped,
        budget=cfg.budget,
        checkpoint=params_digest(params),
        config=cfg.to_dict(),
    )
    return (report, res, nav) if return_result else report


# -- perturbations ---------------------------------------------------------------


def perturb_world(world: World, n_extra: int, seed: int, radius_range=(0.5, 1.0), clearance: float = 1.0,
                  retries: int = 500) -> World:
    """Add ``n_extra`` circles away from the start and goal that keep them connected."""
    if n_extra < 0:
        raise ContractError("n_extra must be >= 0")
    if n_extra == 0:
        return world
    if world.start is None or world.goal is None:
        raise ContractError("world needs start and goal poses")
    rng = np.random.default_rng([seed, 11])
    xmin, ymin, xmax, ymax = world.bounds
    keep = [world.start, world.goal]
    obstacles = [tuple(o) for o in world.obstacles]
    added = 0
    for _ in range(retries):
        if added == n_extra:
            break
        r = rng.uniform(*radius_range)
        cx, cy = rng.uniform(xmin + r, xmax - r), rng.uniform(ymin + r, ymax - r)
        if any(math.hypot(cx - p.x, cy - p.y) < r + world.agent_radius + clearance for p in keep):
            continue
        cand = world.replace(obstacles=np.array(obstacles + [(cx, cy, r)]))
        if not math.isfinite(geodesic(cand, world.start.xy(), world.goal.xy())):
            continue
        obstacles.append((cx, cy, r))
        added += 1
    if added < n_extra:
        raise WorldError(f"placed only {added} of {n_extra} obstacles after {retries} tries")
    return world.replace(obstacles=np.array(obstacles), name=f"{world.name}+{n_extra}obs{seed}")


# -- experiments -------------------------------------------------------------------


AGG_FIELDS = ["method", "runs", "discovered", "explore_steps_median", "nav_steps_median",
              "nav_success", "sct_mean", "sct_mean_success", "nav_degradation"]


def exploration_steps(r: RunReport) -> int:
    """Steps to discovery; a failed run counts as its full budget."""
    return r.explore_steps if r.discovered else max(r.budget, r.explore_steps)


def _method_key(m: str):
    return (METHODS.index(m) if m in METHODS else len(METHODS), m)


def aggregate(reports) -> list[dict]:
    """One row per method, in the order of ``METHODS``."""
    by: dict[str, list[RunReport]] = {}
    for r in reports:
        by.setdefault(r.method, []).append(r)
    rows = []
    for method in sorted(by, key=_method_key):
        rs = by[method]
        nav = [r for r in rs if r.nav_success]
        ratios = [r.nav_steps / r.explore_steps for r in nav if r.explore_steps]
        rows.append({
            "method": method,
            "runs": len(rs),
            "discovered": sum(r.discovered for r in rs),
            "explore_steps_median": float(np.median([exploration_steps(r) for r in rs])),
            "nav_steps_median": float(np.median([r.nav_steps for r in nav])) if nav else math.nan,
            "nav_success": len(nav),
            "sct_mean": float(np.mean([r.sct for r in rs])),
            "sct_mean_success": float(np.mean([r.sct for r in nav])) if nav else math.nan,
            # median navigation/exploration step ratio; higher means worse recall
            "nav_degradation": float(np.median(ratios)) if ratios else math.nan,
        })
    return rows


def coverage_table(reports) -> list[dict]:
    """Long-format coverage curves: method, world, seed, step, fraction."""
    out = []
    for r in sorted(reports, key=lambda r: (_method_key(r.method), r.world, r.seed)):
        for s, f in r.coverage:
            out.append({"method": r.method, "world": r.world, "seed": r.seed, "step": s, "coverage": f})
    return out


def _write_csv(path, rows, fields) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})


def write_tables(reports, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    agg, cov = out / "aggregate.csv", out / "coverage.csv"
    _write_csv(agg, aggregate(reports), AGG_FIELDS)
    _write_csv(cov, coverage_table(reports), ["method", "world", "seed", "step", "coverage"])
    return agg, cov


def load_reports(run_dir) -> list[RunReport]:
    files = sorted(Path(run_dir).glob("*.json"))
    reports = []
    for f in files:
        d = json.loads(f.read_text())
        if "method" in d and "explore_steps" in d:
            reports.append(RunReport.from_dict(d))
    if not reports:
        raise ContractError(f"no run reports in {run_dir}")
    return reports


def report(run_dir, out_dir=None) -> tuple[Path, Path]:
    """Regenerate the aggregate and coverage tables from per-run files."""
    run_dir = Path(run_dir)
    return write_tables(load_reports(run_dir), out_dir if out_dir is not None else run_dir.parent)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_world_entry(entry, base: Path = Path(".")) -> World:
    """A world entry is a spec path, a seed (standard test world), or a dict of make_world arguments."""
    if isinstance(entry, int):
        return test_world(entry)
    if isinstance(entry, str):
        path = _resolve(base, entry)
        if not path.exists():
            raise FileNotFoundError(f"world spec not found: {path}")
        return make_world(path)
    if isinstance(entry, dict):
        return make_world(**entry)
    raise ContractError(f"bad world entry {entry!r}")


def experiment(config, out_dir=None) -> list[dict]:
    """Run the method x world x seed cross product and write per-run JSON plus tables.

    ``config`` is a dict or a JSON path with keys ``methods``, ``worlds``,
    ``seeds``, ``checkpoint`` (and ``vanilla_checkpoint``), optional
    ``explore`` overrides and ``out``.
    """
    base = Path(".")
    if not isinstance(config, dict):
        base = Path(config).parent
        config = json.loads(Path(config).read_text())
    for key in ("methods", "worlds", "seeds", "checkpoint"):
        if key not in config:
            raise ContractError(f"experiment config lacks {key!r}")
    methods = config["methods"]
    for m in methods:
        if m not in METHODS:
            raise ContractError(f"unknown method {m!r}")
    ckpts = {}
    for key in ("checkpoint", "vanilla_checkpoint"):
        if key in config:
            path = _resolve(base, config[key])
            if not path.exists():
                raise FileNotFoundError(f"checkpoint not found: {path}")
            ckpts[key] = ModelParams.load(path)
    if "vanilla" in methods and "vanilla_checkpoint" not in ckpts:
        raise ContractError("vanilla needs 'vanilla_checkpoint'")
    worlds = [load_world_entry(w, base) for w in config["worlds"]]
    cfg = ExploreConfig.from_dict(config.get("explore", {}))
    out = Path(out_dir if out_dir is not None else _resolve(base, config.get("out", "experiment")))
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    reports = []
    for method in methods:
        params = ckpts["vanilla_checkpoint" if method == "vanilla" else "checkpoint"]
        for world in worlds:
            for seed in config["seeds"]:
                r = run_method(method, world, params, cfg, int(seed), config.get("coverage_every", 50))
                r.save(runs / f"{method}__{world.name}__s{seed}.json")
                reports.append(r)
    write_tables(reports, out)
    return aggregate(reports)
