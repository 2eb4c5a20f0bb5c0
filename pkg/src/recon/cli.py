"""Command-line entry point: ``recon <subcommand> ...``.

Every subcommand writes a manifest (inputs, seed, versions, output hashes)
next to its outputs. Exit codes: 0 success, 1 runtime or data error, 2 usage.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agent import METHODS, ExploreConfig, Session, explore, goal_navigate
from .datagen import Dataset, collect_dataset, concat, save_trajectories
from .errors import CollectionError, ContractError, NoPath, TrainingDiverged, WorldError
from .evalharness import experiment, optimal_steps, report, sct, test_world
from .kernels import BACKEND
from .latentmodel import ModelParams, init_params, train
from .simworld import Pose, World, make_world, observe, sample_free_pose
from .topomap import TopoGraph

log = logging.getLogger("recon")


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(args: argparse.Namespace) -> str:
    d = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_manifest(path, args, inputs, outputs) -> Path:
    man = {
        "command": args.command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
        "seed": getattr(args, "seed", None),
        "config_hash": config_hash(args),
        "inputs": {str(p): file_sha256(p) for p in inputs if p is not None and Path(p).is_file()},
        "outputs": {str(p): file_sha256(p) for p in outputs if Path(p).is_file()},
        "versions": {"recon": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "kernels": BACKEND},
    }
    path = Path(path)
    path.write_text(json.dumps(man, indent=2, default=str))
    return path


def parse_pose(text: str | None) -> Pose | None:
    if text is None:
        return None
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad pose {text!r}; expected 'x,y' or 'x,y,theta'")
    if len(vals) not in (2, 3):
        raise UsageError(f"bad pose {text!r}; expected 'x,y' or 'x,y,theta'")
    return Pose(*vals)


def parse_pair(text: str) -> tuple[float, float]:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 2:
        raise UsageError(f"expected 'a,b', got {text!r}")
    return vals[0], vals[1]


def load_world(ref: str) -> World:
    """A spec path, or an integer seed for a default seeded world."""
    try:
        seed = int(ref)
    except ValueError:
        path = Path(ref)
        if not path.exists():
            raise FileNotFoundError(f"world spec not found: {ref}")
        return make_world(path)
    return make_world(seed=seed)


def _out_file(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _manifest_for(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


# -- subcommands -------------------------------------------------------------------


def cmd_make_world(args) -> int:
    if args.suite == "test":
        world = test_world(args.seed)
    else:
        kw = {"size": parse_pair(args.size), "n_obstacles": args.obstacles,
              "radius_range": parse_pair(args.radii), "min_geodesic": args.min_geodesic}
        start, goal = parse_pose(args.start), parse_pose(args.goal)
        if start is not None:
            kw["start"] = (start.x, start.y, start.theta)
        if goal is not None:
            kw["goal"] = (goal.x, goal.y, goal.theta)
        world = make_world(seed=args.seed, **kw)
    out = _out_file(args.out)
    d = world.to_dict()
    d["meta"] = {"seed": args.seed, "config_hash": config_hash(args)}
    out.write_text(json.dumps(d, indent=2))
    write_manifest(_manifest_for(out), args, [], [out])
    print(f"wrote {out}: {len(world.obstacles)} obstacles, bounds {list(world.bounds)}")
    return 0


def cmd_collect(args) -> int:
    worlds = [load_world(w) for w in args.world]
    if args.negatives > 0 and len(worlds) < 2:
        raise UsageError("--negatives needs at least two worlds")
    ds, trajs_all = collect_dataset(worlds, args.steps, args.seed, args.t_max, args.negatives,
                                    with_self_goals=not args.no_self_goals)
    out = _out_file(args.out)
    ds.to_jsonl(out)
    outputs = [out]
    if args.trajectories:
        tpath = _out_file(args.trajectories)
        save_trajectories(tpath, trajs_all)
        outputs.append(tpath)
    inputs = [w for w in args.world if Path(w).is_file()]
    write_manifest(_manifest_for(out), args, inputs, outputs)
    print(f"wrote {out}: {len(ds)} quadruples from {len(trajs_all)} trajectories in {len(worlds)} world(s); "
          f"digest {ds.digest()[:16]}")
    return 0


def cmd_train(args) -> int:
    parts = []
    for path in args.data:
        if not Path(path).exists():
            raise FileNotFoundError(f"dataset not found: {path}")
        parts.append(Dataset.from_jsonl(path))
    ds = concat(parts) if len(parts) > 1 else parts[0]
    params = init_params(ds.n_rays, latent_dim=args.latent_dim, hidden=args.hidden, beta=args.beta, seed=args.seed)
    params, trace = train(params, ds, args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed)
    for e, loss in enumerate(trace):
        log.info("epoch %d loss %.5f", e, loss)
    out = _out_file(args.out)
    params.save(out, seed=args.seed, config_hash=config_hash(args), loss_trace=trace, data_digest=ds.digest(),
                epochs=args.epochs, lr=args.lr)
    write_manifest(_manifest_for(out), args, args.data, [out])
    print(f"wrote {out}: {len(ds)} quadruples, final loss {trace[-1]:.4f}")
    return 0


def _load_ckpt(path) -> ModelParams:
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return ModelParams.load(path)


def _start_pose(world: World, text, seed) -> Pose:
    start = parse_pose(text) or world.start
    if start is None:
        start = sample_free_pose(world, np.random.default_rng(seed), clearance=world.agent_radius + 0.3)
    return start


def _explore_cfg(args) -> ExploreConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    base.update(budget=args.budget, seed=args.seed)
    return ExploreConfig.from_dict(base)


def cmd_explore(args) -> int:
    world = load_world(args.world)
    params = _load_ckpt(args.ckpt)
    goal = parse_pose(args.goal_pose)
    start = _start_pose(world, args.start_pose, args.seed)
    if not world.is_free(goal.x, goal.y):
        raise ContractError("goal pose is not in free space")
    cfg = _explore_cfg(args)
    o_goal = observe(world, goal)
    res = explore(Session(world, start, seed=args.seed), params, o_goal, cfg, method=args.method, goal_xy=goal.xy())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    ch = config_hash(args)
    if res.graph is not None:
        res.graph.save(out / "graph.json")
        outputs.append(out / "graph.json")
    res.params.save(out / "finetuned.json", seed=args.seed, config_hash=ch)
    outputs.append(out / "finetuned.json")
    if len(res.dataset):
        res.dataset.to_jsonl(out / "online.jsonl")
        outputs.append(out / "online.jsonl")
    with open(out / "decisions.log", "w") as f:
        for d in res.decisions:
            f.write(f"leg={d['leg']} step={d['step']} branch={d['branch']} z={d['z_origin']} "
                    f"d_goal={d['d_goal']:.3f} graph={d.get('graph_size', 0)}\n")
    outputs.append(out / "decisions.log")
    t_opt = optimal_steps(world, start.xy(), goal.xy())
    result = dict(res.summary(), method=args.method, seed=args.seed, config_hash=ch, world=world.name,
                  start=[start.x, start.y, start.theta], goal=[goal.x, goal.y, goal.theta], t_optimal=t_opt,
                  config=cfg.to_dict(), poses=np.round(res.poses, 6).tolist(), decisions=res.decisions)
    (out / "result.json").write_text(json.dumps(result, indent=1))
    outputs.append(out / "result.json")
    write_manifest(out / "manifest.json", args, [args.world, args.ckpt, args.config], outputs)
    print(f"{'discovered' if res.discovered else 'not discovered'} after {res.steps} steps, "
          f"{len(res.decisions)} legs, graph {len(res.graph) if res.graph is not None else 0} vertices -> {out}")
    return 0


def cmd_navigate(args) -> int:
    world = load_world(args.world)
    params = _load_ckpt(args.ckpt)
    if not Path(args.graph).exists():
        raise FileNotFoundError(f"graph not found: {args.graph}")
    G = TopoGraph.load(args.graph)
    goal = parse_pose(args.goal_pose)
    start = _start_pose(world, args.start_pose, args.seed)
    cfg = _explore_cfg(args)
    nav = goal_navigate(Session(world, start, seed=args.seed), params, G, observe(world, goal), cfg,
                        goal_xy=goal.xy())
    t_opt = optimal_steps(world, start.xy(), goal.xy())
    result = dict(nav.summary(), seed=args.seed, config_hash=config_hash(args), t_optimal=t_opt,
                  sct=sct(nav.success, nav.steps, t_opt), poses=np.round(nav.poses, 6).tolist())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "navigate.json").write_text(json.dumps(result, indent=1))
    write_manifest(out / "manifest.json", args, [args.world, args.ckpt, args.graph, args.config],
                   [out / "navigate.json"])
    print(f"{'reached' if nav.success else 'failed'} ({nav.reason}) in {nav.steps} steps, "
          f"{nav.legs} legs, {nav.replans} re-plans, SCT {result['sct']:.3f}")
    return 0


def cmd_experiment(args) -> int:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise FileNotFoundError(f"config not found: {cfg_path}")
    config = json.loads(cfg_path.read_text())
    out = Path(args.out) if args.out else cfg_path.parent / config.get("out", "experiment")
    rows = experiment(cfg_path, out)
    outputs = sorted((out / "runs").glob("*.json")) + [out / "aggregate.csv", out / "coverage.csv"]
    write_manifest(out / "manifest.json", args, [cfg_path], outputs)
    _print_rows(rows)
    return 0


def _print_rows(rows) -> None:
    for r in rows:
        print(f"{r['method']:>15}  runs {r['runs']:3d}  discovered {r['discovered']:3d}  "
              f"expl {r['explore_steps_median']:8.1f}  nav {r['nav_steps_median']:8.1f}  "
              f"SCT {r['sct_mean']:.3f}")


def cmd_graph_inspect(args) -> int:
    if not Path(args.path).exists():
        raise FileNotFoundError(f"graph not found: {args.path}")
    G = TopoGraph.load(args.path)
    for k, v in G.summary().items():
        print(f"{k}: {v}")
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise FileNotFoundError(f"run directory not found: {runs}")
    out = Path(args.out) if args.out else runs.parent
    out.mkdir(parents=True, exist_ok=True)
    agg, cov = report(runs, out)
    inputs = sorted(runs.glob("*.json"))
    write_manifest(out / "report.manifest.json", args, inputs, [agg, cov])
    print(f"wrote {agg} and {cov}")
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("make-world", help="generate a seeded world spec")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--suite", choices=["custom", "test"], default="custom",
                   help="'test' builds the standard elongated test world for the seed")
    s.add_argument("--size", default="20,20")
    s.add_argument("--obstacles", type=int, default=12)
    s.add_argument("--radii", default="0.5,1.5")
    s.add_argument("--start")
    s.add_argument("--goal")
    s.add_argument("--min-geodesic", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_world)

    s = sub.add_parser("collect", help="random-walk data collection and relabeling")
    s.add_argument("--world", action="append", required=True, help="spec path or seed (repeatable)")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--t-max", type=int, default=30)
    s.add_argument("--negatives", type=float, default=0.0,
                   help="fraction of cross-world pairs to append (needs two or more worlds)")
    s.add_argument("--no-self-goals", action="store_true",
                   help="skip the (o, o, stop, 0) pairs added for every observation")
    s.add_argument("--trajectories", help="also write the raw trajectory archive here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("train", help="fit the latent goal model")
    s.add_argument("--data", action="append", required=True)
    s.add_argument("--epochs", type=int, default=15)
    s.add_argument("--beta", type=float, default=0.1)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--latent-dim", type=int, default=16)
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    for name, fn in (("explore", cmd_explore), ("navigate", cmd_navigate)):
        s = sub.add_parser(name, help=f"{name} toward a goal pose")
        s.add_argument("--world", required=True)
        s.add_argument("--ckpt", required=True)
        s.add_argument("--goal-pose", required=True)
        s.add_argument("--start-pose")
        s.add_argument("--budget", type=int, default=2000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--config", help="JSON file with agent settings")
        if name == "explore":
            s.add_argument("--method", choices=METHODS, default="recon")
            s.add_argument("--out", required=True)
        else:
            s.add_argument("--graph", required=True)
            s.add_argument("--out", default=".")
        s.set_defaults(func=fn)

    s = sub.add_parser("experiment", help="run a method x world x seed grid")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("graph", help="topological graph tools")
    gsub = s.add_subparsers(dest="graph_command", metavar="action")
    gsub.required = True
    g = gsub.add_parser("inspect", help="print graph summary statistics")
    g.add_argument("path")
    g.set_defaults(func=cmd_graph_inspect)

    s = sub.add_parser("report", help="aggregate tables from run files")
    s.add_argument("--runs", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


RUNTIME_ERRORS = (ContractError, WorldError, CollectionError, TrainingDiverged, NoPath, OSError,
                  json.JSONDecodeError, KeyError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"recon: usage error: {e}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"recon: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
