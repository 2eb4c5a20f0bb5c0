import numpy as np
import pytest

from recon.agent import (ExploreConfig, Session, explore, goal_navigate, random_burst, subgoal_navigate)
from recon.errors import ContractError
from recon.latentmodel import LatentGoal
from recon.simworld import Pose, World, observe
from recon.topomap import TopoGraph

BRANCHES = {"goal", "to-frontier", "explore-frontier"}


@pytest.fixture(scope="module")
def setup(trained, small_world):
    params, _ = trained
    start = Pose(10.0, 10.0, 0.0)
    if not small_world.is_free(start.x, start.y):
        start = Pose(3.0, 3.0, 0.0)
    goal = observe(small_world, Pose(17.0, 17.0, 1.0))
    return params, small_world, start, goal


def test_h1_leg_is_one_quadruple(setup):
    params, world, start, _ = setup
    s = Session(world, start)
    o0 = s.observe()
    leg = subgoal_navigate(s, params, np.zeros(params.latent_dim), 1, "navigate")
    assert len(leg.data) == 1 and leg.n_actions == 1
    o, g, a, d = leg.data.arrays()
    np.testing.assert_array_equal(o[0], o0)
    np.testing.assert_array_equal(g[0], leg.o_end)
    assert d[0] == 1 and s.steps == 1


def test_leg_relabels_to_endpoint(setup):
    params, world, start, _ = setup
    s = Session(world, start)
    leg = subgoal_navigate(s, params, LatentGoal(np.zeros(params.latent_dim), "prior-sample"), 6,
                           "explore", np.random.default_rng(0))
    n = leg.n_actions
    o, g, _, d = leg.data.arrays()
    assert list(d) == list(range(n, 0, -1))
    assert np.all(g == leg.o_end)


def test_subgoal_navigate_contracts(setup):
    params, world, start, _ = setup
    s = Session(world, start)
    with pytest.raises(ContractError):
        subgoal_navigate(s, params, np.zeros(3), 5)
    with pytest.raises(ContractError):
        subgoal_navigate(s, params, np.zeros(params.latent_dim), 0)
    with pytest.raises(ContractError):
        subgoal_navigate(s, params, np.zeros(params.latent_dim), 5, mode="explore")  # no rng


def test_random_burst_respects_step_cap(setup):
    _, world, start, _ = setup
    s = Session(world, start)
    leg = random_burst(s, 10, np.random.default_rng(0), max_steps=4)
    assert leg.n_actions <= 4 and s.steps <= 4 + 4  # a trailing backup may add steps


def test_zero_budget(setup):
    params, world, start, goal = setup
    r = explore(Session(world, start), params, goal, ExploreConfig(budget=0), goal_xy=(17, 17))
    assert not r.discovered and not r.stopped
    assert r.steps == 0 and len(r.dataset) == 0
    assert len(r.graph) <= 1


def test_cold_start_seeds_graph_and_samples_prior(setup):
    params, world, start, goal = setup
    cfg = ExploreConfig(budget=30, gamma=1)
    r = explore(Session(world, start), params, goal, cfg, force_infeasible=True)
    first = r.decisions[0]
    assert first["frontier"] == 0  # the start vertex
    assert first["branch"] == "explore-frontier" and first["z_origin"] == "prior-sample"
    np.testing.assert_array_equal(r.graph.nodes[0].o, observe(world, start))


def test_branches_are_exclusive_and_logged(setup):
    params, world, start, goal = setup
    r = explore(Session(world, start), params, goal, ExploreConfig(budget=150, gamma=2))
    assert r.decisions
    for rec in r.decisions:
        assert rec["branch"] in BRANCHES
        assert rec["z_origin"] in {"posterior-mean", "prior-sample", "random-burst"}
        if rec["branch"] == "goal" or rec["branch"] == "to-frontier":
            assert rec["z_origin"] == "posterior-mean"
    assert sum(r.branch_histogram().values()) == len(r.decisions)
    assert r.steps >= 150
    assert len(r.poses) == r.steps + 1 or len(r.poses) >= len(r.decisions)


def test_frontier_only_mode(setup):
    params, world, start, goal = setup
    r = explore(Session(world, start), params, goal, ExploreConfig(budget=120, gamma=1),
                force_infeasible=True, allow_prior=False)
    hist = r.branch_histogram()
    assert "goal" not in hist
    assert "explore-frontier/prior-sample" not in hist


def test_random_actions_never_sample_the_prior(setup):
    params, world, start, goal = setup
    r = explore(Session(world, start), params, goal, ExploreConfig(budget=150, gamma=1),
                method="random-actions")
    assert "explore-frontier/prior-sample" not in r.branch_histogram()


def test_reactive_keeps_no_graph(setup):
    params, world, start, goal = setup
    r = explore(Session(world, start), params, goal, ExploreConfig(budget=60, gamma=1), method="reactive")
    assert r.graph is None
    assert all("frontier" not in rec for rec in r.decisions)


def test_unknown_method(setup):
    params, world, start, goal = setup
    with pytest.raises(ContractError):
        explore(Session(world, start), params, goal, ExploreConfig(budget=5), method="teleport")


def test_explore_is_deterministic_and_leaves_input_params(setup):
    params, world, start, goal = setup
    before = [a.copy() for a in params.params()]
    cfg = ExploreConfig(budget=120, gamma=2, seed=3)
    a = explore(Session(world, start, seed=3), params, goal, cfg)
    b = explore(Session(world, start, seed=3), params, goal, cfg)
    assert a.steps == b.steps and a.decisions == b.decisions and a.loss_trace == b.loss_trace
    assert a.dataset.digest() == b.dataset.digest()
    for x, y in zip(a.params.params(), b.params.params()):
        assert x.tobytes() == y.tobytes()
    for x, y in zip(params.params(), before):
        np.testing.assert_array_equal(x, y)


def test_finetuning_changes_params(setup):
    params, world, start, goal = setup
    r = explore(Session(world, start), params, goal, ExploreConfig(budget=40, gamma=2))
    assert r.loss_trace
    assert any(not np.array_equal(x, y) for x, y in zip(r.params.params(), params.params()))


def test_open_world_nearby_goal_is_found_quickly(trained):
    params, _ = trained
    w = World(bounds=(0.0, 0.0, 12.0, 12.0), obstacles=[(3.0, 9.0, 1.0), (9.0, 3.0, 0.8)])
    start = Pose(4.0, 4.0, 0.8)
    goal_pose = Pose(5.5, 5.5, 0.8)
    cfg = ExploreConfig(budget=400, gamma=2)
    found = []
    for seed in range(3):
        r = explore(Session(w, start, seed=seed), params, observe(w, goal_pose),
                    ExploreConfig.from_dict({**cfg.to_dict(), "seed": seed}), goal_xy=(goal_pose.x, goal_pose.y))
        found.append(r.discovered and len(r.decisions) <= 15)
    assert sum(found) >= 2


def test_navigate_to_current_vertex(trained):
    params, _ = trained
    w = World(bounds=(0.0, 0.0, 12.0, 12.0))
    start = Pose(6.0, 6.0, 0.0)
    o = observe(w, start)
    G = TopoGraph(params.n_rays)
    G.add_node(o)
    r = goal_navigate(Session(w, start), params, G, o, ExploreConfig(), goal_xy=(6.0, 6.0))
    assert r.success and r.legs <= 1 and r.path == [0]


def test_navigate_reports_no_path(trained, small_world):
    params, _ = trained
    G = TopoGraph(params.n_rays)
    obs = [observe(small_world, Pose(3.0 + 6 * i, 3.0 + 6 * i, 0.0)) for i in range(3)]
    for o in obs:
        G.add_node(o)
    for i in range(3):
        for j in range(3):
            if i != j:
                G.set_edge(i, j, 50.0)  # every edge is over W_max
    start = Pose(3.0, 3.0, 0.0)
    r = goal_navigate(Session(small_world, start), params, G, obs[2], ExploreConfig(), goal_xy=(15.0, 15.0))
    assert not r.success and r.reason == "no-path" and r.steps == 0


def test_session_rejects_bad_start():
    w = World(bounds=(0.0, 0.0, 5.0, 5.0), obstacles=[(2.5, 2.5, 1.0)])
    with pytest.raises(ContractError):
        Session(w, Pose(2.5, 2.5, 0.0))
    with pytest.raises(ContractError):
        Session(w)


def test_config_validation_and_round_trip():
    with pytest.raises(ContractError):
        ExploreConfig(horizon=0)
    with pytest.raises(ContractError):
        ExploreConfig(eps=1.5)
    cfg = ExploreConfig(budget=77, reach=None)
    assert ExploreConfig.from_dict({**cfg.to_dict(), "unused": 1}) == cfg
