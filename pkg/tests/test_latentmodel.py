import math

import numpy as np
import pytest

from recon.datagen import Dataset, collect, relabel_all
from recon.errors import ContractError, TrainingDiverged
from recon.latentmodel import (LatentGoal, ModelParams, decode, encode, encode_mean, feasibility,
                               feasibility_score, init_params, predicted_distance, prior_log_density_per_dim,
                               sample_prior, train, vib_loss, vib_loss_and_grad)


def _toy(n=50, k=8, seed=0):
    rng = np.random.default_rng(seed)
    o = rng.uniform(0, 1, (n, k))
    g = rng.uniform(0, 1, (n, k))
    a = np.column_stack([rng.uniform(0, 1, n), rng.uniform(-1, 1, n)])
    d = rng.integers(1, 30, n).astype(float)
    return Dataset.from_arrays(o, g, a, d)


def test_zero_init_heads():
    p = init_params(8, latent_dim=4, seed=0)
    o = np.random.default_rng(0).uniform(0, 1, (3, 8))
    e = encode(p, o, o[::-1])
    np.testing.assert_array_equal(e.mu, 0.0)
    np.testing.assert_array_equal(e.sigma, 1.0)
    pred = decode(p, o, np.zeros((3, 4)))
    np.testing.assert_array_equal(pred.dist.mu, 0.0)
    np.testing.assert_array_equal(pred.dist.sigma, 1.0)
    np.testing.assert_array_equal(predicted_distance(p, o, o[::-1]), 0.0)


def test_encode_is_deterministic_and_checks_width():
    p = init_params(8, latent_dim=4, seed=2)
    p.encoder.weights[-1][:] = 0.3
    o = np.linspace(0, 1, 8)
    np.testing.assert_array_equal(encode(p, o, o).mu, encode(p, o, o).mu)
    with pytest.raises(ContractError):
        encode(p, o, np.zeros(9))
    with pytest.raises(ContractError):
        decode(p, o, np.zeros(5))


def test_decode_with_zero_noise_returns_means():
    rng = np.random.default_rng(3)
    p = init_params(8, latent_dim=4, seed=3)
    for net in (p.encoder, p.decoder):
        net.weights[-1][:] = rng.normal(scale=0.3, size=net.weights[-1].shape)
    o, g = rng.uniform(0, 1, 8), rng.uniform(0, 1, 8)
    post = encode(p, o, g)
    z = post.mu + post.sigma * np.zeros(4)
    pred = decode(p, o, LatentGoal(z, "posterior-sample"))
    np.testing.assert_array_equal(pred.action, decode(p, o, post.mu).action)
    assert pred.distance == max(pred.dist.mu[2], 0.0)


def test_feasibility_closed_form_points():
    assert math.exp(prior_log_density_per_dim(np.zeros(16))) == pytest.approx(0.3989, abs=1e-4)
    assert math.exp(prior_log_density_per_dim(np.full(16, 3.0))) == pytest.approx(0.00443, abs=1e-5)
    p = init_params(8, latent_dim=4, seed=0)
    o = np.zeros(8)
    assert feasibility(p, o, o)  # zero head puts the mean at the prior mode

    boundary = math.sqrt(-2 * math.log(1e-2 * math.sqrt(2 * math.pi)))
    assert boundary == pytest.approx(2.715, abs=1e-3)
    # set the encoder mean to a constant vector by its output bias
    for x, expect in [(boundary - 1e-3, True), (boundary + 1e-3, False)]:
        p.encoder.biases[-1][:4] = x
        assert feasibility(p, o, o, eps=1e-2) is expect
        assert feasibility_score(p, o, o) == pytest.approx(1e-2, rel=0.01)


def test_feasibility_rejects_bad_eps():
    p = init_params(8, latent_dim=4)
    with pytest.raises(ContractError):
        feasibility(p, np.zeros(8), np.zeros(8), eps=0.0)


def test_sample_prior_moments():
    rng = np.random.default_rng(7)
    Z = np.array([sample_prior(16, rng).z for _ in range(10_000)])
    assert np.all(np.abs(Z.mean(axis=0)) < 3 / math.sqrt(len(Z)))
    assert np.all((Z.var(axis=0) > 0.94) & (Z.var(axis=0) < 1.06))
    assert sample_prior(16, rng).origin == "prior-sample"


def _loss_fd_check(p, batch, noise, beta):
    _, grads, _ = vib_loss_and_grad(p, batch, noise, beta)
    h = 1e-5
    worst = 0.0
    rng = np.random.default_rng(0)
    for arr, g in zip(p.params(), grads):
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in rng.choice(len(flat), size=min(len(flat), 6), replace=False):
            old = flat[i]
            flat[i] = old + h
            up = vib_loss(p, batch, noise, beta)
            flat[i] = old - h
            down = vib_loss(p, batch, noise, beta)
            flat[i] = old
            num = (up - down) / (2 * h)
            err = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6)
            worst = max(worst, err)
    return worst


def test_full_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    p = init_params(6, latent_dim=3, hidden=7, seed=5, beta=0.7)
    for net in (p.encoder, p.decoder):
        net.weights[-1][:] = rng.normal(scale=0.3, size=net.weights[-1].shape)
    ds = _toy(3, k=6, seed=5)
    noise = rng.standard_normal((3, 3))
    assert _loss_fd_check(p, ds.arrays(), noise, 0.7) < 1e-4


def test_beta_zero_is_pure_nll():
    p = init_params(8, latent_dim=4, seed=1)
    p.encoder.biases[-1][:] = 0.4  # nonzero KL
    batch = _toy(10).arrays()
    noise = np.random.default_rng(0).standard_normal((10, 4))
    loss, _, parts = vib_loss_and_grad(p, batch, noise, beta=0.0)
    assert parts["kl"] > 0
    assert loss == pytest.approx(parts["nll"])
    loss1, _, parts1 = vib_loss_and_grad(p, batch, noise, beta=2.0)
    assert loss1 == pytest.approx(parts1["nll"] + 2.0 * parts1["kl"])


def test_beta_sweep_trades_kl_for_nll():
    ds = _toy(40)
    kls, nlls = [], []
    for beta in (0.0, 1.0, 100.0):
        p, _ = train(init_params(8, latent_dim=4, seed=0, beta=beta), ds, epochs=300, lr=3e-3, seed=0)
        noise = np.random.default_rng(9).standard_normal((len(ds), 4))
        _, _, parts = vib_loss_and_grad(p, ds.arrays(), noise, beta=beta, need_grad=False)
        kls.append(parts["kl"])
        nlls.append(parts["nll"])
    # on random toy labels the posterior already collapses at beta=1, so the
    # 1 -> 100 step is flat up to optimizer noise
    assert kls[0] > kls[1] >= kls[2] - 1e-3
    assert kls[2] < 0.05
    assert nlls[0] < nlls[1] <= nlls[2] + 0.02


def test_zero_epochs_leaves_params_alone():
    p = init_params(8, latent_dim=4, seed=0)
    q, trace = train(p, _toy(), epochs=0)
    assert trace == []
    for a, b in zip(p.params(), q.params()):
        np.testing.assert_array_equal(a, b)


def test_toy_training_lowers_loss_and_is_seeded():
    ds = _toy()
    p0 = init_params(8, latent_dim=4, seed=0)
    noise = np.random.default_rng(1).standard_normal((len(ds), 4))
    before = vib_loss(p0, ds.arrays(), noise)
    p1, tr1 = train(p0, ds, epochs=200, lr=1e-4, seed=4)
    p2, tr2 = train(p0, ds, epochs=200, lr=1e-4, seed=4)
    assert vib_loss(p1, ds.arrays(), noise) < before
    assert tr1 == tr2
    for a, b in zip(p1.params(), p2.params()):
        assert a.tobytes() == b.tobytes()
    # the input params were not touched
    assert vib_loss(p0, ds.arrays(), noise) == before


def test_training_divergence_is_reported():
    ds = _toy()
    p = init_params(8, latent_dim=4, seed=0)
    p.decoder.biases[-1][3:] = -800.0  # log-sigma so small the residual overflows
    with pytest.raises(TrainingDiverged):
        train(p, ds, epochs=1)


def test_train_rejects_bad_inputs():
    p = init_params(8, latent_dim=4)
    with pytest.raises(ContractError):
        train(p, Dataset.empty(8), epochs=1)
    with pytest.raises(ContractError):
        train(p, _toy(k=6), epochs=1)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(8, latent_dim=4, beta=0.25, seed=3)
    p.save(tmp_path / "m.json")
    q = ModelParams.load(tmp_path / "m.json")
    assert q.beta == 0.25 and q.latent_dim == 4 and q.n_rays == 8
    for a, b in zip(p.params(), q.params()):
        assert a.tobytes() == b.tobytes()


# -- post-training behaviour ----------------------------------------------------------


def test_self_distance_near_zero_on_held_out_states(trained, small_world):
    params, _ = trained
    held = collect(small_world, 400, seed=77)
    O = np.concatenate([t.observations for t in held])
    d = predicted_distance(params, O, O)
    assert np.median(d) <= 2.0


def test_self_goals_are_feasible(trained, small_data):
    # self-goals carry the distinctive stop label, so their KL is not small;
    # what matters downstream is that they stay inside the prior's bulk
    params, _ = trained
    ds, _ = small_data
    o = ds.bank[np.random.default_rng(0).choice(len(ds.bank), 2000, replace=False)]
    assert np.mean(feasibility_score(params, o, o) > 1e-2) > 0.99


def test_self_goal_policy_barely_moves(trained, small_world):
    from recon.agent import Session, subgoal_navigate
    from recon.simworld import sample_free_pose

    params, _ = trained
    rng = np.random.default_rng(2)
    moves = []
    for seed in range(5):
        sess = Session(small_world, sample_free_pose(small_world, rng, clearance=0.6), seed=seed)
        o = sess.observe()
        start = sess.pose
        subgoal_navigate(sess, params, encode_mean(params, o, o), 10, mode="navigate")
        moves.append(math.hypot(sess.pose.x - start.x, sess.pose.y - start.y))
    # a 10-step leg at the data's mean speed covers about 2.5 m
    assert np.median(moves) < 1.5
    o = np.array([Session(small_world, sample_free_pose(small_world, rng, 0.6)).observe()
                                  for _ in range(50)])
    v = decode(params, o, encode(params, o, o).mu).action[:, 0]
    assert np.mean(v) < 0.35  # the collected actions average v = 0.5


def test_distance_grows_with_time_gap(trained, small_world):
    params, _ = trained
    held = relabel_all(collect(small_world, 600, seed=78))
    o, g, _, d = held.arrays()
    pred = predicted_distance(params, o, g)
    assert np.mean(pred[d >= 20]) > np.mean(pred[d <= 5]) + 5


def test_loss_trace_decreases(trained):
    _, trace = trained
    assert trace[-1] < trace[0]


def test_encode_mean_origin(trained):
    params, _ = trained
    o = np.full(params.n_rays, 0.5)
    lg = encode_mean(params, o, o)
    assert lg.origin == "posterior-mean" and lg.z.shape == (params.latent_dim,)
