import itertools

import numpy as np
import pytest
import torch

from stochtraffic.gan import (
    GanConfig,
    GanTrainer,
    TrajectoryDiscriminator,
    TrajectoryGenerator,
    collate,
    evaluate_displacement,
    generate_next_position,
    load_generator,
    random_walk_fakes,
    save_generator,
)
from stochtraffic.nn import DTYPE, grad_check, zero_parameters
from stochtraffic.trajectories import SceneWindow


def cv_windows(n, seed=0, o_l=8, p_l=8, dt=0.1, vehicles=3):
    """Constant-velocity scenes: each vehicle keeps its lane at 20-30 m/s."""
    rng = np.random.default_rng(seed)
    out = []
    t = np.arange(o_l + p_l) * dt
    for k in range(n):
        v = rng.uniform(20, 30, size=vehicles)
        x0 = rng.uniform(0, 300, size=vehicles)
        y = rng.integers(0, 3, size=vehicles) * 3.5 + 1.75
        xy = np.stack([x0[:, None] + v[:, None] * t, np.broadcast_to(y[:, None], (vehicles, t.size))], axis=-1)
        out.append(SceneWindow(list(range(vehicles)), xy[:, :o_l].copy(), xy[:, o_l:].copy(), dt, k))
    return out


def test_output_shapes(untrained_generator):
    obs = torch.randn(5, 8, 2, dtype=DTYPE)
    z = untrained_generator.sample_z(5, torch.Generator().manual_seed(0))
    assert untrained_generator(obs, z).shape == (5, 8, 2)
    assert untrained_generator.embed_position(torch.zeros(3, 2, dtype=DTYPE)).shape == (3, 64)
    assert untrained_generator(obs, z, steps=1).shape == (5, 1, 2)


def test_zero_weights_predict_last_position():
    gen = zero_parameters(TrajectoryGenerator(GanConfig()))
    obs = torch.randn(3, 8, 2, dtype=DTYPE)
    pred = gen(obs, torch.randn(3, 8, dtype=DTYPE))
    assert torch.equal(pred, obs[:, -1:].expand(3, 8, 2))


def test_pool_permutation_invariance(untrained_generator):
    g = untrained_generator
    h = torch.randn(4, g.cfg.hidden, dtype=DTYPE)
    p = torch.randn(4, 2, dtype=DTYPE) * 30
    base = g.social_pool(h, p)
    for perm in itertools.permutations(range(4)):
        perm = list(perm)
        assert torch.allclose(g.social_pool(h[perm], p[perm]), base[perm], rtol=0, atol=1e-12)


def test_pool_brute_force(untrained_generator):
    g = untrained_generator
    h = torch.randn(3, g.cfg.hidden, dtype=DTYPE)
    p = torch.randn(3, 2, dtype=DTYPE) * 10
    pooled = g.social_pool(h, p)
    for i in range(3):
        contribs = [g.pool_mlp(torch.cat([(p[j] - p[i]) * g.cfg.rel_scale, h[j]])) for j in range(3) if j != i]
        assert torch.allclose(pooled[i], torch.stack(contribs).max(dim=0).values, rtol=0, atol=1e-12)


def test_pool_single_vehicle_placeholder(untrained_generator):
    g = untrained_generator
    out = g.social_pool(torch.randn(1, g.cfg.hidden, dtype=DTYPE), torch.zeros(1, 2, dtype=DTYPE))
    assert torch.equal(out[0], g.placeholder)
    assert torch.isfinite(g(torch.randn(1, 8, 2, dtype=DTYPE), torch.zeros(1, 8, dtype=DTYPE))).all()


def test_scenes_do_not_interact(untrained_generator):
    g = untrained_generator
    obs = torch.randn(5, 8, 2, dtype=DTYPE)
    z = torch.randn(5, 8, dtype=DTYPE)
    joint = g(obs, z, [(0, 2), (2, 5)])
    assert torch.allclose(joint[:2], g(obs[:2], z[:2]), rtol=0, atol=1e-12)
    assert torch.allclose(joint[2:], g(obs[2:], z[2:]), rtol=0, atol=1e-12)


def test_translation_covariance(untrained_generator):
    obs = torch.randn(4, 8, 2, dtype=DTYPE) * 20
    z = torch.randn(4, 8, dtype=DTYPE)
    shift = torch.tensor([123.4, -5.6], dtype=DTYPE)
    a = untrained_generator(obs, z)
    b = untrained_generator(obs + shift, z)
    assert torch.allclose(b, a + shift, rtol=0, atol=1e-9)


def test_discriminator_range():
    d = TrajectoryDiscriminator(GanConfig())
    out = d(torch.randn(6, 16, 2, dtype=DTYPE) * 100)
    assert out.shape == (6,) and torch.all((out >= 0) & (out <= 1))


def test_mini_model_grad_check():
    torch.manual_seed(0)
    cfg = GanConfig(o_l=2, p_l=2, s_mlp=6, hidden=5, pool_dim=5, z_dim=2)
    gen, disc = TrajectoryGenerator(cfg), TrajectoryDiscriminator(cfg)
    obs = torch.randn(2, 2, 2, dtype=DTYPE)
    fut = torch.randn(2, 2, 2, dtype=DTYPE)
    z = torch.randn(2, 2, dtype=DTYPE)

    def loss():
        pred = gen(obs, z)
        logit = disc.logits(torch.cat([obs, pred], dim=1))
        return torch.nn.functional.softplus(-logit).mean() + ((pred - fut) ** 2).sum(-1).mean()

    rep = grad_check(loss, list(gen.parameters()) + list(disc.parameters()), tolerance=1e-4)
    assert rep.passed, rep


def test_variety_loss_decreases():
    cfg = GanConfig(lambda_adv=0.0, k_v=1)
    windows = cv_windows(64)
    tr = GanTrainer(cfg, seed=0)
    losses = [tr.train_step(tr.sample_batch(windows))["loss_g"] for _ in range(100)]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_losses_finite_long_run():
    cfg = GanConfig(s_mlp=16, hidden=16, pool_dim=16)
    windows = cv_windows(64, seed=1)
    tr = GanTrainer(cfg, seed=1)
    for _ in range(1000):
        m = tr.train_step(tr.sample_batch(windows))
        assert np.isfinite([m["loss_g"], m["loss_d"], m["ade"], m["fde"]]).all()


def test_discriminator_separates_random_walks():
    tr = GanTrainer(GanConfig(), seed=0)
    windows = cv_windows(64, seed=2)
    noise = torch.Generator().manual_seed(0)
    acc = 0.0
    for step in range(500):
        obs, fut, _ = collate(tr.sample_batch(windows))
        _, acc = tr.discriminator_step(obs, fut, random_walk_fakes(obs, 8, 2.0, noise))
        if step >= 20 and acc > 0.9:
            break
    assert acc > 0.9


def test_training_deterministic():
    windows = cv_windows(16)

    def run():
        tr = GanTrainer(GanConfig(), seed=3)
        return [tr.train_step(tr.sample_batch(windows)) for _ in range(5)]

    assert run() == run()


def test_checkpoint_resume_matches_straight_run(tmp_path):
    windows = cv_windows(16)
    straight = GanTrainer(GanConfig(), seed=4)
    ref = [straight.train_step(straight.sample_batch(windows)) for _ in range(6)]
    first = GanTrainer(GanConfig(), seed=4)
    for _ in range(3):
        first.train_step(first.sample_batch(windows))
    first.save_checkpoint(tmp_path / "c.tgsm")
    second = GanTrainer(GanConfig(), seed=99)
    second.load_checkpoint(tmp_path / "c.tgsm")
    resumed = [second.train_step(second.sample_batch(windows)) for _ in range(3)]
    assert resumed == ref[3:]


def test_generator_save_load(tmp_path, untrained_generator):
    save_generator(tmp_path / "g.tgsm", untrained_generator)
    back = load_generator(tmp_path / "g.tgsm")
    obs = torch.randn(3, 8, 2, dtype=DTYPE)
    z = torch.randn(3, 8, dtype=DTYPE)
    assert torch.equal(back(obs, z), untrained_generator(obs, z))


@pytest.fixture(scope="module")
def cv_generator():
    cfg = GanConfig(lambda_adv=0.0, k_v=1)
    windows = cv_windows(256, seed=5)
    tr = GanTrainer(cfg, seed=5)
    for _ in range(400):
        tr.train_step(tr.sample_batch(windows))
    return tr.gen.eval()


def test_cv_training_improves_heldout(cv_generator):
    held = cv_windows(32, seed=6)
    torch.manual_seed(5)
    ade_trained, _ = evaluate_displacement(cv_generator, held)
    ade_untrained, _ = evaluate_displacement(TrajectoryGenerator(cv_generator.cfg), held)
    assert ade_trained < 0.5 * ade_untrained


def test_next_position_constant_velocity(cv_generator):
    t = np.arange(8) * 0.1
    hist = np.stack([np.column_stack([100 + 20 * t, np.full(8, 5.25)]),
                     np.column_stack([160 + 20 * t, np.full(8, 1.75)])])
    nxt = generate_next_position(cv_generator, hist, z=torch.zeros(2, 8, dtype=DTYPE))
    step = nxt - hist[:, -1]
    assert np.all(np.abs(step[:, 0] - 2.0) <= 0.5)
    assert np.all(np.abs(step[:, 1]) <= 0.5)


def test_next_position_deterministic_and_single(untrained_generator):
    hist = np.random.default_rng(0).normal(size=(3, 8, 2))
    a = generate_next_position(untrained_generator, hist, generator=torch.Generator().manual_seed(1))
    b = generate_next_position(untrained_generator, hist, generator=torch.Generator().manual_seed(1))
    assert np.array_equal(a, b) and a.shape == (3, 2)
    one = generate_next_position(untrained_generator, hist[:1, :3], generator=torch.Generator().manual_seed(1))
    assert one.shape == (1, 2) and np.isfinite(one).all()
