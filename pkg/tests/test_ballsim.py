import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vain.ballsim import (PAPER_CONFIG, BallConfig, BallWorld, generate_dataset, init_world,
                          predict_vel0, predict_vel_const, read_dataset, rms, rollout,
                          split_by_trajectory, step, write_dataset)


def world(positions, velocities, **kw):
    cfg = BallConfig(n_balls=len(positions), **kw)
    return BallWorld(cfg, np.array(positions, float), np.array(velocities, float))


class TestConfig:
    def test_overpacked_rejected(self):
        with pytest.raises(ValueError):
            BallConfig(box_size=1.0, radius=0.4, n_balls=3).validate()

    def test_paper_config(self):
        assert PAPER_CONFIG.n_balls == 50 and PAPER_CONFIG.v0 == 3.0
        init_world(PAPER_CONFIG, 0)


class TestInit:
    def test_single_ball(self):
        w = init_world(BallConfig(n_balls=1), 3)
        r, L = w.config.radius, w.config.box_size
        assert ((w.positions >= r) & (w.positions <= L - r)).all()
        assert (np.abs(w.velocities) <= w.config.v0).all()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 20))
    def test_no_overlap(self, seed, n):
        w = init_world(BallConfig(n_balls=n), seed)
        d = np.hypot(*(w.positions[:, None] - w.positions[None]).transpose(2, 0, 1))
        np.fill_diagonal(d, np.inf)
        assert (d >= 2 * w.config.radius).all()

    def test_velocity_mean(self):
        # mean of uniform[-v0, v0] is 0; standard error of the mean over 40k draws ~ 0.0087
        v = np.concatenate([init_world(BallConfig(n_balls=20), s).velocities for s in range(1000)])
        assert np.abs(v.mean(axis=0)).max() < 5 * 3.0 / np.sqrt(3 * v.shape[0])
        assert v.std() == pytest.approx(3.0 / np.sqrt(3), rel=0.02)

    def test_deterministic(self):
        a, b = init_world(BallConfig(), 11), init_world(BallConfig(), 11)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.velocities, b.velocities)


class TestStep:
    def test_free_flight(self):
        w = world([[5.0, 5.0]], [[1.0, -2.0]])
        nxt = step(w)
        np.testing.assert_allclose(nxt.positions, [[5.1, 4.8]])
        np.testing.assert_array_equal(nxt.velocities, w.velocities)

    def test_head_on_exchange(self):
        w = world([[4.8, 5.0], [5.2, 5.0]], [[1.0, 0.0], [-2.0, 0.0]])
        nxt = step(w)
        np.testing.assert_allclose(nxt.velocities, [[-2.0, 0.0], [1.0, 0.0]], atol=1e-15)
        assert nxt.ball_hits == 1

    def test_wall(self):
        w = world([[9.7, 5.0]], [[2.0, 1.5]])
        nxt = step(w)
        np.testing.assert_array_equal(nxt.velocities, [[-2.0, 1.5]])
        assert nxt.positions[0, 0] <= 10 - 0.25
        assert nxt.wall_hits == 1

    def test_receding_overlap_keeps_velocity(self):
        w = world([[4.9, 5.0], [5.2, 5.0]], [[-1.0, 0.0], [1.0, 0.0]])
        nxt = step(w)
        np.testing.assert_array_equal(nxt.velocities, w.velocities)

    def test_glancing_collision_conserves(self):
        w = world([[4.8, 5.0], [5.2, 5.2]], [[2.0, 0.5], [-1.0, -0.3]])
        nxt = step(w)
        assert nxt.ball_hits == 1
        assert nxt.kinetic_energy() == pytest.approx(w.kinetic_energy(), rel=1e-12)
        np.testing.assert_allclose(nxt.momentum(), w.momentum(), atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariants_along_rollout(self, seed):
        w = init_world(BallConfig(n_balls=10), seed)
        e0 = w.kinetic_energy()
        r, L = w.config.radius, w.config.box_size
        for _ in range(50):
            w = step(w)
            assert ((w.positions >= r) & (w.positions <= L - r)).all()
            # wall reflections flip sign only, ball collisions conserve energy
            assert w.kinetic_energy() == pytest.approx(e0, rel=1e-9)

    def test_time_reversal(self):
        # free flight plus wall reflection is exactly reversible
        w = world([[9.5, 1.0]], [[2.0, 1.0]])
        fwd = step(step(w))
        back = BallWorld(fwd.config, fwd.positions.copy(), -fwd.velocities)
        back = step(step(back))
        np.testing.assert_allclose(back.positions, w.positions, atol=1e-12)
        np.testing.assert_allclose(-back.velocities, w.velocities, atol=1e-12)

    def test_step_does_not_mutate(self):
        w = init_world(BallConfig(), 0)
        p = w.positions.copy()
        step(w)
        np.testing.assert_array_equal(w.positions, p)


class TestDataset:
    def test_free_flight_targets(self):
        w = world([[5.0, 5.0]], [[1.0, 0.5]])
        s, d = rollout(w, 3)
        np.testing.assert_allclose(d[:, 0, :2], [[0.1, 0.05]] * 3)
        assert not d[:, 0, 2:].any()

    def test_replay_consistency(self):
        ds = generate_dataset(BallConfig(), 2, 30, seed=5)
        for k in range(len(ds) - 1):
            if ds.traj[k] == ds.traj[k + 1]:
                np.testing.assert_allclose(ds.states[k] + ds.deltas[k], ds.states[k + 1], atol=1e-12)

    def test_deterministic_and_seeded(self):
        a = generate_dataset(BallConfig(), 3, 10, seed=1)
        b = generate_dataset(BallConfig(), 3, 10, seed=1)
        c = generate_dataset(BallConfig(), 3, 10, seed=2)
        np.testing.assert_array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)

    def test_split_disjoint(self):
        ds = generate_dataset(BallConfig(), 10, 5, seed=0)
        tr, te = split_by_trajectory(ds, 0.2)
        assert not set(tr.traj) & set(te.traj)
        assert len(tr) + len(te) == len(ds) and len(set(te.traj)) == 2

    def test_baselines(self):
        ds = generate_dataset(BallConfig(n_balls=1), 1, 20, seed=0)
        free = ~(np.abs(ds.deltas[:, 0, 2:]) > 0).any(axis=1)
        vc = predict_vel_const(ds)
        np.testing.assert_allclose(vc[free], ds.deltas[free], atol=1e-12)
        assert rms(predict_vel0(ds), ds.deltas) >= rms(vc, ds.deltas)

    def test_file_roundtrip(self, tmp_path):
        ds = generate_dataset(BallConfig(n_balls=3), 2, 4, seed=9)
        path = tmp_path / "balls.ndjson"
        write_dataset(ds, path)
        back = read_dataset(path)
        np.testing.assert_array_equal(back.states, ds.states)
        np.testing.assert_array_equal(back.deltas, ds.deltas)
        np.testing.assert_array_equal(back.traj, ds.traj)
        assert back.config == ds.config and back.seed == 9

    def test_read_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x.ndjson"
        p.write_text('{"format": "other"}\n')
        with pytest.raises(ValueError):
            read_dataset(p)
