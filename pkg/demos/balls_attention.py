"""Bouncing balls: simulate, train VAIN briefly, look at its attention.

Run from the repository root:  python demos/balls_attention.py
"""
import numpy as np

from vain import ballsim
from vain.cli import attention_dump
from vain.experiments import ball_task
from vain.models import Model, ModelSpec
from vain.trainer import TrainConfig, train

# A small world: 8 balls in a 10 m box, 60 trajectories of 50 steps.
config = ballsim.BallConfig(n_balls=8, v0=3.0)
data = ballsim.generate_dataset(config, n_trajectories=60, steps_per_traj=50, seed=1)
train_ds, test_ds = ballsim.split_by_trajectory(data, test_fraction=0.2, seed=1)
print("frames: train", len(train_ds), "test", len(test_ds))
print("ball-ball collisions per frame:",
      round(float(np.mean((np.abs(data.deltas[..., 2:]) > 0).any(-1))), 3), "of balls")

# Baselines need no training.
for name, fn in [("VEL0", ballsim.predict_vel0), ("VEL-CONST", ballsim.predict_vel_const)]:
    print(f"{name:10s} RMS {ballsim.rms(fn(test_ds), test_ds.deltas):.4f}")

# VAIN with the unnormalized kernel, as used for balls.
spec = ModelSpec("VAIN", 4, out_dim=4, enc_hidden=(32, 32), enc_out=32, comm_dim=32,
                 dec_hidden=(32, 32), kernel="unnormalized", seed=1)
model = Model(spec)
result = train(model, ball_task(train_ds), ball_task(test_ds, id_offset=1000),
               TrainConfig(epochs=5, batch_size=32, seed=1))
print(f"{'VAIN':10s} RMS {result.metrics.best_metric:.4f} (5 epochs)")

# Attention of ball 0 over the others in the first test frame.
dump = attention_dump(model, test_ds.features()[0], np.ones(8, bool))
w = np.array(dump["w"])[0]
dist = np.hypot(*(test_ds.states[0, 1:, :2] - test_ds.states[0, 0, :2]).T)
for j in np.argsort(-w[1:])[:3] + 1:
    print(f"ball {j}: weight {w[j]:.3f}, distance {dist[j - 1]:.2f} m")
