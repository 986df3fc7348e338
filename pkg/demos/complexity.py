"""Encoder-evaluation counts: VAIN and CommNet are linear in agents, IN quadratic.

Run from the repository root:  python demos/complexity.py
"""
import numpy as np

from vain.models import Model, ModelSpec, count_encoder_evals, multiply_adds

rng = np.random.default_rng(0)
print(f"{'n':>4} {'arch':8} {'comm evals':>10} {'pair evals':>10} {'mult-adds':>12}")
for n in (2, 8, 32):
    x = rng.normal(size=(1, n, 4))
    for arch in ("VAIN", "COMMNET", "IN"):
        spec = ModelSpec(arch, 4, out_dim=4)
        m = Model(spec)
        m.forward(x)                      # counters are instrumented inside forward
        assert (m.counters["comm_evals"], m.counters["pair_evals"]) == count_encoder_evals(arch, n)
        print(f"{n:4d} {arch:8} {m.counters['comm_evals']:10d} {m.counters['pair_evals']:10d} "
              f"{multiply_adds(spec, n):12d}")
