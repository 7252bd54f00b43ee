"""Rolling a convolution kernel: integer rolls, sub-pixel rolls, and the batched gather.

Run: python demos/01_rolling_kernels.py
"""

import numpy as np

from aginet.roll import float_roll, float_roll_backward, roll_int, roll_int_batched, roll_int_loop
from aginet.train import bench_csv, bench_roll

w = np.arange(1.0, 10.0).reshape(3, 3)
print("kernel\n", w)

# sy moves rows, sx moves columns, both circularly (mod k)
print("roll rows down by one  (sx=0, sy=1)\n", roll_int(w, 0, 1))
print("roll columns right     (sx=1, sy=0)\n", roll_int(w, 1, 0))

# a fractional offset blends the four surrounding integer rolls
print("half a row (sx=0, sy=0.5)\n", float_roll(w, 0.0, 0.5))
print("total mass is preserved:", float_roll(w, 0.3, -1.7).sum(), "==", w.sum())

# the offset gradient is what lets a network learn where to roll
g = np.random.default_rng(1).standard_normal(w.shape)
_, gx, gy = float_roll_backward(g, w, 0.25, 0.5)
print(f"d<g, roll>/d(ox, oy) at (0.25, 0.5): ({gx:.3f}, {gy:.3f})")

# many slices, each with its own shift, in one call
rng = np.random.default_rng(0)
stack = rng.standard_normal((6, 2, 2, 3, 3))
shifts = rng.integers(-3, 4, size=(6, 2))
assert np.array_equal(roll_int_batched(stack, shifts), roll_int_loop(stack, shifts))
print("batched roll matches the per-slice loop on", len(stack), "slices")

print("\ntiming (ns, median of 20):")
print(bench_csv(bench_roll()))
