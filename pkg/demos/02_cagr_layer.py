"""One CAGR layer from the inside: attention, routing, rolled kernels, gradients.

Run: python demos/02_cagr_layer.py
"""

import numpy as np

from aginet import functional as F
from aginet.cagr import (CagrConfig, attention_map, cagr_forward, count_cagr_params,
                         init_cagr_params, routing_forward)
from aginet.gradcheck import cagr_instance, check_gradients, projection_loss
from aginet.tensor import Tape, Tensor, backward

rng = np.random.default_rng(0)
cfg = CagrConfig(cin=16, cout=16, k=3, n=4)
p = {k: Tensor(v) for k, v in init_cagr_params(cfg, rng).items()}
x = Tensor(rng.standard_normal((2, 16, 12, 12)).astype(np.float32))

print("parameter groups:")
for name, t in p.items():
    print(f"  {name:22s} {t.shape}")
print("total", count_cagr_params(cfg), "of which main kernel", cfg.cout * cfg.cin * 9)

# at init the layer is a scaled plain conv: A = 0.5, offsets = 0, lambda = sigmoid(1)
a = attention_map(x, p["attn.f_weight"], p["attn.f_bias"], cfg.n)
offsets, scales = routing_forward(x, p, cfg.n)
print("attention at init:", np.unique(a.data))
print("offsets at init:", offsets.data[0].tolist())
print("lambda at init:", scales.data[0].round(7).tolist())
y = cagr_forward(x, p, cfg)
ref = F.conv2d(Tensor(0.5 * x.data), Tensor(0.7310585 * p["weight"].data), p["bias"], padding=1)
print("max |CAGR - scaled conv| at init:", float(np.abs(y.data - ref.data).max()))

# the offset head still receives gradient at init
with Tape() as tape:
    loss = F.sum(F.mul(cagr_forward(x, p, cfg), Tensor(rng.standard_normal(y.shape).astype(np.float32))))
grads = backward(tape, loss)
print("|d loss / d offset_weight| at init:", float(np.abs(grads[p["route.offset_weight"]]).max()))

# forcing the routing output shows the rolled kernels at work
forced = Tensor(np.array([[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]] * 2, np.float32))
shifted = cagr_forward(x, p, cfg, offsets=forced)
print("forcing group 0 to roll one column changes the output by", float(np.abs(shifted.data - y.data).max()))

# every input and parameter against central differences (float64)
cfg_t, raw, xt = cagr_instance(seed=0)
res = check_gradients(lambda d: projection_loss(cagr_forward(d["x"], {k: d[k] for k in raw}, cfg_t)),
                      {"x": xt, **raw}, name="cagr", coords_per_input=None)
print(res.line())
