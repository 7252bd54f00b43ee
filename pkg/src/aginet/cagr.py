"""Cross Group Attention + Group-wise Rolling convolution (CAGR).

Parameter names used inside one layer (all relative to the layer prefix):

=====================  =======================  ==============================
name                   shape                    init
=====================  =======================  ==============================
weight                 (cout, cin, k, k)        uniform(+-1/sqrt(fan_in))
bias                   (cout,)                  0
attn.f_weight          (cin, 2*cin/n, 1, 1)     0
attn.f_bias            (cin,)                   0
route.gconv_weight     (cin, cin/n, 3, 3)       uniform(+-1/sqrt(fan_in))
route.gconv_bias       (cin,)                   0
route.ln_gamma         (cin,)                   1
route.ln_beta          (cin,)                   0
route.offset_weight    (2n, cin)                0
route.offset_bias      (2n,)                    0
route.scale_weight     (n, cin)                 0
route.scale_bias       (n,)                     1
=====================  =======================  ==============================

Offset-head outputs are laid out as ``(ox_1, oy_1, ox_2, oy_2, ...)``.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import functional as F
from .roll import rolled_kernel
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class CagrConfig:
    cin: int
    cout: int
    k: int = 3
    n: int = 8
    stride: int = 1

    def __post_init__(self):
        if self.n < 1 or self.n > self.cin:
            raise ValueError(f"CagrConfig: need 1 <= n <= cin, got n={self.n}, cin={self.cin}")
        if self.cin % self.n:
            raise ValueError(f"CagrConfig: cin={self.cin} not divisible by n={self.n}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"CagrConfig: kernel size must be odd, got {self.k}")
        if self.stride < 1:
            raise ValueError(f"CagrConfig: stride must be >= 1, got {self.stride}")


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_cagr_params(cfg: CagrConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    cin, cout, k, n = cfg.cin, cfg.cout, cfg.k, cfg.n
    cg = cin // n
    return {
        "weight": _uniform(rng, (cout, cin, k, k), cin * k * k, dtype),
        "bias": np.zeros(cout, dtype),
        "attn.f_weight": np.zeros((cin, 2 * cg, 1, 1), dtype),
        "attn.f_bias": np.zeros(cin, dtype),
        "route.gconv_weight": _uniform(rng, (cin, cg, 3, 3), cg * 9, dtype),
        "route.gconv_bias": np.zeros(cin, dtype),
        "route.ln_gamma": np.ones(cin, dtype),
        "route.ln_beta": np.zeros(cin, dtype),
        "route.offset_weight": np.zeros((2 * n, cin), dtype),
        "route.offset_bias": np.zeros(2 * n, dtype),
        "route.scale_weight": np.zeros((n, cin), dtype),
        "route.scale_bias": np.ones(n, dtype),
    }


def count_cagr_params(cfg: CagrConfig) -> int:
    """Closed-form learnable scalar count of one CAGR layer."""
    cin, cout, k, n = cfg.cin, cfg.cout, cfg.k, cfg.n
    kernel = cout * cin * k * k + cout
    attn = (2 * cin // n) * (cin // n) * n + cin
    gconv = 9 * cin * cin // n + cin
    return kernel + attn + gconv + 2 * cin + (cin * 2 * n + 2 * n) + (cin * n + n)


def count_cagr_flops(cfg: CagrConfig, h: int, w: int) -> int:
    """2 x multiply-accumulates of the conv/linear parts, per sample."""
    cin, cout, k, n = cfg.cin, cfg.cout, cfg.k, cfg.n
    ho = F.conv_out_size(h, k, cfg.stride, (k - 1) // 2)
    wo = F.conv_out_size(w, k, cfg.stride, (k - 1) // 2)
    attn = 2 * cin * (2 * cin // n)
    gconv = 2 * cin * (cin // n) * 9 * h * w
    heads = 2 * cin * 3 * n
    main = 2 * cout * cin * k * k * ho * wo
    return attn + gconv + heads + main


@contextmanager
def _stage(label: str):
    try:
        yield
    except ShapeError as e:
        raise ShapeError(f"cagr.{label}: {e}") from e


def attention_map(x: Tensor, f_weight: Tensor, f_bias: Tensor, n: int) -> Tensor:
    """Per-channel attention (N, C, 1, 1) from pooled intra- and shuffled inter-group descriptors."""
    nb, c = x.shape[:2]
    if c % n:
        raise ShapeError(f"attention: C={c} not divisible by n={n}")
    cg = c // n
    z = F.global_avg_pool(x)
    zs = F.channel_shuffle(z, n)
    # per group i: [z_i, zs_i] -> 2*C/n inputs of the i-th 1x1 group conv
    pair = F.concat([F.reshape(z, (nb, n, cg)), F.reshape(zs, (nb, n, cg))], axis=2)
    pair = F.reshape(pair, (nb, 2 * c, 1, 1))
    return F.sigmoid(F.conv2d(pair, f_weight, f_bias, groups=n))


def cross_group_attention(x: Tensor, f_weight: Tensor, f_bias: Tensor, n: int) -> Tensor:
    return F.mul(x, attention_map(x, f_weight, f_bias, n))


def routing_forward(xt: Tensor, p: Mapping[str, Tensor], n: int) -> tuple[Tensor, Tensor]:
    """Predict group offsets (N, n, 2) and scale factors (N, n) from enhanced features."""
    h = F.conv2d(xt, p["route.gconv_weight"], p["route.gconv_bias"], padding=1, groups=n)
    h = F.layernorm_channels(h, p["route.ln_gamma"], p["route.ln_beta"])
    h = F.gelu(h)
    v = F.global_avg_pool(h)
    offsets = F.reshape(F.linear(v, p["route.offset_weight"], p["route.offset_bias"]), (xt.shape[0], n, 2))
    scales = F.sigmoid(F.linear(v, p["route.scale_weight"], p["route.scale_bias"]))
    return offsets, scales


def cagr_forward(x: Tensor, p: Mapping[str, Tensor], cfg: CagrConfig, *, attention: bool = True,
                 offsets: Tensor | None = None, scales: Tensor | None = None) -> Tensor:
    """Full CAGR layer.

    ``attention=False`` bypasses the attention stage; passing ``offsets`` or
    ``scales`` overrides the routing predictions (used for ablations and
    degenerate-case checks).
    """
    n = cfg.n
    with _stage("attention"):
        xt = cross_group_attention(x, p["attn.f_weight"], p["attn.f_bias"], n) if attention else x
    with _stage("routing"):
        pred_off, pred_scale = routing_forward(xt, p, n)
    offsets = pred_off if offsets is None else offsets
    scales = pred_scale if scales is None else scales
    with _stage("rolling"):
        wt = rolled_kernel(p["weight"], offsets, scales, n)
        return F.conv2d_per_sample(xt, wt, p["bias"], stride=cfg.stride, padding=(cfg.k - 1) // 2)
