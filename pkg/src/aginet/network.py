"""ResUnet baseline and AGI-Net (ResUnet with CAGR layers).

Layout for widths ``[w0, w1, w2, w3]`` on an H x W input::

    head   conv3x3 in_ch -> w0                                   H
    Down1  2 ResBlocks(w0), stride-2 conv w0 -> w1               H   -> H/2
    Down2  2 ResBlocks(w1), stride-2 conv w1 -> w2               H/2 -> H/4
    Down3  2 ResBlocks(w2), stride-2 conv w2 -> w3               H/4 -> H/8
    Body   2 ResBlocks(w3)                                       H/8
    Up1    [Body, Down3] -> nearest 2x + conv3x3 -> w2, 2 ResBlocks(w2)
    Up2    [Up1,  Down2] -> nearest 2x + conv3x3 -> w1, 2 ResBlocks(w1)
    Up3    [Up2,  Down1] -> nearest 2x + conv3x3 -> w0, 2 ResBlocks(w0)
    tail   [Up3, head] -> conv1x1 -> 1

Brackets are channel concatenations. A ResBlock computes
``z + conv2(relu(conv1(z)))``; in AGI-Net ``conv1`` of every ResBlock in a
masked stage is a CAGR layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .cagr import CagrConfig, cagr_forward, count_cagr_flops, init_cagr_params
from .tensor import ShapeError, Tensor

STAGE_NAMES = ("Down1", "Down2", "Down3", "Body", "Up1", "Up2", "Up3")
DEFAULT_MASK = (True, True, True, True, True, False, False)
WIDTH_PRESETS = {
    "tiny": (8, 16, 32, 64),
    "desk": (32, 64, 128, 256),
    "wide": (64, 128, 256, 512),
}
BLOCKS_PER_STAGE = 2


@dataclass(frozen=True)
class StageSpec:
    name: str
    channels_in: int
    channels_out: int
    resample: str  # "down2" | "none" | "up2"
    replace_first_conv: bool

    @property
    def block_channels(self) -> int:
        # every stage resamples on entry, so its ResBlocks run at the output width
        return self.channels_out


@dataclass
class ModelGraph:
    stages: list[StageSpec]
    params: dict[str, Tensor]
    widths: tuple[int, ...]
    in_ch: int
    n: int | None = None
    net: str = "resunet"
    skips: tuple[tuple[str, str], ...] = (("Down1", "Up3"), ("Down2", "Up2"), ("Down3", "Up1"))
    extra: dict = field(default_factory=dict)

    @property
    def mask(self) -> tuple[bool, ...]:
        return tuple(s.replace_first_conv for s in self.stages)

    def config(self) -> dict:
        return {
            "net": self.net,
            "widths": list(self.widths),
            "in_ch": self.in_ch,
            "groups": self.n,
            "mask": [int(m) for m in self.mask],
        }

    def with_params(self, params: dict[str, Tensor]) -> "ModelGraph":
        return ModelGraph(self.stages, params, self.widths, self.in_ch, self.n, self.net, self.skips, self.extra)


def _stage_specs(widths, mask) -> list[StageSpec]:
    w0, w1, w2, w3 = widths
    return [
        StageSpec("Down1", w0, w1, "down2", mask[0]),
        StageSpec("Down2", w1, w2, "down2", mask[1]),
        StageSpec("Down3", w2, w3, "down2", mask[2]),
        StageSpec("Body", w3, w3, "none", mask[3]),
        StageSpec("Up1", 2 * w3, w2, "up2", mask[4]),
        StageSpec("Up2", 2 * w2, w1, "up2", mask[5]),
        StageSpec("Up3", 2 * w1, w0, "up2", mask[6]),
    ]


def _conv_init(rng, cout, cin, k, dtype):
    bound = 1.0 / np.sqrt(cin * k * k)
    return rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype), np.zeros(cout, dtype)


def _build(widths, in_ch: int, mask, n: int | None, net: str, seed: int, dtype) -> ModelGraph:
    widths = tuple(int(w) for w in widths)
    if len(widths) != 4 or any(w < 1 for w in widths):
        raise ValueError(f"widths must be 4 positive ints (stem + 3 scales), got {widths}")
    if in_ch < 1:
        raise ValueError(f"in_ch must be positive, got {in_ch}")
    stages = _stage_specs(widths, mask)
    rng = np.random.default_rng(seed)
    raw: dict[str, np.ndarray] = {}

    def conv(name, cout, cin, k):
        raw[f"{name}.weight"], raw[f"{name}.bias"] = _conv_init(rng, cout, cin, k, dtype)

    conv("head", widths[0], in_ch, 3)
    for st in stages:
        c = st.block_channels
        if st.resample != "none":
            conv(f"{st.name}.resample", st.channels_out, st.channels_in, 3)
        for j in range(BLOCKS_PER_STAGE):
            pre = f"{st.name}.rb{j}"
            if st.replace_first_conv:
                cfg = CagrConfig(cin=c, cout=c, k=3, n=n)
                for key, arr in init_cagr_params(cfg, rng, dtype).items():
                    raw[f"{pre}.conv1.{key}"] = arr
            else:
                conv(f"{pre}.conv1", c, c, 3)
            conv(f"{pre}.conv2", c, c, 3)
    conv("tail", 1, 2 * widths[0], 1)
    params = {k: Tensor(v, name=k) for k, v in raw.items()}
    return ModelGraph(stages, params, widths, in_ch, n, net)


def build_resunet(widths=WIDTH_PRESETS["tiny"], in_ch: int = 2, seed: int = 0, dtype=np.float32) -> ModelGraph:
    return _build(widths, in_ch, (False,) * 7, None, "resunet", seed, dtype)


def build_agi_net(widths=WIDTH_PRESETS["tiny"], in_ch: int = 2, n: int = 8, mask=DEFAULT_MASK,
                  seed: int = 0, dtype=np.float32) -> ModelGraph:
    mask = tuple(bool(m) for m in mask)
    if len(mask) != 7:
        raise ValueError(f"mask must have 7 entries (Down1..Up3), got {len(mask)}")
    model = _build(widths, in_ch, mask, n, "agi", seed, dtype)
    return model


def build_model(net: str, widths, in_ch: int = 2, n: int = 8, mask=DEFAULT_MASK, seed: int = 0,
                dtype=np.float32) -> ModelGraph:
    if net == "resunet":
        return build_resunet(widths, in_ch, seed, dtype)
    if net == "agi":
        return build_agi_net(widths, in_ch, n, mask, seed, dtype)
    raise ValueError(f"unknown net {net!r}; expected 'resunet' or 'agi'")


# ---------------------------------------------------------------- forward

def _conv(p, name, x, stride=1):
    w = p[f"{name}.weight"]
    k = w.shape[-1]
    return F.conv2d(x, w, p[f"{name}.bias"], stride=stride, padding=(k - 1) // 2)


def _resblock(p, pre, z, cagr_cfg: CagrConfig | None):
    if cagr_cfg is None:
        h = _conv(p, f"{pre}.conv1", z)
    else:
        sub = {k[len(pre) + 7:]: v for k, v in p.items() if k.startswith(f"{pre}.conv1.")}
        h = cagr_forward(z, sub, cagr_cfg)
    return F.add(z, _conv(p, f"{pre}.conv2", F.relu(h)))


def _run_blocks(model: ModelGraph, p, st: StageSpec, z):
    c = st.block_channels
    cfg = CagrConfig(cin=c, cout=c, k=3, n=model.n) if st.replace_first_conv else None
    for j in range(BLOCKS_PER_STAGE):
        z = _resblock(p, f"{st.name}.rb{j}", z, cfg)
    return z


def forward(model: ModelGraph, x, params: dict[str, Tensor] | None = None) -> Tensor:
    """Run the network on ``x`` of shape (N, in_ch, H, W); returns (N, 1, H, W)."""
    p = model.params if params is None else params
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 4 or x.shape[1] != model.in_ch:
        raise ShapeError(f"forward: expected (N, {model.in_ch}, H, W), got {x.shape}")
    h, w = x.shape[2:]
    if h % 8 or w % 8:
        raise ShapeError(f"forward: H={h}, W={w} must be divisible by 8")
    stages = {s.name: s for s in model.stages}
    head = _conv(p, "head", x)
    z = head
    skips = {}
    for name in ("Down1", "Down2", "Down3"):
        z = _conv(p, f"{name}.resample", z, stride=2)
        z = _run_blocks(model, p, stages[name], z)
        skips[name] = z
    z = _run_blocks(model, p, stages["Body"], z)
    for name, skip in (("Up1", "Down3"), ("Up2", "Down2"), ("Up3", "Down1")):
        z = F.concat([z, skips[skip]], axis=1)
        z = _conv(p, f"{name}.resample", F.upsample_nearest2x(z))
        z = _run_blocks(model, p, stages[name], z)
    return _conv(p, "tail", F.concat([z, head], axis=1))


# ---------------------------------------------------------------- accounting

def count_params(model: ModelGraph) -> int:
    return int(sum(t.data.size for t in model.params.values()))


def _conv_flops(cout, cin, k, ho, wo) -> int:
    return 2 * cout * cin * k * k * ho * wo


def count_flops(model: ModelGraph, h: int, w: int) -> int:
    """Per-sample FLOPs (2 x MACs) of every conv and linear layer."""
    if h % 8 or w % 8:
        raise ShapeError(f"count_flops: H={h}, W={w} must be divisible by 8")
    w0 = model.widths[0]
    total = _conv_flops(w0, model.in_ch, 3, h, w)
    # output resolution divisor of each stage (resampling happens on entry)
    size = {"Down1": 2, "Down2": 4, "Down3": 8, "Body": 8, "Up1": 4, "Up2": 2, "Up3": 1}
    for st in model.stages:
        s = size[st.name]
        hh, ww = h // s, w // s
        c = st.block_channels
        if st.resample != "none":
            total += _conv_flops(st.channels_out, st.channels_in, 3, hh, ww)
        per_block = _conv_flops(c, c, 3, hh, ww)
        if st.replace_first_conv:
            per_block += count_cagr_flops(CagrConfig(cin=c, cout=c, k=3, n=model.n), hh, ww)
        else:
            per_block += _conv_flops(c, c, 3, hh, ww)
        total += BLOCKS_PER_STAGE * per_block
    total += _conv_flops(1, 2 * w0, 1, h, w)
    return int(total)


def count_kernel_params(model: ModelGraph) -> dict[str, int]:
    """Learnable main-kernel weight counts for every ResBlock ``conv1`` (standard or rolled)."""
    return {k: t.data.size for k, t in model.params.items() if k.endswith(".conv1.weight")}
