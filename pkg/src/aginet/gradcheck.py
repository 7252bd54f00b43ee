"""Central finite-difference checks of tape gradients.

A check passes at a coordinate when ``|analytic - numeric| <= max(rtol *
max(|analytic|, |numeric|), floor)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import functional as F
from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    checked: int = 0
    failures: list[tuple[str, tuple, float, float]] = field(default_factory=list)
    max_rel: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.failures

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.checked} coords, max rel err {self.max_rel:.2e}"


def projection_loss(out: Tensor, seed: int = 0) -> Tensor:
    """``sum(out * R)`` with a fixed random R, so every output element matters."""
    r = np.random.default_rng(seed).standard_normal(out.shape).astype(out.dtype)
    return F.sum(F.mul(out, Tensor(r)))


def check_gradients(fn: Callable[[dict[str, Tensor]], Tensor], inputs: Mapping[str, np.ndarray], *,
                    name: str = "check", h: float = 1e-5, rtol: float = 1e-4, floor: float = 1e-7,
                    coords_per_input: int | None = 20, select: Mapping[str, int] | None = None,
                    seed: int = 0) -> GradCheckResult:
    """Compare tape gradients of scalar ``fn`` against central differences.

    ``coords_per_input`` random coordinates are probed per input (``None`` =
    every coordinate); ``select`` overrides the count per input name.
    """
    rng = np.random.default_rng(seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    leaves = {k: Tensor(v, name=k) for k, v in base.items()}
    with Tape() as tape:
        loss = fn(leaves)
    grads = backward(tape, loss)
    res = GradCheckResult(name)
    for key, arr in base.items():
        analytic = grads[leaves[key]]
        count = (select or {}).get(key, coords_per_input)
        flat_idx = np.arange(arr.size) if count is None or count >= arr.size else rng.choice(arr.size, count, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            num = _central(fn, base, key, idx, h)
            a = float(analytic[idx])
            err = abs(a - num)
            scale = max(abs(a), abs(num))
            res.checked += 1
            res.max_rel = max(res.max_rel, err / max(scale, floor / rtol))
            if err > max(rtol * scale, floor):
                res.failures.append((key, tuple(int(i) for i in idx), a, num))
    return res


def _central(fn, base, key, idx, h) -> float:
    vals = []
    for sign in (1.0, -1.0):
        arr = base[key].copy()
        arr[idx] += sign * h
        args = {k: Tensor(arr if k == key else v) for k, v in base.items()}
        vals.append(float(fn(args).data))
    return (vals[0] - vals[1]) / (2 * h)


def forward_difference(fn, inputs: Mapping[str, np.ndarray], key: str, idx, h: float = 1e-6) -> float:
    """One-sided (right) difference; used where the right derivative is the contract."""
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    f0 = float(fn({k: Tensor(v) for k, v in base.items()}).data)
    arr = base[key].copy()
    arr[idx] += h
    f1 = float(fn({k: Tensor(arr if k == key else v) for k, v in base.items()}).data)
    return (f1 - f0) / h


# ---------------------------------------------------------------- suites

def _primitive_suite(seed: int, points: int) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    x4 = rng.standard_normal((2, 4, 5, 5))
    out = []
    cases = {
        "relu": (lambda p: projection_loss(F.relu(p["x"])), {"x": x4}),
        "gelu": (lambda p: projection_loss(F.gelu(p["x"])), {"x": x4}),
        "sigmoid": (lambda p: projection_loss(F.sigmoid(p["x"])), {"x": x4}),
        "mul_broadcast": (lambda p: projection_loss(F.mul(p["x"], p["a"])),
                          {"x": x4, "a": rng.standard_normal((2, 4, 1, 1))}),
        "add_sub_scale": (lambda p: projection_loss(F.scale(F.sub(F.add(p["x"], p["y"]), p["x"]), 1.7)),
                          {"x": x4, "y": rng.standard_normal(x4.shape)}),
        "layernorm_channels": (lambda p: projection_loss(F.layernorm_channels(p["x"], p["g"], p["b"])),
                               {"x": x4, "g": rng.standard_normal(4), "b": rng.standard_normal(4)}),
        "global_avg_pool": (lambda p: projection_loss(F.global_avg_pool(p["x"])), {"x": x4}),
        "linear": (lambda p: projection_loss(F.linear(p["x"], p["w"], p["b"])),
                   {"x": rng.standard_normal((3, 5)), "w": rng.standard_normal((4, 5)), "b": rng.standard_normal(4)}),
        "conv2d": (lambda p: projection_loss(F.conv2d(p["x"], p["w"], p["b"], stride=2, padding=1)),
                   {"x": x4, "w": rng.standard_normal((3, 4, 3, 3)), "b": rng.standard_normal(3)}),
        "conv2d_groups": (lambda p: projection_loss(F.conv2d(p["x"], p["w"], p["b"], padding=1, groups=2)),
                          {"x": x4, "w": rng.standard_normal((4, 2, 3, 3)), "b": rng.standard_normal(4)}),
        "conv2d_per_sample": (lambda p: projection_loss(F.conv2d_per_sample(p["x"], p["w"], p["b"], padding=1)),
                              {"x": x4, "w": rng.standard_normal((2, 3, 4, 3, 3)), "b": rng.standard_normal(3)}),
        "channel_shuffle": (lambda p: projection_loss(F.channel_shuffle(p["x"], 2)), {"x": x4}),
        "concat_reshape": (lambda p: projection_loss(F.reshape(F.concat([p["x"], p["x"]], axis=1), (2, -1))),
                           {"x": x4}),
        "upsample_nearest2x": (lambda p: projection_loss(F.upsample_nearest2x(p["x"])), {"x": x4}),
        "l1_loss": (lambda p: F.l1_loss(p["x"], p["y"]), {"x": x4, "y": rng.standard_normal(x4.shape)}),
    }
    for name, (fn, inputs) in cases.items():
        out.append(check_gradients(fn, inputs, name=name, coords_per_input=points, seed=seed))
    return out


def _roll_suite(seed: int, points: int) -> list[GradCheckResult]:
    from .roll import rolled_kernel

    rng = np.random.default_rng(seed)
    n, nb = 2, 3
    off = rng.uniform(-4, 4, size=(nb, n, 2))
    # keep offsets away from integers, where floor jumps
    off = np.floor(off) + rng.uniform(0.1, 0.9, size=off.shape)
    inputs = {"w": rng.standard_normal((3, 4, 3, 3)), "off": off, "lam": rng.uniform(0.1, 0.9, (nb, n))}
    fn = lambda p: projection_loss(rolled_kernel(p["w"], p["off"], p["lam"], n))  # noqa: E731
    return [check_gradients(fn, inputs, name="rolled_kernel", h=1e-6, rtol=1e-6, floor=1e-9,
                            coords_per_input=points, seed=seed)]


def randomize_cagr(p: dict[str, np.ndarray], rng, scale: float = 0.5) -> dict[str, np.ndarray]:
    """Generic (non-init) parameters so offsets are non-integer and nothing sits on a kink."""
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in p.items()}


def cagr_instance(seed: int = 0, generic: bool = True):
    """Tiny CAGR layer: N=2, Cin=4, Cout=3, H=W=6, k=3, n=2, float64."""
    from .cagr import CagrConfig, init_cagr_params

    rng = np.random.default_rng(seed)
    cfg = CagrConfig(cin=4, cout=3, k=3, n=2)
    p = init_cagr_params(cfg, rng, dtype=np.float64)
    if generic:
        p = randomize_cagr(p, rng)
    x = rng.standard_normal((2, 4, 6, 6))
    return cfg, p, x


def _cagr_suite(seed: int, points: int | None) -> list[GradCheckResult]:
    from .cagr import cagr_forward

    cfg, p, x = cagr_instance(seed)

    def fn(a):
        return projection_loss(cagr_forward(a["x"], {k: a[k] for k in p}, cfg), seed=seed + 1)

    return [check_gradients(fn, {"x": x, **p}, name="cagr_forward", coords_per_input=points, seed=seed)]


def _network_suite(seed: int, fraction: float) -> list[GradCheckResult]:
    from .network import build_agi_net, forward

    rng = np.random.default_rng(seed)
    model = build_agi_net((4, 4, 4, 4), in_ch=2, n=2, seed=seed, dtype=np.float64)
    params = {k: t.data + 0.3 * rng.standard_normal(t.shape) for k, t in model.params.items()}
    x = rng.uniform(0, 1, (1, 2, 16, 16))
    y = rng.uniform(0, 1, (1, 1, 16, 16))
    total = sum(v.size for v in params.values())
    picks = max(1, int(round(total * fraction)))
    names = list(params)
    sizes = np.array([params[k].size for k in names])
    owner = rng.choice(len(names), size=picks, p=sizes / sizes.sum())
    select = {k: int((owner == i).sum()) for i, k in enumerate(names)}
    select["x"] = 0

    def fn(a):
        return F.l1_loss(forward(model, a["x"], {k: a[k] for k in params}), Tensor(y))

    return [check_gradients(fn, {"x": x, **params}, name="network_l1", rtol=1e-3, coords_per_input=0,
                            select=select, seed=seed)]


def run_suites(full: bool = False, seed: int = 0) -> list[GradCheckResult]:
    """All finite-difference suites; ``full`` probes more coordinates."""
    points = 40 if full else 20
    results = _primitive_suite(seed, points)
    results += _roll_suite(seed, points)
    results += _cagr_suite(seed, None if full else 12)
    results += _network_suite(seed, 0.01 if full else 0.002)
    return results
