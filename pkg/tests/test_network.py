import numpy as np
import pytest

from aginet import functional as F
from aginet.cagr import CagrConfig, count_cagr_params
from aginet.gradcheck import check_gradients
from aginet.network import (DEFAULT_MASK, STAGE_NAMES, WIDTH_PRESETS, _resblock, build_agi_net,
                            build_model, build_resunet, count_flops, count_kernel_params,
                            count_params, forward)
from aginet.tensor import ShapeError, Tensor

TINY = WIDTH_PRESETS["tiny"]
WIDE = WIDTH_PRESETS["wide"]


def test_shape_contract(rng):
    x = rng.uniform(0, 1, (2, 2, 64, 64)).astype(np.float32)
    for model in (build_resunet(TINY), build_agi_net(TINY, n=8)):
        y = forward(model, x)
        assert y.shape == (2, 1, 64, 64)
        assert np.all(np.isfinite(y.data))


def test_indivisible_size_rejected():
    with pytest.raises(ShapeError, match="divisible by 8"):
        forward(build_resunet((4, 4, 4, 4)), np.zeros((1, 2, 20, 16), np.float32))


def test_wrong_channel_count_rejected():
    with pytest.raises(ShapeError):
        forward(build_resunet((4, 4, 4, 4)), np.zeros((1, 3, 16, 16), np.float32))


@pytest.mark.parametrize("widths", [(4, 4, 4), (0, 4, 4, 4)])
def test_invalid_widths(widths):
    with pytest.raises(ValueError):
        build_resunet(widths)


def test_invalid_mask_and_net():
    with pytest.raises(ValueError):
        build_agi_net(TINY, mask=(1, 1, 1))
    with pytest.raises(ValueError):
        build_model("unet", TINY)


def test_hand_param_count_uniform_width():
    conv = lambda co, ci, k: co * ci * k * k + co  # noqa: E731
    head = conv(4, 2, 3)
    down = conv(4, 4, 3) + 4 * conv(4, 4, 3)
    body = 4 * conv(4, 4, 3)
    up = conv(4, 8, 3) + 4 * conv(4, 4, 3)
    tail = conv(1, 8, 1)
    assert head + 3 * down + body + 3 * up + tail == 5549
    assert count_params(build_resunet((4, 4, 4, 4))) == 5549


def test_hand_param_count_tiny():
    conv = lambda co, ci, k: co * ci * k * k + co  # noqa: E731
    w0, w1, w2, w3 = TINY
    total = conv(w0, 2, 3)
    for ci, co in ((w0, w1), (w1, w2), (w2, w3)):
        total += conv(co, ci, 3) + 4 * conv(co, co, 3)
    total += 4 * conv(w3, w3, 3)
    for ci, co in ((2 * w3, w2), (2 * w2, w1), (2 * w1, w0)):
        total += conv(co, ci, 3) + 4 * conv(co, co, 3)
    total += conv(1, 2 * w0, 1)
    assert count_params(build_resunet(TINY)) == total


def test_agi_param_count_from_layer_closed_form():
    res, agi = build_resunet(TINY), build_agi_net(TINY, n=4)
    extra = 0
    for st in agi.stages:
        if st.replace_first_conv:
            c = st.block_channels
            extra += 2 * (count_cagr_params(CagrConfig(cin=c, cout=c, n=4)) - (c * c * 9 + c))
    assert count_params(agi) == count_params(res) + extra


def test_zero_tail_gives_zero_output():
    model = build_resunet((4, 4, 4, 4))
    p = dict(model.params)
    p["tail.weight"] = Tensor(np.zeros_like(p["tail.weight"].data))
    p["tail.bias"] = Tensor(np.zeros_like(p["tail.bias"].data))
    y = forward(model, np.zeros((1, 2, 16, 16), np.float32), params=p)
    assert not y.data.any()


def test_resblock_with_zero_convs_is_identity(rng):
    z = Tensor(rng.standard_normal((2, 4, 6, 6)))
    p = {f"rb.conv{i}.{k}": Tensor(np.zeros((4, 4, 3, 3) if k == "weight" else 4))
         for i in (1, 2) for k in ("weight", "bias")}
    np.testing.assert_array_equal(_resblock(p, "rb", z, None).data, z.data)


def test_resblock_formula(rng):
    z = rng.standard_normal((1, 3, 5, 5))
    p = {f"rb.conv{i}.{k}": Tensor(rng.standard_normal((3, 3, 3, 3) if k == "weight" else 3))
         for i in (1, 2) for k in ("weight", "bias")}

    def conv(name, x):
        return F.conv2d(Tensor(x), p[f"rb.{name}.weight"], p[f"rb.{name}.bias"], padding=1).data

    want = z + conv("conv2", np.maximum(conv("conv1", z), 0))
    assert np.max(np.abs(_resblock(p, "rb", Tensor(z), None).data - want)) <= 1e-12


def test_all_false_mask_equals_resunet():
    agi = build_agi_net(TINY, n=8, mask=(False,) * 7)
    res = build_resunet(TINY)
    assert count_params(agi) == count_params(res)
    assert agi.params.keys() == res.params.keys()


def test_default_mask_replaces_ten_convs():
    model = build_agi_net(TINY, n=8)
    assert model.mask == DEFAULT_MASK
    cagr = {k.rsplit(".conv1.", 1)[0] for k in model.params if ".conv1.route." in k}
    assert len(cagr) == 10
    assert {c.split(".")[0] for c in cagr} == set(STAGE_NAMES[:5])


def test_params_and_flops_strictly_decrease_in_n():
    params, flops = [], []
    for n in (1, 2, 4, 8, 16):
        m = build_agi_net(WIDE, n=n)
        params.append(count_params(m))
        flops.append(count_flops(m, 256, 256))
    assert all(a > b for a, b in zip(params, params[1:]))
    assert all(a > b for a, b in zip(flops, flops[1:]))


def test_param_ratio_at_wide_widths():
    ratio = count_params(build_agi_net(WIDE, n=8)) / count_params(build_resunet(WIDE))
    assert 1.0 <= ratio < 1.2


def test_kernel_params_independent_of_n():
    for n in (1, 2, 4, 8):
        m = build_agi_net(TINY, n=n)
        for name, size in count_kernel_params(m).items():
            c = m.params[name].shape[0]
            assert size == c * c * 9


def test_single_conv_flops_formula():
    # explicit tally of every conv at uniform width 4
    m = build_resunet((4, 4, 4, 4), in_ch=2)
    h = w = 16
    f = lambda co, ci, k, s: 2 * co * ci * k * k * (h // s) * (w // s)  # noqa: E731
    total = f(4, 2, 3, 1)
    for s in (2, 4, 8):
        total += f(4, 4, 3, s) + 4 * f(4, 4, 3, s)
    total += 4 * f(4, 4, 3, 8)
    for s in (4, 2, 1):
        total += f(4, 8, 3, s) + 4 * f(4, 4, 3, s)
    total += f(1, 8, 1, 1)
    assert count_flops(m, h, w) == total


@pytest.mark.parametrize("stage", range(7))
def test_replacement_locality(stage):
    base = build_agi_net(TINY, n=4, mask=(False,) * 7)
    mask = [False] * 7
    mask[stage] = True
    one = build_agi_net(TINY, n=4, mask=mask)
    name = STAGE_NAMES[stage]
    changed = set(base.params) ^ set(one.params)
    assert changed and all(k.startswith(f"{name}.") for k in changed)
    for k in set(base.params) & set(one.params):
        if not k.startswith(f"{name}."):
            assert base.params[k].shape == one.params[k].shape


def test_forward_deterministic(rng):
    x = rng.uniform(0, 1, (2, 2, 32, 32)).astype(np.float32)
    a = forward(build_agi_net(TINY, n=8, seed=3), x).data
    b = forward(build_agi_net(TINY, n=8, seed=3), x).data
    np.testing.assert_array_equal(a, b)


def test_network_l1_gradient_sampled():
    model = build_agi_net((4, 4, 4, 4), n=2, seed=1, dtype=np.float64)
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 1, (1, 2, 16, 16))
    y = rng.uniform(0, 1, (1, 1, 16, 16))
    # move the routing heads off their init so every path is generic
    raw = {k: t.data + (0.1 * rng.standard_normal(t.shape) if ".route." in k or ".attn." in k else 0)
           for k, t in model.params.items()}
    # about 1% of the parameters, always including an offset head
    total = sum(v.size for v in raw.values())
    names = sorted(raw)
    sizes = np.array([raw[k].size for k in names])
    owner = rng.choice(len(names), size=max(1, total // 100), p=sizes / sizes.sum())
    sel = {k: int((owner == i).sum()) for i, k in enumerate(names)}
    sel["x"] = 0
    sel["Down1.rb0.conv1.route.offset_bias"] = 4

    def fn(a):
        return F.l1_loss(forward(model, a["x"], params={k: a[k] for k in raw}), Tensor(y))

    res = check_gradients(fn, {"x": x, **raw}, name="net", rtol=1e-3, coords_per_input=0,
                          select=sel, seed=5)
    assert res.checked >= total // 100
    assert res.ok, res.failures[:3]
