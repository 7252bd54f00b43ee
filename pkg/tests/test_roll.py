import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aginet.roll import (assemble_rolled_kernel, float_roll, float_roll_backward, roll_int,
                         roll_int_batched, roll_int_loop, rolled_kernel, split_groups)
from aginet.tensor import ShapeError, Tape, Tensor, backward

from oracles import float_roll_terms, roll_loops

W3 = np.arange(1.0, 10.0).reshape(3, 3)


def test_roll_int_rows_down():
    np.testing.assert_array_equal(roll_int(W3, 0, 1), [[7, 8, 9], [1, 2, 3], [4, 5, 6]])


def test_roll_int_negative():
    np.testing.assert_array_equal(roll_int(W3, 0, -1), [[4, 5, 6], [7, 8, 9], [1, 2, 3]])


def test_roll_int_columns_right():
    np.testing.assert_array_equal(roll_int(W3, 1, 0), [[3, 1, 2], [6, 4, 5], [9, 7, 8]])


@pytest.mark.parametrize("s", [(0, 0), (3, 3), (-3, 6)])
def test_roll_int_periodic(s):
    np.testing.assert_array_equal(roll_int(W3, *s), W3)


def test_roll_int_matches_index_definition(rng):
    w = rng.standard_normal((2, 3, 5, 5))
    for sx, sy in [(1, 2), (-4, 3), (7, -1)]:
        np.testing.assert_array_equal(roll_int(w, sx, sy), roll_loops(w, sx, sy))


# ---------------------------------------------------------------- batched

def test_batched_zero_shift_identity(rng):
    w = rng.standard_normal((6, 4, 2, 3, 3))
    np.testing.assert_array_equal(roll_int_batched(w, np.zeros((6, 2), int)), w)


def test_batched_slice_independence(rng):
    w = rng.standard_normal((5, 2, 2, 3, 3))
    shifts = np.zeros((5, 2), int)
    shifts[2] = (1, 2)
    out = roll_int_batched(w, shifts)
    for s in range(5):
        if s == 2:
            assert not np.array_equal(out[s], w[s])
        else:
            np.testing.assert_array_equal(out[s], w[s])


def test_batched_vs_loop(rng):
    for k in (1, 3, 5):
        w = rng.standard_normal((40, 3, 2, k, k))
        shifts = rng.integers(-2 * k, 2 * k + 1, size=(40, 2))
        out = roll_int_batched(w, shifts)
        np.testing.assert_array_equal(out, roll_int_loop(w, shifts))
        np.testing.assert_array_equal(out, np.stack([roll_loops(w[i], *shifts[i]) for i in range(40)]))


def test_batched_shift_count_mismatch(rng):
    with pytest.raises(ShapeError):
        roll_int_batched(rng.standard_normal((4, 1, 1, 3, 3)), np.zeros((3, 2), int))


# ---------------------------------------------------------------- float_roll

def test_float_roll_integer_collapse(rng):
    w = rng.standard_normal((2, 3, 3, 3))
    for ox, oy in [(0, 0), (2, -1), (-5, 7)]:
        np.testing.assert_array_equal(float_roll(w, ox, oy), roll_int(w, ox, oy))


def test_float_roll_half_row():
    np.testing.assert_allclose(float_roll(W3, 0.0, 0.5),
                               [[4, 5, 6], [2.5, 3.5, 4.5], [5.5, 6.5, 7.5]], atol=1e-15)


def test_float_roll_vs_term_oracle(rng):
    worst = 0.0
    for _ in range(200):
        k = int(rng.choice([1, 3, 5]))
        w = rng.standard_normal((2, 2, k, k))
        ox, oy = rng.uniform(-7, 7, 2)
        worst = max(worst, np.max(np.abs(float_roll(w, ox, oy) - float_roll_terms(w, ox, oy))))
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.integers(0, 2**31))
def test_float_roll_periodic(ox, oy, seed):
    w = np.random.default_rng(seed).standard_normal((2, 3, 3))
    assert np.max(np.abs(float_roll(w, ox + 3, oy) - float_roll(w, ox, oy))) <= 1e-12
    assert np.max(np.abs(float_roll(w, ox, oy - 3) - float_roll(w, ox, oy))) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20), st.integers(0, 2**31))
def test_float_roll_conserves_mass(ox, oy, seed):
    w = np.random.default_rng(seed).standard_normal((3, 3))
    assert abs(float_roll(w, ox, oy).sum() - w.sum()) <= 1e-12


@pytest.mark.parametrize("eps", [1e-3, 1e-6])
def test_float_roll_continuous_at_integer(rng, eps):
    w = rng.standard_normal((2, 3, 3))
    oy = 0.37
    diff = np.max(np.abs(float_roll(w, 1 - eps, oy) - float_roll(w, 1.0, oy)))
    assert diff <= 4 * eps * np.max(np.abs(w))


def test_float_roll_bilinear_within_cell(rng):
    w = rng.standard_normal((2, 3, 3))
    base = (1.0, -2.0)
    for t in rng.uniform(0, 1, 5):
        for axis in (0, 1):
            def at(s):
                o = list(base)
                o[axis] += s
                return float_roll(w, *o)
            # exactly affine along each axis inside the unit cell
            mid = at(0.0) * (1 - t) + at(0.999999) * t
            assert np.max(np.abs(at(0.999999 * t) - mid)) <= 1e-12


# ---------------------------------------------------------------- backward

def test_backward_zero_grad(rng):
    w = rng.standard_normal((2, 3, 3))
    gw, gx, gy = float_roll_backward(np.zeros_like(w), w, 0.3, -1.7)
    assert not gw.any() and gx == 0 and gy == 0


def test_backward_integer_is_inverse_roll(rng):
    w = rng.standard_normal((2, 3, 3))
    g = rng.standard_normal(w.shape)
    gw, _, _ = float_roll_backward(g, w, 2.0, -1.0)
    np.testing.assert_array_equal(gw, roll_int(g, -2, 1))


def _fd(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_backward_vs_finite_differences(rng):
    h = 1e-6
    for _ in range(20):
        w = rng.standard_normal((2, 3, 3))
        g = rng.standard_normal(w.shape)
        ox = np.floor(rng.uniform(-4, 4)) + rng.uniform(0.05, 0.95)
        oy = np.floor(rng.uniform(-4, 4)) + rng.uniform(0.05, 0.95)
        gw, gx, gy = float_roll_backward(g, w, ox, oy)
        loss = lambda a, b, ww=w: np.sum(g * float_roll(ww, a, b))  # noqa: E731
        nx = _fd(lambda a: loss(a, oy), ox, h)
        ny = _fd(lambda b: loss(ox, b), oy, h)
        assert abs(gx - nx) <= 1e-6 * max(1.0, abs(nx))
        assert abs(gy - ny) <= 1e-6 * max(1.0, abs(ny))
        # float_roll is linear in w, so the adjoint is exact: <g, R(e_i)> for each basis e_i
        nw = np.zeros_like(w)
        for i in np.ndindex(w.shape):
            e = np.zeros_like(w)
            e[i] = 1.0
            nw[i] = np.sum(g * float_roll(e, ox, oy))
        assert np.max(np.abs(gw - nw)) <= 1e-12


def test_backward_right_derivative_at_integer(rng):
    w = rng.standard_normal((3, 3))
    g = rng.standard_normal(w.shape)
    _, gx, _ = float_roll_backward(g, w, 1.0, 0.0)
    right = (np.sum(g * float_roll(w, 1.0 + 1e-7, 0.0)) - np.sum(g * float_roll(w, 1.0, 0.0))) / 1e-7
    assert abs(gx - right) <= 1e-5


# ---------------------------------------------------------------- assembly

def test_assemble_identity_and_zero(rng):
    w = rng.standard_normal((4, 6, 3, 3))
    groups = [float_roll(g, 0.0, 0.0) for g in split_groups(w, 3)]
    np.testing.assert_array_equal(assemble_rolled_kernel(groups, np.ones(3)), w)
    assert not assemble_rolled_kernel(groups, np.zeros(3)).any()


def test_assemble_group_mismatch(rng):
    with pytest.raises(ShapeError):
        assemble_rolled_kernel([np.ones((2, 1, 3, 3)), np.ones((2, 2, 3, 3))], [1, 1])


def test_rolled_kernel_matches_per_group_float_roll(rng):
    w = rng.standard_normal((3, 4, 3, 3))
    off = rng.uniform(-5, 5, (2, 2, 2))
    lam = rng.uniform(0, 1, (2, 2))
    got = rolled_kernel(Tensor(w), Tensor(off), Tensor(lam), 2).data
    for s in range(2):
        groups = [float_roll(g, *off[s, i]) for i, g in enumerate(split_groups(w, 2))]
        assert np.max(np.abs(got[s] - assemble_rolled_kernel(groups, lam[s]))) <= 1e-12


def test_scale_gradient_is_inner_product(rng):
    w = rng.standard_normal((3, 4, 3, 3))
    off = rng.uniform(-3, 3, (1, 2, 2))
    lam = rng.uniform(0.2, 0.8, (1, 2))
    up = rng.standard_normal((1, 3, 4, 3, 3))
    lt = Tensor(lam)
    from aginet import functional as F

    with Tape() as tape:
        loss = F.sum(F.mul(rolled_kernel(Tensor(w), Tensor(off), lt, 2), Tensor(up)))
    g = backward(tape, loss)[lt]
    for i, grp in enumerate(split_groups(w, 2)):
        inner = np.sum(float_roll(grp, *off[0, i]) * up[0][:, 2 * i:2 * i + 2])
        assert abs(g[0, i] - inner) <= 1e-12
        h = 1e-6
        lp, lm = lam.copy(), lam.copy()
        lp[0, i] += h
        lm[0, i] -= h
        f = lambda l_: np.sum(rolled_kernel(Tensor(w), Tensor(off), Tensor(l_), 2).data * up)  # noqa: E731
        assert abs(g[0, i] - (f(lp) - f(lm)) / (2 * h)) <= 1e-6


def test_group_locality(rng):
    w = rng.standard_normal((3, 8, 3, 3))
    off = rng.uniform(-3, 3, (1, 4, 2))
    lam = rng.uniform(0.1, 0.9, (1, 4))
    base = rolled_kernel(Tensor(w), Tensor(off), Tensor(lam), 4).data
    off2, lam2 = off.copy(), lam.copy()
    off2[0, 1] += (0.3, -0.7)
    lam2[0, 1] = 0.05
    moved = rolled_kernel(Tensor(w), Tensor(off2), Tensor(lam2), 4).data
    for i in range(4):
        sl = slice(2 * i, 2 * i + 2)
        if i == 1:
            assert not np.array_equal(moved[:, :, sl], base[:, :, sl])
        else:
            np.testing.assert_array_equal(moved[:, :, sl], base[:, :, sl])


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_kernel_parameter_count_independent_of_n(n):
    w = Tensor(np.zeros((16, 8, 3, 3)))
    out = rolled_kernel(w, Tensor(np.zeros((1, n, 2))), Tensor(np.ones((1, n))), n)
    assert w.data.size == 16 * 8 * 9
    assert out.shape == (1, 16, 8, 3, 3)
