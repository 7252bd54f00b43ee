import json

import numpy as np
import pytest

from aginet.metrics import MetricReport, evaluate_batch, mae_scaled, psnr, ssim

from oracles import ssim_windows


def test_psnr_units(rng):
    a = rng.uniform(0.2, 0.8, (16, 16))
    assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-3
    assert psnr(a, a) == 100.0
    b = rng.uniform(0, 1, (16, 16))
    want = 10 * np.log10(1.0 / np.mean((a - b) ** 2))
    assert abs(psnr(a, b) - want) <= 1e-10


def test_mae_units(rng):
    a = rng.uniform(0, 0.9, (16, 16))
    assert abs(mae_scaled(a, a + 0.01) - 1.0) <= 1e-9
    assert mae_scaled(a, a) == 0
    b = rng.uniform(0, 1, (16, 16))
    assert abs(mae_scaled(a, b) - 100 * np.abs(a - b).mean()) <= 1e-12


def test_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        mae_scaled(np.zeros((4, 4)), np.zeros(16))


def test_ssim_identity_and_symmetry(rng):
    a = rng.uniform(0, 1, (32, 32))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, a) == 1.0
    assert ssim(a, b) == ssim(b, a)


def test_ssim_vs_window_oracle(rng):
    a = rng.uniform(0, 1, (32, 32))
    b = np.clip(0.7 * a + 0.2 + rng.normal(0, 0.05, a.shape), 0, 1)
    assert abs(ssim(a, b) - ssim_windows(a, b)) <= 1e-8


def test_ssim_matches_skimage(rng):
    skm = pytest.importorskip("skimage.metrics")
    a = rng.uniform(0, 1, (40, 40))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    # skimage averages over the whole image including its padded border;
    # compare on the interior map instead
    _, full = skm.structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False, full=True)
    assert abs(ssim(a, b) - full[5:-5, 5:-5].mean()) <= 1e-8


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError):
        ssim(np.zeros((2, 16, 16)), np.zeros((2, 16, 16)))


def test_ssim_accepts_singleton_channel(rng):
    a = rng.uniform(0, 1, (1, 16, 16))
    assert ssim(a, a) == 1.0


def test_permutation_invariance(rng):
    a = rng.uniform(0, 1, (16, 16))
    b = rng.uniform(0, 1, (16, 16))
    perm = rng.permutation(a.size)
    pa, pb = a.reshape(-1)[perm].reshape(a.shape), b.reshape(-1)[perm].reshape(b.shape)
    assert abs(psnr(a, b) - psnr(pa, pb)) <= 1e-12
    assert abs(mae_scaled(a, b) - mae_scaled(pa, pb)) <= 1e-12


def test_monotone_in_noise_amplitude(rng):
    a = rng.uniform(0, 1, (24, 24))
    e = rng.standard_normal(a.shape)
    ps = [psnr(a, a + s * e) for s in (0.01, 0.02, 0.05, 0.1)]
    ms = [mae_scaled(a, a + s * e) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(ps, ps[1:]))
    assert all(x < y for x, y in zip(ms, ms[1:]))


def test_batch_is_mean_of_samples(rng):
    preds = rng.uniform(0, 1, (5, 1, 16, 16))
    targets = rng.uniform(0, 1, (5, 1, 16, 16))
    rep = evaluate_batch(preds, targets, [f"s{i}" for i in range(5)])
    assert abs(rep.psnr_db - np.mean([psnr(p, t) for p, t in zip(preds, targets)])) <= 1e-12
    assert abs(rep.ssim_pct - np.mean([100 * ssim(p, t) for p, t in zip(preds, targets)])) <= 1e-12
    assert abs(rep.mae_x100 - np.mean([mae_scaled(p, t) for p, t in zip(preds, targets)])) <= 1e-12
    assert -100 <= rep.ssim_pct <= 100 and rep.mae_x100 >= 0 and rep.psnr_db <= 100


def test_report_serialization(rng):
    preds = rng.uniform(0, 1, (3, 1, 16, 16))
    rep = evaluate_batch(preds, preds[::-1], ["a", "b", "c"])
    d = json.loads(rep.to_json())
    assert d["mean"]["count"] == 3
    back = MetricReport.from_dict(d)
    assert back.psnr == rep.psnr and back.ids == rep.ids
    lines = rep.to_csv().splitlines()
    assert lines[0] == "id,psnr,ssim,mae" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == rep.psnr[0]
