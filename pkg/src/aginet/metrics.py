"""PSNR, SSIM and MAE in the units used for reporting.

PSNR is in dB (capped at 100 for identical images), SSIM is reported x100 and
MAE x100. Batch values are the mean of per-slice values.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check(a, b, label):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{label}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _check(a, b, "psnr")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak**2 / mse)))


def mae_scaled(a, b) -> float:
    a, b = _check(a, b, "mae_scaled")
    return float(np.mean(np.abs(a - b)) * 100.0)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, then crop to positions where the window fits
    r = (len(g) - 1) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:-r, r:-r] if r else out


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian-window positions (sigma 1.5), in [-1, 1]."""
    a, b = _check(a, b, "ssim")
    a = np.squeeze(a)
    b = np.squeeze(b)
    if a.ndim != 2:
        raise ValueError(f"ssim: expected a single-channel 2-D image, got shape {a.shape}")
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"ssim: image {a.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    ids: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)  # x100
    mae: list[float] = field(default_factory=list)  # x100

    def add(self, sid: str, pred, target) -> None:
        self.ids.append(sid)
        self.psnr.append(psnr(pred, target))
        self.ssim.append(ssim(pred, target) * 100.0)
        self.mae.append(mae_scaled(pred, target))

    @property
    def psnr_db(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def ssim_pct(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def mae_x100(self) -> float:
        return float(np.mean(self.mae))

    def summary(self) -> dict:
        return {"psnr_db": self.psnr_db, "ssim_pct": self.ssim_pct, "mae_x100": self.mae_x100,
                "count": len(self.ids)}

    def to_dict(self) -> dict:
        return {"mean": self.summary(), "per_sample": asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "psnr", "ssim", "mae"])
        for row in zip(self.ids, self.psnr, self.ssim, self.mae):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**d["per_sample"])


def evaluate_batch(preds: np.ndarray, targets: np.ndarray, ids) -> MetricReport:
    rep = MetricReport()
    for sid, p, t in zip(ids, preds, targets):
        rep.add(sid, p, t)
    return rep
