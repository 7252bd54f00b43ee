"""Synthetic multimodal scenes with controlled misalignment, plus dataset I/O.

Each scene is a set of random ellipses and rectangles; every shape carries a
latent tissue value ``t`` in [0, 1]. Three fixed piecewise-linear contrast
maps turn ``t`` into intensities:

* ``mod_a`` (T1-like) is symmetric about t = 0.5, so it cannot tell t from 1 - t;
* ``mod_b`` (T2-like) is monotone and resolves that ambiguity;
* ``target`` (PD-like) needs both.

The target is registered to ``mod_a``; ``mod_b`` is translated by a random
sub-pixel shift, which is what makes cross-modal alignment matter.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import load_tensors, save_tensors

CONTRASTS = {
    "t1": ((0.0, 0.5, 1.0), (0.30, 0.90, 0.30)),
    "t2": ((0.0, 1.0), (0.90, 0.25)),
    "pd": ((0.0, 0.3, 0.7, 1.0), (0.40, 0.95, 0.60, 0.75)),
}
SUPPORT_THRESHOLD = 0.05


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    shapes: tuple[int, int] = (4, 8)
    noise: float = 0.01
    shift_max: float = 2.0
    modalities: tuple[str, str, str] = ("t1", "t2", "pd")

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"SceneSpec: size must be >= 8, got {self.size}")
        if not (1 <= self.shapes[0] <= self.shapes[1]):
            raise ValueError(f"SceneSpec: bad shape count range {self.shapes}")
        if self.noise < 0 or self.shift_max < 0:
            raise ValueError("SceneSpec: noise and shift_max must be non-negative")
        if abs(self.shift_max) > 8:
            raise ValueError("SceneSpec: shift_max must be <= 8 pixels")


@dataclass
class SampleTriple:
    mod_a: np.ndarray  # (1, H, W)
    mod_b: np.ndarray  # (1, H, W), shifted by applied_shift
    target: np.ndarray  # (1, H, W), registered to mod_a
    applied_shift: tuple[float, float]
    meta: dict = field(default_factory=dict)


def contrast(name: str, t: np.ndarray) -> np.ndarray:
    xp, fp = CONTRASTS[name]
    return np.interp(t, xp, fp)


def _draw_shapes(rng: np.random.Generator, spec: SceneSpec) -> list[dict]:
    s = spec.size
    count = int(rng.integers(spec.shapes[0], spec.shapes[1] + 1))
    shapes = [{
        "kind": "ellipse",
        "cy": s / 2 + rng.uniform(-0.05, 0.05) * s, "cx": s / 2 + rng.uniform(-0.05, 0.05) * s,
        "ry": rng.uniform(0.32, 0.42) * s, "rx": rng.uniform(0.28, 0.40) * s,
        "angle": rng.uniform(0, np.pi), "t": rng.uniform(0, 1),
    }]
    for _ in range(count - 1):
        shapes.append({
            "kind": "ellipse" if rng.random() < 0.6 else "rect",
            "cy": rng.uniform(0.25, 0.75) * s, "cx": rng.uniform(0.25, 0.75) * s,
            "ry": rng.uniform(0.05, 0.18) * s, "rx": rng.uniform(0.05, 0.18) * s,
            "angle": rng.uniform(0, np.pi), "t": rng.uniform(0, 1),
        })
    return shapes


def _tissue_map(shapes: list[dict], size: int, ss: int = 2) -> np.ndarray:
    """Latent tissue values on an ss-times supersampled grid; NaN = background."""
    n = size * ss
    c = (np.arange(n) + 0.5) / ss
    yy, xx = np.meshgrid(c, c, indexing="ij")
    t = np.full((n, n), np.nan)
    for sh in shapes:
        ca, sa = np.cos(sh["angle"]), np.sin(sh["angle"])
        dy, dx = yy - sh["cy"], xx - sh["cx"]
        u = ca * dx + sa * dy
        v = -sa * dx + ca * dy
        if sh["kind"] == "ellipse":
            inside = (u / sh["rx"]) ** 2 + (v / sh["ry"]) ** 2 <= 1.0
        else:
            inside = (np.abs(u) <= sh["rx"]) & (np.abs(v) <= sh["ry"])
        t[inside] = sh["t"]
    return t


def _render(t: np.ndarray, name: str, size: int, ss: int = 2) -> np.ndarray:
    img = np.where(np.isnan(t), 0.0, contrast(name, np.nan_to_num(t)))
    return img.reshape(size, ss, size, ss).mean(axis=(1, 3))


def subpixel_shift(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate by (dx, dy) pixels with bilinear resampling and edge clamping.

    ``out[y, x] = img[y - dy, x - dx]``; works on (..., H, W).
    """
    if abs(dx) > 8 or abs(dy) > 8:
        raise ValueError(f"subpixel_shift: |dx|, |dy| must be <= 8, got ({dx}, {dy})")
    out = img
    h, w = img.shape[-2:]
    for axis, d, n in ((-1, dx, w), (-2, dy, h)):
        pos = np.arange(n) - d
        p0 = np.floor(pos)
        f = (pos - p0).astype(img.dtype)
        i0 = np.clip(p0.astype(np.int64), 0, n - 1)
        i1 = np.clip(p0.astype(np.int64) + 1, 0, n - 1)
        a = np.take(out, i0, axis=axis)
        b = np.take(out, i1, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = n
        f = f.reshape(shape)
        out = (1 - f) * a + f * b
    return out


def gen_sample(rng: np.random.Generator, spec: SceneSpec = SceneSpec()) -> SampleTriple:
    """Draw one triple; all pixel values in [0, 1]."""
    shapes = _draw_shapes(rng, spec)
    t = _tissue_map(shapes, spec.size)
    ma, mb, mt = spec.modalities
    a = _render(t, ma, spec.size)
    b = _render(t, mb, spec.size)
    y = _render(t, mt, spec.size)
    dx, dy = (float(v) for v in rng.uniform(-spec.shift_max, spec.shift_max, size=2))
    b = subpixel_shift(b, dx, dy)
    noise = rng.normal(0.0, spec.noise, size=(2, spec.size, spec.size))
    a = np.clip(a + noise[0], 0, 1)
    b = np.clip(b + noise[1], 0, 1)
    f32 = np.float32
    return SampleTriple(a[None].astype(f32), b[None].astype(f32), np.clip(y, 0, 1)[None].astype(f32),
                        (dx, dy), {"n_shapes": len(shapes)})


def render_unshifted(rng: np.random.Generator, spec: SceneSpec = SceneSpec()) -> dict[str, np.ndarray]:
    """Noise-free renders of all three modalities without any shift (for checks)."""
    t = _tissue_map(_draw_shapes(rng, spec), spec.size)
    return {m: _render(t, m, spec.size) for m in spec.modalities}


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def make_dataset(seed: int, count: int, spec: SceneSpec = SceneSpec(), start: int = 0) -> dict[str, np.ndarray]:
    """In-memory dataset; sample ``i`` depends only on (seed, spec, i)."""
    triples = [gen_sample(sample_rng(seed, i), spec) for i in range(start, start + count)]
    return {
        "inputs": np.stack([np.concatenate([s.mod_a, s.mod_b]) for s in triples]),
        "targets": np.stack([s.target for s in triples]),
        "shifts": np.array([s.applied_shift for s in triples], dtype=np.float64).reshape(count, 2),
        "ids": [f"sample_{i:05d}" for i in range(start, start + count)],
    }


def write_dataset(out_dir: str | os.PathLike, seed: int, count: int, spec: SceneSpec = SceneSpec(),
                  eval_count: int | None = None) -> Path:
    """Write one TNSR file per sample plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if eval_count is None:
        eval_count = max(1, count // 9)
    if not 0 <= eval_count <= count:
        raise ValueError(f"eval_count {eval_count} outside [0, {count}]")
    samples = []
    for i in range(count):
        s = gen_sample(sample_rng(seed, i), spec)
        sid = f"sample_{i:05d}"
        save_tensors(out / f"{sid}.tnsr", {
            "mod_a": s.mod_a, "mod_b": s.mod_b, "target": s.target,
            "applied_shift": np.array(s.applied_shift, dtype=np.float64),
        })
        samples.append({"id": sid, "path": f"{sid}.tnsr",
                        "split": "train" if i < count - eval_count else "eval",
                        "shift": list(s.applied_shift)})
    manifest = {
        "format": "aginet-dataset", "version": 1,
        "generator": {"seed": seed, "count": count, "eval_count": eval_count, **asdict(spec)},
        "samples": samples,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_split(manifest_path: str | os.PathLike, split: str) -> dict[str, np.ndarray]:
    """Load every sample of ``split`` listed in a manifest.

    Works for generated data and for pre-converted real slices stored in the
    same container layout (entries ``mod_a``, ``mod_b``, ``target``).
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    entries = [s for s in manifest["samples"] if s["split"] == split]
    if not entries:
        raise ValueError(f"split {split!r} is empty in {manifest_path}")
    inputs, targets, shifts = [], [], []
    for e in entries:
        t = load_tensors(manifest_path.parent / e["path"])
        inputs.append(np.concatenate([t["mod_a"], t["mod_b"]]).astype(np.float32))
        targets.append(t["target"].astype(np.float32))
        shifts.append(t.get("applied_shift", np.zeros(2)))
    return {"inputs": np.stack(inputs), "targets": np.stack(targets),
            "shifts": np.stack(shifts), "ids": [e["id"] for e in entries]}


def export_pgm(img: np.ndarray, path: str | os.PathLike) -> None:
    """Binary 8-bit PGM; pixels clipped to [0, 1], value = floor(255 p + 0.5)."""
    a = np.asarray(img, dtype=np.float64)
    a = a.reshape(a.shape[-2:])
    q = np.floor(np.clip(a, 0, 1) * 255 + 0.5).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data[m.end():m.end() + w * h], dtype=np.uint8).reshape(h, w)
