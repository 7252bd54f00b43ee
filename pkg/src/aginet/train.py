"""Training, evaluation, misalignment sweep and the roll benchmark."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import functional as F
from .container import load_tensors, save_tensors
from .metrics import MetricReport, evaluate_batch
from .network import DEFAULT_MASK, WIDTH_PRESETS, ModelGraph, build_model, forward
from .optim import AdamState, adam_step
from .roll import roll_int_batched, roll_int_loop
from .synthdata import load_split, subpixel_shift
from .tensor import NonFiniteError, Tape, Tensor, backward

log = logging.getLogger(__name__)

SWEEP_LEVELS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
EVAL_SEED = 20240917
CHECKPOINT_FORMAT = "aginet-checkpoint"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 42
    steps: int = 500
    batch: int = 8
    lr: float = 1e-4
    widths: str | list[int] = "tiny"
    net: str = "agi"
    groups: int = 8
    mask: list[int] = field(default_factory=lambda: [int(m) for m in DEFAULT_MASK])
    manifest: str | None = None
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if len(self.mask) != 7:
            raise ValueError(f"mask must have 7 entries, got {len(self.mask)}")
        if self.net not in ("agi", "resunet"):
            raise ValueError(f"net must be 'agi' or 'resunet', got {self.net!r}")
        self.resolved_widths()

    def resolved_widths(self) -> tuple[int, ...]:
        if isinstance(self.widths, str):
            if self.widths not in WIDTH_PRESETS:
                raise ValueError(f"unknown widths preset {self.widths!r}")
            return WIDTH_PRESETS[self.widths]
        return tuple(int(w) for w in self.widths)

    def build(self) -> ModelGraph:
        return build_model(self.net, self.resolved_widths(), in_ch=2, n=self.groups,
                           mask=tuple(bool(m) for m in self.mask), seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: ModelGraph
    state: AdamState
    log: list[tuple[int, float, float]]
    config: TrainConfig


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | os.PathLike, model: ModelGraph, state: AdamState, cfg: TrainConfig | None = None) -> None:
    """Write ``path`` (TNSR: params + Adam moments) and ``path + '.json'`` (metadata)."""
    entries = {f"param/{k}": t.data for k, t in model.params.items()}
    entries.update({f"adam.m/{k}": v for k, v in state.m.items()})
    entries.update({f"adam.v/{k}": v for k, v in state.v.items()})
    save_tensors(path, entries)
    meta = {"format": CHECKPOINT_FORMAT, "step": state.step, "model": model.config(),
            "train_config": cfg.to_dict() if cfg else None}
    Path(f"{path}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_checkpoint_meta(path: str | os.PathLike) -> dict:
    meta_path = Path(f"{path}.json")
    if not meta_path.exists():
        raise CheckpointError(f"checkpoint metadata missing: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{meta_path}: not an aginet checkpoint")
    return meta


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelGraph, AdamState, dict]:
    meta = read_checkpoint_meta(path)
    mc = meta["model"]
    model = build_model(mc["net"], mc["widths"], in_ch=mc["in_ch"], n=mc["groups"] or 1,
                        mask=tuple(bool(m) for m in mc["mask"]))
    raw = load_tensors(path)
    params, m, v = {}, {}, {}
    for name, t in model.params.items():
        arr = raw.get(f"param/{name}")
        if arr is None or arr.shape != t.shape:
            got = None if arr is None else arr.shape
            raise CheckpointError(f"checkpoint/model mismatch for {name!r}: expected {t.shape}, got {got}")
        params[name] = Tensor(arr, name=name)
        m[name] = raw.get(f"adam.m/{name}", np.zeros_like(arr))
        v[name] = raw.get(f"adam.v/{name}", np.zeros_like(arr))
    extra = set(k.split("/", 1)[1] for k in raw if k.startswith("param/")) - set(model.params)
    if extra:
        raise CheckpointError(f"checkpoint has parameters unknown to the model: {sorted(extra)[:3]}")
    return model.with_params(params), AdamState(meta["step"], m, v), meta


# ---------------------------------------------------------------- training

def batch_indices(seed: int, step: int, n: int, batch: int) -> np.ndarray:
    # stateless per step so resumed runs draw the same batches
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1, int(step)]))
    return rng.choice(n, size=batch, replace=batch > n)


def train_step(model: ModelGraph, state: AdamState, x: np.ndarray, y: np.ndarray, lr: float):
    with Tape() as tape:
        pred = forward(model, Tensor._wrap(x))
        loss = F.l1_loss(pred, Tensor._wrap(y))
    grads = backward(tape, loss)
    named = {k: grads[t] for k, t in model.params.items()}
    params, state = adam_step(model.params, named, state, lr=lr)
    return model.with_params(params), state, float(loss.data)


def train(cfg: TrainConfig, data: dict | None = None, out_dir: str | os.PathLike | None = None,
          resume: str | os.PathLike | None = None) -> TrainResult:
    """Adam on the L1 loss; deterministic given ``cfg`` (single-threaded BLAS).

    ``data`` (``inputs`` / ``targets`` arrays) overrides ``cfg.manifest``.
    With ``out_dir`` the run writes ``checkpoint.tnsr`` (+ ``.json``) and
    ``train_log.csv`` there.
    """
    if data is None:
        if not cfg.manifest:
            raise TrainingError("no dataset: pass data or set manifest")
        data = load_split(cfg.manifest, "train")
    xs = np.ascontiguousarray(data["inputs"], dtype=np.float32)
    ys = np.ascontiguousarray(data["targets"], dtype=np.float32)
    if resume is not None:
        model, state, _ = load_checkpoint(resume)
    else:
        model = cfg.build()
        state = AdamState.zeros_like(model.params)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records: list[tuple[int, float, float]] = []
    t0 = time.perf_counter()
    for step in range(state.step + 1, cfg.steps + 1):
        idx = batch_indices(cfg.seed, step, len(xs), cfg.batch)
        try:
            model, state, loss = train_step(model, state, xs[idx], ys[idx], cfg.lr)
        except NonFiniteError as e:
            raise TrainingError(f"non-finite value at step {step}: {e}") from e
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        records.append((step, loss, time.perf_counter() - t0))
        if step % 50 == 0:
            log.info("step %d loss %.5f", step, loss)
        if out is not None and cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            save_checkpoint(out / f"checkpoint_{step:06d}.tnsr", model, state, cfg)
    if out is not None:
        save_checkpoint(out / "checkpoint.tnsr", model, state, cfg)
        write_train_log(out / "train_log.csv", records)
    return TrainResult(model, state, records, cfg)


def write_train_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss", "seconds"])
        for step, loss, sec in records:
            w.writerow([step, repr(loss), f"{sec:.3f}"])


# ---------------------------------------------------------------- evaluation

def predict(model: ModelGraph, inputs: np.ndarray, chunk: int = 16) -> np.ndarray:
    outs = []
    for i in range(0, len(inputs), chunk):
        x = np.ascontiguousarray(inputs[i:i + chunk], dtype=model.params["head.weight"].dtype)
        outs.append(forward(model, Tensor._wrap(x)).data)
    return np.concatenate(outs)


def evaluate(model: ModelGraph | str | os.PathLike, data: dict | str | os.PathLike, split: str = "eval") -> MetricReport:
    """Per-sample PSNR / SSIM / MAE of clipped predictions against targets."""
    if not isinstance(model, ModelGraph):
        model = load_checkpoint(model)[0]
    if not isinstance(data, dict):
        data = load_split(data, split)
    preds = np.clip(predict(model, data["inputs"]), 0.0, 1.0)
    return evaluate_batch(preds, data["targets"], data["ids"])


def perturb_inputs(inputs: np.ndarray, level: float, eval_seed: int = EVAL_SEED) -> np.ndarray:
    """Shift modality B (channel 1) of each sample by d * u_i, u_i ~ U(-1, 1)^2 fixed per sample."""
    out = np.array(inputs, copy=True)
    for i in range(len(out)):
        u = np.random.default_rng(np.random.SeedSequence([eval_seed, i])).uniform(-1.0, 1.0, size=2)
        dx, dy = level * u
        out[i, 1] = subpixel_shift(out[i, 1], float(dx), float(dy))
    return out


@dataclass
class SweepReport:
    levels: tuple[float, ...]
    reports: dict[str, list[MetricReport]]

    def mean_psnr(self, label: str) -> list[float]:
        return [r.psnr_db for r in self.reports[label]]

    def slope(self, label: str) -> float:
        return float(np.polyfit(np.array(self.levels), np.array(self.mean_psnr(label)), 1)[0])

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "models": {label: {"slope_psnr_per_px": self.slope(label),
                               "per_level": [r.summary() for r in reps]}
                       for label, reps in self.reports.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "level", "psnr", "ssim", "mae"])
        for label, reps in self.reports.items():
            for lvl, r in zip(self.levels, reps):
                w.writerow([label, lvl, repr(r.psnr_db), repr(r.ssim_pct), repr(r.mae_x100)])
        return buf.getvalue()


def perturbation_sweep(models: dict[str, ModelGraph | str], data: dict | str, split: str = "eval",
                       levels=SWEEP_LEVELS, eval_seed: int = EVAL_SEED) -> SweepReport:
    """Evaluate every model with modality B additionally shifted at each level."""
    levels = tuple(float(v) for v in levels)
    if not levels:
        raise ValueError("perturbation_sweep: empty level grid")
    if not isinstance(data, dict):
        data = load_split(data, split)
    loaded = {k: (m if isinstance(m, ModelGraph) else load_checkpoint(m)[0]) for k, m in models.items()}
    reports: dict[str, list[MetricReport]] = {k: [] for k in loaded}
    for lvl in levels:
        shifted = dict(data, inputs=perturb_inputs(data["inputs"], lvl, eval_seed))
        for label, model in loaded.items():
            reports[label].append(evaluate(model, shifted))
    return SweepReport(levels, reports)


# ---------------------------------------------------------------- benchmark

BENCH_SIZES = ((8, 8, 1, 3), (64, 16, 2, 3), (128, 32, 4, 3), (512, 64, 8, 3))
BENCH_COLUMNS = ("S", "Cout", "Cin/n", "k", "t_batched_ns", "t_loop_ns")


def bench_roll(sizes=BENCH_SIZES, repetitions: int = 20, seed: int = 0) -> list[dict]:
    """Median wall time of the batched roll vs a per-slice loop.

    Outputs are checked for bitwise equality before any timing.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for s, cout, cg, k in sizes:
        w = rng.standard_normal((s, cout, cg, k, k)).astype(np.float32)
        shifts = rng.integers(-k, k + 1, size=(s, 2))
        if not np.array_equal(roll_int_batched(w, shifts), roll_int_loop(w, shifts)):
            raise AssertionError(f"bench_roll: batched and loop outputs differ for size {(s, cout, cg, k)}")
        times = {}
        for label, fn in (("batched", roll_int_batched), ("loop", roll_int_loop)):
            ts = []
            for _ in range(repetitions):
                t = time.perf_counter_ns()
                fn(w, shifts)
                ts.append(time.perf_counter_ns() - t)
            times[label] = int(np.median(ts))
        rows.append(dict(zip(BENCH_COLUMNS, (s, cout, cg, k, times["batched"], times["loop"]))))
    return rows


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
