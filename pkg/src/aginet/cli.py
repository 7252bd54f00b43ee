"""Command-line harness: ``aginet <subcommand> [flags]``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
Thread count for BLAS comes from ``AGINET_THREADS`` (default 1).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

THREADS_ENV = "AGINET_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _mask(text: str) -> list[int]:
    parts = [p.strip() for p in text.strip("[]").split(",") if p.strip()]
    if len(parts) != 7 or any(p not in ("0", "1") for p in parts):
        raise argparse.ArgumentTypeError(f"mask needs 7 comma-separated 0/1 entries, got {text!r}")
    return [int(p) for p in parts]


def _widths(text: str):
    from .network import WIDTH_PRESETS

    if text in WIDTH_PRESETS:
        return text
    try:
        ws = [int(p) for p in text.strip("[]").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"widths must be a preset or 4 integers, got {text!r}") from None
    if len(ws) != 4 or min(ws) < 1:
        raise argparse.ArgumentTypeError(f"widths must be a preset or 4 positive integers, got {text!r}")
    return ws


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aginet", description="CAGR / AGI-Net desk-scale harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic misaligned dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--eval-count", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--shift-max", type=float)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train ResUnet or AGI-Net with L1 + Adam")
    t.add_argument("--config")
    t.add_argument("--net", choices=("resunet", "agi"))
    t.add_argument("--groups", type=int)
    t.add_argument("--mask", type=_mask)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--widths", type=_widths)
    t.add_argument("--manifest")
    t.add_argument("--checkpoint-interval", type=int)
    t.add_argument("--resume")
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="eval", choices=("train", "eval"))
    e.add_argument("--report", required=True)

    s = sub.add_parser("sweep", help="PSNR under growing translation of modality B")
    s.add_argument("--checkpoints", required=True, nargs="+", help="LABEL=PATH or PATH")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="eval", choices=("train", "eval"))
    s.add_argument("--report", required=True)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    gc.add_argument("--full", action="store_true")
    gc.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("bench-roll", help="batched vs per-slice integer roll timing")
    b.add_argument("--repetitions", type=int, default=20)
    b.add_argument("--report")

    i = sub.add_parser("info", help="print checkpoint metadata")
    i.add_argument("--checkpoint", required=True)
    return p


def _merge(args, keys, defaults: dict) -> dict:
    """Defaults < JSON config < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        loaded = json.loads(Path(args.config).read_text())
        unknown = set(loaded) - set(keys)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _echo(path: Path, cfg: dict) -> None:
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _write_report(path: str, as_json: str, as_csv: str) -> list[Path]:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(as_json)
    csv_path = p.with_suffix(".csv") if p.suffix != ".csv" else p.with_name(p.stem + ".table.csv")
    csv_path.write_text(as_csv)
    return [p, csv_path]


def cmd_gen_data(args) -> int:
    from .synthdata import SceneSpec, write_dataset

    keys = ("seed", "count", "eval_count", "size", "shift_max")
    cfg = _merge(args, keys, {"seed": 0, "count": 576, "eval_count": None, "size": 64, "shift_max": 2.0})
    if cfg["count"] < 1:
        raise ValueError(f"count must be >= 1, got {cfg['count']}")
    spec = SceneSpec(size=cfg["size"], shift_max=cfg["shift_max"])
    out = Path(args.out)
    manifest = write_dataset(out, cfg["seed"], cfg["count"], spec, eval_count=cfg["eval_count"])
    _echo(out / "effective_config.json", cfg)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    from .train import TrainConfig, train

    fields = TrainConfig.__dataclass_fields__
    keys = tuple(fields)
    cfg = _merge(args, keys, TrainConfig().to_dict())
    tc = TrainConfig(**cfg)
    if tc.manifest is None:
        raise ValueError("train needs --manifest (or 'manifest' in --config)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(out / "effective_config.json", tc.to_dict())
    res = train(tc, out_dir=out, resume=args.resume)
    print(f"final loss {res.log[-1][1]:.6f}" if res.log else "nothing to do")
    print(out / "checkpoint.tnsr")
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate

    rep = evaluate(args.checkpoint, args.manifest, split=args.split)
    paths = _write_report(args.report, rep.to_json(), rep.to_csv())
    _echo(Path(args.report).with_name(Path(args.report).stem + ".config.json"),
          {"checkpoint": args.checkpoint, "manifest": args.manifest, "split": args.split})
    print(json.dumps(rep.summary(), sort_keys=True))
    for p in paths:
        print(p)
    return 0


def cmd_sweep(args) -> int:
    from .train import perturbation_sweep

    models = {}
    for item in args.checkpoints:
        label, _, path = item.rpartition("=")
        label = label or Path(path).parent.name or path
        if label in models:
            raise ValueError(f"duplicate checkpoint label {label!r}")
        models[label] = path
    rep = perturbation_sweep(models, args.manifest, split=args.split)
    paths = _write_report(args.report, rep.to_json(), rep.to_csv())
    _echo(Path(args.report).with_name(Path(args.report).stem + ".config.json"),
          {"checkpoints": models, "manifest": args.manifest, "split": args.split})
    for label in models:
        print(f"{label}: slope {rep.slope(label):.4f} dB/px  psnr {[round(v, 3) for v in rep.mean_psnr(label)]}")
    for p in paths:
        print(p)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suites

    results = run_suites(full=args.full, seed=args.seed)
    for r in results:
        print(r.line())
    bad = sum(not r.ok for r in results)
    print(f"{len(results) - bad}/{len(results)} suites passed")
    return 0 if bad == 0 else 2


def cmd_bench_roll(args) -> int:
    from .train import bench_csv, bench_roll

    rows = bench_roll(repetitions=args.repetitions)
    table = bench_csv(rows)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_info(args) -> int:
    from .network import count_params
    from .train import load_checkpoint

    model, state, meta = load_checkpoint(args.checkpoint)
    info = {"step": state.step, "model": model.config(), "params": count_params(model),
            "train_config": meta.get("train_config")}
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "gradcheck": cmd_gradcheck, "bench-roll": cmd_bench_roll, "info": cmd_info}


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {raw!r}")
    return n


def dispatch(argv: list[str]) -> int:
    from threadpoolctl import threadpool_limits

    from .container import ContainerError
    from .tensor import ShapeError
    from .train import CheckpointError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s:%(name)s:%(message)s")
    try:
        threads = _threads()
    except ValueError as e:
        print(f"aginet: {e}", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(threads):
            return COMMANDS[args.command](args)
    except (ValueError, ShapeError, CheckpointError, ContainerError, FileNotFoundError,
            json.JSONDecodeError, TypeError) as e:
        print(f"aginet {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"aginet {args.command}: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main(argv: list[str] | None = None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))
