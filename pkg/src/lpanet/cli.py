"""``lpanet`` command line.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime or
I/O failure.  Flag values are validated before any file is read or written.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

from . import _backend
from .linalg import check_identities
from .metrics import error_trajectory, evaluate, write_trajectory_csv, write_trajectory_gnuplot
from .network import Dims, init_network
from .persistence import (
    CheckpointError,
    ConfigError,
    RUN_CONFIG_KEYS,
    load_checkpoint,
    parse_run_config,
    save_checkpoint,
)
from .rng import MASK64
from .surfaces import CsvFormatError, SurfaceId, export_csv, import_csv, sample_dataset, train_test_split
from .training import Paradigm, TrainConfig, default_lambdas, train

__all__ = ["run_cli", "main", "build_parser", "UsageError"]

IDENTITY_TOL = 1e-12


class UsageError(Exception):
    """Bad command line; carries the parser whose usage should be shown."""

    def __init__(self, message, parser=None):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v <= MASK64:
        raise argparse.ArgumentTypeError(f"seed must be in 0..2^64-1, got {v}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _surface(text: str) -> SurfaceId:
    try:
        return SurfaceId.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _path(text: str) -> Path:
    if not text.strip():
        raise argparse.ArgumentTypeError("path must not be empty")
    return Path(text)


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<11} {desc}" for k, (_, desc) in RUN_CONFIG_KEYS.items())
    p = _Parser(prog="lpanet", description="Residual networks trained end-to-end (e2e) or layer-wise (lpa).")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate-data", help="sample a surface and write x,y,f CSV")
    g.add_argument("--surface", type=_surface, required=True, help="kebab-case surface name")
    g.add_argument("--n", type=_positive, required=True, help="number of samples")
    g.add_argument("--seed", type=_seed, required=True)
    g.add_argument("--out", type=_path, required=True)

    t = sub.add_parser("train", help="train from a TOML run config",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="config keys:\n" + keys)
    t.add_argument("--config", type=_path, required=True)
    t.add_argument("--out", type=_path, required=True, help="checkpoint path (.lpanet)")
    t.add_argument("--history", type=_path, help="per-epoch history CSV")
    t.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")

    e = sub.add_parser("evaluate", help="test MSE/MAE of a checkpoint at a given depth")
    e.add_argument("--ckpt", type=_path, required=True)
    e.add_argument("--data", type=_path, required=True, help="x,y,f CSV")
    e.add_argument("--depth", type=_nonneg, required=True, help="0..N; N is the full network")

    j = sub.add_parser("trajectory", help="per-depth error table of a checkpoint")
    j.add_argument("--ckpt", type=_path, required=True)
    j.add_argument("--data", type=_path, required=True)
    j.add_argument("--out", type=_path, required=True, help="CSV output")
    j.add_argument("--gnuplot", type=_path, help="also write a gnuplot data file")

    v = sub.add_parser("verify-identities", help="random trials of the vec/Kronecker identities")
    v.add_argument("--trials", type=_positive, default=1000)
    v.add_argument("--seed", type=_seed, default=0)

    c = sub.add_parser("compare", help="train e2e and lpa from the same init and data")
    c.add_argument("--surface", type=_surface, required=True)
    c.add_argument("--epochs", type=_positive, required=True)
    c.add_argument("--seed", type=_seed, required=True, help="init, batch-order and data seed")
    c.add_argument("--n-train", type=_positive, default=10_000)
    c.add_argument("--n-test", type=_positive, default=10_000)
    c.add_argument("--save", type=_path, metavar="DIR",
                   help="write e2e.lpanet, lpa.lpanet and test.csv into DIR")
    c.add_argument("--quiet", action="store_true")
    return p


def _err(msg: str) -> None:
    print(f"lpanet: error: {msg}", file=sys.stderr)


def _progress(label: str, epochs: int, quiet: bool):
    if quiet:
        return None
    step = max(1, epochs // 10)

    def report(rec):
        if rec.epoch % step == 0 or rec.epoch == epochs:
            print(f"[{label}] epoch {rec.epoch}/{epochs}  loss {rec.total_loss:.6e}  test_mse {rec.test_mse:.6e}",
                  file=sys.stderr)
    return report


def _meta(cfg: TrainConfig, n_blocks: int, **extra) -> dict:
    return {
        "paradigm": cfg.paradigm.value,
        "lambdas": list(cfg.resolved_lambdas(n_blocks)),
        "lr": cfg.lr,
        "adam": [cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps],
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "backend": _backend.NAME,
        **extra,
    }


def cmd_generate_data(args) -> int:
    d = sample_dataset(args.surface, args.n, args.seed)
    export_csv(d, args.out)
    print(f"wrote {len(d)} samples of {args.surface.value} (seed {args.seed}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    rc = parse_run_config(args.config)
    spec = rc.data
    train_set, test_set = train_test_split(spec.surface, spec.seed, spec.n_train, spec.n_test, spec.domain)
    net = init_network(rc.dims, rc.train.seed)
    hist = train(net, train_set, test_set, rc.train,
                 on_epoch=_progress(rc.train.paradigm.value, rc.train.epochs, args.quiet))
    meta = _meta(rc.train, rc.dims.n_blocks, surface=spec.surface.value, data_seed=spec.seed,
                 n_train=spec.n_train, n_test=spec.n_test,
                 domain=[spec.domain.xmin, spec.domain.xmax, spec.domain.ymin, spec.domain.ymax])
    save_checkpoint(net, meta, args.out)
    if args.history is not None:
        hist.to_csv(args.history)
    last = hist.records[-1]
    print(f"final test_mse {last.test_mse:.6e}  test_mae {last.test_mae:.6e}  -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    net, _ = load_checkpoint(args.ckpt)
    if args.depth > net.n_blocks:
        raise UsageError(f"--depth must be in 0..{net.n_blocks} for this checkpoint, got {args.depth}")
    data = import_csv(args.data)
    s = evaluate(net, data, args.depth)
    print(f"depth {args.depth}  mse {s.mse:.17g}  mae {s.mae:.17g}")
    return 0


def cmd_trajectory(args) -> int:
    net, meta = load_checkpoint(args.ckpt)
    data = import_csv(args.data)
    traj = error_trajectory(net, data, model_id=str(meta.get("paradigm", "")))
    write_trajectory_csv(traj, args.out)
    if args.gnuplot is not None:
        write_trajectory_gnuplot(traj, args.gnuplot)
    print("depth  mse           mae")
    for r in traj.per_depth:
        print(f"{r.depth:>5}  {r.mse:.6e}  {r.mae:.6e}")
    return 0


def cmd_verify_identities(args) -> int:
    worst = check_identities(args.trials, args.seed)
    for name, err in worst.items():
        print(f"{name:<15} {err:.3e}")
    overall = max(worst.values())
    print(f"worst relative error over {args.trials} trials (seed {args.seed}): {overall:.3e}")
    if overall > IDENTITY_TOL:
        _err(f"worst relative error {overall:.3e} exceeds {IDENTITY_TOL:g}")
        return 2
    return 0


@dataclass
class _Run:
    paradigm: Paradigm
    net: object
    history: object


def cmd_compare(args) -> int:
    dims = Dims()
    train_set, test_set = train_test_split(args.surface, args.seed, args.n_train, args.n_test)
    runs = []
    for paradigm in (Paradigm.E2E, Paradigm.LPA):
        cfg = TrainConfig(paradigm=paradigm, lambdas=default_lambdas(dims.n_blocks),
                          epochs=args.epochs, seed=args.seed)
        net = init_network(dims, args.seed)
        hist = train(net, train_set, test_set, cfg, on_epoch=_progress(paradigm.value, args.epochs, args.quiet))
        runs.append(_Run(paradigm, net, hist))
        if args.save is not None:
            args.save.mkdir(parents=True, exist_ok=True)
            save_checkpoint(net, _meta(cfg, dims.n_blocks, surface=args.surface.value, data_seed=args.seed),
                            args.save / f"{paradigm.value}.lpanet")
    if args.save is not None:
        export_csv(test_set, args.save / "test.csv")

    trajs = [error_trajectory(r.net, test_set) for r in runs]
    print(f"surface {args.surface.value}  epochs {args.epochs}  seed {args.seed}  "
          f"train/test {args.n_train}/{args.n_test}")
    print(f"{'depth':>5}  {'e2e_mse':>12}  {'lpa_mse':>12}")
    for a, b in zip(trajs[0].per_depth, trajs[1].per_depth):
        print(f"{a.depth:>5}  {a.mse:>12.6e}  {b.mse:>12.6e}")
    fa, fb = trajs[0].per_depth[-1], trajs[1].per_depth[-1]
    print(f"{'mae':>5}  {fa.mae:>12.6e}  {fb.mae:>12.6e}")
    winner = "lpa" if fb.mse <= fa.mse else "e2e"
    print(f"final mse: e2e {fa.mse:.6e}  lpa {fb.mse:.6e}  ({winner} lower or equal)")
    return 0


_COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "trajectory": cmd_trajectory,
    "verify-identities": cmd_verify_identities,
    "compare": cmd_compare,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        (exc.parser or parser).print_usage(sys.stderr)
        _err(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _err(str(exc))
        return 1
    except ConfigError as exc:
        _err(str(exc))
        return 1
    except (OSError, CheckpointError, CsvFormatError, FloatingPointError) as exc:
        _err(str(exc))
        return 2
    except ValueError as exc:
        _err(str(exc))
        return 1


def main() -> None:
    sys.exit(run_cli())
