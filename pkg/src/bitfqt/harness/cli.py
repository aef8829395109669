"""Command line entry point: ``bitfqt {train,variance,regret,bench}``.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
Besides the CSV at ``--out``, every run writes the resolved configuration to
``<out>.config.yaml``; ``train`` also writes ``<out>.timing.csv`` (wall
clock per epoch) and ``<out>.model.npz`` (final parameters).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .csvio import rows_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3
COMMANDS = ("train", "variance", "regret", "bench")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitfqt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML run configuration")
        s.add_argument("--out", help="output CSV path (defaults to the config's out)")
        s.add_argument("--seed", type=int, help="override the master seed (u64)")
    return p


def _seed(value: int) -> int:
    if not 0 <= value < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return value


def resolve(command: str, config_path, out=None, seed=None) -> tuple[RunConfig, Path]:
    cfg = RunConfig.load(config_path)
    if cfg.experiment != command:
        raise ConfigError(f"config is for '{cfg.experiment}', not '{command}'")
    changes = {}
    if seed is not None:
        changes["seed"] = _seed(seed)
    if out is not None:
        changes["out"] = str(out)
    cfg = cfg.replace(**changes)
    if not cfg.out:
        raise ConfigError("no output path: pass --out or set out in the config")
    return cfg, Path(cfg.out)


def run(command: str, cfg: RunConfig, out: Path) -> int:
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg.save(str(out) + ".config.yaml")
    if command == "train":
        from .train import MetricsRow, TimingRow, train

        result = train(cfg)
        out.write_text(rows_to_csv(result.rows, MetricsRow))
        Path(str(out) + ".timing.csv").write_text(rows_to_csv(result.timing, TimingRow))
        if result.diverged is not None:
            print(f"bitfqt: {result.diverged}", file=sys.stderr)
            return EXIT_DIVERGED
        np.savez(str(out) + ".model.npz", *result.model.params())
    elif command == "variance":
        from .probes import VarianceRow, variance_probe

        out.write_text(rows_to_csv(variance_probe(cfg), VarianceRow))
    elif command == "regret":
        from .regret import RegretRow, regret_sweep

        out.write_text(rows_to_csv(regret_sweep(cfg), RegretRow))
    else:
        from .bench import BenchRow, bench

        out.write_text(rows_to_csv(bench(cfg), BenchRow))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg, out = resolve(args.command, args.config, args.out, args.seed)
    except ConfigError as exc:
        print(f"bitfqt: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.command, cfg, out)


if __name__ == "__main__":
    sys.exit(main())
