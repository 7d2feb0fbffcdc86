"""Command-line interface: train / eval / grid / export / check."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, numnet, plots
from .config import ConfigError, Hyperparameters, load_config
from .harness import (CheckpointError, evaluate_checkpoint,
                      export_trajectories, load_checkpoint, run_grid, train)
from .highway import spawn_traffic, step_dynamics
from .numnet import LayerSpec

log = logging.getLogger("laneddpg")


def _add_common(parser, checkpoint=False, runs=False, episodes=False):
    parser.add_argument("--config", metavar="PATH",
                        help="flat key = value config file")
    parser.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default: ./out)")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--k", type=int, metavar="N",
                        help="action update step")
    parser.add_argument("--replay", type=int, metavar="N",
                        help="replay memory capacity")
    if episodes:
        parser.add_argument("--episodes", type=int, metavar="N")
    if runs:
        parser.add_argument("--runs", type=int, metavar="N", default=100)
    if checkpoint:
        parser.add_argument("--checkpoint", metavar="PATH", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laneddpg",
        description="Continuous lane-change control learned with DDPG in a "
                    "deterministic highway micro-simulation.")
    sub = parser.add_subparsers(dest="verb", required=True)
    _add_common(sub.add_parser("train", help="train one model"),
                episodes=True)
    _add_common(sub.add_parser("eval", help="validate a checkpoint"),
                checkpoint=True, runs=True)
    _add_common(sub.add_parser("grid", help="train the 9-cell "
                               "k x replay-capacity grid"), episodes=True)
    _add_common(sub.add_parser("export", help="export noise-free "
                               "trajectories from a checkpoint"),
                checkpoint=True, episodes=True)
    _add_common(sub.add_parser("check", help="gradient and determinism "
                               "self-tests"))
    return parser


def resolve_hp(args) -> Hyperparameters:
    """Precedence: flags > config file > built-in defaults."""
    hp = Hyperparameters()
    if args.config:
        hp = load_config(args.config, hp)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.k is not None:
        overrides["action_update_step"] = args.k
    if args.replay is not None:
        overrides["replay_capacity"] = args.replay
    if getattr(args, "episodes", None) is not None:
        overrides["episodes"] = args.episodes
    if overrides:
        hp = dataclasses.replace(hp, **overrides)
    return hp


def _prepare_out(args, hp: Hyperparameters) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.txt").write_text(hp.to_text())
    return out


def cmd_train(args) -> int:
    hp = resolve_hp(args)
    out = _prepare_out(args, hp)
    record, metrics = train(hp, out)
    plots.training_curves(metrics, out / "training_curves.png")
    log.info("trained %d episodes; final checkpoint at episode %d",
             hp.episodes, record.episode)
    return 0


def cmd_eval(args) -> int:
    hp = resolve_hp(args)
    record = load_checkpoint(args.checkpoint)
    out = _prepare_out(args, record.hp)
    seed = args.seed if args.seed is not None else record.hp.seed
    summary = evaluate_checkpoint(record, args.runs, seed)
    harness.write_validation_csv(out / "validation.csv", [summary])
    plots.validation_curve([summary], out / "validation.png")
    print(f"checkpoint {summary.checkpoint}: avg_return="
          f"{summary.avg_return:.3f} attempts={summary.attempts} "
          f"successes={summary.successes} "
          f"success_rate={summary.success_rate:.3f}")
    return 0


def cmd_grid(args) -> int:
    hp = resolve_hp(args)
    out = _prepare_out(args, hp)
    results = run_grid(hp, out)
    plots.grid_figure(results, out / "grid.png")
    for r in results:
        print(f"cell {r.label}: k={r.action_update_step} "
              f"D={r.replay_capacity} final_window_mean="
              f"{r.final_window_mean:.3f} [{r.status}]")
    return 0


def cmd_export(args) -> int:
    record = load_checkpoint(args.checkpoint)
    out = _prepare_out(args, record.hp)
    seed = args.seed if args.seed is not None else record.hp.seed
    episodes = args.episodes if args.episodes is not None else 10
    paths = export_trajectories(record, episodes, seed, out)
    trajectories = [np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
                    for p in paths]
    plots.trajectory_figure(trajectories, out / "trajectories.png",
                            lane_width=record.hp.lane_width)
    print(f"wrote {len(paths)} trajectory files to {out}")
    return 0


def cmd_check(args) -> int:
    hp = resolve_hp(args)
    out = _prepare_out(args, hp)
    failures = []

    shapes = {
        "linear 6-4-1": ([LayerSpec(6, 4, "linear"),
                          LayerSpec(4, 1, "linear")], 1e-8),
        "relu 4-8-1": ([LayerSpec(4, 8, "relu"),
                        LayerSpec(8, 1, "linear")], 1e-4),
        "tanh 5-12-3-1": ([LayerSpec(5, 12, "relu"), LayerSpec(12, 3, "tanh"),
                           LayerSpec(3, 1, "tanh")], 1e-4),
    }
    for name, (specs, tol) in shapes.items():
        report = numnet.check_gradients(specs, seed=hp.seed + 11, tolerance=tol)
        status = "ok" if report.passed else "FAIL"
        print(f"gradient check {name}: max_rel_error="
              f"{report.max_relative_error:.3e} (tol {tol:g}) {status}")
        if not report.passed:
            failures.append(f"gradient check {name}")

    cfg = hp.sim_config()
    snaps = []
    for _ in range(2):
        world = spawn_traffic(np.random.default_rng(hp.seed + 17), cfg)
        for _ in range(500):
            step_dynamics(world, 0.0, hp.dt)
        snaps.append(world.snapshot())
    same = all(np.array_equal(snaps[0][key], snaps[1][key])
               for key in ("x", "y", "v", "psi", "omega"))
    print(f"simulator determinism over 500 steps: {'ok' if same else 'FAIL'}")
    if not same:
        failures.append("simulator determinism")

    if failures:
        print("self-test failures: " + ", ".join(failures), file=sys.stderr)
        return 1
    return 0


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "grid": cmd_grid,
             "export": cmd_export, "check": cmd_check}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:     # runtime failure -> diagnostic, exit 1
        log.exception("command failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
