"""Command-line entry point wiring environments, solvers and exports.

Subcommands::

    empowerd capacity --config cfg.ini   # exact / Monte-Carlo capacity at one start state
    empowerd heatmap  --config cfg.ini   # per-state empowerment map (CSV + PGM)
    empowerd train    --config cfg.ini   # SVIM training -> snapshot + JSONL log
    empowerd agent    --config cfg.ini   # greedy empowerment trajectory

Every command is reproducible: the config plus seed determines all
numeric outputs. Exit codes: 0 success, 2 config error, 3 infeasible
problem size, 4 numeric failure. The ``EMPOWERD_THREADS`` variable caps
internal parallelism (the current implementation is single-threaded, so
any positive cap is honoured trivially; it is recorded in the manifest).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .channel import (
    CapacityResult,
    all_action_sequences,
    blahut_arimoto,
    build_channel,
    capacity_result_to_json,
    channel_from_csv,
    path_count_from_channel,
    path_count_empowerment,
    source_to_csv,
)
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .gridworld import EnumerationError, initial_state, render
from .particles import history_to_csv, is_capacity
from .plan import (
    GreedyPolicy,
    ba_estimator,
    compute_map,
    map_to_csv,
    map_to_pgms,
    path_count_estimator,
    run_agent,
    variational_estimator,
    write_pgm,
)
from .svim import load_models, save_models, svim_train

NATS_PER_BIT = float(np.log(2.0))


def thread_cap() -> int:
    """Parallelism cap from ``EMPOWERD_THREADS`` (default 1)."""
    raw = os.environ.get("EMPOWERD_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"EMPOWERD_THREADS is not an integer: {raw!r}") from exc
    if cap < 1:
        raise ConfigError("EMPOWERD_THREADS must be at least 1")
    return cap


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def _display_value(value: float, bits: bool) -> str:
    if bits:
        return f"{value / NATS_PER_BIT:.6f} bits ({value:.6f} nats)"
    return f"{value:.6f} nats"


def _write_manifest(
    out_dir: Path, cfg: ExperimentConfig, seed: int, files: list[str], t0: float
) -> str:
    manifest = {
        "artifact_version": __version__,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "threads": thread_cap(),
        "wall_clock_s": time.perf_counter() - t0,
        "files": sorted(files),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return str(path)


def _start_state(cfg: ExperimentConfig, section: str) -> tuple:
    spec = cfg.env_spec()
    cell = cfg.start_cell(section)
    return spec, initial_state(spec, agent=cell)


def cmd_capacity(cfg: ExperimentConfig, out_dir: Path, seed: int, bits: bool, quiet: bool) -> list[str]:
    t0 = time.perf_counter()
    solver = cfg.solver
    channel_csv = cfg.get("capacity", "channel_csv")
    horizon = cfg.horizon("capacity")

    if channel_csv is not None:
        ch = channel_from_csv(channel_csv)
        sequences = ch.sequences
    else:
        spec, start = _start_state(cfg, "capacity")
        ch = None
        sequences = tuple(all_action_sequences(horizon))

    files: list[str] = []
    if solver == "pathcount":
        if channel_csv is not None:
            value, source = path_count_from_channel(ch)
        else:
            value, source = path_count_empowerment(spec, start, horizon)
        result = CapacityResult(
            capacity=value,
            source=source,
            iterations=1,
            converged=True,
            capacity_history=np.array([value]),
        )
    elif solver == "ba":
        if ch is None:
            ch = build_channel(spec, start, horizon)
        sequences = ch.sequences
        result = blahut_arimoto(
            ch,
            tol=cfg._float("capacity", "tol", 1e-9),
            max_iter=cfg._int("capacity", "max_iter", 10_000),
        )
    elif solver == "particles":
        if ch is None:
            ch = build_channel(spec, start, horizon)
        sequences = ch.sequences
        estimate, history = is_capacity(ch, cfg.is_config(seed=seed))
        history_path = out_dir / "is_history.csv"
        history_to_csv(history, str(history_path))
        files.append(str(history_path))
        result = CapacityResult(
            capacity=float(estimate),
            source=np.full(len(sequences), 1.0 / len(sequences)),
            iterations=len(history),
            converged=True,
            capacity_history=history,
        )
    else:
        raise ConfigError(f"solver {solver!r} does not compute a single-state capacity")

    result_path = out_dir / "capacity.json"
    with open(result_path, "w") as fh:
        fh.write(capacity_result_to_json(result))
    source_path = out_dir / "source.csv"
    source_to_csv(result.source, sequences, str(source_path))
    files += [str(result_path), str(source_path)]
    files.append(_write_manifest(out_dir, cfg, seed, files, t0))
    _say(quiet, f"capacity: {_display_value(result.capacity, bits)}")
    return files


def _estimator_for(cfg: ExperimentConfig, section: str, seed: int):
    solver = cfg.solver
    horizon = cfg.horizon(section)
    if solver == "pathcount":
        return path_count_estimator(horizon), horizon
    if solver == "ba":
        return ba_estimator(horizon), horizon
    if solver == "svim":
        snapshot = cfg.get(section, "snapshot")
        if snapshot is None:
            raise ConfigError(
                f"variational mode needs key 'snapshot' in section [{section}]"
            )
        if not Path(snapshot).exists():
            raise ConfigError(f"snapshot file {snapshot!r} does not exist")
        svim_cfg = cfg.svim_config(seed=seed)
        models = load_models(snapshot, svim_cfg)
        return (
            variational_estimator(models, svim_cfg.beta, svim_cfg.render_size),
            svim_cfg.horizon,
        )
    raise ConfigError(f"solver {solver!r} does not define a per-state estimator")


def cmd_heatmap(cfg: ExperimentConfig, out_dir: Path, seed: int, bits: bool, quiet: bool) -> list[str]:
    t0 = time.perf_counter()
    spec = cfg.env_spec()
    estimator, horizon = _estimator_for(cfg, "heatmap", seed)
    empmap = compute_map(spec, estimator, horizon)
    csv_path = out_dir / "heatmap.csv"
    map_to_csv(empmap, str(csv_path))
    files = [str(csv_path)]
    files += map_to_pgms(empmap, str(out_dir / "heatmap"))
    files.append(_write_manifest(out_dir, cfg, seed, files, t0))
    best = empmap.argmax()
    _say(
        quiet,
        f"heatmap over {len(empmap.values)} states; "
        f"max {_display_value(empmap.values[best], bits)} at {best.agent}",
    )
    return files


def cmd_train(cfg: ExperimentConfig, out_dir: Path, seed: int, bits: bool, quiet: bool) -> list[str]:
    t0 = time.perf_counter()
    spec = cfg.env_spec()
    svim_cfg = cfg.svim_config(seed=seed)
    models, log = svim_train(spec, svim_cfg)
    snapshot_path = out_dir / "snapshot.bin"
    save_models(str(snapshot_path), models)
    log_path = out_dir / "runlog.jsonl"
    with open(log_path, "w") as fh:
        for rec in log:
            fh.write(
                json.dumps(
                    {
                        "step": rec.step,
                        "decoder_loss": rec.decoder_loss,
                        "source_loss": rec.source_loss,
                        "mean_psi": rec.mean_psi,
                        "wall_clock": rec.wall_clock,
                    }
                )
                + "\n"
            )
    files = [str(snapshot_path), str(log_path)]
    files.append(_write_manifest(out_dir, cfg, seed, files, t0))
    final = log[-1] if log else None
    _say(
        quiet,
        "training finished"
        + (
            f": decoder loss {final.decoder_loss:.4f}, source loss {final.source_loss:.4f}"
            if final
            else " (0 steps)"
        ),
    )
    return files


def cmd_agent(cfg: ExperimentConfig, out_dir: Path, seed: int, bits: bool, quiet: bool) -> list[str]:
    t0 = time.perf_counter()
    spec = cfg.env_spec()
    estimator, _ = _estimator_for(cfg, "agent", seed)
    start = initial_state(spec, agent=cfg.start_cell("agent"))
    steps = cfg._int("agent", "steps", 30)
    trajectory = run_agent(spec, start, GreedyPolicy(estimator=estimator), steps)

    payload = []
    for i, s in enumerate(trajectory.states):
        entry = {
            "step": i,
            "state": {
                "agent": list(s.agent),
                "has_key": s.has_key,
                "door_open": s.door_open,
                "boxes": [list(b) for b in s.boxes],
            },
        }
        if i > 0:
            entry["action"] = trajectory.actions[i - 1].name
            entry["value"] = trajectory.values[i - 1]
        payload.append(entry)
    traj_path = out_dir / "trajectory.json"
    with open(traj_path, "w") as fh:
        json.dump(payload, fh, indent=2)
    files = [str(traj_path)]

    if cfg._bool("agent", "frames", False):
        for i, s in enumerate(trajectory.states):
            frame_path = out_dir / f"frame_{i:04d}.pgm"
            write_pgm(str(frame_path), render(spec, s))
            files.append(str(frame_path))
    files.append(_write_manifest(out_dir, cfg, seed, files, t0))
    _say(quiet, f"agent ran {steps} steps, final state {trajectory.states[-1].agent}")
    return files


_COMMANDS = {
    "capacity": cmd_capacity,
    "heatmap": cmd_heatmap,
    "train": cmd_train,
    "agent": cmd_agent,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="empowerd",
        description="Exact and variational empowerment on discrete grid worlds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--bits", action="store_true", help="display capacities in bits")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg.validate()
        seed = args.seed if args.seed is not None else cfg.seed
        out_dir = Path(args.out if args.out is not None else cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out_dir, seed, args.bits, args.quiet)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EnumerationError as exc:
        print(f"infeasible problem size: {exc}", file=sys.stderr)
        return 3
    except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
