"""Command-line front end: ``detpo reference|train|eval|policy-export``.

Each command echoes its effective configuration to ``<out>/config.ini`` so
the run can be repeated from that file alone. Exit codes: 0 success,
2 configuration error, 3 I/O error, 4 every seed diverged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .agent import HISTORY_COLUMNS, TrainingDiverged, actor_policy, train
from .config import ConfigError, RunConfig, load_config, write_config
from .env import EnvKind
from .harness import (EvalReport, evaluate, multi_seed_summary, policy_grid, policy_slice,
                      write_reports_csv)
from .nn import load_nets, save_nets
from .reference import solve_reference

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_IO", "EXIT_DIVERGED"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

log = logging.getLogger("detpo")

CHECKPOINT_FILE = "nets.bin"
STATUS_FILE = "status.json"
HISTORY_FILE = "history.csv"


class CheckpointError(Exception):
    pass


# -- shared helpers ------------------------------------------------------------

def _reference(cfg: RunConfig):
    return solve_reference(cfg.env.objective(), seed=cfg.reference.seed, **cfg.reference.search_kwargs())


def _describe_solution(sol) -> str:
    d = sol.to_dict()
    if d["kind"] == "lqr":
        return f"omega={d['omega']:.6f} psi={d['psi']:.6f} markowitz_scale={d['markowitz_scale']:.6f}"
    if d["kind"] == "band":
        return f"b*={d['half_width']:.4f} markowitz_scale={d['markowitz_scale']:.6f}"
    return f"q*={d['threshold']:.4f} maxpos={d['maxpos']:g}"


def _eval(policy, ref, cfg: RunConfig, label: str, seed: int) -> EvalReport:
    rep = evaluate(policy, ref, cfg.env, cfg.eval.n_episodes, cfg.eval.horizon, cfg.eval.noise_seed,
                   label=label)
    rep.seed = seed
    return rep


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_history(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in rows:
            w.writerow([_fmt_cell(r[c]) for c in HISTORY_COLUMNS])


def _read_history(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "episode" else float(v)) for k, v in r.items()} for r in rows]


def _prepare_out(cfg: RunConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.ini")
    return out


# -- reference -----------------------------------------------------------------

def cmd_reference(cfg: RunConfig, out: Path) -> int:
    out = _prepare_out(cfg, out)
    sol, search = _reference(cfg)
    rep = _eval(sol, sol, cfg, "reference", cfg.reference.seed)
    info = sol.to_dict()
    if search is not None:
        info["search_best_value"] = search.best_value
        search.to_csv(out / "reference_search.csv")
        name = "b" if cfg.env.kind is EnvKind.LIN_COST_QUAD_RISK else "q"
        plotting.plot_grid_search(search, out / "reference_search.png", name)
    _write_json(out / "reference.json", info)
    write_reports_csv(out / "reference_report.csv", [rep])
    sl = policy_slice(sol)
    sl.to_csv(out / "reference_slice.csv")
    plotting.plot_policy_slices({"reference": sl}, out / "reference_slice.png")
    print(f"{cfg.env.kind.value} reference: {_describe_solution(sol)}")
    print(f"mean reward {rep.mean_reward:.4f}  mean pnl {rep.mean_pnl:.4f}  "
          f"({rep.n_episodes} x {rep.horizon} steps)")
    return EXIT_OK


# -- train ---------------------------------------------------------------------

def _train_one(args) -> dict:
    cfg, seed, seed_dir = args
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    ref, _ = _reference(cfg)
    agent_cfg = replace(cfg.agent, seed=seed)
    try:
        agent = train(cfg.env, agent_cfg, reference_policy=ref)
        status = {"seed": seed, "diverged": False, "diverged_episode": None, "reason": ""}
    except TrainingDiverged as exc:
        agent = exc.agent
        status = {"seed": seed, "diverged": True, "diverged_episode": exc.episode, "reason": exc.reason}
    status["best_episode"] = agent.best_episode
    save_nets(seed_dir / CHECKPOINT_FILE, agent.nets())
    _write_history(seed_dir / HISTORY_FILE, agent.history)
    _write_json(seed_dir / STATUS_FILE, status)
    return status


def cmd_train(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    out = _prepare_out(cfg, out)
    tasks = [(cfg, s, str(out / f"seed_{s}")) for s in cfg.eval.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            statuses = list(pool.map(_train_one, tasks))
    else:
        statuses = [_train_one(t) for t in tasks]
    with open(out / "train_status.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "diverged", "diverged_episode", "best_episode", "reason"])
        for s in statuses:
            w.writerow([s["seed"], int(s["diverged"]), s["diverged_episode"] or "", s["best_episode"],
                        s["reason"]])
    histories = {s["seed"]: _read_history(out / f"seed_{s['seed']}" / HISTORY_FILE) for s in statuses}
    ref, _ = _reference(cfg)
    ref_rep = _eval(ref, ref, cfg, "reference", 0)
    plotting.plot_learning_curves(histories, ref_rep.mean_reward, out / "learning_curves.png")
    for s in statuses:
        state = f"diverged in episode {s['diverged_episode']} ({s['reason']})" if s["diverged"] else "ok"
        print(f"seed {s['seed']}: {state}; best eval at episode {s['best_episode']}")
    if all(s["diverged"] for s in statuses):
        print("all seeds diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# -- checkpoints ----------------------------------------------------------------

def load_checkpoint(seed_dir: Path, cfg: RunConfig) -> tuple[dict, dict]:
    """Nets and status of one seed directory, checked against ``cfg``."""
    try:
        nets = load_nets(seed_dir / CHECKPOINT_FILE)
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint in {seed_dir}: {exc}") from None
    status = {"seed": None, "diverged": False}
    if (seed_dir / STATUS_FILE).exists():
        with open(seed_dir / STATUS_FILE) as fh:
            status = json.load(fh)
    actor = nets.get("actor")
    if actor is None:
        raise CheckpointError(f"{seed_dir}: checkpoint has no actor")
    echo = seed_dir.parent / "config.ini"
    if echo.exists():
        trained = load_config(echo)
        if trained.env.kind is not cfg.env.kind:
            raise ConfigError(f"{seed_dir}: checkpoint trained on '{trained.env.kind.value}', "
                              f"config is '{cfg.env.kind.value}'")
    if actor.layer_sizes[0] != 2 or actor.layer_sizes[-1] != 1:
        raise ConfigError(f"{seed_dir}: actor shape {actor.layer_sizes} is not a trading policy")
    return nets, status


def _seed_dirs(checkpoint: Path) -> list[Path]:
    if (checkpoint / CHECKPOINT_FILE).exists():
        return [checkpoint]
    dirs = sorted((d for d in checkpoint.glob("seed_*") if (d / CHECKPOINT_FILE).exists()),
                  key=lambda d: int(d.name.split("_", 1)[1]))
    if not dirs:
        raise CheckpointError(f"no checkpoints found under {checkpoint}")
    return dirs


def _load_all(checkpoint: Path, cfg: RunConfig) -> list[tuple[int, dict, dict]]:
    loaded = []
    for d in _seed_dirs(checkpoint):
        nets, status = load_checkpoint(d, cfg)
        seed = status.get("seed")
        if seed is None:
            seed = int(d.name.split("_", 1)[1]) if d.name.startswith("seed_") else 0
        loaded.append((int(seed), nets, status))
    return loaded


def _selected_actor(nets: dict):
    return nets.get("best_actor", nets["actor"])


# -- eval ----------------------------------------------------------------------

def cmd_eval(cfg: RunConfig, out: Path, checkpoint: Optional[Path]) -> int:
    # read checkpoints before the config echo can overwrite a training echo
    loaded = _load_all(checkpoint, cfg) if checkpoint is not None else None
    out = _prepare_out(cfg, out)
    ref, _ = _reference(cfg)
    ref_rep = _eval(ref, ref, cfg, "reference", 0)
    reports = []
    if loaded is None:
        # the reference scored as if it were a trained agent
        for s in cfg.eval.seeds:
            reports.append(_eval(ref, ref, cfg, "reference", s))
    else:
        for seed, nets, status in loaded:
            rep = _eval(actor_policy(_selected_actor(nets)), ref, cfg, "agent", seed)
            rep.diverged = bool(status.get("diverged", False))
            reports.append(rep)
    write_reports_csv(out / "eval_reports.csv", reports)
    table = multi_seed_summary(reports, ref_rep)
    table.to_csv(out / "summary.csv")
    print(table.format())
    if all(r.diverged for r in reports):
        return EXIT_DIVERGED
    return EXIT_OK


# -- policy export -------------------------------------------------------------

def cmd_policy_export(cfg: RunConfig, out: Path, checkpoint: Optional[Path]) -> int:
    loaded = _load_all(checkpoint, cfg) if checkpoint is not None else None
    out = _prepare_out(cfg, out)
    ref, _ = _reference(cfg)
    slices = {"reference": policy_slice(ref)}
    grids = {"reference": policy_grid(ref)}
    if loaded is not None:
        # the highest-reward non-diverged seed
        best, best_val = None, -np.inf
        for _, nets, status in loaded:
            if status.get("diverged", False):
                continue
            policy = actor_policy(_selected_actor(nets))
            val = _eval(policy, ref, cfg, "agent", 0).mean_reward
            if val > best_val:
                best, best_val = policy, val
        if best is None:
            print("every checkpoint diverged; exporting the reference only", file=sys.stderr)
        else:
            slices["agent"] = policy_slice(best)
            grids["agent"] = policy_grid(best)
    for label in slices:
        slices[label].to_csv(out / f"{label}_slice.csv")
        grids[label].to_csv(out / f"{label}_grid.csv")
        plotting.plot_policy_grid(grids[label], out / f"{label}_grid.png", label)
    plotting.plot_policy_slices(slices, out / "policy_slices.png")
    print(f"wrote {', '.join(sorted(slices))} slices and grids to {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detpo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="INI config file")
        p.add_argument("--preset", help="named preset, e.g. lqr-paper")
        p.add_argument("--seed-list", help="comma-separated seeds (overrides [eval] seeds)")
        p.add_argument("--out", type=Path, help="output directory (overrides [run] output_dir)")
        p.add_argument("--episodes", type=int, help="override [agent] episodes")

    common(sub.add_parser("reference", help="solve and evaluate the reference policy"))
    p = sub.add_parser("train", help="train one agent per seed")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")
    for name, text in (("eval", "evaluate checkpoints against the reference"),
                       ("policy-export", "write policy slices and grids")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--checkpoint", type=Path, help="training output dir or one seed dir")
    return parser


def _resolve(args) -> RunConfig:
    if args.config is None and args.preset is None:
        raise ConfigError("need --config or --preset")
    cfg = load_config(args.config, args.preset)
    if args.seed_list:
        try:
            seeds = tuple(int(s) for s in args.seed_list.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"bad --seed-list {args.seed_list!r}") from None
        try:
            cfg.eval = replace(cfg.eval, seeds=seeds)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if args.episodes is not None:
        try:
            cfg.agent = replace(cfg.agent, episodes=args.episodes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if args.out is not None:
        cfg.output_dir = str(args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _resolve(args)
        out = Path(cfg.output_dir)
        if args.command == "reference":
            return cmd_reference(cfg, out)
        if args.command == "train":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            return cmd_train(cfg, out, args.jobs)
        if args.command == "eval":
            return cmd_eval(cfg, out, args.checkpoint)
        return cmd_policy_export(cfg, out, args.checkpoint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
