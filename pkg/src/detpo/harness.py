"""Out-of-sample evaluation of policies against a reference.

Every comparison is coupled: the policy under test and the reference trade
on the same predictor paths (and the same return noise), so ``diff_l1``
measures policy differences rather than sampling noise. ``diff_l1`` is the
mean over steps and episodes of ``|pi_agent - pi_reference|``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .env import EnvParams, predictor_paths, simulate

__all__ = [
    "EvalReport",
    "PolicySlice",
    "PolicyGrid",
    "SummaryTable",
    "evaluate",
    "policy_slice",
    "policy_grid",
    "multi_seed_summary",
    "write_reports_csv",
    "DISPLAY_CLIP",
]

DISPLAY_CLIP = 5.0


@dataclass
class EvalReport:
    mean_reward: float
    mean_pnl: float
    mean_pnl_true: float
    diff_l1: float
    n_episodes: int
    horizon: int
    seed: int = 0
    label: str = ""
    diverged: bool = False

    def to_row(self) -> dict:
        return asdict(self)


REPORT_COLUMNS = ["label", "seed", "diverged", "mean_reward", "mean_pnl", "mean_pnl_true",
                  "diff_l1", "n_episodes", "horizon"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_reports_csv(path, reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            row = r.to_row()
            w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def evaluate(policy: Callable, reference_policy: Callable, env_params: EnvParams,
             n_episodes: int = 10, horizon: int = 5000, seed: int = 0, label: str = "") -> EvalReport:
    """Score ``policy`` and measure its distance to ``reference_policy``.

    Rewards are the noise-free, barrier-free objective. In noisy mode
    ``mean_pnl`` uses the realised (noisy) returns and ``mean_pnl_true``
    the predictor; under perfect information they coincide.
    """
    rng = np.random.default_rng(seed)
    paths = predictor_paths(env_params.rho, n_episodes, horizon, rng)
    noise = None
    if env_params.noisy_rewards and env_params.sigma_r > 0:
        noise = env_params.sigma_r * rng.standard_normal(paths.shape)
    objective = env_params.objective()
    ours = simulate(policy, objective, paths, noise, record_positions=True)
    if reference_policy is policy:
        diff = 0.0
    else:
        ref = simulate(reference_policy, objective, paths, noise, record_positions=True)
        diff = float(np.mean(np.abs(ours.positions - ref.positions)))
    return EvalReport(
        mean_reward=float(ours.mean_reward.mean()),
        mean_pnl=float(ours.mean_pnl.mean()),
        mean_pnl_true=float(ours.mean_pnl_true.mean()),
        diff_l1=diff,
        n_episodes=n_episodes,
        horizon=horizon,
        seed=seed,
        label=label,
    )


@dataclass
class PolicySlice:
    positions: np.ndarray
    predictor: np.ndarray
    actions: np.ndarray  # (n_positions, n_points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "p", "action"])
            for i, pi in enumerate(self.positions):
                for j, p in enumerate(self.predictor):
                    w.writerow([repr(float(pi)), repr(float(p)), repr(float(self.actions[i, j]))])

    def zero_region(self, position_index: int = 0, atol: float = 1e-3) -> tuple[float, float]:
        """Widest predictor interval on which the action stays within ``atol`` of 0."""
        flat = np.abs(self.actions[position_index]) <= atol
        best = (0.0, 0.0)
        start = None
        for j, ok in enumerate(np.append(flat, False)):
            if ok and start is None:
                start = j
            elif not ok and start is not None:
                lo, hi = self.predictor[start], self.predictor[j - 1]
                if hi - lo > best[1] - best[0]:
                    best = (float(lo), float(hi))
                start = None
        return best


@dataclass
class PolicyGrid:
    pi_grid: np.ndarray
    p_grid: np.ndarray
    actions: np.ndarray  # (len(pi_grid), len(p_grid)), raw values

    @property
    def clipped(self) -> np.ndarray:
        return np.clip(self.actions, -DISPLAY_CLIP, DISPLAY_CLIP)

    def to_csv(self, path) -> None:
        clipped = self.clipped
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pi", "p", "action", "action_clipped"])
            for i, pi in enumerate(self.pi_grid):
                for j, p in enumerate(self.p_grid):
                    w.writerow([repr(float(pi)), repr(float(p)), repr(float(self.actions[i, j])),
                                repr(float(clipped[i, j]))])


def policy_slice(policy: Callable, positions=(-1.0, 0.0, 1.0), p_range=(-4.0, 4.0),
                 n_points: int = 201) -> PolicySlice:
    if n_points < 2:
        raise ValueError("need at least two points")
    positions = np.asarray(positions, dtype=float)
    if positions.size > 1 and np.any(np.diff(positions) <= 0):
        raise ValueError("positions must be strictly increasing")
    p = np.linspace(p_range[0], p_range[1], n_points)
    PI, P = np.meshgrid(positions, p, indexing="ij")
    actions = np.broadcast_to(np.asarray(policy(PI, P), dtype=float), PI.shape).copy()
    return PolicySlice(positions, p, actions)


def policy_grid(policy: Callable, pi_range=(-3.0, 3.0), p_range=(-3.0, 3.0),
                resolution=(121, 121)) -> PolicyGrid:
    if np.isscalar(resolution):
        resolution = (resolution, resolution)
    if min(resolution) < 2:
        raise ValueError("need at least two points per axis")
    pi = np.linspace(pi_range[0], pi_range[1], resolution[0])
    p = np.linspace(p_range[0], p_range[1], resolution[1])
    PI, P = np.meshgrid(pi, p, indexing="ij")
    actions = np.broadcast_to(np.asarray(policy(PI, P), dtype=float), PI.shape).copy()
    return PolicyGrid(pi, p, actions)


SUMMARY_ROWS = ["best", "mean", "worst", "75%-tile", "50%-tile", "25%-tile"]
SUMMARY_METRICS = ["reward", "pnl", "diff"]


@dataclass
class SummaryTable:
    rows: dict  # row label -> {metric: value or None}
    n_seeds: int
    n_diverged: int
    reference: Optional[dict] = field(default=None)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row"] + SUMMARY_METRICS)
            if self.reference is not None:
                w.writerow(["reference"] + [_cell(self.reference.get(m)) for m in SUMMARY_METRICS])
            for label in SUMMARY_ROWS:
                w.writerow([label] + [_cell(self.rows[label][m]) for m in SUMMARY_METRICS])
            w.writerow(["diverged", self.n_diverged, "", ""])

    def format(self) -> str:
        lines = [f"{'':12s}" + "".join(f"{m:>10s}" for m in SUMMARY_METRICS)]
        if self.reference is not None:
            lines.append(f"{'reference':12s}" + "".join(f"{_cell(self.reference.get(m), 3):>10s}"
                                                       for m in SUMMARY_METRICS))
        for label in SUMMARY_ROWS:
            lines.append(f"{label:12s}" + "".join(f"{_cell(self.rows[label][m], 3):>10s}"
                                                 for m in SUMMARY_METRICS))
        lines.append(f"diverged: {self.n_diverged} of {self.n_seeds}")
        return "\n".join(lines)


def _cell(v, digits=None):
    if v is None:
        return "-"
    return f"{v:.{digits}f}" if digits else repr(float(v))


def _rank_quantile(ranked: np.ndarray, q: float, n_total: int):
    # q-tile = the worst of the best (1 - q) * n agents; for 16 agents the
    # 75%-tile is the 4th best
    k = int(round((1.0 - q) * n_total))
    k = max(k, 1)
    if k > len(ranked):
        return None
    return float(ranked[k - 1])


def multi_seed_summary(reports: Sequence[EvalReport], reference: Optional[EvalReport] = None) -> SummaryTable:
    """Best/mean/worst and rank quantiles over seeds, each metric ranked on its own.

    Reward and PnL rank high-to-low, Diff low-to-high. Diverged seeds are
    excluded from the statistics but still count towards the ranks, so a
    quantile whose rank falls among diverged seeds is reported as '-'.
    """
    if not reports:
        raise ValueError("need at least one report")
    ok = [r for r in reports if not r.diverged]
    n = len(reports)
    rows = {label: {} for label in SUMMARY_ROWS}
    values = {
        "reward": -np.sort([-r.mean_reward for r in ok]),
        "pnl": -np.sort([-r.mean_pnl for r in ok]),
        "diff": np.sort([r.diff_l1 for r in ok]),
    }
    for m, ranked in values.items():
        if len(ok) == 0:
            for label in SUMMARY_ROWS:
                rows[label][m] = None
            continue
        rows["best"][m] = float(ranked[0])
        rows["worst"][m] = float(ranked[-1])
        rows["mean"][m] = float(ranked.mean())
        for label, q in (("75%-tile", 0.75), ("50%-tile", 0.5), ("25%-tile", 0.25)):
            rows[label][m] = _rank_quantile(ranked, q, n)
    ref = None
    if reference is not None:
        ref = {"reward": reference.mean_reward, "pnl": reference.mean_pnl, "diff": reference.diff_l1}
    return SummaryTable(rows, n, n - len(ok), ref)
