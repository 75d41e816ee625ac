"""Seeded Monte Carlo runs, strategy comparisons and theory overlays.

Trial ``t`` of an experiment with master seed ``s`` draws all its data from
``np.random.default_rng([s, t])``.  Trials are simulated in chunks (optionally
on a thread pool) and each trial's curve is stored at its own index, so the
result does not depend on chunking, scheduling or thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import adapt
from .adapt import AdaptConfig
from .synth import Scenario
from .theory import (DEFAULT_SIZE_CAP, MsdCurve, StabilityError, assemble, steady_state_msd,
                     transient_msd)
from .topology import CombinerSet, singleton_clusters, uniform_combiners

__all__ = [
    "DIVERGENCE_LIMIT",
    "ALGORITHMS",
    "STRATEGIES",
    "ExperimentSpec",
    "LearningCurve",
    "RunResult",
    "SummaryRow",
    "ExperimentResult",
    "StrategyReport",
    "Strategy",
    "strategy_for",
    "simulate",
    "theory_overlay",
    "run",
    "compare_strategies",
    "write_outputs",
    "tail_length",
]

DIVERGENCE_LIMIT = 1e12
ALGORITHMS = ("atc", "single_task", "multitask", "lms", "unmix")
STRATEGIES = ("noncooperative", "multitask", "clustered", "clustered_eta0")


@dataclass(frozen=True, eq=False)
class Strategy:
    name: str
    algorithm: str
    combiners: CombinerSet | None
    eta: float | None = None  # fixed eta, overriding the grid value

    def effective_eta(self, eta: float) -> float:
        return float(eta) if self.eta is None else self.eta


def _eye_combiners(n: int, P=None) -> CombinerSet:
    P = np.zeros((n, n)) if P is None else P
    zero = frozenset(int(k) for k in np.flatnonzero(P.sum(axis=1) == 0))
    return CombinerSet(np.eye(n), np.eye(n), P, zero)


def strategy_for(scenario: Scenario, name: str) -> Strategy:
    """Map an algorithm or strategy name onto the scenario.

    ``noncooperative`` is per-node LMS, ``multitask`` regularizes toward all
    neighbors with A = C = I, ``clustered`` is the ATC algorithm with the
    scenario combiners and ``clustered_eta0`` the same with eta = 0.
    """
    if name == "unmix":
        return Strategy(name, "unmix", None)
    if scenario.network is None:
        raise ValueError(f"strategy '{name}' needs a network scenario")
    net, n = scenario.network, scenario.network.n_nodes
    if name in ("atc", "clustered"):
        return Strategy(name, "atc", scenario.combiners)
    if name == "clustered_eta0":
        return Strategy(name, "atc", scenario.combiners, eta=0.0)
    if name == "single_task":
        return Strategy(name, "single_task", scenario.combiners, eta=0.0)
    if name == "multitask":
        P = uniform_combiners(net.with_clusters(singleton_clusters(n))).P
        return Strategy(name, "multitask", _eye_combiners(n, P))
    if name in ("lms", "noncooperative"):
        return Strategy(name, "lms", _eye_combiners(n), eta=0.0)
    raise ValueError(f"unknown strategy '{name}'")


def _stepper(strategy: Strategy, mu: float, eta: float):
    c = strategy.combiners
    if strategy.algorithm == "atc":
        A, C, P = c.A, c.C, c.P
        return lambda w, x, d: adapt.atc_update(w, x, d, A, C, P, mu, eta)[0]
    if strategy.algorithm == "single_task":
        A, C, P = c.A, c.C, np.zeros_like(c.P)
        return lambda w, x, d: adapt.atc_update(w, x, d, A, C, P, mu, 0.0)[0]
    if strategy.algorithm == "multitask":
        P = c.P
        return lambda w, x, d: adapt.multitask_update(w, x, d, P, mu, eta)
    if strategy.algorithm == "lms":
        return lambda w, x, d: adapt.lms_update(w, x, d, mu)
    raise ValueError(f"unknown algorithm '{strategy.algorithm}'")


@dataclass(frozen=True, eq=False)
class LearningCurve:
    """Network MSD per iteration, n = 1 .. n_iters."""

    msd: np.ndarray
    n_trials: int
    provenance: str  # "empirical" or "theory"

    @property
    def db(self) -> np.ndarray:
        return 10.0 * np.log10(self.msd)

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(1, self.msd.size + 1)


def tail_length(n_iters: int) -> int:
    """Number of iterations in the final 25% of the run."""
    return max(1, math.ceil(n_iters / 4))


@dataclass(frozen=True, eq=False)
class RunResult:
    strategy: str
    mu: float
    eta: float
    msd: np.ndarray                   # (n_trials, n_iters); NaN rows for diverged trials
    diverged: dict                    # trial index -> iteration at which it was aborted
    tail_error: np.ndarray | None = None   # (n_trials, N, L) tail-averaged w - w*
    final_rmse: np.ndarray | None = None   # unmixing only, one per trial

    @property
    def n_trials(self) -> int:
        return self.msd.shape[0]

    @property
    def alive(self) -> np.ndarray:
        keep = np.ones(self.n_trials, dtype=bool)
        keep[list(self.diverged)] = False
        return keep

    @property
    def curve(self) -> LearningCurve:
        live = self.msd[self.alive]
        mean = live.mean(axis=0) if live.shape[0] else np.full(self.msd.shape[1], np.nan)
        return LearningCurve(mean, int(live.shape[0]), "empirical")

    def steady_state(self) -> tuple[float, float]:
        """Tail-mean MSD and its standard error across trials (linear scale)."""
        live = self.msd[self.alive]
        if live.shape[0] == 0:
            return math.nan, math.nan
        per_trial = live[:, -tail_length(live.shape[1]):].mean(axis=1)
        mean = float(per_trial.mean())
        if per_trial.size < 2:
            return mean, math.nan
        return mean, float(per_trial.std(ddof=1) / math.sqrt(per_trial.size))

    def steady_state_db(self) -> tuple[float, float]:
        mean, se = self.steady_state()
        return 10.0 * math.log10(mean), 10.0 / math.log(10.0) * se / mean


def _chunk_trials(scenario, step, trials, seed, n_iters, block, track_from, w0):
    env = scenario.env
    rngs = [np.random.default_rng([seed, t]) for t in trials]
    m = len(trials)
    w_star = np.asarray(env.w_star, dtype=float)
    w = np.zeros((m,) + w_star.shape) if w0 is None else np.broadcast_to(w0, (m,) + w_star.shape).copy()
    msd = np.empty((m, n_iters))
    div_at = np.full(m, -1)
    err_sum = np.zeros_like(w) if track_from is not None else None
    limit2 = DIVERGENCE_LIMIT ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n_iters, block):
            b = min(block, n_iters - start)
            draws = [env.draw_block(r, b) for r in rngs]
            x = np.stack([dr[0] for dr in draws], axis=1)
            d = np.stack([dr[1] for dr in draws], axis=1)
            for i in range(b):
                n = start + i
                w = step(w, x[i], d[i])
                err = w - w_star
                msd[:, n] = np.sum(err * err, axis=-1).mean(axis=-1)
                bad = ~np.isfinite(msd[:, n]) | (np.sum(w * w, axis=-1).max(axis=-1) > limit2)
                if bad.any():
                    new = bad & (div_at < 0)
                    div_at[new] = n + 1
                    w[bad] = 0.0
                if err_sum is not None and n >= track_from:
                    err_sum += err
    msd[div_at >= 0] = np.nan
    tail = None if err_sum is None else err_sum / (n_iters - track_from)
    return msd, div_at, tail


def _unmix_trials(scenario, trials, seed, mu, eta, n_iters):
    base = scenario.env
    cfg = AdaptConfig(mu, eta)
    msd = np.empty((len(trials), n_iters))
    final = np.empty(len(trials))
    for j, t in enumerate(trials):
        env = base.redraw(np.random.default_rng([seed, t]))
        W = env.initial_abundances()
        for n in range(n_iters):
            W = adapt.unmix_step(W, env.Y, env.M, env.rho, cfg)
            err = W - env.W_true
            msd[j, n] = np.sum(err * err, axis=-1).mean()
        final[j] = adapt.rmse(W, env.W_true)
    return msd, np.full(len(trials), -1), final


def simulate(scenario: Scenario, strategy: Strategy | str, mu: float, eta: float, n_trials: int,
             n_iters: int, seed: int, threads: int = 1, block: int = 250,
             chunk: int | None = None, track_error: bool = False) -> RunResult:
    """Run `n_trials` independent trials of one strategy at one (mu, eta).

    `track_error` also returns each trial's mean of w(n) - w* over the final
    25% of iterations.
    """
    if n_trials < 1 or n_iters < 1:
        raise ValueError("n_trials and n_iters must be at least 1")
    if isinstance(strategy, str):
        strategy = strategy_for(scenario, strategy)
    eta = strategy.effective_eta(eta)
    AdaptConfig(mu, eta)  # parameter check
    threads = max(1, int(threads))
    if chunk is None:
        chunk = max(1, min(250, math.ceil(n_trials / threads)))
    groups = [list(range(s, min(s + chunk, n_trials))) for s in range(0, n_trials, chunk)]

    if strategy.algorithm == "unmix":
        def job(trials):
            return _unmix_trials(scenario, trials, seed, mu, eta, n_iters)
    else:
        step = _stepper(strategy, mu, eta)
        track_from = n_iters - tail_length(n_iters) if track_error else None

        def job(trials):
            return _chunk_trials(scenario, step, trials, seed, n_iters, block, track_from, scenario.w0)

    if threads == 1 or len(groups) == 1:
        parts = [job(g) for g in groups]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, groups))

    msd = np.concatenate([p[0] for p in parts])
    div_at = np.concatenate([p[1] for p in parts])
    diverged = {int(t): int(div_at[t]) for t in np.flatnonzero(div_at >= 0)}
    extra = {}
    if strategy.algorithm == "unmix":
        extra["final_rmse"] = np.concatenate([p[2] for p in parts])
    elif track_error:
        extra["tail_error"] = np.concatenate([p[2] for p in parts])
    return RunResult(strategy.name, float(mu), float(eta), msd, diverged, **extra)


# --- theory ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TheoryOverlay:
    curve: MsdCurve | None
    steady_state: float | None  # linear; both fields are None when the model is unstable


def theory_overlay(scenario: Scenario, strategy: Strategy | str, mu: float, eta: float, n_iters: int,
                   size_cap: int = DEFAULT_SIZE_CAP) -> TheoryOverlay | None:
    """Transient and steady-state MSD from the closed-form model.

    Returns ``None`` when the scenario carries no regressor moments.
    SizeCapExceeded propagates.
    """
    if isinstance(strategy, str):
        strategy = strategy_for(scenario, strategy)
    if strategy.algorithm == "unmix" or not scenario.has_moments:
        return None
    eta = strategy.effective_eta(eta)
    comb = strategy.combiners
    if strategy.algorithm == "single_task":
        comb = comb.replace(P=np.zeros_like(comb.P))
    model = assemble(scenario.network, comb, scenario.env, mu, eta, size_cap=size_cap)
    w_star = np.asarray(scenario.env.w_star, dtype=float)
    w0 = np.zeros_like(w_star) if scenario.w0 is None else np.asarray(scenario.w0, dtype=float)
    try:
        ss = steady_state_msd(model)
    except StabilityError:
        return TheoryOverlay(None, None)
    curve = transient_msd(model, (w0 - w_star).reshape(-1), n_iters)
    return TheoryOverlay(curve, ss)


# --- experiments ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    scenario: Scenario
    algorithm: str
    grid: tuple
    n_trials: int
    n_iters: int
    seed: int
    theory: bool = True
    size_cap: int = DEFAULT_SIZE_CAP
    threads: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        grid = tuple((float(mu), float(eta)) for mu, eta in self.grid)
        for mu, eta in grid:
            AdaptConfig(mu, eta)
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    mu: float
    eta: float
    steady_state_msd_db: float
    stderr_db: float | None
    theory_msd_db: float | None
    diverged_trials: list

    def to_dict(self) -> dict:
        def clean(v):
            return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v
        return {
            "strategy": self.strategy,
            "mu": self.mu,
            "eta": self.eta,
            "steady_state_msd_db": clean(self.steady_state_msd_db),
            "stderr_db": clean(self.stderr_db),
            "theory_msd_db": clean(self.theory_msd_db),
            "diverged_trials": [{"trial": t, "iteration": n} for t, n in self.diverged_trials],
        }


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    rows: list
    runs: list
    overlays: list  # TheoryOverlay or None, aligned with runs


def _summarize(run: RunResult, overlay: TheoryOverlay | None) -> SummaryRow:
    if run.alive.any():
        ss_db, se_db = run.steady_state_db()
    else:
        ss_db, se_db = math.nan, math.nan
    th = None
    if overlay is not None and overlay.steady_state is not None:
        th = float(10.0 * math.log10(overlay.steady_state))
    return SummaryRow(run.strategy, run.mu, run.eta, ss_db, se_db, th,
                      sorted(run.diverged.items()))


def _execute(spec: ExperimentSpec, names) -> ExperimentResult:
    rows, runs, overlays = [], [], []
    for mu, eta in spec.grid:
        for name in names:
            res = simulate(spec.scenario, name, mu, eta, spec.n_trials, spec.n_iters, spec.seed,
                           threads=spec.threads)
            ov = theory_overlay(spec.scenario, name, mu, eta, spec.n_iters, spec.size_cap) if spec.theory else None
            runs.append(res)
            overlays.append(ov)
            rows.append(_summarize(res, ov))
    return ExperimentResult(rows, runs, overlays)


def run(spec: ExperimentSpec) -> ExperimentResult:
    """Empirical curves, steady-state estimates and theory overlays for every grid point."""
    if spec.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm '{spec.algorithm}'")
    return _execute(spec, (spec.algorithm,))


@dataclass(frozen=True, eq=False)
class StrategyReport:
    result: ExperimentResult
    strategies: tuple
    blocks: dict = field(default_factory=dict)  # (mu, eta) -> rows in `strategies` order

    def ordering(self, mu: float, eta: float) -> list:
        """Strategy names from largest to smallest steady-state MSD."""
        ranked = sorted(self.blocks[(mu, eta)], key=lambda r: -r.steady_state_msd_db)
        return [r.strategy for r in ranked]

    def is_ordered(self, mu: float, eta: float) -> bool:
        """True when steady-state MSD strictly decreases along `strategies`."""
        return all(g > 0 for g in self.gaps_db(mu, eta))

    def gaps_db(self, mu: float, eta: float) -> list:
        vals = [r.steady_state_msd_db for r in self.blocks[(mu, eta)]]
        return [a - b for a, b in zip(vals, vals[1:])]


def compare_strategies(spec: ExperimentSpec,
                       strategies=("noncooperative", "multitask", "clustered")) -> StrategyReport:
    """Run several strategies with the same seeds and rank their steady-state MSD.

    Rows of the result carry the grid's eta, except for strategies whose eta
    is fixed (noncooperative, clustered_eta0), which report eta = 0.
    """
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy '{s}'")
    res = _execute(spec, tuple(strategies))
    k = len(strategies)
    blocks = {pt: res.rows[i * k:(i + 1) * k] for i, pt in enumerate(spec.grid)}
    return StrategyReport(res, tuple(strategies), blocks)


# --- output ------------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None or not math.isfinite(v) else repr(float(v))


def curve_csv(run_res: RunResult, overlay: TheoryOverlay | None) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["iteration", "msd_linear", "msd_db", "theory_msd_linear", "theory_msd_db"])
    curve = run_res.curve
    theory = None if overlay is None or overlay.curve is None else overlay.curve.zeta
    for n in range(curve.msd.size):
        m = float(curve.msd[n])
        row = [n + 1, _fmt(m), _fmt(10 * math.log10(m)) if m > 0 else ""]
        if theory is not None:
            t = float(theory[n + 1])
            row += [_fmt(t), _fmt(10 * math.log10(t)) if t > 0 else ""]
        else:
            row += ["", ""]
        wr.writerow(row)
    return buf.getvalue()


def curve_filename(strategy: str, mu: float, eta: float) -> str:
    return f"curve_{strategy}_mu{mu:g}_eta{eta:g}.csv"


def write_outputs(result: ExperimentResult, out_dir: str) -> list:
    """Write one CSV per run plus ``summary.json``; returns relative paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for res, ov in zip(result.runs, result.overlays):
        name = curve_filename(res.strategy, res.mu, res.eta)
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(curve_csv(res, ov))
        paths.append(name)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump([r.to_dict() for r in result.rows], fh, indent=2)
        fh.write("\n")
    paths.append("summary.json")
    return paths
