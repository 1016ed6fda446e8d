"""Receding-horizon closed-loop runs with per-step column selection,
tracking metrics, and the cost-versus-columns experiment grid."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import sampling
from .datamodel import ModelRegistry, make_context, net_forward
from .plants import PlantModel
from .sampling import SamplerSpec, derive_rng
from .selection import select_l1, select_random, select_topk, select_threshold, select_budget
from .solver import DeepcConfig, DeepcSolver, _as_weight
from .trajectory import ColumnSubset, HankelSet, extract_columns, full_subset

log = logging.getLogger(__name__)


# --- selection policies -----------------------------------------------------


class FixedSubsetPolicy:
    """Keeps one subset for the whole run (Bernoulli samples, full data)."""

    is_static = True

    def __init__(self, subset: ColumnSubset, name: str = "fixed"):
        self.subset = subset
        self.name = name

    def select(self, h, u_ini, y_ini, r, rng):
        return self.subset


def full_policy(h: HankelSet) -> FixedSubsetPolicy:
    return FixedSubsetPolicy(full_subset(h), name="full")


class DatamodelPolicy:
    """Score columns with the context network, then apply a selection rule.

    rule "topk" takes the K most negative coefficients; "threshold" takes
    all negative ones and "budget" accumulates to B, both falling back to
    top-k_min when they return too few columns to pose a solvable problem.
    """

    is_static = False
    name = "datamodel"

    def __init__(self, registry: ModelRegistry, K: int | None = None,
                 rule: str = "topk", B: float | None = None, k_min: int = 1):
        self.registry = registry
        self.K = K
        self.rule = rule
        self.B = B
        self.k_min = k_min
        self.fallback_count = 0
        self._net = None
        self._meta = None

    def _resolve(self, M: int):
        if self._net is None:
            target = self.K if self.K is not None else max(self.k_min, 1)
            self._net, _, self._meta = self.registry.lookup(target, M)
        return self._net, self._meta

    def select(self, h, u_ini, y_ini, r, rng):
        net, meta = self._resolve(h.M)
        ctx = make_context(u_ini, y_ini, r, meta["encoding"], h.m, h.p)
        theta, _ = net_forward(net, ctx)
        if self.rule == "topk":
            return select_topk(theta, self.K)
        if self.rule == "threshold":
            subset = select_threshold(theta)
        elif self.rule == "budget":
            subset = select_budget(theta, self.B)
        else:
            raise ValueError(f"unknown selection rule: {self.rule!r}")
        if len(subset) < self.k_min:
            self.fallback_count += 1
            log.debug("%s rule returned %d < k_min=%d columns; top-k fallback",
                      self.rule, len(subset), self.k_min)
            subset = select_topk(theta, self.k_min)
        return subset


class L1Policy:
    """Geometric baseline: columns closest in L1 norm to the current window."""

    is_static = False
    name = "l1"

    def __init__(self, K: int):
        self.K = K

    def select(self, h, u_ini, y_ini, r, rng):
        return select_l1(h, u_ini, y_ini, self.K)


class RandomPolicy:
    """Uniform random subset, redrawn from the run's stream at every step."""

    is_static = False
    name = "random"

    def __init__(self, K: int):
        self.K = K

    def select(self, h, u_ini, y_ini, r, rng):
        return ColumnSubset(np.sort(rng.choice(h.M, size=self.K, replace=False)))


# --- closed loop ------------------------------------------------------------


@dataclass
class ClosedLoopResult:
    u: np.ndarray                # (T, m) applied inputs
    y: np.ndarray                # (T, p) measured outputs
    r: np.ndarray                # (T, p) reference actually tracked
    statuses: list[str]
    subset_sizes: np.ndarray
    step_times: np.ndarray       # seconds per step
    Q: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    R: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    aborted: bool = False
    cost: float = np.nan
    iae: float = np.nan
    ise: float = np.nan

    @property
    def infeasible_steps(self) -> int:
        return sum(1 for s in self.statuses if s == "infeasible")

    @property
    def T(self) -> int:
        return len(self.u)


def compute_metrics(result: ClosedLoopResult) -> dict:
    """Quadratic tracking cost plus unweighted IAE and ISE totals."""
    err = result.y - result.r
    cost = float(np.einsum("ti,ij,tj->", err, result.Q, err)
                 + np.einsum("ti,ij,tj->", result.u, result.R, result.u))
    iae = float(np.abs(err).sum())
    ise = float((err ** 2).sum())
    return {"cost": cost, "iae": iae, "ise": ise}


def extend_track(r_window: np.ndarray, total_steps: int, p: int) -> np.ndarray:
    """(total_steps, p) reference track, last value held past the window."""
    steps = np.asarray(r_window, dtype=float).reshape(-1, p)
    if len(steps) >= total_steps:
        return steps[:total_steps].copy()
    pad = np.tile(steps[-1], (total_steps - len(steps), 1))
    return np.vstack([steps, pad])


def run_closed_loop(plant: PlantModel, state0, u_ini, y_ini, h: HankelSet,
                    policy, ref_track: np.ndarray, cfg: DeepcConfig,
                    T_sim: int, noise_std=0.0,
                    policy_rng: np.random.Generator | None = None,
                    abort_error: float | None = None) -> ClosedLoopResult:
    """Receding-horizon loop: select columns, solve, apply the first input.

    ref_track is (>= T_sim + N, p) or a flat window that gets last-value
    extended. The initial window (u_ini, y_ini) must be consistent with
    state0. Solver infeasibility at a step falls back to holding the
    previous input; a non-finite plant state aborts with a partial result,
    as does a per-channel tracking error beyond abort_error (the run has
    left the operating envelope and counts as diverged).
    """
    T_ini, N, m, p = h.T_ini, h.N, h.m, h.p
    track = extend_track(ref_track, T_sim + N, p)
    u_buf = np.asarray(u_ini, dtype=float).reshape(T_ini, m).copy()
    y_buf = np.asarray(y_ini, dtype=float).reshape(T_ini, p).copy()
    x = np.asarray(state0, dtype=float).copy()
    rng = policy_rng or np.random.default_rng(0)
    std = np.broadcast_to(np.asarray(noise_std, dtype=float), (p,))
    Q = _as_weight(cfg.Q, p, "Q")
    R = _as_weight(cfg.R, m, "R")

    static_solver = None
    static_h = None
    if getattr(policy, "is_static", False):
        static_h = extract_columns(h, policy.select(h, None, None, None, rng))
        static_solver = DeepcSolver(static_h, cfg)

    us = np.zeros((T_sim, m))
    ys = np.zeros((T_sim, p))
    rs = track[:T_sim].copy()
    statuses: list[str] = []
    sizes = np.zeros(T_sim, dtype=int)
    times = np.zeros(T_sim)
    warm = None
    last_u = np.zeros(m)
    aborted = False
    for t in range(T_sim):
        t0 = time.perf_counter()
        y_t = plant.observe(x)
        if np.any(std > 0):
            y_t = y_t + std * rng.standard_normal(p)
        r_win = track[t:t + N].ravel()
        if static_solver is not None:
            solver = static_solver
            sizes[t] = static_h.M
        else:
            subset = policy.select(h, u_buf.ravel(), y_buf.ravel(), r_win, rng)
            sizes[t] = len(subset)
            solver = DeepcSolver(extract_columns(h, subset), cfg)
        sol = solver.solve(u_buf.ravel(), y_buf.ravel(), r_win, warm_start=warm)
        warm = sol.admm_state
        statuses.append(sol.status)
        if sol.status == "infeasible":
            u_t = last_u.copy()
        else:
            u_t = sol.u_f[0]
        u_t = plant.clamp_input(u_t)
        us[t], ys[t] = u_t, y_t
        times[t] = time.perf_counter() - t0
        last_u = u_t
        u_buf = np.vstack([u_buf[1:], u_t])
        y_buf = np.vstack([y_buf[1:], y_t])
        x = plant.step(x, u_t)
        blown = abort_error is not None and np.any(
            np.abs(y_t - track[t]) > abort_error)
        if blown or not np.all(np.isfinite(x)):
            log.warning("closed loop aborted at step %d: %s", t,
                        "tracking envelope exceeded" if blown else "non-finite state")
            us, ys, rs = us[: t + 1], ys[: t + 1], rs[: t + 1]
            sizes, times = sizes[: t + 1], times[: t + 1]
            aborted = True
            break
    result = ClosedLoopResult(u=us, y=ys, r=rs, statuses=statuses,
                              subset_sizes=sizes, step_times=times,
                              Q=Q, R=R, aborted=aborted)
    metrics = compute_metrics(result)
    result.cost, result.iae, result.ise = metrics["cost"], metrics["iae"], metrics["ise"]
    return result


# --- experiment grid --------------------------------------------------------


@dataclass
class ExperimentGrid:
    """Axes of the cost-versus-columns study."""

    methods: list[str]
    K_values: list[int]
    seeds: list[int]
    plant: PlantModel
    hankel: HankelSet
    deepc_cfg: DeepcConfig
    sampler: SamplerSpec
    T_sim: int = 40
    seed_base: int = 0

    def __post_init__(self):
        if not (self.methods and self.K_values and self.seeds):
            raise ValueError("grid axes must be non-empty")
        known = {"datamodel", "l1", "random"}
        bad = set(self.methods) - known
        if bad:
            raise ValueError(f"unknown methods: {sorted(bad)}")


GRID_CSV_HEADER = "method,K,seed,cost,iae,ise,mean_step_ms,infeasible_steps"

# fixed codes keep seed derivation independent of Python's string hashing
_METHOD_CODES = {"datamodel": 0, "l1": 1, "random": 2}


def _make_policy(method: str, K: int, registry: ModelRegistry | None, k_min: int):
    if method == "datamodel":
        if registry is None:
            raise ValueError("datamodel method requires a model registry")
        return DatamodelPolicy(registry, K=K, k_min=k_min)
    if method == "l1":
        return L1Policy(K)
    if method == "random":
        return RandomPolicy(K)
    raise ValueError(f"unknown method: {method!r}")


def run_grid(grid: ExperimentGrid, registry: ModelRegistry | None = None):
    """One closed-loop run per (method, K, seed) cell.

    Environment draws (initial window, reference) depend only on the seed,
    so methods face identical tasks and comparisons are paired. Returns
    (rows, failures): rows are dicts matching GRID_CSV_HEADER, failures is
    a list of (method, K, seed, message) for cells that raised or aborted.
    """
    plant, h, spec = grid.plant, grid.hankel, grid.sampler
    T_ini, N, p = h.T_ini, h.N, h.p
    k_min = (h.m + h.p) * T_ini
    rows, failures = [], []
    for seed in grid.seeds:
        init_rng = derive_rng(grid.seed_base, seed, sampling.PURPOSE_INITIAL)
        x0, u_ini, y_ini = sampling.sample_initial(plant, T_ini, spec, init_rng)
        ref_rng = derive_rng(grid.seed_base, seed, sampling.PURPOSE_REFERENCE)
        r_win = sampling.sample_reference(y_ini, spec.ref_strategy, ref_rng, N, p, spec)
        for K in grid.K_values:
            for method in grid.methods:
                policy_rng = derive_rng(grid.seed_base, seed,
                                        sampling.PURPOSE_POLICY,
                                        _METHOD_CODES[method], K)
                try:
                    policy = _make_policy(method, K, registry, k_min)
                    res = run_closed_loop(
                        plant, x0, u_ini, y_ini, h, policy, r_win,
                        grid.deepc_cfg, grid.T_sim,
                        noise_std=spec.noise.output_noise_std,
                        policy_rng=policy_rng, abort_error=spec.abort_error)
                except Exception as exc:  # noqa: BLE001 - grid must keep going
                    log.warning("cell (%s, K=%d, seed=%d) failed: %s",
                                method, K, seed, exc)
                    failures.append((method, K, seed, str(exc)))
                    continue
                if res.aborted:
                    failures.append((method, K, seed, "non-finite state"))
                rows.append({
                    "method": method, "K": K, "seed": seed,
                    "cost": res.cost, "iae": res.iae, "ise": res.ise,
                    "mean_step_ms": 1e3 * float(res.step_times.mean()),
                    "infeasible_steps": res.infeasible_steps,
                })
    return rows, failures


def write_results_csv(rows, path: str) -> None:
    lines = [GRID_CSV_HEADER]
    for row in rows:
        lines.append(",".join([
            row["method"], str(row["K"]), str(row["seed"]),
            repr(float(row["cost"])), repr(float(row["iae"])),
            repr(float(row["ise"])), repr(float(row["mean_step_ms"])),
            str(row["infeasible_steps"]),
        ]))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def aggregate_rows(rows):
    """Mean and std across seeds for each (method, K); sorted for stable output."""
    keys = sorted({(r["method"], r["K"]) for r in rows})
    table = []
    for method, K in keys:
        cell = [r for r in rows if r["method"] == method and r["K"] == K]
        entry = {"method": method, "K": K, "n_seeds": len(cell)}
        for metric in ("cost", "iae", "ise"):
            vals = np.array([r[metric] for r in cell], dtype=float)
            entry[f"{metric}_mean"] = float(vals.mean())
            entry[f"{metric}_std"] = float(vals.std())
        entry["mean_step_ms"] = float(np.mean([r["mean_step_ms"] for r in cell]))
        entry["infeasible_total"] = int(sum(r["infeasible_steps"] for r in cell))
        table.append(entry)
    return table


AGGREGATE_COLUMNS = ["method", "K", "n_seeds", "cost_mean", "cost_std",
                     "iae_mean", "iae_std", "ise_mean", "ise_std",
                     "mean_step_ms", "infeasible_total"]


def write_aggregate_tsv(table, path: str) -> None:
    lines = ["\t".join(AGGREGATE_COLUMNS)]
    for entry in table:
        cells = []
        for col in AGGREGATE_COLUMNS:
            v = entry[col]
            cells.append(repr(float(v)) if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
