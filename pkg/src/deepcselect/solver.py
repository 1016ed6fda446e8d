"""Reduced data-driven predictive control solves over a Hankel column set.

The decision variable is the column-weight vector g alone: planned inputs,
predicted outputs, and the past-output slack are eliminated analytically
(u_f = Uf g, y_f = Yf g, sigma_y = Yp g - y_ini), which turns the problem
into an equality-constrained least-squares of size M' and makes the solve
cost scale as O(M'^3). Box input bounds are handled by operator splitting
(ADMM with fixed penalty), everything else by one dense KKT factorization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from threadpoolctl import threadpool_limits

from .trajectory import ColumnSubset, HankelSet, NonFiniteError, extract_columns

_FEAS_TOL = 1e-7  # relative primal feasibility below which equalities count as met


def _as_weight(W, dim: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        W = float(W) * np.eye(dim)
    elif W.ndim == 1:
        if W.size != dim:
            raise ValueError(f"{name} diagonal has length {W.size}, expected {dim}")
        W = np.diag(W)
    if W.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}")
    if not np.allclose(W, W.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(W)) < -1e-10:
        raise ValueError(f"{name} must be positive semidefinite")
    return W


@dataclass
class DeepcConfig:
    """Weights, regularization, and constraint settings for one solve.

    lambda_y > 0 penalizes the past-output slack; lambda_y == 0 removes the
    slack entirely and enforces Yp g = y_ini as a hard equality (the literal
    reduced online problem). u_box is a per-channel (lo, hi) pair applied at
    every horizon step; y_box is enforced only as a soft quadratic penalty.
    """

    Q: object = 1.0
    R: object = 0.01
    lambda_g: float = 1.0
    lambda_y: float = 1e5
    u_box: tuple | None = None
    y_box: tuple | None = None
    y_box_weight: float = 0.0
    rho: float = 1.0
    max_iter: int = 5000
    admm_tol: float = 1e-7

    def __post_init__(self):
        if self.lambda_g < 0 or self.lambda_y < 0:
            raise ValueError("lambda_g and lambda_y must be >= 0")


@dataclass
class DeepcSolution:
    g: np.ndarray
    u_f: np.ndarray          # (N, m)
    y_f: np.ndarray          # (N, p)
    sigma_y: np.ndarray      # (p*T_ini,), zeros when slack disabled
    objective: float
    status: str              # optimal | max_iter | infeasible
    kkt_residual: float = np.nan
    iterations: int = 0
    admm_state: tuple | None = field(default=None, repr=False)


class DeepcSolver:
    """Workspace bound to one (HankelSet, DeepcConfig) pair.

    The quadratic form and its KKT factorization are built once, so repeated
    solves with fresh (u_ini, y_ini, r) cost one back-substitution each.
    A workspace is not shareable mid-solve; make one per concurrent caller.
    """

    def __init__(self, h: HankelSet, cfg: DeepcConfig):
        self.h = h
        self.cfg = cfg
        m, p, N, T_ini, M = h.m, h.p, h.N, h.T_ini, h.M
        self.m, self.p, self.N, self.T_ini, self.M = m, p, N, T_ini, M
        Q = _as_weight(cfg.Q, p, "Q")
        R = _as_weight(cfg.R, m, "R")
        self.Wq = np.kron(np.eye(N), Q)
        self.Wr = np.kron(np.eye(N), R)
        self.slack = cfg.lambda_y > 0

        self._YfT_Wq = h.Yf.T @ self.Wq
        H = 2.0 * (self._YfT_Wq @ h.Yf + h.Uf.T @ self.Wr @ h.Uf
                   + cfg.lambda_g * np.eye(M))
        if self.slack:
            H += 2.0 * cfg.lambda_y * (h.Yp.T @ h.Yp)
            self.A = h.Up.copy()
        else:
            self.A = np.vstack([h.Up, h.Yp])
        self.H = H
        self.n_eq = self.A.shape[0]

        self._boxed = cfg.u_box is not None or (
            cfg.y_box is not None and cfg.y_box_weight > 0)
        if self._boxed:
            self._setup_admm()
        else:
            self._kkt_lu = self._try_factor(self.H)

    def _try_factor(self, Hmat):
        K = np.zeros((self.M + self.n_eq, self.M + self.n_eq))
        K[: self.M, : self.M] = Hmat
        K[: self.M, self.M:] = self.A.T
        K[self.M:, : self.M] = self.A
        try:
            lu = scipy.linalg.lu_factor(K)
        except (scipy.linalg.LinAlgError, ValueError):
            return None
        return lu

    def _setup_admm(self):
        cfg, h = self.cfg, self.h
        blocks, lo, hi, soft = [], [], [], []
        if cfg.u_box is not None:
            lo_u, hi_u = (np.broadcast_to(np.asarray(v, dtype=float), (self.m,))
                          for v in cfg.u_box)
            blocks.append(h.Uf)
            lo.append(np.tile(lo_u, self.N))
            hi.append(np.tile(hi_u, self.N))
            soft.append(np.zeros(self.m * self.N, dtype=bool))
        if cfg.y_box is not None and cfg.y_box_weight > 0:
            lo_y, hi_y = (np.broadcast_to(np.asarray(v, dtype=float), (self.p,))
                          for v in cfg.y_box)
            blocks.append(h.Yf)
            lo.append(np.tile(lo_y, self.N))
            hi.append(np.tile(hi_y, self.N))
            soft.append(np.ones(self.p * self.N, dtype=bool))
        self.E = np.vstack(blocks)
        self._lo, self._hi = np.concatenate(lo), np.concatenate(hi)
        self._soft = np.concatenate(soft)
        self._kkt_lu = self._try_factor(self.H + cfg.rho * (self.E.T @ self.E))

    # -- right-hand side pieces -------------------------------------------

    def _linear_term(self, y_ini, r):
        f = -2.0 * (self._YfT_Wq @ r)
        if self.slack:
            f -= 2.0 * self.cfg.lambda_y * (self.h.Yp.T @ y_ini)
        return f

    def _check_dims(self, u_ini, y_ini, r):
        if u_ini.size != self.m * self.T_ini:
            raise ValueError(f"u_ini has size {u_ini.size}, expected {self.m * self.T_ini}")
        if y_ini.size != self.p * self.T_ini:
            raise ValueError(f"y_ini has size {y_ini.size}, expected {self.p * self.T_ini}")
        if r.size != self.p * self.N:
            raise ValueError(f"r has size {r.size}, expected {self.p * self.N}")

    def _objective(self, g, y_ini, r):
        h, cfg = self.h, self.cfg
        ey = h.Yf @ g - r
        uf = h.Uf @ g
        obj = float(ey @ self.Wq @ ey + uf @ self.Wr @ uf
                    + cfg.lambda_g * (g @ g))
        if self.slack:
            sig = h.Yp @ g - y_ini
            obj += float(cfg.lambda_y * (sig @ sig))
        if cfg.y_box is not None and cfg.y_box_weight > 0:
            yf = h.Yf @ g
            lo_y, hi_y = (np.broadcast_to(np.asarray(v, dtype=float), (self.p,))
                          for v in cfg.y_box)
            viol = (np.maximum(0.0, yf - np.tile(hi_y, self.N))
                    + np.maximum(0.0, np.tile(lo_y, self.N) - yf))
            obj += float(cfg.y_box_weight * (viol @ viol))
        return obj

    def _package(self, g, y_ini, r, status, kkt_res, iters, admm_state=None):
        h = self.h
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("solver produced a non-finite weight vector")
        u_f = (h.Uf @ g).reshape(self.N, self.m)
        y_f = (h.Yf @ g).reshape(self.N, self.p)
        sigma = (h.Yp @ g - y_ini) if self.slack else np.zeros(self.p * self.T_ini)
        return DeepcSolution(
            g=g, u_f=u_f, y_f=y_f, sigma_y=sigma,
            objective=self._objective(g, y_ini, r),
            status=status, kkt_residual=kkt_res, iterations=iters,
            admm_state=admm_state,
        )

    # -- solve paths -------------------------------------------------------

    def solve(self, u_ini, y_ini, r, warm_start: tuple | None = None) -> DeepcSolution:
        """Minimize tracking + input + regularization cost over g.

        warm_start carries the previous solve's admm_state and is ignored on
        the unconstrained path.
        """
        u_ini = np.asarray(u_ini, dtype=float).ravel()
        y_ini = np.asarray(y_ini, dtype=float).ravel()
        r = np.asarray(r, dtype=float).ravel()
        self._check_dims(u_ini, y_ini, r)
        b = u_ini if self.slack else np.concatenate([u_ini, y_ini])
        f = self._linear_term(y_ini, r)
        if self._boxed:
            return self._solve_admm(b, f, y_ini, r, warm_start)
        return self._solve_kkt(b, f, y_ini, r)

    def _solve_kkt(self, b, f, y_ini, r):
        g = None
        if self._kkt_lu is not None and self.cfg.lambda_g > 0:
            rhs = np.concatenate([-f, b])
            sol = scipy.linalg.lu_solve(self._kkt_lu, rhs)
            if np.all(np.isfinite(sol)):
                g_try, nu = sol[: self.M], sol[self.M:]
                stat = self.H @ g_try + f + self.A.T @ nu
                kkt_res = self._kkt_residual(g_try, b, stat)
                if kkt_res < 1e3 * _FEAS_TOL:
                    g = g_try
        if g is None:
            return self._solve_nullspace(b, f, y_ini, r)
        prim = np.linalg.norm(self.A @ g - b) / (1.0 + np.linalg.norm(b))
        status = "optimal" if prim < _FEAS_TOL else "infeasible"
        return self._package(g, y_ini, r, status, kkt_res, 1)

    def _kkt_residual(self, g, b, stationarity):
        scale = 1.0 + np.linalg.norm(self.H @ g) + np.linalg.norm(b)
        return float(max(np.linalg.norm(stationarity),
                         np.linalg.norm(self.A @ g - b)) / scale)

    def _solve_nullspace(self, b, f, y_ini, r):
        """Minimum-norm equality-constrained least squares via SVD.

        Used when lambda_g = 0 (ties resolved by pseudoinverse semantics) or
        when the dense KKT factorization is unusable.
        """
        U, sv, Vt = np.linalg.svd(self.A, full_matrices=True)
        tol = max(self.A.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        rank = int(np.sum(sv > tol))
        g0 = Vt[:rank].T @ ((U[:, :rank].T @ b) / sv[:rank])
        prim = np.linalg.norm(self.A @ g0 - b) / (1.0 + np.linalg.norm(b))
        status = "optimal" if prim < _FEAS_TOL else "infeasible"
        Z = Vt[rank:].T
        if Z.shape[1] > 0:
            F, t = self._sqrt_stack(y_ini, r)
            w, *_ = np.linalg.lstsq(F @ Z, t - F @ g0, rcond=None)
            g = g0 + Z @ w
        else:
            g = g0
        stat_proj = Z.T @ (self.H @ g + f) if Z.shape[1] else np.zeros(0)
        scale = 1.0 + np.linalg.norm(self.H @ g) + np.linalg.norm(b)
        kkt_res = float(max(np.linalg.norm(stat_proj),
                            np.linalg.norm(self.A @ g - b)) / scale)
        return self._package(g, y_ini, r, status, kkt_res, 1)

    def _sqrt_stack(self, y_ini, r):
        """Weighted residual stack F, t with the objective = ||F g - t||^2."""
        h, cfg = self.h, self.cfg
        sq = _psd_sqrt(self.Wq)
        sr = _psd_sqrt(self.Wr)
        rows = [sq @ h.Yf, sr @ h.Uf]
        targets = [sq @ r, np.zeros(h.Uf.shape[0])]
        if self.slack:
            s = np.sqrt(cfg.lambda_y)
            rows.append(s * h.Yp)
            targets.append(s * y_ini)
        if cfg.lambda_g > 0:
            rows.append(np.sqrt(cfg.lambda_g) * np.eye(self.M))
            targets.append(np.zeros(self.M))
        return np.vstack(rows), np.concatenate(targets)

    def _solve_admm(self, b, f, y_ini, r, warm_start):
        cfg = self.cfg
        if self._kkt_lu is None:
            raise NonFiniteError("box-constrained KKT factorization failed")
        nz = self.E.shape[0]
        if warm_start is not None:
            z, lam = (np.array(v, dtype=float) for v in warm_start)
        else:
            z, lam = np.zeros(nz), np.zeros(nz)
        rho, wpen = cfg.rho, cfg.y_box_weight
        soft = self._soft
        status, iters = "max_iter", cfg.max_iter
        g = np.zeros(self.M)
        for it in range(1, cfg.max_iter + 1):
            rhs = np.concatenate([-(f + rho * (self.E.T @ (lam - z))), b])
            sol = scipy.linalg.lu_solve(self._kkt_lu, rhs)
            g = sol[: self.M]
            v = self.E @ g + lam
            z_prev = z
            z = np.clip(v, self._lo, self._hi)
            if np.any(soft):
                # soft rows: proximal step of the quadratic box-violation penalty
                zs = v[soft]
                above = zs > self._hi[soft]
                below = zs < self._lo[soft]
                zs = np.where(above, (rho * zs + 2 * wpen * self._hi[soft]) / (rho + 2 * wpen), zs)
                zs = np.where(below, (rho * zs + 2 * wpen * self._lo[soft]) / (rho + 2 * wpen), zs)
                z = z.copy()
                z[soft] = np.where(above | below, zs, v[soft])
            lam = lam + self.E @ g - z
            r_prim = np.linalg.norm(self.E @ g - z)
            r_dual = rho * np.linalg.norm(self.E.T @ (z - z_prev))
            eps = cfg.admm_tol * (1.0 + max(np.linalg.norm(self.E @ g), np.linalg.norm(z)))
            if r_prim < eps and r_dual < eps:
                status, iters = "optimal", it
                break
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("operator-splitting iterations diverged")
        prim = np.linalg.norm(self.A @ g - b) / (1.0 + np.linalg.norm(b))
        if prim >= _FEAS_TOL:
            status = "infeasible"
        return self._package(g, y_ini, r, status, np.nan, iters,
                             admm_state=(z.copy(), lam.copy()))


def _psd_sqrt(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(W)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def solve_deepc(h: HankelSet, u_ini, y_ini, r, cfg: DeepcConfig) -> DeepcSolution:
    """One-shot solve; see DeepcSolver for the amortized interface."""
    return DeepcSolver(h, cfg).solve(u_ini, y_ini, r)


def solve_time_probe(M_list, reps: int = 5, T_ini: int = 4, N: int = 10,
                     seed: int = 0, cfg: DeepcConfig | None = None):
    """Median wall time of a full solve at each column count.

    The problem family is fixed: one random SISO dataset, truncated to the
    first M' columns for each size. BLAS thread pools are pinned to one
    thread while timing so the trend reflects the algorithm, not thread
    handoff. Returns a list of (M', median_seconds).
    """
    M_list = list(M_list)
    if not M_list:
        return []
    rng = np.random.default_rng(seed)
    L = T_ini + N
    T = max(M_list) + L  # exactly max(M_list) columns available
    u = rng.uniform(-1.0, 1.0, size=(T, 1))
    y = np.zeros((T, 1))
    # stable second-order filter keeps outputs O(1)
    for k in range(2, T):
        y[k] = 1.2 * y[k - 1] - 0.52 * y[k - 2] + 0.3 * u[k - 1] + 0.1 * u[k - 2]
    from .trajectory import Trajectory, build_hankel

    h_full = build_hankel(Trajectory(inputs=u, outputs=y), T_ini, N)
    cfg = cfg or DeepcConfig(Q=1.0, R=0.01, lambda_g=1.0, lambda_y=1e4)
    u_ini = rng.uniform(-1, 1, size=T_ini)
    y_ini = rng.uniform(-1, 1, size=T_ini)
    r = rng.uniform(-1, 1, size=N)
    table = []
    with threadpool_limits(limits=1):
        for Mp in M_list:
            sub = extract_columns(h_full, ColumnSubset(np.arange(Mp)))
            DeepcSolver(sub, cfg).solve(u_ini, y_ini, r)  # warm-up
            times = []
            for _ in range(max(reps, 5)):
                t0 = time.perf_counter()
                DeepcSolver(sub, cfg).solve(u_ini, y_ini, r)
                times.append(time.perf_counter() - t0)
            table.append((Mp, float(np.median(times))))
    return table
