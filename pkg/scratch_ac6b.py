import itertools
import time

import numpy as np
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits

import deepcselect as ds
from deepcselect.bench import FixedSubsetPolicy, run_closed_loop
from deepcselect.sampling import sample_indicator, sample_initial, sample_reference
from deepcselect.trajectory import ColumnSubset


def build_pendulum_setup(seed, n_traj, traj_len, T_ini=4, N=10):
    plant = ds.make_plant("pendulum", {})
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    trajs = []
    for _ in range(n_traj):
        x0 = plant.sample_initial_state(rng)
        inputs = rng.uniform(-1, 1, size=(traj_len, 1))
        trajs.append(ds.rollout(plant, x0, inputs))
    return plant, ds.build_hankel(trajs, T_ini, N)


def trial(n_traj, traj_len, lam_g, delta, T_sim, n_train=700, n_test=150, R=0.01):
    plant, h = build_pendulum_setup(0, n_traj, traj_len)
    cfg = ds.DeepcConfig(Q=1.0, R=R, lambda_g=lam_g, lambda_y=1e5)
    spec = ds.SamplerSpec(alpha=0.25, T_sim=T_sim, relative_delta_scale=delta)
    rng = np.random.default_rng(123)
    x0, u_ini, y_ini = sample_initial(plant, h.T_ini, spec, rng)
    r = sample_reference(y_ini, "relative", rng, h.N, h.p, spec)
    n_total = n_train + n_test
    S = np.zeros((n_total, h.M))
    J = np.zeros(n_total)
    k_min = ds.default_k_min(h.m, h.p, h.T_ini)
    flagged = 0
    for i in range(n_total):
        bits, _ = sample_indicator(h.M, 0.25, np.random.default_rng((7, i)), k_min)
        pol = FixedSubsetPolicy(ColumnSubset(np.flatnonzero(bits)))
        res = run_closed_loop(plant, x0, u_ini, y_ini, h, pol, r, cfg, T_sim)
        S[i] = bits
        J[i] = res.cost
        flagged += res.infeasible_steps > 0 or res.aborted
    best = -1
    for lam in (1.0, 10.0, 50.0):
        dm = ds.ridge_fit(S[:n_train], J[:n_train], lam)
        pred = S[n_train:] @ dm.theta + dm.theta0
        rho = spearmanr(pred, J[n_train:]).statistic
        best = max(best, rho)
    spread = (np.percentile(J, 95) - np.percentile(J, 5)) / np.median(J)
    return h.M, best, spread, flagged


with threadpool_limits(limits=1):
    combos = [
        # n_traj, traj_len, lam_g, delta, T_sim
        (20, 34, 1.0, 0.4, 40),
        (20, 34, 0.1, 0.4, 40),
        (20, 34, 0.01, 0.4, 40),
        (20, 34, 0.1, 0.8, 40),
        (20, 34, 0.1, 0.8, 20),
        (20, 24, 0.1, 0.8, 40),
        (10, 34, 0.1, 0.8, 40),
        (20, 34, 0.01, 0.8, 40),
    ]
    for combo in combos:
        t0 = time.time()
        M, rho, spread, flagged = trial(*combo)
        print(f"n_traj={combo[0]:3d} len={combo[1]} lam_g={combo[2]:5.2f} "
              f"delta={combo[3]:.1f} T_sim={combo[4]:2d} -> M={M:4d} "
              f"spearman={rho:.3f} spread={spread:.2f} flagged={flagged} "
              f"({time.time()-t0:.0f}s)")
