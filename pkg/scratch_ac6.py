import time

import numpy as np
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits

import deepcselect as ds
from deepcselect.bench import FixedSubsetPolicy, run_closed_loop
from deepcselect.sampling import sample_indicator, sample_initial, sample_reference
from deepcselect.trajectory import ColumnSubset


def build_pendulum_setup(seed=0, n_traj=20, traj_len=34, T_ini=4, N=10):
    plant = ds.make_plant("pendulum", {})
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    trajs = []
    for _ in range(n_traj):
        x0 = plant.sample_initial_state(rng)
        inputs = rng.uniform(-1, 1, size=(traj_len, 1))
        trajs.append(ds.rollout(plant, x0, inputs))
    h = ds.build_hankel(trajs, T_ini, N)
    return plant, h


def main():
    t_start = time.time()
    plant, h = build_pendulum_setup()
    print("M =", h.M, "rank =", ds.excitation_rank(h))
    cfg = ds.DeepcConfig(Q=1.0, R=0.01, lambda_g=1.0, lambda_y=1e5)
    spec = ds.SamplerSpec(alpha=0.25, T_sim=40, relative_delta_scale=0.4)
    # one fixed context
    rng = np.random.default_rng(123)
    x0, u_ini, y_ini = sample_initial(plant, h.T_ini, spec, rng)
    r = sample_reference(y_ini, "relative", rng, h.N, h.p, spec)
    print("context: y_last=", y_ini[-1], "r=", r[0])

    n_total = 1200
    S = np.zeros((n_total, h.M))
    J = np.zeros(n_total)
    k_min = ds.default_k_min(h.m, h.p, h.T_ini)
    for i in range(n_total):
        bits, _ = sample_indicator(h.M, 0.25, np.random.default_rng((7, i)), k_min)
        pol = FixedSubsetPolicy(ColumnSubset(np.flatnonzero(bits)))
        res = run_closed_loop(plant, x0, u_ini, y_ini, h, pol, r, cfg, spec.T_sim)
        S[i] = bits
        J[i] = res.cost
        if res.infeasible_steps or res.aborted:
            print("sample", i, "flagged")
    print(f"gen done in {time.time()-t_start:.1f}s; J stats: "
          f"min {J.min():.4f} med {np.median(J):.4f} max {J.max():.4f}")
    for lam in (0.1, 1.0, 10.0, 100.0):
        dm = ds.ridge_fit(S[:1000], J[:1000], lam)
        pred = S[1000:] @ dm.theta + dm.theta0
        rho = spearmanr(pred, J[1000:]).statistic
        print(f"lam={lam:8.1f}  spearman={rho:.3f}")


with threadpool_limits(limits=1):
    main()
