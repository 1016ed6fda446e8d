import sys
import time

import numpy as np
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits

import deepcselect as ds
from deepcselect.bench import ExperimentGrid, FixedSubsetPolicy, aggregate_rows, run_closed_loop, run_grid
from deepcselect.datamodel import TrainOptions
from deepcselect.pipeline import generate_dataset, train_alpha_ensemble
from deepcselect.sampling import sample_indicator, sample_initial, sample_reference
from deepcselect.trajectory import ColumnSubset


def build_setup(damping, noise_std, seed=0, n_traj=20, traj_len=34, T_ini=4, N=10):
    plant = ds.make_plant("pendulum", {"damping": damping})
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    trajs = []
    for k in range(n_traj):
        x0 = plant.sample_initial_state(rng)
        inputs = rng.uniform(-1, 1, size=(traj_len, 1))
        trajs.append(ds.rollout(plant, x0, inputs, ds.NoiseSpec(noise_std, seed=5000 + k)))
    return plant, ds.build_hankel(trajs, T_ini, N)


ABORT = 8.0


def ac6(plant, h, cfg, delta=0.4, n_train=700, n_test=150):
    spec = ds.SamplerSpec(alpha=0.25, T_sim=40, relative_delta_scale=delta)
    rng = np.random.default_rng(123)
    x0, u_ini, y_ini = sample_initial(plant, h.T_ini, spec, rng)
    r = sample_reference(y_ini, "relative", rng, h.N, h.p, spec)
    n_total = n_train + n_test
    S = np.zeros((n_total, h.M))
    J = np.zeros(n_total)
    k_min = ds.default_k_min(h.m, h.p, h.T_ini)
    for i in range(n_total):
        bits, _ = sample_indicator(h.M, 0.25, np.random.default_rng((7, i)), k_min)
        pol = FixedSubsetPolicy(ColumnSubset(np.flatnonzero(bits)))
        res = run_closed_loop(plant, x0, u_ini, y_ini, h, pol, r, cfg, spec.T_sim)
        S[i], J[i] = bits, res.cost
    best = -1
    for lam in (1.0, 10.0):
        dm = ds.ridge_fit(S[:n_train], J[:n_train], lam)
        pred = S[n_train:] @ dm.theta + dm.theta0
        best = max(best, spearmanr(pred, J[n_train:]).statistic)
    return best


def ac5(plant, h, cfg, delta=0.4, train_delta=0.5, n_train=1000, seeds=6,
        epochs=50, wd=1e-5):
    datasets = {}
    stats = {}
    for alpha in (0.05, 0.1, 0.25):
        spec = ds.SamplerSpec(alpha=alpha, T_sim=40,
                              relative_delta_scale=train_delta,
                              abort_error=ABORT)
        samples = generate_dataset(plant, h, spec, cfg, n_train,
                                   master_seed=1000 + int(alpha * 1000))
        Js = np.array([s.J for s in samples])
        n_bad = sum(1 for s in samples if s.meta["status"] != "ok")
        stats[alpha] = (np.median(Js), Js.max(), n_bad)
        datasets[alpha] = samples
    opts = TrainOptions(lr=1e-3, epochs=epochs, batch_size=64, seed=3, lambda_phi=wd)
    registry = train_alpha_ensemble(datasets, h.m, h.p, h.T_ini, h.N, h.M,
                                    encoding="relative", hidden=(128, 128), opts=opts)
    vals = {a: registry.lookup(int(a * h.M), h.M)[2]["val_loss"] for a in registry.alphas()}
    spec = ds.SamplerSpec(alpha=0.1, T_sim=40, relative_delta_scale=delta,
                          relative_delta_fixed=True, abort_error=ABORT)
    grid = ExperimentGrid(methods=["datamodel", "l1", "random"],
                          K_values=[20, 50, 100], seeds=list(range(seeds)),
                          plant=plant, hankel=h, deepc_cfg=cfg, sampler=spec,
                          T_sim=40, seed_base=777)
    rows, failures = run_grid(grid, registry)
    agg = {(e["method"], e["K"]): e["cost_mean"] for e in aggregate_rows(rows)}
    return agg, vals, stats, failures


def report(tag, agg):
    ok_rand = all(agg[("datamodel", K)] <= agg[("random", K)] for K in (20, 50, 100))
    ok_l1 = agg[("datamodel", 20)] <= agg[("l1", 20)]
    line = " | ".join(
        f"K={K}: dm {agg[('datamodel',K)]:.3f} l1 {agg[('l1',K)]:.3f} rnd {agg[('random',K)]:.3f}"
        for K in (20, 50, 100))
    print(f"{tag}  {line}  rand_ok={ok_rand} l1_ok={ok_l1}")


with threadpool_limits(limits=1):
    for lam_g, noise, damping, R in [
        (0.01, 0.01, 0.1, 0.01),
        (0.02, 0.01, 0.1, 0.01),
        (0.01, 0.02, 0.1, 0.01),
    ]:
        t0 = time.time()
        plant, h = build_setup(damping, noise)
        cfg = ds.DeepcConfig(Q=1.0, R=R, lambda_g=lam_g, lambda_y=1e5)
        rho = ac6(plant, h, cfg)
        agg, vals, stats, failures = ac5(plant, h, cfg)
        print(f"\nlam_g={lam_g} noise={noise} damp={damping} R={R}: "
              f"AC6 spearman={rho:.3f}  vals={ {a: round(v,3) for a,v in vals.items()} } "
              f"Jmax/bad={ {a: (round(s[1],1), s[2]) for a,s in stats.items()} } ({time.time()-t0:.0f}s)")
        report("  ", agg)
        if failures:
            print("  failures:", failures)
        sys.stdout.flush()
