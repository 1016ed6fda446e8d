import sys
import time

import numpy as np
from scipy.stats import spearmanr
from threadpoolctl import threadpool_limits

import deepcselect as ds
from deepcselect.bench import ExperimentGrid, aggregate_rows, run_grid
from deepcselect.datamodel import TrainOptions
from deepcselect.pipeline import generate_dataset, train_alpha_ensemble

ABORT = 4.0


def build_setup(seed=0, n_traj=20, traj_len=34, T_ini=4, N=10, noise_std=0.01):
    plant = ds.make_plant("pendulum", {})
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    trajs = []
    for k in range(n_traj):
        x0 = plant.sample_initial_state(rng)
        inputs = rng.uniform(-1, 1, size=(traj_len, 1))
        trajs.append(ds.rollout(plant, x0, inputs, ds.NoiseSpec(noise_std, seed=5000 + k)))
    return plant, ds.build_hankel(trajs, T_ini, N)


with threadpool_limits(limits=1):
    t0 = time.time()
    plant, h = build_setup()
    cfg = ds.DeepcConfig(Q=1.0, R=0.01, lambda_g=0.01, lambda_y=1e5)
    datasets = {}
    for alpha in (0.05, 0.1, 0.25):
        spec = ds.SamplerSpec(alpha=alpha, T_sim=40, relative_delta_scale=0.5,
                              abort_error=ABORT)
        samples = generate_dataset(plant, h, spec, cfg, 2000,
                                   master_seed=1000 + int(alpha * 1000))
        Js = np.array([s.J for s in samples])
        n_bad = sum(1 for s in samples if s.meta["status"] != "ok")
        print(f"alpha={alpha}: {time.time()-t0:.0f}s flagged={n_bad} "
              f"J med {np.median(Js):.3f} p95 {np.percentile(Js,95):.3f} max {Js.max():.1f}")
        datasets[alpha] = samples
    opts = TrainOptions(lr=1e-3, epochs=60, batch_size=64, seed=3, lambda_phi=1e-5)
    registry = train_alpha_ensemble(datasets, h.m, h.p, h.T_ini, h.N, h.M,
                                    encoding="relative", hidden=(128, 128), opts=opts)
    for a in registry.alphas():
        meta = registry.lookup(int(a * h.M), h.M)[2]
        print(f"alpha={a}: val={meta['val_loss']:.4f} train={meta['train_loss']:.5f}")
    print(f"trained {time.time()-t0:.0f}s")
    for seed_base in (777, 4242):
        spec = ds.SamplerSpec(alpha=0.1, T_sim=40, relative_delta_scale=0.4,
                              relative_delta_fixed=True, abort_error=ABORT)
        grid = ExperimentGrid(methods=["datamodel", "l1", "random"],
                              K_values=[20, 50, 100], seeds=list(range(10)),
                              plant=plant, hankel=h, deepc_cfg=cfg, sampler=spec,
                              T_sim=40, seed_base=seed_base)
        rows, failures = run_grid(grid, registry)
        agg = {(e["method"], e["K"]): (e["cost_mean"], e["cost_std"])
               for e in aggregate_rows(rows)}
        print(f"seed_base={seed_base} failures={len(failures)}")
        for K in (20, 50, 100):
            dm, l1, rnd = agg[("datamodel", K)], agg[("l1", K)], agg[("random", K)]
            print(f"  K={K:3d}: dm {dm[0]:.4f}+-{dm[1]:.3f}  l1 {l1[0]:.4f}  "
                  f"rnd {rnd[0]:.4f}   dm<=rnd {dm[0]<=rnd[0]}  dm<=l1 {dm[0]<=l1[0]}")
        sys.stdout.flush()
    print(f"total {time.time()-t0:.0f}s")
