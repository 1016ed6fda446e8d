import time

import numpy as np
from threadpoolctl import threadpool_limits

import deepcselect as ds
from deepcselect.datamodel import TrainOptions
from deepcselect.pipeline import generate_dataset, train_alpha_ensemble
from deepcselect.bench import ExperimentGrid, run_grid, aggregate_rows


def build_pendulum_setup(seed, n_traj, traj_len, T_ini=4, N=10, noise_std=0.0):
    plant = ds.make_plant("pendulum", {})
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))
    trajs = []
    for k in range(n_traj):
        x0 = plant.sample_initial_state(rng)
        inputs = rng.uniform(-1, 1, size=(traj_len, 1))
        trajs.append(ds.rollout(plant, x0, inputs,
                                ds.NoiseSpec(noise_std, seed=5000 + k)))
    return plant, ds.build_hankel(trajs, T_ini, N)


def main(lam_g=0.01, delta=0.4, n_train=1500, epochs=60, hidden=(128, 128),
         encoding="relative", T_sim=40, collect_noise=0.01, wd=1e-5):
    t0 = time.time()
    plant, h = build_pendulum_setup(0, 20, 34, noise_std=collect_noise)
    print("M =", h.M)
    cfg = ds.DeepcConfig(Q=1.0, R=0.01, lambda_g=lam_g, lambda_y=1e5)
    alphas = [0.05, 0.1, 0.25]
    datasets = {}
    for alpha in alphas:
        spec = ds.SamplerSpec(alpha=alpha, T_sim=T_sim, relative_delta_scale=delta)
        samples = generate_dataset(plant, h, spec, cfg, n_train,
                                   master_seed=1000 + int(alpha * 1000))
        n_bad = sum(1 for s in samples if s.meta["status"] != "ok")
        Js = np.array([s.J for s in samples])
        print(f"alpha={alpha}: gen {time.time()-t0:.0f}s, flagged {n_bad}, "
              f"J med {np.median(Js):.4f} p95 {np.percentile(Js,95):.4f} "
              f"max {Js.max():.3f}")
        datasets[alpha] = samples
    opts = TrainOptions(lr=1e-3, epochs=epochs, batch_size=64, seed=3,
                        lambda_phi=wd)
    registry = train_alpha_ensemble(datasets, h.m, h.p, h.T_ini, h.N, h.M,
                                    encoding=encoding, hidden=hidden, opts=opts)
    for a in registry.alphas():
        net, _, meta = registry.lookup(int(a * h.M), h.M)
        print(f"alpha={a}: val_loss={meta['val_loss']:.5f} train={meta['train_loss']:.5f}")
    print(f"trained at {time.time()-t0:.0f}s")
    spec = ds.SamplerSpec(alpha=0.1, T_sim=T_sim, relative_delta_scale=delta,
                          relative_delta_fixed=True)
    grid = ExperimentGrid(methods=["datamodel", "l1", "random"],
                          K_values=[20, 50, 100], seeds=list(range(10)),
                          plant=plant, hankel=h, deepc_cfg=cfg, sampler=spec,
                          T_sim=T_sim, seed_base=777)
    rows, failures = run_grid(grid, registry)
    print("failures:", failures)
    for entry in aggregate_rows(rows):
        print(f"{entry['method']:10s} K={entry['K']:4d} cost={entry['cost_mean']:9.4f} "
              f"+-{entry['cost_std']:8.4f} iae={entry['iae_mean']:8.3f} "
              f"ise={entry['ise_mean']:8.4f} step_ms={entry['mean_step_ms']:6.2f} "
              f"infeas={entry['infeasible_total']}")
    print(f"total {time.time()-t0:.0f}s")


with threadpool_limits(limits=1):
    main()
