"""Data-enabled predictive control with learned Hankel-column selection."""

from .trajectory import (ColumnSubset, HankelSet, NonFiniteError, Trajectory,
                         build_hankel, excitation_rank, extract_columns,
                         full_subset, load_trajectory, save_trajectory)
from .plants import (Lti2Plant, NoiseSpec, PendulumPlant, PlantModel,
                     Reacher2LinkPlant, make_plant, rollout)
from .solver import (DeepcConfig, DeepcSolution, DeepcSolver, solve_deepc,
                     solve_time_probe)
from .datamodel import (Context, ContextNet, LinearDatamodel, ModelRegistry,
                        TrainOptions, context_dim, load_model, make_context,
                        net_forward, net_loss_grad, predict_linear, ridge_fit,
                        save_model, train_net)
from .selection import (select_budget, select_l1, select_random,
                        select_threshold, select_topk)
from .sampling import (SamplerSpec, derive_rng, sample_indicator,
                       sample_initial, sample_reference)
from .pipeline import (TrainingSample, generate_dataset, load_dataset,
                       save_dataset, train_alpha_ensemble, default_k_min)
from .bench import (ClosedLoopResult, DatamodelPolicy, ExperimentGrid,
                    FixedSubsetPolicy, L1Policy, RandomPolicy,
                    aggregate_rows, compute_metrics, extend_track,
                    full_policy, run_closed_loop, run_grid,
                    write_aggregate_tsv, write_results_csv)

__version__ = "0.1.0"
