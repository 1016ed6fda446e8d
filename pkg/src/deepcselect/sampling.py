"""Random draws for dataset generation: initial trajectories, references,
and Bernoulli column indicators. Every draw takes an explicit seed or
Generator; derived streams come from SeedSequence tuples so parallel
generation stays order-independent."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .plants import NoiseSpec, PlantModel
from .trajectory import NonFiniteError, Trajectory

# stream purposes for per-sample derived seeds
PURPOSE_INITIAL = 1
PURPOSE_REFERENCE = 2
PURPOSE_INDICATOR = 3
PURPOSE_POLICY = 4

REF_STRATEGIES = ("constant_setpoint", "perturbation", "primitives", "relative")
INIT_DISTS = ("random_rollout_suffix", "archive_draw")


def derive_rng(master_seed: int, *stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, *stream)))


@dataclass
class SamplerSpec:
    """How Algorithm-style training draws are generated.

    alpha is the Bernoulli column-inclusion probability; T_sim the
    closed-loop evaluation length; k_min the popcount floor below which an
    indicator is resampled (0 disables the guard). burn_in is the number of
    random warm-up steps before the initial window is read off.
    """

    init_dist: str = "random_rollout_suffix"
    ref_strategy: str = "relative"
    alpha: float = 0.1
    T_sim: int = 40
    burn_in: int = 12
    input_amplitude: float = 1.0
    k_min: int = 0
    # reference strategy knobs
    setpoint_box: tuple | None = None          # constant_setpoint: (lo, hi) per channel
    perturbation_std: float = 0.1              # perturbation: noise std around nominal
    nominal_reference: np.ndarray | None = None
    primitive_amplitude: float = 0.5           # primitives: parameter scale
    relative_delta_scale: float = 0.4          # relative: offset scale per channel
    relative_delta_fixed: bool = False         # relative: fixed |delta|, random sign
    abort_error: float | None = None           # per-channel tracking-error envelope
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly in (0, 1)")
        if self.init_dist not in INIT_DISTS:
            raise ValueError(f"unknown init_dist: {self.init_dist!r}")
        if self.ref_strategy not in REF_STRATEGIES:
            raise ValueError(f"unknown ref_strategy: {self.ref_strategy!r}")


def sample_initial(plant: PlantModel, T_ini: int, spec: SamplerSpec,
                   seed, archive: list[tuple[Trajectory, np.ndarray]] | None = None):
    """Draw an initial window together with its hidden plant state.

    random_rollout_suffix: random reset, burn-in under bounded uniform
    inputs, return the last T_ini steps and the state reached at their end
    so closed-loop simulation continues from a consistent point.
    archive_draw: pick a stored window and replay the archived inputs from
    the recorded reset to reconstruct that state.

    Returns (state, u_ini, y_ini) with the windows flat and time-major.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed))
    if spec.init_dist == "random_rollout_suffix":
        burn = max(spec.burn_in, T_ini)
        x = plant.sample_initial_state(rng)
        amp = spec.input_amplitude
        std = np.broadcast_to(
            np.asarray(spec.noise.output_noise_std, dtype=float), (plant.p,))
        us = np.empty((burn, plant.m))
        ys = np.empty((burn, plant.p))
        for k in range(burn):
            u = plant.clamp_input(rng.uniform(-amp, amp, size=plant.m))
            y = plant.observe(x)
            if np.any(std > 0):
                y = y + std * rng.standard_normal(plant.p)
            us[k], ys[k] = u, y
            x = plant.step(x, u)
            if not np.all(np.isfinite(x)):
                raise NonFiniteError(f"non-finite state in burn-in step {k}", step=k)
        return x, us[-T_ini:].ravel(), ys[-T_ini:].ravel()
    # archive_draw
    if not archive:
        raise ValueError("archive_draw requires a non-empty archive")
    traj, x0 = archive[rng.integers(len(archive))]
    if traj.T < T_ini:
        raise ValueError("archived trajectory shorter than T_ini")
    end = int(rng.integers(T_ini, traj.T + 1))  # window covers [end-T_ini, end)
    x = np.asarray(x0, dtype=float).copy()
    for k in range(end):
        x = plant.step(x, traj.inputs[k])
    u_ini = traj.inputs[end - T_ini:end].ravel()
    y_ini = traj.outputs[end - T_ini:end].ravel()
    return x, u_ini, y_ini


def sample_reference(y_ini, strategy: str, seed, N: int, p: int,
                     spec: SamplerSpec | None = None) -> np.ndarray:
    """Reference window r (flat, N*p) for the coming horizon.

    constant_setpoint holds a uniform draw from the feasible output box;
    perturbation adds Gaussian noise to a nominal window; primitives picks
    one of step/ramp/sinusoid/return-to-origin with random parameters;
    relative offsets the current output by a bounded random delta.
    """
    spec = spec or SamplerSpec()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed))
    y_ini = np.asarray(y_ini, dtype=float).ravel()
    y_last = y_ini[-p:]
    if strategy == "constant_setpoint":
        if spec.setpoint_box is not None:
            lo = np.broadcast_to(np.asarray(spec.setpoint_box[0], dtype=float), (p,))
            hi = np.broadcast_to(np.asarray(spec.setpoint_box[1], dtype=float), (p,))
        else:
            lo, hi = -np.ones(p), np.ones(p)
        return np.tile(rng.uniform(lo, hi), N)
    if strategy == "perturbation":
        nominal = (np.asarray(spec.nominal_reference, dtype=float).ravel()
                   if spec.nominal_reference is not None else np.tile(y_last, N))
        if nominal.size != N * p:
            raise ValueError("nominal reference has the wrong length")
        return nominal + spec.perturbation_std * rng.standard_normal(N * p)
    if strategy == "primitives":
        amp = spec.primitive_amplitude
        kind = rng.integers(4)
        a = rng.uniform(-amp, amp, size=p)
        k = np.arange(N)[:, None]
        if kind == 0:      # step
            steps = np.tile(y_last + a, (N, 1))
        elif kind == 1:    # ramp from the current output
            frac = k / max(N - 1, 1)
            steps = y_last + frac * a
        elif kind == 2:    # sinusoid around the current output
            period = rng.uniform(0.5 * N, 2.0 * N)
            steps = y_last + a * np.sin(2.0 * np.pi * k / period)
        else:              # return to origin
            frac = 1.0 - k / max(N - 1, 1)
            steps = frac * y_last
        return steps.ravel()
    if strategy == "relative":
        if spec.relative_delta_fixed:
            delta = spec.relative_delta_scale * rng.choice([-1.0, 1.0], size=p)
        else:
            delta = rng.uniform(-spec.relative_delta_scale,
                                spec.relative_delta_scale, size=p)
        return np.tile(y_last + delta, N)
    raise ValueError(f"unknown reference strategy: {strategy!r}")


def sample_indicator(M: int, alpha: float, seed,
                     k_min: int = 0) -> tuple[np.ndarray, int]:
    """Independent Bernoulli(alpha) bits of length M.

    Resamples while the popcount falls below k_min (guarding structurally
    infeasible subsets); returns (bits, resample_count).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence(seed))
    resamples = 0
    while True:
        bits = (rng.random(M) < alpha).astype(np.uint8)
        if int(bits.sum()) >= k_min:
            return bits, resamples
        resamples += 1
        if resamples > 10_000:
            raise RuntimeError(
                f"indicator popcount never reached k_min={k_min} at alpha={alpha}")
