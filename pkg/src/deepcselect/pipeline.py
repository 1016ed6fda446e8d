"""End-to-end training-data generation: sample a context and a Bernoulli
column subset, run the closed loop with that fixed subset, record the cost.
Also owns dataset persistence and per-alpha training orchestration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import sampling
from .bench import FixedSubsetPolicy, run_closed_loop
from .datamodel import (ContextNet, ModelRegistry, TrainOptions, context_dim,
                        make_context, train_net)
from .plants import PlantModel
from .sampling import (PURPOSE_INDICATOR, PURPOSE_INITIAL, PURPOSE_REFERENCE,
                       SamplerSpec, derive_rng, sample_indicator,
                       sample_initial, sample_reference)
from .solver import DeepcConfig
from .trajectory import ColumnSubset, HankelSet

log = logging.getLogger(__name__)

__all__ = [
    "TrainingSample", "SamplerSpec", "sample_initial", "sample_reference",
    "sample_indicator", "generate_dataset", "train_alpha_ensemble",
    "save_dataset", "load_dataset", "default_k_min",
]


@dataclass
class TrainingSample:
    """One record: raw context, indicator bits, observed closed-loop cost."""

    u_ini: np.ndarray
    y_ini: np.ndarray
    r: np.ndarray
    bits: np.ndarray           # uint8 length M
    J: float
    meta: dict = field(default_factory=dict)

    def subset(self) -> ColumnSubset:
        return ColumnSubset(np.flatnonzero(self.bits))


def default_k_min(m: int, p: int, T_ini: int) -> int:
    """Popcount floor keeping the reduced equality system plausibly solvable."""
    return (m + p) * T_ini


def generate_dataset(plant: PlantModel, h: HankelSet, spec: SamplerSpec,
                     deepc_cfg: DeepcConfig, N_train: int, master_seed: int,
                     archive=None) -> list[TrainingSample]:
    """Closed-loop cost labels for N_train random (context, subset) draws.

    Per-sample RNG streams derive from (master_seed, i, purpose), so each
    sample is reproducible in isolation. Runs whose solver reports
    infeasibility at any step, or that leave the finite range, receive a
    penalty cost of 10x the 95th percentile of the feasible costs seen at
    earlier indices (or over the whole batch when none precede them) and
    are flagged in meta["status"].
    """
    T_ini, N, p = h.T_ini, h.N, h.p
    k_min = spec.k_min if spec.k_min else default_k_min(h.m, p, T_ini)
    samples: list[TrainingSample] = []
    feasible_costs: list[float] = []
    pending_penalty: list[int] = []
    for i in range(N_train):
        init_rng = derive_rng(master_seed, i, PURPOSE_INITIAL)
        x0, u_ini, y_ini = sample_initial(plant, T_ini, spec, init_rng, archive)
        ref_rng = derive_rng(master_seed, i, PURPOSE_REFERENCE)
        r = sample_reference(y_ini, spec.ref_strategy, ref_rng, N, p, spec)
        ind_rng = derive_rng(master_seed, i, PURPOSE_INDICATOR)
        bits, resamples = sample_indicator(h.M, spec.alpha, ind_rng, k_min)
        meta = {"i": i, "seed": master_seed, "T_sim": spec.T_sim,
                "alpha": spec.alpha, "resamples": resamples, "status": "ok"}
        policy = FixedSubsetPolicy(ColumnSubset(np.flatnonzero(bits)))
        try:
            res = run_closed_loop(plant, x0, u_ini, y_ini, h, policy, r,
                                  deepc_cfg, spec.T_sim,
                                  noise_std=spec.noise.output_noise_std,
                                  abort_error=spec.abort_error)
            if res.aborted:
                meta["status"] = "diverged"
                J = np.nan
            elif res.infeasible_steps > 0:
                meta["status"] = "infeasible"
                J = np.nan
            else:
                J = res.cost
        except Exception as exc:  # noqa: BLE001 - batch keeps going
            log.warning("sample %d failed: %s", i, exc)
            meta["status"] = "diverged"
            J = np.nan
        sample = TrainingSample(u_ini=u_ini, y_ini=y_ini, r=r, bits=bits,
                                J=float(J) if np.isfinite(J) else np.nan,
                                meta=meta)
        samples.append(sample)
        if meta["status"] == "ok":
            feasible_costs.append(sample.J)
        else:
            if feasible_costs:
                sample.J = 10.0 * float(np.percentile(feasible_costs, 95))
            else:
                pending_penalty.append(i)
    if pending_penalty:
        if not feasible_costs:
            raise RuntimeError("every sample failed; no feasible cost scale")
        penalty = 10.0 * float(np.percentile(feasible_costs, 95))
        for i in pending_penalty:
            samples[i].J = penalty
    n_flagged = sum(1 for s in samples if s.meta["status"] != "ok")
    if n_flagged:
        log.info("generate_dataset: %d of %d samples penalized", n_flagged, N_train)
    return samples


# --- persistence ------------------------------------------------------------
#
# One JSON object per line; the first line is a header fixing (m, p, T_ini,
# N, M) and the sampling parameters. Indicator bits are stored as a hex
# bitmask (little-endian bit order within bytes). Floats round-trip exactly.

_DATASET_MAGIC = "deepcselect-dataset-v1"


def _bits_to_hex(bits: np.ndarray) -> str:
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes().hex()


def _hex_to_bits(s: str, M: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(s), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:M].astype(np.uint8)


def save_dataset(path: str, samples: list[TrainingSample], header: dict) -> None:
    head = dict(header)
    head["format"] = _DATASET_MAGIC
    head["n"] = len(samples)
    lines = [json.dumps(head, sort_keys=True)]
    for s in samples:
        rec = {
            "i": s.meta.get("i"),
            "seed": s.meta.get("seed"),
            "T_sim": s.meta.get("T_sim"),
            "alpha": s.meta.get("alpha"),
            "status": s.meta.get("status", "ok"),
            "resamples": s.meta.get("resamples", 0),
            "J": float(s.J),
            "u_ini": [float(v) for v in s.u_ini],
            "y_ini": [float(v) for v in s.y_ini],
            "r": [float(v) for v in s.r],
            "s": _bits_to_hex(s.bits),
        }
        lines.append(json.dumps(rec, sort_keys=True))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> tuple[list[TrainingSample], dict]:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != _DATASET_MAGIC:
            raise ValueError(f"{path} is not a recognized dataset file")
        M = int(header["M"])
        samples = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            samples.append(TrainingSample(
                u_ini=np.array(rec["u_ini"], dtype=float),
                y_ini=np.array(rec["y_ini"], dtype=float),
                r=np.array(rec["r"], dtype=float),
                bits=_hex_to_bits(rec["s"], M),
                J=float(rec["J"]),
                meta={k: rec[k] for k in
                      ("i", "seed", "T_sim", "alpha", "status", "resamples")},
            ))
    return samples, header


# --- per-alpha training -----------------------------------------------------


def build_design(samples: list[TrainingSample], encoding: str, m: int, p: int):
    """(C, S, J) matrices for network training from raw samples."""
    C = np.stack([make_context(s.u_ini, s.y_ini, s.r, encoding, m, p).vector
                  for s in samples])
    S = np.stack([s.bits.astype(float) for s in samples])
    J = np.array([s.J for s in samples], dtype=float)
    return C, S, J


def train_alpha_ensemble(datasets: dict[float, list[TrainingSample]],
                         m: int, p: int, T_ini: int, N: int, M: int,
                         encoding: str = "direct",
                         hidden=(256, 256, 256), activation: str = "relu",
                         opts: TrainOptions | None = None) -> ModelRegistry:
    """Train one context network per inclusion probability alpha.

    Divergence for one alpha is reported and skipped; the rest continue.
    Each stored model records its alpha, validation loss, context encoding,
    and the problem dimensions it was trained for.
    """
    if not datasets:
        raise ValueError("need at least one per-alpha dataset")
    opts = opts or TrainOptions()
    d_in = context_dim(encoding, m, p, T_ini, N)
    registry = ModelRegistry()
    for alpha in sorted(datasets):
        samples = datasets[alpha]
        C, S, J = build_design(samples, encoding, m, p)
        net = ContextNet([d_in, *hidden, M + 1], activation=activation,
                         seed=opts.seed)
        try:
            result = train_net(net, C, S, J, opts)
        except FloatingPointError as exc:
            log.error("training diverged for alpha=%g: %s", alpha, exc)
            continue
        val = float(result.val_loss[-1]) if len(result.val_loss) else np.nan
        registry.add(alpha, result.net, meta={
            "encoding": encoding, "m": m, "p": p, "T_ini": T_ini, "N": N,
            "M": M, "val_loss": val,
            "train_loss": float(result.train_loss[-1]),
        })
        log.info("alpha=%g trained: train %.4g, val %.4g",
                 alpha, result.train_loss[-1], val)
    if not len(registry):
        raise RuntimeError("all per-alpha trainings diverged")
    return registry
