"""Input/output trajectories, block-Hankel matrices, and column subsets."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(RuntimeError):
    """A simulation or solve produced a non-finite value.

    Carries the step index at which the value first appeared (or -1 when
    the failure is not tied to a time step).
    """

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """One plant rollout: inputs (T, m), outputs (T, p), sampling period dt.

    Immutable after construction; arrays are marked read-only.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if u.ndim != 2 or y.ndim != 2:
            raise ValueError("inputs and outputs must be 2-D (T, dim) arrays")
        if len(u) != len(y):
            raise ValueError(
                f"inputs and outputs lengths differ: {len(u)} vs {len(y)}"
            )
        if len(u) < 1:
            raise ValueError("trajectory must contain at least one step")
        if u.shape[1] < 1 or y.shape[1] < 1:
            raise ValueError("input and output dimensions must be >= 1")
        object.__setattr__(self, "inputs", _readonly(u))
        object.__setattr__(self, "outputs", _readonly(y))

    @property
    def T(self) -> int:
        return len(self.inputs)

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def p(self) -> int:
        return self.outputs.shape[1]


@dataclass(frozen=True)
class ColumnSubset:
    """Strictly increasing column indices into a HankelSet."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).ravel()
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("indices must be strictly increasing and >= 0")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return int(self.indices.size)

    def validate(self, M: int) -> None:
        if len(self) and int(self.indices[-1]) >= M:
            raise IndexError(
                f"column index {int(self.indices[-1])} out of range for M={M}"
            )


@dataclass(frozen=True)
class HankelSet:
    """Partitioned block-Hankel data: Up, Yp (past) and Uf, Yf (future).

    Column j of [Up; Uf] stacks the source inputs at offsets
    source_offsets[j] .. source_offsets[j] + T_ini + N - 1, time-major;
    likewise for outputs. Columns never span trajectory boundaries.
    """

    Up: np.ndarray
    Yp: np.ndarray
    Uf: np.ndarray
    Yf: np.ndarray
    T_ini: int
    N: int
    source_offsets: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        for name in ("Up", "Yp", "Uf", "Yf"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.T_ini < 1 or self.N < 1:
            raise ValueError("T_ini and N must be >= 1")
        M = self.Up.shape[1]
        if M < 1:
            raise ValueError("HankelSet needs at least one column")
        for name in ("Yp", "Uf", "Yf"):
            if getattr(self, name).shape[1] != M:
                raise ValueError("all four blocks must share the column count")
        off = self.source_offsets
        if off is None:
            off = np.arange(M)
        off = np.asarray(off, dtype=np.intp).copy()
        if off.size != M:
            raise ValueError("source_offsets length must equal column count")
        off.setflags(write=False)
        object.__setattr__(self, "source_offsets", off)

    @property
    def M(self) -> int:
        return self.Up.shape[1]

    @property
    def m(self) -> int:
        return self.Up.shape[0] // self.T_ini

    @property
    def p(self) -> int:
        return self.Yp.shape[0] // self.T_ini

    def stacked(self) -> np.ndarray:
        """[Up; Yp; Uf; Yf] as one matrix."""
        return np.vstack([self.Up, self.Yp, self.Uf, self.Yf])


def _hankel_block(data: np.ndarray, L: int) -> np.ndarray:
    """All length-L windows of (T, d) data as columns of an (L*d, T-L+1) matrix."""
    T, d = data.shape
    M = T - L + 1
    idx = np.arange(L)[:, None] + np.arange(M)[None, :]
    # windows[k, j, a] = data[j + k, a]; column j stacks steps time-major
    windows = data[idx]
    return windows.transpose(0, 2, 1).reshape(L * d, M)


def build_hankel(trajs, T_ini: int, N: int) -> HankelSet:
    """Build the partitioned block-Hankel set from one or more trajectories.

    Columns of multiple trajectories are concatenated left to right in
    trajectory order; no column crosses a trajectory boundary.

    Args:
        trajs: a Trajectory or sequence of Trajectory with matching (m, p).
        T_ini: past window length in steps.
        N: prediction horizon in steps.

    Raises:
        ValueError: a trajectory shorter than T_ini + N, or mismatched dims.
    """
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    trajs = list(trajs)
    if not trajs:
        raise ValueError("need at least one trajectory")
    if T_ini < 1 or N < 1:
        raise ValueError("T_ini and N must be >= 1")
    L = T_ini + N
    m, p = trajs[0].m, trajs[0].p
    u_blocks, y_blocks, offsets = [], [], []
    base = 0
    for i, tr in enumerate(trajs):
        if tr.m != m or tr.p != p:
            raise ValueError(
                f"trajectory {i} has dims (m={tr.m}, p={tr.p}), expected ({m}, {p})"
            )
        if tr.T < L:
            raise ValueError(
                f"trajectory {i} too short: T={tr.T} < T_ini+N={L}"
            )
        u_blocks.append(_hankel_block(tr.inputs, L))
        y_blocks.append(_hankel_block(tr.outputs, L))
        offsets.append(base + np.arange(tr.T - L + 1))
        base += tr.T
    Hu = np.hstack(u_blocks)
    Hy = np.hstack(y_blocks)
    return HankelSet(
        Up=Hu[: m * T_ini],
        Uf=Hu[m * T_ini:],
        Yp=Hy[: p * T_ini],
        Yf=Hy[p * T_ini:],
        T_ini=T_ini,
        N=N,
        source_offsets=np.concatenate(offsets),
    )


def extract_columns(h: HankelSet, s: ColumnSubset) -> HankelSet:
    """Reduced HankelSet keeping only the columns in s, in s order."""
    s.validate(h.M)
    if len(s) == 0:
        raise ValueError("cannot extract an empty column subset")
    idx = s.indices
    return HankelSet(
        Up=h.Up[:, idx],
        Yp=h.Yp[:, idx],
        Uf=h.Uf[:, idx],
        Yf=h.Yf[:, idx],
        T_ini=h.T_ini,
        N=h.N,
        source_offsets=h.source_offsets[idx],
    )


def excitation_rank(h: HankelSet, rtol: float = 1e-9) -> int:
    """Numerical rank of [Up; Yp; Uf; Yf].

    Counts singular values above rtol times the largest one. For rich data
    from an LTI system of order n this equals m*(T_ini+N) + n.
    """
    sv = np.linalg.svd(h.stacked(), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def full_subset(h: HankelSet) -> ColumnSubset:
    return ColumnSubset(np.arange(h.M))


# --- persistence -----------------------------------------------------------
#
# Trajectories persist as CSV (header: k,u_0..u_{m-1},y_0..y_{p-1}) plus a
# key=value sidecar <path>.meta recording at least m, p, dt, seed.


def save_trajectory(path: str, traj: Trajectory, meta: dict | None = None) -> None:
    m, p = traj.m, traj.p
    cols = ["k"] + [f"u_{i}" for i in range(m)] + [f"y_{i}" for i in range(p)]
    lines = [",".join(cols)]
    for k in range(traj.T):
        row = [str(k)]
        row += [repr(float(v)) for v in traj.inputs[k]]
        row += [repr(float(v)) for v in traj.outputs[k]]
        lines.append(",".join(row))
    with open(path, "w", newline="") as f:
        f.write("\n".join(lines) + "\n")
    merged = {"m": m, "p": p, "dt": traj.dt}
    if meta:
        merged.update(meta)
    with open(path + ".meta", "w", newline="") as f:
        for key in sorted(merged):
            f.write(f"{key}={_format_meta(merged[key])}\n")


def _format_meta(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(repr(float(x)) for x in np.asarray(v).ravel())
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_trajectory(path: str) -> tuple[Trajectory, dict]:
    meta: dict = {}
    meta_path = path + ".meta"
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            for line in f:
                line = line.strip()
                if line and "=" in line:
                    key, val = line.split("=", 1)
                    meta[key] = val
    with open(path) as f:
        header = f.readline().strip().split(",")
        m = sum(1 for c in header if c.startswith("u_"))
        p = sum(1 for c in header if c.startswith("y_"))
        rows = [line.strip().split(",") for line in f if line.strip()]
    data = np.array([[float(v) for v in row[1:]] for row in rows])
    dt = float(meta.get("dt", 1.0))
    return Trajectory(inputs=data[:, :m], outputs=data[:, m:m + p], dt=dt), meta
