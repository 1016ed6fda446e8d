"""Cost prediction from column-inclusion indicators.

Two routes: a fixed-context linear model (theta, theta0) estimated by ridge
regression with an unpenalized intercept, and a small MLP that maps a
control context to (theta(c), theta0(c)). The MLP is plain numpy with
manual backpropagation and Adam updates, so training is bit-reproducible.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class LinearDatamodel:
    """Fixed-context influence coefficients and bias, in cost units."""

    theta: np.ndarray
    theta0: float

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).ravel()
        if not (np.all(np.isfinite(th)) and np.isfinite(self.theta0)):
            raise ValueError("datamodel parameters must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "theta0", float(self.theta0))


def predict_linear(dm: LinearDatamodel, s) -> float:
    """Predicted cost s^T theta + theta0 for an indicator vector s."""
    s = np.asarray(s, dtype=float).ravel()
    if s.size != dm.theta.size:
        raise ValueError(f"indicator length {s.size} != theta length {dm.theta.size}")
    return float(s @ dm.theta + dm.theta0)


def ridge_fit(S: np.ndarray, J: np.ndarray, lam: float) -> LinearDatamodel:
    """Least squares of J on indicator rows with an L2 penalty on theta only.

    The intercept is unpenalized, implemented by centering: theta solves
    (Sc^T Sc + lam I) theta = Sc^T Jc on the mean-removed data, and
    theta0 = mean(J) - mean(S) @ theta. At lam = 0 with collinear columns
    the minimum-norm solution is returned and a warning is emitted.
    """
    S = np.asarray(S, dtype=float)
    J = np.asarray(J, dtype=float).ravel()
    if S.ndim != 2 or len(S) != J.size or len(S) < 1:
        raise ValueError("S must be (N_train, M) with one cost per row")
    if lam < 0:
        raise ValueError("ridge penalty must be >= 0")
    s_mean = S.mean(axis=0)
    j_mean = J.mean()
    Sc = S - s_mean
    Jc = J - j_mean
    G = Sc.T @ Sc + lam * np.eye(S.shape[1])
    rhs = Sc.T @ Jc
    if lam > 0:
        theta = np.linalg.solve(G, rhs)
    else:
        rank = np.linalg.matrix_rank(Sc)
        if rank < S.shape[1]:
            warnings.warn(
                "collinear indicator columns at lam=0; returning the "
                "minimum-norm solution", RuntimeWarning)
        theta, *_ = np.linalg.lstsq(Sc, Jc, rcond=None)
    return LinearDatamodel(theta=theta, theta0=j_mean - s_mean @ theta)


# --- contexts ---------------------------------------------------------------


@dataclass(frozen=True)
class Context:
    """Conditioning vector for influence prediction."""

    encoding: str  # direct | compressed | relative
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


def context_dim(encoding: str, m: int, p: int, T_ini: int, N: int) -> int:
    if encoding in ("direct", "relative"):
        return (m + p) * T_ini + p * N
    if encoding == "compressed":
        return m + 5 * p
    raise ValueError(f"unknown context encoding: {encoding!r}")


def make_context(u_ini, y_ini, r, encoding: str, m: int, p: int) -> Context:
    """Assemble the conditioning vector from flat (u_ini, y_ini, r).

    direct concatenates everything; compressed keeps channel-wise summary
    statistics (mean u_ini, mean y_ini, last y, first/last/mean reference);
    relative re-expresses the reference as an offset from the last output.
    """
    u_ini = np.asarray(u_ini, dtype=float).ravel()
    y_ini = np.asarray(y_ini, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    if u_ini.size % m or y_ini.size % p or r.size % p:
        raise ValueError("u_ini/y_ini/r sizes inconsistent with (m, p)")
    T_ini = y_ini.size // p
    if u_ini.size // m != T_ini:
        raise ValueError("u_ini and y_ini imply different T_ini")
    y_last = y_ini[-p:]
    if encoding == "direct":
        vec = np.concatenate([u_ini, y_ini, r])
    elif encoding == "relative":
        N = r.size // p
        vec = np.concatenate([u_ini, y_ini, r - np.tile(y_last, N)])
    elif encoding == "compressed":
        u_mean = u_ini.reshape(T_ini, m).mean(axis=0)
        y_mean = y_ini.reshape(T_ini, p).mean(axis=0)
        r_steps = r.reshape(-1, p)
        vec = np.concatenate([u_mean, y_mean, y_last,
                              r_steps[0], r_steps[-1], r_steps.mean(axis=0)])
    else:
        raise ValueError(f"unknown context encoding: {encoding!r}")
    return Context(encoding=encoding, vector=vec)


# --- context network --------------------------------------------------------


class ContextNet:
    """MLP from a context vector to M influence coefficients plus a bias.

    Layer sizes run [d_in, hidden..., M+1]. Inputs are standardized with
    stored per-dimension statistics before the first layer. Weights use the
    uniform +-sqrt(6/(fan_in+fan_out)) init, seeded.
    """

    def __init__(self, layer_sizes, activation: str = "relu", seed: int = 0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output layers, all >= 1")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        self.layer_sizes = sizes
        self.activation = activation
        self.M = sizes[-1] - 1
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))
        self.in_mean = np.zeros(sizes[0])
        self.in_std = np.ones(sizes[0])

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    def set_standardization(self, mean, std) -> None:
        mean = np.asarray(mean, dtype=float).ravel()
        std = np.asarray(std, dtype=float).ravel()
        if mean.size != self.d_in or std.size != self.d_in:
            raise ValueError("standardization stats must match input dim")
        self.in_mean = mean
        self.in_std = np.where(std > 1e-12, std, 1.0)

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)

    def _act_grad(self, z, a):
        if self.activation == "relu":
            return (z > 0.0).astype(float)
        return 1.0 - a * a

    def forward_batch(self, C: np.ndarray) -> np.ndarray:
        """(B, d_in) contexts to (B, M+1) raw outputs."""
        A = (np.atleast_2d(C) - self.in_mean) / self.in_std
        n_layers = len(self.weights)
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            Z = A @ W.T + b
            A = self._act(Z) if l < n_layers - 1 else Z
        return A

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b

    def copy(self) -> "ContextNet":
        dup = ContextNet(self.layer_sizes, self.activation, seed=0)
        dup.weights = [W.copy() for W in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup.in_mean = self.in_mean.copy()
        dup.in_std = self.in_std.copy()
        return dup


def net_forward(net: ContextNet, c: Context | np.ndarray):
    """Influence coefficients and bias for one context: (theta, theta0)."""
    vec = c.vector if isinstance(c, Context) else np.asarray(c, dtype=float).ravel()
    if vec.size != net.d_in:
        raise ValueError(f"context dim {vec.size} != network input dim {net.d_in}")
    out = net.forward_batch(vec[None, :])[0]
    return out[:-1], float(out[-1])


def net_loss_grad(net: ContextNet, C: np.ndarray, S: np.ndarray, J: np.ndarray,
                  lambda_phi: float = 0.0):
    """Mean squared datamodel residual plus L2 penalty, with exact gradients.

    For each sample the residual is theta(c)^T s + theta0(c) - J; it enters
    the backward pass through the output slots [s; 1]. Returns
    (loss, grads) with grads ordered as parameters() yields them.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    J = np.asarray(J, dtype=float).ravel()
    B = len(C)
    if B == 0:
        raise ValueError("empty batch")
    if len(S) != B or J.size != B:
        raise ValueError("batch pieces have inconsistent lengths")
    if S.shape[1] != net.M:
        raise ValueError(f"indicator width {S.shape[1]} != network M {net.M}")

    A = (C - net.in_mean) / net.in_std
    acts = [A]
    zs = []
    n_layers = len(net.weights)
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        Z = acts[-1] @ W.T + b
        zs.append(Z)
        acts.append(net._act(Z) if l < n_layers - 1 else Z)
    out = acts[-1]
    e = np.sum(out[:, :-1] * S, axis=1) + out[:, -1] - J
    if not np.all(np.isfinite(e)):
        bad = int(np.flatnonzero(~np.isfinite(e))[0])
        raise ValueError(f"non-finite loss at batch sample {bad}")
    loss = float(np.mean(e ** 2))
    if lambda_phi > 0:
        loss += lambda_phi * sum(float(np.sum(P * P)) for P in net.parameters())

    dOut = (2.0 / B) * e[:, None] * np.hstack([S, np.ones((B, 1))])
    grads: list[np.ndarray] = [None] * (2 * n_layers)  # type: ignore[list-item]
    delta = dOut
    for l in range(n_layers - 1, -1, -1):
        gW = delta.T @ acts[l]
        gb = delta.sum(axis=0)
        if lambda_phi > 0:
            gW = gW + 2.0 * lambda_phi * net.weights[l]
            gb = gb + 2.0 * lambda_phi * net.biases[l]
        grads[2 * l] = gW
        grads[2 * l + 1] = gb
        if l > 0:
            delta = (delta @ net.weights[l]) * net._act_grad(zs[l - 1], acts[l])
    return loss, grads


def _dataset_loss(net: ContextNet, C, S, J) -> float:
    out = net.forward_batch(C)
    e = np.sum(out[:, :-1] * S, axis=1) + out[:, -1] - np.asarray(J).ravel()
    return float(np.mean(e ** 2))


@dataclass
class TrainOptions:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    lambda_phi: float = 0.0
    seed: int = 0
    val_fraction: float = 0.1
    standardize_targets: bool = True


@dataclass
class TrainResult:
    net: ContextNet
    train_loss: np.ndarray
    val_loss: np.ndarray
    val_indices: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def train_net(net: ContextNet, C: np.ndarray, S: np.ndarray, J: np.ndarray,
              opts: TrainOptions) -> TrainResult:
    """Adam training of the datamodel loss with decoupled weight decay.

    lambda_phi is applied as weight decay in the update rather than through
    the gradient; at lambda_phi = 0 the two coincide with the plain L2 loss.
    A seeded 10% split (val_fraction) is held out; per-epoch train and
    validation losses are recorded after each epoch's updates (in cost
    units). Standardizes the network inputs from the training split; when
    standardize_targets is set the costs are likewise centered and scaled
    during the updates and the final layer is rescaled back afterwards, so
    the returned network still predicts raw costs.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    J = np.asarray(J, dtype=float).ravel()
    n = len(C)
    if n == 0:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(np.random.SeedSequence((opts.seed, 0x5EED)))
    perm = rng.permutation(n)
    n_val = int(round(opts.val_fraction * n)) if n > 1 else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    net.set_standardization(C[tr_idx].mean(axis=0), C[tr_idx].std(axis=0))
    j_mean, j_scale = 0.0, 1.0
    if opts.standardize_targets and len(tr_idx):
        j_mean = float(J[tr_idx].mean())
        j_scale = float(J[tr_idx].std())
        if j_scale <= 1e-12:
            j_scale = 1.0
    J_fit = (J - j_mean) / j_scale

    mstate = [np.zeros_like(P) for P in net.parameters()]
    vstate = [np.zeros_like(P) for P in net.parameters()]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    train_curve, val_curve = [], []
    params = list(net.parameters())
    for epoch in range(opts.epochs):
        order = tr_idx[rng.permutation(len(tr_idx))]
        for start in range(0, len(order), opts.batch_size):
            batch = order[start:start + opts.batch_size]
            if batch.size == 0:
                continue
            loss, grads = net_loss_grad(net, C[batch], S[batch], J_fit[batch], 0.0)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged at epoch {epoch}, step {step}")
            step += 1
            corr1 = 1.0 - beta1 ** step
            corr2 = 1.0 - beta2 ** step
            for P, G, mom, vel in zip(params, grads, mstate, vstate):
                mom *= beta1
                mom += (1 - beta1) * G
                vel *= beta2
                vel += (1 - beta2) * G * G
                update = (mom / corr1) / (np.sqrt(vel / corr2) + eps)
                if opts.lambda_phi > 0:
                    update = update + opts.lambda_phi * P
                P -= opts.lr * update
        scale2 = j_scale * j_scale
        tr_loss = scale2 * _dataset_loss(net, C[tr_idx], S[tr_idx], J_fit[tr_idx]) \
            if len(tr_idx) else np.nan
        val_loss = scale2 * _dataset_loss(net, C[val_idx], S[val_idx], J_fit[val_idx]) \
            if len(val_idx) else np.nan
        train_curve.append(tr_loss)
        val_curve.append(val_loss)
        if len(tr_idx) and not np.isfinite(tr_loss):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
    if j_scale != 1.0 or j_mean != 0.0:
        # fold the target scaling back so the network predicts raw costs
        net.weights[-1] *= j_scale
        net.biases[-1] *= j_scale
        net.biases[-1][-1] += j_mean
    return TrainResult(net=net, train_loss=np.array(train_curve),
                       val_loss=np.array(val_curve), val_indices=val_idx)


# --- persistence ------------------------------------------------------------
#
# Model container: one JSON header line with layer sizes, activation,
# standardization statistics, the training alpha, the governing M, and the
# context encoding, followed by raw little-endian float64 parameter blocks
# in parameters() order. Deterministic bytes for identical models.

_MODEL_MAGIC = "deepcselect-model-v1"


def save_model(path: str, net: ContextNet, alpha: float | None = None,
               meta: dict | None = None) -> None:
    header = {
        "format": _MODEL_MAGIC,
        "layer_sizes": net.layer_sizes,
        "activation": net.activation,
        "M": net.M,
        "alpha": alpha,
        "meta": meta or {},
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(net.in_mean.astype("<f8").tobytes())
        f.write(net.in_std.astype("<f8").tobytes())
        for P in net.parameters():
            f.write(np.ascontiguousarray(P, dtype="<f8").tobytes())


class ModelRegistry:
    """Trained context networks keyed by their Bernoulli training alpha.

    Lookup for a target subset size K picks the network whose expected
    training subset size alpha*M is closest to K; exact ties resolve to
    the lower alpha.
    """

    def __init__(self):
        self._models: dict[float, tuple[ContextNet, dict]] = {}

    def add(self, alpha: float, net: ContextNet, meta: dict | None = None) -> None:
        self._models[float(alpha)] = (net, dict(meta or {}))

    def alphas(self) -> list[float]:
        return sorted(self._models)

    def __len__(self) -> int:
        return len(self._models)

    def lookup(self, K: int, M: int):
        """Returns (net, alpha, meta) for the alpha best matching K."""
        if not self._models:
            raise LookupError("registry holds no models")
        best = min(self._models, key=lambda a: (abs(a * M - K), a))
        net, meta = self._models[best]
        return net, best, meta

    def save_dir(self, directory: str) -> None:
        import os

        os.makedirs(directory, exist_ok=True)
        for alpha, (net, meta) in sorted(self._models.items()):
            save_model(os.path.join(directory, f"model_alpha{alpha:g}.dcm"),
                       net, alpha=alpha, meta=meta)

    @classmethod
    def load_dir(cls, directory: str) -> "ModelRegistry":
        import glob
        import os

        reg = cls()
        for path in sorted(glob.glob(os.path.join(directory, "model_alpha*.dcm"))):
            net, alpha, meta = load_model(path)
            reg.add(alpha, net, meta)
        if not len(reg):
            raise FileNotFoundError(f"no model files found under {directory}")
        return reg


def load_model(path: str):
    """Returns (net, alpha, meta)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != _MODEL_MAGIC:
            raise ValueError(f"{path} is not a recognized model file")
        net = ContextNet(header["layer_sizes"], header["activation"], seed=0)
        d = net.d_in
        net.in_mean = np.frombuffer(f.read(8 * d), dtype="<f8").copy()
        net.in_std = np.frombuffer(f.read(8 * d), dtype="<f8").copy()
        for i, P in enumerate(net.parameters()):
            flat = np.frombuffer(f.read(8 * P.size), dtype="<f8")
            if flat.size != P.size:
                raise ValueError(f"truncated model file {path}")
            arr = flat.reshape(P.shape).copy()
            if i % 2 == 0:
                net.weights[i // 2] = arr
            else:
                net.biases[i // 2] = arr
    return net, header.get("alpha"), header.get("meta", {})
