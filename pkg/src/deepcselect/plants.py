"""Simulated plants: a discrete LTI validation system, a torque-driven
pendulum, and an analytic two-link planar arm. All continuous-time dynamics
are RK4-discretized with a fixed step, so rollouts are deterministic."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .trajectory import NonFiniteError, Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive output noise: per-channel std (output units) and RNG seed."""

    output_noise_std: float | np.ndarray = 0.0
    seed: int = 0

    def __post_init__(self):
        std = np.asarray(self.output_noise_std, dtype=float)
        if np.any(std < 0):
            raise ValueError("noise std must be >= 0")


class PlantModel:
    """Deterministic simulated system x_{k+1} = f(x_k, u_k), y_k = h(x_k).

    Subclasses define step/observe and the dimensions (n, m, p). Instances
    are immutable and safe to share; all randomness lives in the callers.
    """

    n: int
    m: int
    p: int
    dt: float
    input_bounds: np.ndarray  # (m, 2) per-channel [lo, hi]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_initial_state(self, rng: np.random.Generator) -> np.ndarray:
        """Draw from the documented reset distribution for this plant."""
        raise NotImplementedError

    def clamp_input(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.input_bounds[:, 0], self.input_bounds[:, 1])


def _rk4(f, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class Lti2Plant(PlantModel):
    """Controllable, observable 2-state discrete LTI system with known (A, B, C)."""

    n = 2

    def __init__(self, A=None, B=None, C=None, dt: float = 0.02,
                 input_bound: float = 10.0, reset_std: float = 0.5):
        self.A = np.array([[0.9, 0.2], [0.0, 0.8]] if A is None else A, dtype=float)
        self.B = np.array([[0.0], [1.0]] if B is None else B, dtype=float)
        self.C = np.array([[1.0, 0.0]] if C is None else C, dtype=float)
        if self.A.shape != (2, 2):
            raise ValueError("lti2 requires a 2x2 A matrix")
        self.m = self.B.shape[1]
        self.p = self.C.shape[0]
        self.dt = float(dt)
        self.reset_std = float(reset_std)
        self.input_bounds = np.tile([-input_bound, input_bound], (self.m, 1)).astype(float)

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def observe(self, x):
        return self.C @ x

    def sample_initial_state(self, rng):
        return self.reset_std * rng.standard_normal(self.n)


class PendulumPlant(PlantModel):
    """Torque-driven damped pendulum, state (angle, rate), RK4-discretized.

    output="angle" gives y = theta (p=1); output="trig" gives
    y = (sin theta, cos theta, rate) (p=3).
    """

    n = 2
    m = 1

    def __init__(self, mass: float = 0.2, length: float = 0.5,
                 damping: float = 0.1, gravity: float = 9.81,
                 dt: float = 0.05, torque_bound: float = 1.0,
                 output: str = "angle",
                 reset_angle: float = 1.0, reset_rate: float = 1.0):
        if mass <= 0 or length <= 0:
            raise ValueError("mass and length must be positive")
        if output not in ("angle", "trig"):
            raise ValueError(f"unknown pendulum output mode: {output!r}")
        self.mass, self.length = float(mass), float(length)
        self.damping, self.gravity = float(damping), float(gravity)
        self.dt = float(dt)
        self.output = output
        self.p = 1 if output == "angle" else 3
        self.input_bounds = np.array([[-torque_bound, torque_bound]], dtype=float)
        self.reset_angle, self.reset_rate = float(reset_angle), float(reset_rate)
        self._inertia = self.mass * self.length ** 2

    def _deriv(self, x, u):
        theta, omega = x
        domega = (u[0] - self.damping * omega
                  - self.mass * self.gravity * self.length * np.sin(theta)) / self._inertia
        return np.array([omega, domega])

    def step(self, x, u):
        return _rk4(self._deriv, x, u, self.dt)

    def observe(self, x):
        if self.output == "angle":
            return np.array([x[0]])
        return np.array([np.sin(x[0]), np.cos(x[0]), x[1]])

    def sample_initial_state(self, rng):
        return np.array([
            rng.uniform(-self.reset_angle, self.reset_angle),
            rng.uniform(-self.reset_rate, self.reset_rate),
        ])


class Reacher2LinkPlant(PlantModel):
    """Two-link planar arm with viscous joint friction, horizontal plane.

    State (q1, q2, qd1, qd2); inputs are the two joint torques; outputs are
    (sin q1, cos q1, sin q2, cos q2, ee_x, ee_y, qd1, qd2). Links are uniform
    rods (COM at mid-length, inertia m*l^2/12 about the COM).
    """

    n = 4
    m = 2
    p = 8

    def __init__(self, masses=(1.0, 1.0), lengths=(0.5, 0.5),
                 friction=(0.5, 0.5), gravity: float = 0.0,
                 dt: float = 0.02, torque_bound: float = 1.0,
                 reset_angle: float = np.pi, reset_rate: float = 0.5):
        m1, m2 = (float(v) for v in masses)
        l1, l2 = (float(v) for v in lengths)
        if min(m1, m2, l1, l2) <= 0:
            raise ValueError("masses and lengths must be positive")
        self.m1, self.m2, self.l1, self.l2 = m1, m2, l1, l2
        self.lc1, self.lc2 = l1 / 2.0, l2 / 2.0
        self.I1, self.I2 = m1 * l1 ** 2 / 12.0, m2 * l2 ** 2 / 12.0
        self.friction = np.asarray(friction, dtype=float)
        self.gravity = float(gravity)
        self.dt = float(dt)
        self.input_bounds = np.tile([-torque_bound, torque_bound], (2, 1)).astype(float)
        self.reset_angle, self.reset_rate = float(reset_angle), float(reset_rate)
        # mass-matrix constants
        self._a1 = self.I1 + self.I2 + m1 * self.lc1 ** 2 + m2 * (l1 ** 2 + self.lc2 ** 2)
        self._a2 = m2 * l1 * self.lc2
        self._a3 = self.I2 + m2 * self.lc2 ** 2

    def mass_matrix(self, q: np.ndarray) -> np.ndarray:
        c2 = np.cos(q[1])
        return np.array([
            [self._a1 + 2.0 * self._a2 * c2, self._a3 + self._a2 * c2],
            [self._a3 + self._a2 * c2, self._a3],
        ])

    def _deriv(self, x, u):
        q, qd = x[:2], x[2:]
        s2 = np.sin(q[1])
        M = self.mass_matrix(q)
        cor = np.array([
            -self._a2 * s2 * qd[1] * (2.0 * qd[0] + qd[1]),
            self._a2 * s2 * qd[0] ** 2,
        ])
        grav = np.zeros(2)
        if self.gravity != 0.0:
            g = self.gravity
            grav = np.array([
                g * (self.m1 * self.lc1 + self.m2 * self.l1) * np.sin(q[0])
                + g * self.m2 * self.lc2 * np.sin(q[0] + q[1]),
                g * self.m2 * self.lc2 * np.sin(q[0] + q[1]),
            ])
        qdd = np.linalg.solve(M, u - cor - grav - self.friction * qd)
        return np.concatenate([qd, qdd])

    def step(self, x, u):
        return _rk4(self._deriv, x, u, self.dt)

    def observe(self, x):
        q1, q2, qd1, qd2 = x
        ee_x = self.l1 * np.cos(q1) + self.l2 * np.cos(q1 + q2)
        ee_y = self.l1 * np.sin(q1) + self.l2 * np.sin(q1 + q2)
        return np.array([np.sin(q1), np.cos(q1), np.sin(q2), np.cos(q2),
                         ee_x, ee_y, qd1, qd2])

    def kinetic_energy(self, x: np.ndarray) -> float:
        qd = x[2:]
        return 0.5 * float(qd @ self.mass_matrix(x[:2]) @ qd)

    def sample_initial_state(self, rng):
        return np.concatenate([
            rng.uniform(-self.reset_angle, self.reset_angle, size=2),
            rng.uniform(-self.reset_rate, self.reset_rate, size=2),
        ])


_PLANTS = {
    "lti2": Lti2Plant,
    "pendulum": PendulumPlant,
    "reacher2link": Reacher2LinkPlant,
}


def make_plant(kind: str, params: dict | None = None) -> PlantModel:
    """Instantiate a plant by kind with optional parameter overrides."""
    if kind not in _PLANTS:
        raise ValueError(f"unknown plant kind: {kind!r} (choose from {sorted(_PLANTS)})")
    return _PLANTS[kind](**(params or {}))


def rollout(plant: PlantModel, x0: np.ndarray, inputs: np.ndarray,
            noise: NoiseSpec | None = None) -> Trajectory:
    """Simulate the plant from x0 under the given input sequence.

    Inputs outside the plant's bounds are clamped (counted in a debug log).
    Output noise is drawn from the NoiseSpec's seeded stream; std 0 gives
    the exact noiseless path.

    Raises:
        NonFiniteError: the state left the finite range, with the step index.
    """
    u_seq = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u_seq.shape[1] != plant.m:
        raise ValueError(f"inputs have dim {u_seq.shape[1]}, plant expects {plant.m}")
    T = len(u_seq)
    noise = noise or NoiseSpec()
    std = np.broadcast_to(np.asarray(noise.output_noise_std, dtype=float), (plant.p,))
    rng = np.random.default_rng(np.random.SeedSequence(noise.seed))
    x = np.asarray(x0, dtype=float).copy()
    us = np.empty((T, plant.m))
    ys = np.empty((T, plant.p))
    clamped = 0
    for k in range(T):
        u = plant.clamp_input(u_seq[k])
        if not np.array_equal(u, u_seq[k]):
            clamped += 1
        y = plant.observe(x)
        if np.any(std > 0):
            y = y + std * rng.standard_normal(plant.p)
        us[k], ys[k] = u, y
        x = plant.step(x, u)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"non-finite state at step {k}", step=k)
    if clamped:
        log.debug("rollout clamped %d of %d inputs to plant bounds", clamped, T)
    return Trajectory(inputs=us, outputs=ys, dt=plant.dt)
