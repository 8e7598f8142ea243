"""Linear dynamical systems: simulation, disturbance generators, stability certificates.

State evolution is x' = A x + B u + w with an adversarially generated, norm-bounded
disturbance w.  Disturbances are exactly recoverable from observed transitions
when the dynamics matrices are known, which the controllers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .oco import ContractViolation


@dataclass(frozen=True)
class LinearSystem:
    """Dynamics pair (A, B) with declared operator-norm and disturbance bounds."""

    A: np.ndarray
    B: np.ndarray
    kappa_A: float = None  # type: ignore[assignment]
    kappa_B: float = None  # type: ignore[assignment]
    w_bound: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractViolation("A must be square")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ContractViolation("B must have the same number of rows as A")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        norm_A = float(np.linalg.norm(A, 2))
        norm_B = float(np.linalg.norm(B, 2))
        if self.kappa_A is None:
            object.__setattr__(self, "kappa_A", norm_A)
        if self.kappa_B is None:
            object.__setattr__(self, "kappa_B", max(norm_B, 1e-12))
        if norm_A > self.kappa_A * (1 + 1e-9) or norm_B > self.kappa_B * (1 + 1e-9):
            raise ContractViolation("operator norms exceed the declared bounds")

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_u(self) -> int:
        return self.B.shape[1]


def step_dynamics(system: LinearSystem, x, u, w) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (system.d_x,) or u.shape != (system.d_u,) or w.shape != (system.d_x,):
        raise ContractViolation("dimension mismatch in dynamics step")
    return system.A @ x + system.B @ u + w


def recover_disturbance(system: LinearSystem, x_next, x, u) -> np.ndarray:
    x_next = np.asarray(x_next, dtype=float)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (system.d_x,) or u.shape != (system.d_u,) or x_next.shape != (system.d_x,):
        raise ContractViolation("dimension mismatch in disturbance recovery")
    return x_next - system.A @ x - system.B @ u


@dataclass(frozen=True)
class StabilityCertificate:
    """Similarity transform A - B K = H L H^{-1} with contraction and norm bounds.

    ``accepted`` is False either because a declared bound fails or because the
    closed-loop matrix could not be reliably diagonalized; ``reason`` says which.
    """

    accepted: bool
    kappa: float
    gamma: float
    transform: np.ndarray | None = None   # H (possibly complex)
    modes: np.ndarray | None = None       # diagonal of L
    reason: str = ""

    def reconstruction(self, closed_loop: np.ndarray) -> float:
        if self.transform is None:
            return float("inf")
        H = self.transform
        rebuilt = H @ np.diag(self.modes) @ np.linalg.inv(H)
        return float(np.max(np.abs(rebuilt - closed_loop)))


def certify_strong_stability(system: LinearSystem, K, kappa: float | None = None,
                             gamma: float | None = None) -> StabilityCertificate:
    """Certify K through an eigendecomposition of A - B K.

    With L the diagonal eigenvalue matrix and H the (column-normalized)
    eigenvector matrix, acceptance requires ||L|| <= 1 - gamma and
    max(||K||, ||H||, ||H^{-1}||) <= kappa.  When kappa/gamma are omitted the
    measured values are certified.  A defective closed loop yields an explicit
    rejection instead of an exception.
    """
    K = np.asarray(K, dtype=float)
    if K.shape != (system.d_u, system.d_x):
        raise ContractViolation("K must be d_u x d_x")
    closed = system.A - system.B @ K
    eigvals, eigvecs = np.linalg.eig(closed)
    eigvecs = eigvecs / np.linalg.norm(eigvecs, axis=0, keepdims=True)
    cond = float(np.linalg.cond(eigvecs))
    if not np.isfinite(cond) or cond > 1e12:
        return StabilityCertificate(False, float("nan"), float("nan"),
                                    reason="closed loop is not reliably diagonalizable")
    rebuilt = eigvecs @ np.diag(eigvals) @ np.linalg.inv(eigvecs)
    if np.max(np.abs(rebuilt - closed)) > 1e-8:
        return StabilityCertificate(False, float("nan"), float("nan"),
                                    reason="eigendecomposition does not reconstruct the closed loop")

    rho = float(np.max(np.abs(eigvals)))
    measured_kappa = max(float(np.linalg.norm(K, 2)),
                         float(np.linalg.norm(eigvecs, 2)),
                         float(np.linalg.norm(np.linalg.inv(eigvecs), 2)))
    measured_gamma = 1.0 - rho
    kappa = measured_kappa if kappa is None else float(kappa)
    gamma = measured_gamma if gamma is None else float(gamma)
    if gamma <= 0 or gamma >= 1:
        return StabilityCertificate(False, kappa, gamma, eigvecs, eigvals,
                                    reason=f"spectral radius {rho:.6g} leaves no contraction margin")
    if rho > 1 - gamma + 1e-12:
        return StabilityCertificate(False, kappa, gamma, eigvecs, eigvals,
                                    reason=f"||L|| = {rho:.6g} exceeds 1 - gamma = {1 - gamma:.6g}")
    if measured_kappa > kappa + 1e-12:
        return StabilityCertificate(False, kappa, gamma, eigvecs, eigvals,
                                    reason=f"norm bound {measured_kappa:.6g} exceeds kappa = {kappa:.6g}")
    return StabilityCertificate(True, kappa, gamma, eigvecs, eigvals)


_KINDS = ("constant", "gaussian-clipped", "sinusoidal", "piecewise-step", "adversarial-sign")


@dataclass(frozen=True)
class DisturbanceGenerator:
    """Seeded disturbance source; every emitted vector lies in the W-ball (l2 clip)."""

    kind: str
    dim: int
    amplitude: float
    seed: int = 0
    period: int = 50

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractViolation(f"unknown disturbance kind {self.kind!r}; pick one of {_KINDS}")
        if self.amplitude < 0:
            raise ContractViolation("amplitude must be non-negative")

    def sequence(self, T: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        t = np.arange(T)[:, None]
        if self.kind == "constant":
            direction = rng.standard_normal(self.dim)
            direction /= max(np.linalg.norm(direction), 1e-12)
            out = np.tile(self.amplitude * direction, (T, 1))
        elif self.kind == "gaussian-clipped":
            out = rng.standard_normal((T, self.dim)) * self.amplitude / np.sqrt(self.dim)
        elif self.kind == "sinusoidal":
            phases = rng.uniform(0, 2 * np.pi, self.dim)
            out = self.amplitude / np.sqrt(self.dim) * np.sin(2 * np.pi * t / self.period + phases)
        elif self.kind == "piecewise-step":
            n_seg = max(1, T // self.period + 1)
            levels = rng.uniform(-1, 1, (n_seg, self.dim))
            levels *= self.amplitude / np.maximum(np.linalg.norm(levels, axis=1, keepdims=True), 1e-12)
            out = levels[np.arange(T) // self.period]
        else:  # adversarial-sign
            signs = rng.choice([-1.0, 1.0], size=(T, self.dim))
            out = signs * self.amplitude / np.sqrt(self.dim)
        return clip_to_ball(out, self.amplitude)


def clip_to_ball(vectors: np.ndarray, bound: float) -> np.ndarray:
    """Scale rows down to l2 norm <= bound (rows already inside are untouched)."""
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    scale = np.where(norms > bound, bound / np.maximum(norms, 1e-300), 1.0)
    return vectors * scale


@dataclass
class Trajectory:
    """Closed-loop record; every transition satisfies the dynamics residual check."""

    states: np.ndarray        # (T + 1, d_x)
    actions: np.ndarray       # (T, d_u)
    disturbances: np.ndarray  # (T, d_x)
    costs: np.ndarray         # (T,)

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    def max_residual(self, system: LinearSystem) -> float:
        pred = (self.states[:-1] @ system.A.T + self.actions @ system.B.T + self.disturbances)
        return float(np.max(np.linalg.norm(self.states[1:] - pred, axis=1))) if self.T else 0.0


def simulate(system: LinearSystem, policy: Callable[[int, np.ndarray], np.ndarray],
             disturbances: np.ndarray, x0=None,
             cost: Callable[[int, np.ndarray, np.ndarray], float] | None = None) -> Trajectory:
    """Roll the closed loop forward under ``policy(t, x) -> u``."""
    disturbances = np.asarray(disturbances, dtype=float)
    T = disturbances.shape[0]
    x = np.zeros(system.d_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((T + 1, system.d_x))
    actions = np.empty((T, system.d_u))
    costs = np.zeros(T)
    states[0] = x
    for t in range(T):
        u = np.asarray(policy(t, states[t]), dtype=float)
        actions[t] = u
        if cost is not None:
            costs[t] = cost(t, states[t], u)
        states[t + 1] = step_dynamics(system, states[t], u, disturbances[t])
    return Trajectory(states, actions, disturbances, costs)


def random_stable_system(d_x: int, d_u: int, spectral_radius: float, seed: int,
                         normal: bool = False, w_bound: float = 1.0) -> LinearSystem:
    """Random diagonalizable A scaled to the requested spectral radius; B rescaled to unit norm.

    With ``normal=True`` the A matrix is symmetric, so its eigenvector basis is
    orthonormal and the zero controller certifies with kappa = 1.
    """
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((d_x, d_x))
    if normal:
        raw = (raw + raw.T) / 2.0
    rho = float(np.max(np.abs(np.linalg.eigvals(raw))))
    A = raw * (spectral_radius / max(rho, 1e-12))
    B = rng.uniform(-1, 1, (d_x, d_u))
    B = B / max(float(np.linalg.norm(B, 2)), 1e-12)
    return LinearSystem(A, B, w_bound=w_bound)


@dataclass(frozen=True)
class SystemPreset:
    """Named benchmark system with a certified stabilizing controller."""

    name: str
    system: LinearSystem
    K: np.ndarray
    certificate: StabilityCertificate
    disturbance: DisturbanceGenerator


_PRESET_BUILDERS = {}


def _register(name):
    def deco(fn):
        _PRESET_BUILDERS[name] = fn
        return fn
    return deco


@_register("mild-3x2")
def _mild_3x2(seed: int = 0) -> SystemPreset:
    # symmetric A (orthonormal eigenbasis, kappa = 1) with comfortable contraction
    system = random_stable_system(3, 2, spectral_radius=0.6, seed=seed, normal=True, w_bound=0.5)
    K = np.zeros((2, 3))
    cert = certify_strong_stability(system, K, kappa=1.0, gamma=0.4)
    gen = DisturbanceGenerator("sinusoidal", 3, amplitude=0.5, seed=seed + 1, period=40)
    return SystemPreset("mild-3x2", system, K, cert, gen)


@_register("spin-3x2")
def _spin_3x2(seed: int = 0) -> SystemPreset:
    # generic (non-normal) stable A at spectral radius 0.9; certificate derived
    system = random_stable_system(3, 2, spectral_radius=0.9, seed=seed, w_bound=0.5)
    K = np.zeros((2, 3))
    cert = certify_strong_stability(system, K)
    gen = DisturbanceGenerator("gaussian-clipped", 3, amplitude=0.5, seed=seed + 1)
    return SystemPreset("spin-3x2", system, K, cert, gen)


@_register("scaling-3x1")
def _scaling_3x1(seed: int = 0) -> SystemPreset:
    # single-input plant: the worst-case tuning constants are tight here, so the
    # horizon-tuned learner is actually responsive at desk scale
    system = random_stable_system(3, 1, spectral_radius=0.55, seed=seed + 7, normal=True,
                                  w_bound=0.6)
    K = np.zeros((1, 3))
    cert = certify_strong_stability(system, K, kappa=1.0, gamma=0.45)
    gen = DisturbanceGenerator("piecewise-step", 3, amplitude=0.6, seed=seed + 1, period=50)
    return SystemPreset("scaling-3x1", system, K, cert, gen)


@_register("sysid-3x2")
def _sysid_3x2(seed: int = 0) -> SystemPreset:
    rng = np.random.default_rng(seed + 17)
    A = np.array([[0.6, 0.1, 0.0],
                  [0.0, 0.5, 0.1],
                  [0.1, 0.0, 0.4]])
    B = rng.uniform(-1, 1, (3, 2))
    B = B / max(float(np.linalg.norm(B, 2)), 1e-12)
    system = LinearSystem(A, B, w_bound=0.1)
    K = np.zeros((2, 3))
    cert = certify_strong_stability(system, K)
    gen = DisturbanceGenerator("gaussian-clipped", 3, amplitude=0.1, seed=seed + 2)
    return SystemPreset("sysid-3x2", system, K, cert, gen)


def preset(name: str, seed: int = 0) -> SystemPreset:
    try:
        builder = _PRESET_BUILDERS[name]
    except KeyError:
        raise ContractViolation(
            f"unknown system preset {name!r}; available: {sorted(_PRESET_BUILDERS)}") from None
    return builder(seed)


def preset_names() -> list[str]:
    return sorted(_PRESET_BUILDERS)
