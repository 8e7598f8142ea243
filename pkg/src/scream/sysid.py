"""System identification via random sign inputs, and the explore-then-commit pipeline.

For T0 rounds the plant is driven by u = -K x + z with z drawn i.i.d. from
{-1, +1}^(d_u).  The moment estimates N_j average x_{t+j+1} z_t^T and converge
to (A - B K)^j B at the usual square-root rate, after which (A, B) are
recovered by a least-squares read-off.  The pipeline then hands the estimated
dynamics to the controller while true costs keep accruing on the true plant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import ControlConfig, ControlRun, run_scream_control
from .dac import ClosedLoop, DacFeasibleSet
from .lds import LinearSystem, Trajectory, certify_strong_stability, step_dynamics
from .oco import ContractViolation


class InsufficientExcitation(RuntimeError):
    """The moment matrix was numerically singular; increase T0 or the controllability index."""


@dataclass(frozen=True)
class IdentificationConfig:
    """Exploration budget T0 and controllability index k (T0 > k >= 1)."""

    T0: int
    k: int

    def __post_init__(self):
        if self.k < 1 or self.T0 <= self.k:
            raise ContractViolation("need T0 > k >= 1")


@dataclass
class MomentEstimates:
    """Estimates N_0..N_k of (A - B K)^j B."""

    N: np.ndarray  # (k + 1, d_x, d_u)

    def __post_init__(self):
        if not np.all(np.isfinite(self.N)):
            raise ContractViolation("moment estimates have non-finite entries")


@dataclass
class IdentifiedSystem:
    """Recovered dynamics; A_hat = A_K_hat + B_hat K holds by construction.

    ``kappa_c_hat`` (conditioning of the estimated moment Gram), ``eps_w`` and
    ``w0_bound`` (disturbance-recovery error scales, when a harness fills them)
    are reporting metadata only; nothing is asserted against them.
    """

    A_hat: np.ndarray
    B_hat: np.ndarray
    A_K_hat: np.ndarray
    K: np.ndarray
    config: IdentificationConfig
    exploration: Trajectory
    kappa_c_hat: float | None = None
    eps_w: float | None = None
    w0_bound: float | None = None

    def as_system(self, w_bound: float = 1.0) -> LinearSystem:
        return LinearSystem(self.A_hat, self.B_hat, w_bound=w_bound)

    def reconstruction_residual(self) -> float:
        return float(np.max(np.abs(self.A_hat - (self.A_K_hat + self.B_hat @ self.K))))


def controllability_matrix(system: LinearSystem, K, k: int) -> np.ndarray:
    """[B, A_K B, ..., A_K^(k-1) B] for the closed loop A_K = A - B K."""
    a_k = system.A - system.B @ np.asarray(K, dtype=float)
    blocks = [system.B]
    for _ in range(k - 1):
        blocks.append(a_k @ blocks[-1])
    return np.hstack(blocks)


def smallest_controllability_index(system: LinearSystem, K, max_k: int = 10,
                                   tol: float = 1e-8) -> int:
    """Smallest k making the controllability matrix full row-rank (numerically)."""
    for k in range(1, max_k + 1):
        c = controllability_matrix(system, K, k)
        if np.linalg.matrix_rank(c, tol=tol) == system.d_x:
            return k
    raise ContractViolation(f"system is not controllable within index {max_k}")


def explore(plant: LinearSystem, K, T0: int, disturbances, rng, costs=None):
    """Drive the plant with u = -K x + z, z ~ {+-1}^(d_u); returns (trajectory, sign inputs)."""
    K = np.asarray(K, dtype=float)
    w = np.asarray(disturbances, dtype=float)
    if w.shape[0] < T0:
        raise ContractViolation("not enough disturbances for the exploration budget")
    signs = rng.choice([-1.0, 1.0], size=(T0, plant.d_u))
    states = np.empty((T0 + 1, plant.d_x))
    actions = np.empty((T0, plant.d_u))
    values = np.zeros(T0)
    states[0] = np.zeros(plant.d_x)
    for t in range(T0):
        u = -K @ states[t] + signs[t]
        actions[t] = u
        if costs is not None:
            values[t] = costs[t].value(states[t], u)
        states[t + 1] = step_dynamics(plant, states[t], u, w[t])
    return Trajectory(states, actions, w[:T0], values), signs


def moments_from_exploration(states: np.ndarray, signs: np.ndarray, k: int) -> MomentEstimates:
    """N_j = mean over t of x_{t+j+1} z_t^T, j = 0..k, averaging T0 - k rounds."""
    T0 = signs.shape[0]
    if T0 <= k:
        raise ContractViolation("need T0 > k")
    n = T0 - k
    N = np.stack([np.einsum("tx,tu->xu", states[j + 1: j + 1 + n], signs[:n]) / n
                  for j in range(k + 1)])
    return MomentEstimates(N)


def recover_from_moments(moments: MomentEstimates, K,
                         ridge_threshold: float = 1e12) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read (A_hat, B_hat, A_K_hat) off the moment stack by least squares.

    C0 = [N_0..N_{k-1}], C1 = [N_1..N_k]; A_K_hat = C1 C0^T (C0 C0^T)^{-1};
    B_hat = N_0; A_hat = A_K_hat + B_hat K.  A tiny diagonal ridge (1e-10) is
    added only when the Gram matrix looks ill-conditioned, and outright
    singularity raises :class:`InsufficientExcitation`.
    """
    N = moments.N
    k = N.shape[0] - 1
    if k < 1:
        raise ContractViolation("need at least two moment matrices")
    C0 = np.hstack(list(N[:k]))
    C1 = np.hstack(list(N[1:]))
    gram = C0 @ C0.T
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond):
        raise InsufficientExcitation("moment Gram matrix is singular; increase T0 or k")
    if cond > ridge_threshold:
        gram = gram + 1e-10 * np.eye(gram.shape[0])
        if float(np.linalg.cond(gram)) > 1e15:
            raise InsufficientExcitation(
                f"moment Gram matrix condition {cond:.3g} is beyond repair; increase T0 or k")
    A_K_hat = np.linalg.solve(gram.T, (C1 @ C0.T).T).T
    B_hat = N[0].copy()
    A_hat = A_K_hat + B_hat @ np.asarray(K, dtype=float)
    return A_hat, B_hat, A_K_hat


def identify_system(plant: LinearSystem, K, config: IdentificationConfig, disturbances,
                    seed: int = 0, costs=None) -> tuple[IdentifiedSystem, MomentEstimates]:
    """Run the exploration phase and recover the dynamics."""
    rng = np.random.default_rng(seed)
    trajectory, signs = explore(plant, K, config.T0, disturbances, rng, costs=costs)
    moments = moments_from_exploration(trajectory.states, signs, config.k)
    A_hat, B_hat, A_K_hat = recover_from_moments(moments, K)
    smallest_sv = float(np.linalg.svd(np.hstack(list(moments.N[: config.k])),
                                      compute_uv=False).min())
    kappa_c_hat = 1.0 / smallest_sv ** 2 if smallest_sv > 0 else float("inf")
    ident = IdentifiedSystem(A_hat, B_hat, A_K_hat, np.asarray(K, dtype=float), config,
                             trajectory, kappa_c_hat=kappa_c_hat)
    return ident, moments


def default_exploration_rounds(T: int) -> int:
    """Preset budget T0 = ceil(T^(2/3)), trading exploration cost against model error."""
    return max(2, int(np.ceil(T ** (2.0 / 3.0))))


@dataclass
class PipelineRun:
    """Explore-then-commit record: exploration phase plus the committed control phase."""

    identified: IdentifiedSystem
    moments: MomentEstimates
    exploration_cost: float
    control_run: ControlRun

    @property
    def total_cost(self) -> float:
        return self.exploration_cost + float(np.sum(self.control_run.cost_values))


def run_unknown_pipeline(plant: LinearSystem, K, id_config: IdentificationConfig,
                         control_config: ControlConfig, costs, disturbances,
                         seed: int = 0, feasible: DacFeasibleSet | None = None,
                         inject_system: LinearSystem | None = None,
                         record_weights: bool = False) -> PipelineRun:
    """Explore for T0 rounds (costs counted), then control against the estimated dynamics.

    The committed phase believes the estimate (including disturbance recovery,
    which produces fictitious disturbances when the estimate is imperfect)
    while true costs accrue on the true plant.  ``inject_system`` replaces the
    estimate (e.g. with the truth, for equivalence checks) without skipping the
    exploration phase.
    """
    T0 = id_config.T0
    disturbances = np.asarray(disturbances, dtype=float)
    T = disturbances.shape[0]
    if not T0 < T:
        raise ContractViolation("exploration budget must be smaller than the horizon")
    identified, moments = identify_system(plant, K, id_config, disturbances[:T0],
                                          seed=seed, costs=costs[:T0])
    believed_system = inject_system if inject_system is not None else identified.as_system(
        w_bound=plant.w_bound)
    certificate = certify_strong_stability(believed_system, K)
    if not certificate.accepted:
        raise InsufficientExcitation(
            f"controller is not strongly stable on the estimated system: {certificate.reason}")
    believed = ClosedLoop(believed_system, K, certificate)
    phase2 = run_scream_control(believed, plant, disturbances[T0:], costs[T0:],
                                control_config, feasible=feasible,
                                x0=identified.exploration.states[-1],
                                record_weights=record_weights)
    return PipelineRun(identified, moments,
                       float(np.sum(identified.exploration.costs)), phase2)
