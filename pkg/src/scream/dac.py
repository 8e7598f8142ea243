"""Disturbance-action controllers and their reduction machinery.

A DAC policy with memory H plays u = -K x + sum_k M[k] w(lag k+1), i.e. a
linear map of the H most recent disturbances plus a certified stabilizing
offset controller.  Throughout this module a parameter set ``M`` is an array
of shape (H, d_u, d_x) whose block ``M[k]`` (0-based) multiplies the
disturbance ``k + 1`` steps back; the spectral cap of block ``k`` in the
feasible set is ``kappa_B * kappa^3 * (1 - gamma)^(k + 1)``.

States reached under a DAC history are linear in the parameters.  The
transfer-matrix expansion, the H-step truncated state/action/loss, and the
analytic gradient of the unary truncated loss implemented here reduce the
control problem to online convex optimization with memory length H + 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .lds import (LinearSystem, StabilityCertificate, Trajectory,
                  certify_strong_stability, step_dynamics)
from .oco import ContractViolation


class ClosedLoop:
    """A system with its stabilizing controller; caches powers of A - B K."""

    def __init__(self, system: LinearSystem, K, certificate: StabilityCertificate | None = None):
        self.system = system
        self.K = np.asarray(K, dtype=float)
        if certificate is None:
            certificate = certify_strong_stability(system, self.K)
        if not certificate.accepted:
            raise ContractViolation(f"controller is not certified strongly stable: {certificate.reason}")
        self.certificate = certificate
        self.a_closed = system.A - system.B @ self.K
        self._powers = [np.eye(system.d_x)]

    @property
    def kappa(self) -> float:
        return self.certificate.kappa

    @property
    def gamma(self) -> float:
        return self.certificate.gamma

    def powers(self, count: int) -> np.ndarray:
        """Stack [I, A_K, A_K^2, ..., A_K^(count-1)]."""
        while len(self._powers) < count:
            self._powers.append(self.a_closed @ self._powers[-1])
        return np.asarray(self._powers[:count])

    def powers_times_b(self, count: int) -> np.ndarray:
        """Stack [B, A_K B, ..., A_K^(count-1) B]."""
        return self.powers(count) @ self.system.B


@dataclass(frozen=True)
class DacFeasibleSet:
    """Product of per-block spectral-norm balls with geometrically decaying caps."""

    caps: np.ndarray
    d_u: int
    d_x: int

    def __post_init__(self):
        caps = np.asarray(self.caps, dtype=float)
        if caps.ndim != 1 or caps.size < 1 or np.any(caps <= 0):
            raise ContractViolation("caps must be a vector of positive reals")
        object.__setattr__(self, "caps", caps)

    @classmethod
    def from_certificate(cls, kappa: float, gamma: float, kappa_B: float,
                         H: int, d_u: int, d_x: int) -> "DacFeasibleSet":
        if H < 1:
            raise ContractViolation("need at least one DAC block")
        k = np.arange(1, H + 1)
        return cls(kappa_B * kappa ** 3 * (1 - gamma) ** k, d_u, d_x)

    @property
    def H(self) -> int:
        return self.caps.size

    def zeros(self) -> np.ndarray:
        return np.zeros((self.H, self.d_u, self.d_x))

    def _check_shape(self, M: np.ndarray):
        if M.shape[-3:] != (self.H, self.d_u, self.d_x):
            raise ContractViolation(
                f"expected trailing shape {(self.H, self.d_u, self.d_x)}, got {M.shape}")

    def spectral_norms(self, M) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        self._check_shape(M)
        return np.linalg.svd(M, compute_uv=False)[..., 0]

    def contains(self, M, tol: float = 1e-9) -> bool:
        return bool(np.all(self.spectral_norms(M) <= self.caps + tol))

    def project(self, M) -> np.ndarray:
        """Frobenius projection: clip each block's singular values at its cap.

        Blocks are independent, so the projection decomposes per block; leading
        batch dimensions (e.g. one parameter set per expert) are supported.
        """
        M = np.asarray(M, dtype=float)
        self._check_shape(M)
        u, s, vt = np.linalg.svd(M, full_matrices=False)
        clipped = np.minimum(s, self.caps[..., :, None])
        return np.einsum("...ij,...j,...jk->...ik", u, clipped, vt)

    def random_point(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """A random feasible parameter set (uniform block directions, scaled caps)."""
        raw = rng.standard_normal((self.H, self.d_u, self.d_x))
        norms = np.linalg.svd(raw, compute_uv=False)[:, 0]
        levels = rng.uniform(0, scale, self.H) * self.caps
        return raw * (levels / np.maximum(norms, 1e-12))[:, None, None]


class DisturbanceWindow:
    """Fixed-capacity buffer of the most recent disturbances, zero-padded at the start.

    After pushing w up to time t - 1, ``lags(n)[i]`` is the disturbance i + 1
    steps before round t (all-zero before anything was pushed).
    """

    def __init__(self, dim: int, capacity: int):
        if capacity < 1:
            raise ContractViolation("window capacity must be positive")
        self._buf = np.zeros((capacity, dim))

    @property
    def capacity(self) -> int:
        return self._buf.shape[0]

    def push(self, w) -> None:
        self._buf[1:] = self._buf[:-1]
        self._buf[0] = np.asarray(w, dtype=float)

    def lags(self, count: int | None = None) -> np.ndarray:
        count = self.capacity if count is None else count
        if count > self.capacity:
            raise ContractViolation(f"window holds {self.capacity} lags, asked for {count}")
        return self._buf[:count]


def dac_action(K, M, x, lags) -> np.ndarray:
    """u = -K x + sum_k M[k] @ lags[k], with lags[k] the disturbance k+1 steps back."""
    K = np.asarray(K, dtype=float)
    M = np.asarray(M, dtype=float)
    x = np.asarray(x, dtype=float)
    lags = np.asarray(lags, dtype=float)
    H = M.shape[0]
    if lags.shape[0] < H or lags.shape[1] != M.shape[2] or K.shape != (M.shape[1], x.shape[0]):
        raise ContractViolation("dimension mismatch in DAC action")
    return -K @ x + np.einsum("kux,kx->u", M, lags[:H])


def transfer_matrix(loop: ClosedLoop, i: int, h: int, M_seq) -> np.ndarray:
    """Linear map from the disturbance i steps back to the current state.

    ``M_seq`` holds the h + 1 parameter sets in play, oldest first.  The map is
    A_K^i (when i <= h) plus sum_j A_K^j B M_seq[-1-j][i-j-1] over the j with
    a valid block index.
    """
    M_seq = [np.asarray(M, dtype=float) for M in M_seq]
    if len(M_seq) != h + 1:
        raise ContractViolation(f"need h + 1 = {h + 1} parameter sets, got {len(M_seq)}")
    H = M_seq[0].shape[0]
    if not 0 <= i <= H + h:
        raise ContractViolation(f"transfer index i = {i} outside [0, H + h] = [0, {H + h}]")
    d_x = loop.system.d_x
    powers = loop.powers(h + 1)
    powers_b = loop.powers_times_b(h + 1)
    psi = powers[i].copy() if i <= h else np.zeros((d_x, d_x))
    for j in range(h + 1):
        k = i - j - 1
        if 0 <= k < H:
            psi += powers_b[j] @ M_seq[h - j][k]
    return psi


def state_via_transfer(loop: ClosedLoop, M_hist, disturbances) -> np.ndarray:
    """State after t rounds of the DAC history, from the transfer-matrix expansion.

    ``M_hist`` holds the t parameter sets used at rounds 0..t-1 (oldest first)
    and ``disturbances`` the t disturbances w_0..w_{t-1}; the start state is the
    origin.  Equals the state produced by direct simulation of the same policy.
    """
    M_hist = [np.asarray(M, dtype=float) for M in M_hist]
    w = np.asarray(disturbances, dtype=float)
    t = len(M_hist)
    if w.shape[0] != t:
        raise ContractViolation("need exactly one disturbance per round of history")
    if t == 0:
        return np.zeros(loop.system.d_x)
    H = M_hist[0].shape[0]
    x = np.zeros(loop.system.d_x)
    for i in range(H + t):
        s = t - 1 - i
        if s < 0:
            break  # disturbances before the start are zero
        x += transfer_matrix(loop, i, t - 1, M_hist) @ w[s]
    return x


def simulate_dac(system: LinearSystem, K, M_seq, disturbances, x0=None, costs=None) -> Trajectory:
    """Roll the closed loop forward under a (possibly time-varying) DAC policy.

    ``M_seq`` is either one parameter set used every round or a length-T
    sequence; the action at each round uses the actual past disturbances.
    """
    w = np.asarray(disturbances, dtype=float)
    T = w.shape[0]
    M_seq = np.asarray(M_seq, dtype=float)
    if M_seq.ndim == 3:
        M_seq = np.broadcast_to(M_seq, (T,) + M_seq.shape)
    H = M_seq.shape[1]
    window = DisturbanceWindow(system.d_x, H)
    x = np.zeros(system.d_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((T + 1, system.d_x))
    actions = np.empty((T, system.d_u))
    values = np.zeros(T)
    states[0] = x
    K = np.asarray(K, dtype=float)
    for t in range(T):
        u = dac_action(K, M_seq[t], states[t], window.lags(H))
        actions[t] = u
        if costs is not None:
            values[t] = costs[t].value(states[t], u)
        states[t + 1] = step_dynamics(system, states[t], u, w[t])
        window.push(w[t])
    return Trajectory(states, actions, w, values)


def _lag_table(lags: np.ndarray, H: int) -> np.ndarray:
    """Table[j, k] = lags[1 + j + k] for j = 0..H, k = 0..H-1 (needs 2H + 1 lags)."""
    idx = 1 + np.arange(H + 1)[:, None] + np.arange(H)[None, :]
    return lags[idx]


def lags_at(disturbances, t: int, count: int) -> np.ndarray:
    """Lag view of a disturbance record: lags[i] = w[t - 1 - i], zero before the start."""
    w = np.asarray(disturbances, dtype=float)
    out = np.zeros((count, w.shape[1]))
    lo = max(t - count, 0)
    if t > 0:
        out[: t - lo] = w[lo:t][::-1]
    return out


def truncated_state(loop: ClosedLoop, M_hist, lags) -> np.ndarray:
    """H-step truncated state: the transfer expansion cut at the window shown.

    ``M_hist`` holds the H + 1 parameter sets of rounds t-1-H..t-1 (oldest
    first); ``lags[i]`` is the disturbance i + 1 steps back (2H + 1 of them).
    """
    M_hist = np.asarray(M_hist, dtype=float)
    lags = np.asarray(lags, dtype=float)
    H = M_hist.shape[1]
    if M_hist.shape[0] != H + 1:
        raise ContractViolation(f"need H + 1 = {H + 1} parameter sets, got {M_hist.shape[0]}")
    if lags.shape[0] < 2 * H + 1:
        raise ContractViolation(f"need 2H + 1 = {2 * H + 1} lagged disturbances")
    powers = loop.powers(H + 1)
    powers_b = loop.powers_times_b(H + 1)
    y = np.einsum("jxz,jz->x", powers, lags[: H + 1])
    # M_hist[H - j] is the parameter set j rounds back
    m_rev = M_hist[::-1]
    y += np.einsum("jxu,jkuz,jkz->x", powers_b, m_rev, _lag_table(lags, H))
    return y


def truncated_action(loop: ClosedLoop, y, M_newest, lags) -> np.ndarray:
    """v = -K y + sum_k M_newest[k] @ lags[k]."""
    return dac_action(loop.K, np.asarray(M_newest, dtype=float), y, lags)


def truncated_loss(cost, loop: ClosedLoop, window, lags):
    """Evaluate the truncated loss on a window of H + 2 parameter sets (oldest first).

    The truncated state uses the H + 1 older sets, the truncated action adds
    the newest one; returns (value, y, v).
    """
    window = np.asarray(window, dtype=float)
    H = window.shape[1]
    if window.shape[0] != H + 2:
        raise ContractViolation(f"window must hold exactly H + 2 = {H + 2} parameter sets")
    y = truncated_state(loop, window[:-1], lags)
    v = truncated_action(loop, y, window[-1], lags)
    return float(cost.value(y, v)), y, v


def unary_truncated_eval(cost, loop: ClosedLoop, M, lags):
    """Truncated loss with every window entry equal to ``M``; returns (value, y, v)."""
    M = np.asarray(M, dtype=float)
    H = M.shape[0]
    window = np.broadcast_to(M, (H + 2,) + M.shape)
    return truncated_loss(cost, loop, window, lags)


def unary_truncated_gradient(cost, loop: ClosedLoop, M, lags) -> np.ndarray:
    """Analytic gradient of the unary truncated loss with respect to ``M``.

    The truncated state and action are affine in the parameters, so the chain
    rule needs only the cost gradients at (y, v).  Cost oracles without
    gradients fall back to finite differences (with a warning).
    """
    M = np.asarray(M, dtype=float)
    lags = np.asarray(lags, dtype=float)
    H = M.shape[0]
    value, y, v = unary_truncated_eval(cost, loop, M, lags)
    if not (hasattr(cost, "grad_x") and hasattr(cost, "grad_u")):
        warnings.warn("cost oracle exposes no gradients; using finite differences",
                      RuntimeWarning, stacklevel=2)
        return _finite_difference_m_gradient(cost, loop, M, lags)
    g_y = np.asarray(cost.grad_x(y, v), dtype=float)
    g_v = np.asarray(cost.grad_u(y, v), dtype=float)
    q = g_y - loop.K.T @ g_v
    powers_b = loop.powers_times_b(H + 1)
    r = np.einsum("jxu,x->ju", powers_b, q)                       # (A_K^j B)^T q
    grad = np.einsum("ju,jkx->kux", r, _lag_table(lags, H))
    grad += np.einsum("u,kx->kux", g_v, lags[:H])
    return grad


def _finite_difference_m_gradient(cost, loop: ClosedLoop, M, lags, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(M)
    for idx in np.ndindex(M.shape):
        bump = M.copy()
        bump[idx] += h
        up, _, _ = unary_truncated_eval(cost, loop, bump, lags)
        bump[idx] -= 2 * h
        down, _, _ = unary_truncated_eval(cost, loop, bump, lags)
        grad[idx] = (up - down) / (2 * h)
    return grad


def transfer_norm_bound(kappa: float, gamma: float, kappa_B: float, H: int, i: int, h: int) -> float:
    """Certified operator-norm cap of the transfer matrix at index i (tau = kappa_B kappa^3)."""
    tau = kappa_B * kappa ** 3
    head = kappa ** 2 * (1 - gamma) ** i if i <= h else 0.0
    return head + H * kappa_B * kappa ** 2 * tau * (1 - gamma) ** (i - 1)


@dataclass(frozen=True)
class LipschitzConstants:
    """Structural constants of the truncated-loss reduction.

    ``state_bound`` caps every reachable state/action norm under feasible play;
    ``coord_lipschitz`` (per window coordinate), ``grad_bound`` and ``diameter``
    transfer the OCO-with-memory tuning formulas to parameter space; ``lam``
    is the induced movement penalty (H + 2)^2 * coord_lipschitz.
    """

    kappa: float
    gamma: float
    kappa_B: float
    w_bound: float
    grad_coeff: float
    H: int
    d_u: int
    d_x: int
    tau: float
    state_bound: float
    coord_lipschitz: float
    grad_bound: float
    diameter: float
    lam: float

    def as_dict(self) -> dict:
        return {
            "kappa": self.kappa, "gamma": self.gamma, "kappa_B": self.kappa_B,
            "w_bound": self.w_bound, "grad_coeff": self.grad_coeff, "H": self.H,
            "d_u": self.d_u, "d_x": self.d_x, "tau": self.tau,
            "state_bound": self.state_bound, "coord_lipschitz": self.coord_lipschitz,
            "grad_bound": self.grad_bound, "diameter": self.diameter, "lam": self.lam,
        }


def state_action_bound(kappa: float, gamma: float, kappa_B: float, w_bound: float, H: int) -> float:
    """Worst-case norm of states and actions reached under feasible DAC play.

    Requires kappa^2 (1 - gamma)^(H+1) < 1 so the underlying geometric series
    converges; raises otherwise.
    """
    if H < 1:
        raise ContractViolation("need H >= 1")
    if not (0 < gamma < 1) or kappa <= 0 or kappa_B <= 0 or w_bound < 0:
        raise ContractViolation("constants out of range")
    decay = kappa ** 2 * (1 - gamma) ** (H + 1)
    if decay >= 1:
        raise ContractViolation(
            f"kappa^2 (1-gamma)^(H+1) = {decay:.6g} >= 1; increase H or the contraction margin")
    tau = kappa_B * kappa ** 3
    return (w_bound * kappa ** 3 * (1 + H * kappa_B * tau) / (gamma * (1 - decay))
            + w_bound * tau / gamma)


def lipschitz_constants(kappa: float, gamma: float, kappa_B: float, w_bound: float,
                        grad_coeff: float, H: int, d_u: int, d_x: int) -> LipschitzConstants:
    """Evaluate the closed-form constants of the truncated reduction."""
    if grad_coeff <= 0:
        raise ContractViolation("the cost gradient coefficient must be positive")
    tau = kappa_B * kappa ** 3
    state_bound = state_action_bound(kappa, gamma, kappa_B, w_bound, H)
    coord_lipschitz = 3 * math.sqrt(H) * grad_coeff * state_bound * w_bound * kappa_B * kappa ** 3
    d = min(d_u, d_x)
    grad_bound = 3 * H * d ** 2 * grad_coeff * w_bound * kappa_B * kappa ** 3 / gamma
    diameter = 2 * math.sqrt(d) * kappa_B * kappa ** 3 / gamma
    lam = (H + 2) ** 2 * coord_lipschitz
    return LipschitzConstants(kappa, gamma, kappa_B, w_bound, grad_coeff, H, d_u, d_x,
                              tau, state_bound, coord_lipschitz, grad_bound, diameter, lam)


class QuadraticTrackingCost:
    """c(x, u) = ||x - target||^2 + control_weight * ||u||^2, with analytic gradients."""

    def __init__(self, target, control_weight: float = 0.1):
        self.target = np.asarray(target, dtype=float)
        self.control_weight = float(control_weight)
        self.value_calls = 0
        self.grad_calls = 0

    def value(self, x, u) -> float:
        self.value_calls += 1
        dx = np.asarray(x, dtype=float) - self.target
        u = np.asarray(u, dtype=float)
        return float(dx @ dx + self.control_weight * (u @ u))

    def grad_x(self, x, u) -> np.ndarray:
        self.grad_calls += 1
        return 2.0 * (np.asarray(x, dtype=float) - self.target)

    def grad_u(self, x, u) -> np.ndarray:
        return 2.0 * self.control_weight * np.asarray(u, dtype=float)


def tracking_grad_coeff(state_bound: float, target_bound: float, control_weight: float = 0.1) -> float:
    """Smallest G_c with ||grad_x c||, ||grad_u c|| <= G_c * D whenever ||x||, ||u|| <= D."""
    return max(2.0 * (state_bound + target_bound) / state_bound, 2.0 * control_weight)
