"""Online mirror descent with the two geometries the algorithms use.

The Euclidean regularizer on a ball gives projected online gradient descent;
the negative-entropy regularizer on the simplex gives the multiplicative
(Hedge) update.  Both are pure functions of an :class:`OmdState`, so many
states (one per expert) can be advanced independently.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .oco import ContractViolation, DomainBall, as_vector


class Regularizer(enum.Enum):
    EUCLIDEAN = "euclidean"
    NEGATIVE_ENTROPY = "negative_entropy"


@dataclass(frozen=True)
class OmdState:
    """Current point plus the (fixed, horizon-tuned) step size."""

    point: np.ndarray
    step_size: float

    def __post_init__(self):
        if not self.step_size > 0:
            raise ContractViolation("step size must be positive")


def uniform_simplex(n: int) -> np.ndarray:
    if n < 1:
        raise ContractViolation("simplex dimension must be positive")
    return np.full(n, 1.0 / n)


def ogd_step(state: OmdState, gradient, domain: DomainBall) -> OmdState:
    """w' = project(w - eta * g).  Moves at most eta * ||g||_2."""
    g = as_vector(gradient, len(state.point))
    new_point = domain.project(state.point - state.step_size * g)
    return OmdState(new_point, state.step_size)


def hedge_step(state: OmdState, losses) -> OmdState:
    """Multiplicative update p'_i proportional to p_i * exp(-eps * loss_i).

    The exponent is shifted by the smallest loss, so arbitrarily large loss
    scales (the movement-regularized surrogates can be huge) cannot underflow
    the whole weight vector: the shifted factors lie in (0, 1] and the minimal
    loss keeps factor one.  Equal losses leave the weights bit-for-bit
    unchanged, and zero weights stay exactly zero.
    """
    p = np.asarray(state.point, dtype=float)
    ell = as_vector(losses, len(p))
    factors = np.exp(-state.step_size * (ell - ell.min()))
    if np.all(factors == 1.0):
        return OmdState(p, state.step_size)
    w = p * factors
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise ContractViolation("hedge update produced a degenerate weight vector")
    if total != 1.0:
        w = w / total
    return OmdState(w, state.step_size)


def omd_step(state: OmdState, gradient, regularizer: Regularizer,
             domain: DomainBall | None = None) -> OmdState:
    """One mirror-descent step; dispatches on the regularizer.

    Euclidean requires a ball domain and reproduces :func:`ogd_step` exactly;
    negative entropy acts on the simplex (``gradient`` is then the loss vector
    of the linear surrogate) and reproduces :func:`hedge_step` exactly.
    """
    if regularizer is Regularizer.EUCLIDEAN:
        if domain is None:
            raise ContractViolation("the Euclidean update needs a ball domain")
        return ogd_step(state, gradient, domain)
    if regularizer is Regularizer.NEGATIVE_ENTROPY:
        if domain is not None:
            raise ContractViolation("the entropic update acts on the simplex; no ball domain applies")
        return hedge_step(state, gradient)
    raise ContractViolation(f"unsupported regularizer {regularizer!r}")


def check_simplex(p, tol: float = 1e-12) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0) and abs(float(p.sum()) - 1.0) <= tol)
