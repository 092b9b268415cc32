"""Generic stochastic approximation: drive lam_t = lam_{t-1} + gamma_t * F
with samples from a Markov kernel that leaves the current target invariant.

The trainer builds on the same update law but swaps the plain gamma_t gain
for Adam; this module keeps the abstract engine verifiable on toy problems
where exact answers are known.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, runtime_checkable

import numpy as np

from .errors import ConfigError, NumericError
from .ndnet import AdamState


@runtime_checkable
class TransitionKernel(Protocol):
    """One step of a Markov kernel; must leave the target for the current
    parameters invariant."""

    def step(self, z, lam, rng):
        ...


@dataclass(frozen=True)
class SASchedule:
    """Gain sequence: either a constant or a / (t0 + t)**alpha with
    alpha in (0.5, 1] so that sum(gamma) diverges and sum(gamma^2) does not."""

    kind: str
    a: float
    t0: float = 0.0
    alpha: float = 1.0

    @classmethod
    def constant(cls, gamma: float) -> "SASchedule":
        if gamma <= 0:
            raise ConfigError("constant gain must be positive")
        return cls("constant", gamma)

    @classmethod
    def robbins_monro(cls, a: float, t0: float = 0.0,
                      alpha: float = 1.0) -> "SASchedule":
        if a <= 0 or t0 < 0:
            raise ConfigError("need a > 0 and t0 >= 0")
        if not 0.5 < alpha <= 1.0:
            raise ConfigError("alpha must lie in (0.5, 1]")
        return cls("robbins-monro", a, t0, alpha)

    def gamma(self, t: int) -> float:
        if t < 1:
            raise ConfigError("iterations are counted from t = 1")
        if self.kind == "constant":
            return self.a
        return self.a / (self.t0 + t) ** self.alpha


@dataclass
class SAState:
    """Mutable state of one SA run."""

    lam: np.ndarray
    z: Any
    t: int = 0
    stage: str = ""
    optimizer: AdamState | None = None


def _check_update(f: np.ndarray, t: int):
    if not np.isfinite(f).all():
        raise NumericError(f"non-finite F output at iteration {t}")


def _check_lam(lam: np.ndarray, t: int, bound):
    if not np.isfinite(lam).all():
        raise NumericError(f"non-finite parameters at iteration {t}")
    if bound is not None:
        norm = float(np.linalg.norm(lam))
        if norm > bound:
            raise NumericError(
                f"parameter norm {norm:.3e} exceeded bound {bound:.3e} "
                f"at iteration {t}")


def sa_iterate(state: SAState, kernel, F, schedule: SASchedule, rng,
               lambda_bound=None) -> SAState:
    """One SA step: draw z via the kernel, move lam along F(lam, z)."""
    z = kernel.step(state.z, state.lam, rng)
    t = state.t + 1
    f = np.asarray(F(state.lam, z), dtype=np.float64)
    _check_update(f, t)
    state.lam = state.lam + schedule.gamma(t) * f
    _check_lam(state.lam, t, lambda_bound)
    state.z = z
    state.t = t
    return state


def multiple_moves(state: SAState, kernel, F, K: int, schedule: SASchedule,
                   rng, lambda_bound=None) -> SAState:
    """K kernel steps, then one parameter update along the average of F over
    the K visited states. K = 1 reproduces sa_iterate exactly."""
    if K < 1:
        raise ConfigError("K must be at least 1")
    z = state.z
    t = state.t + 1
    total = None
    for _ in range(K):
        z = kernel.step(z, state.lam, rng)
        f = np.asarray(F(state.lam, z), dtype=np.float64)
        _check_update(f, t)
        total = f if total is None else total + f
    state.lam = state.lam + schedule.gamma(t) * (total / K)
    _check_lam(state.lam, t, lambda_bound)
    state.z = z
    state.t = t
    return state
