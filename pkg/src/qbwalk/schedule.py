"""Burn-in and averaging schedules from conductance-based complexity bounds.

The planner turns a conductance lower bound phi, a log-warmness ln M, a sup
bound on the integrand, and a stationary variance into integer chain lengths
for the long-run, subsample, and multi-start estimators:

    B     = ceil( (2/phi^2) (ln 24 + ln(M)/2 + 2 ln gbar - ln eps) )
    N_lr  = ceil( (gamma0/eps) (6/phi^2) )
    N_ss  = ceil( 3 gamma0 / eps ),  S = ceil( (2/phi^2) ln(6 gamma0/eps) )
    N_ms  = ceil( 2 gamma0 / (3 eps) )

Everything is computed in log space (M itself is never formed) so large
dimensions cannot overflow; the ceiling is applied once at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

Method = Literal["long_run", "subsample", "multi_start"]

METHODS: tuple[str, ...] = ("long_run", "subsample", "multi_start")


def beta_factor(eps1: float, eps2: float, normKJ_sq: float) -> float:
    """Log-concavity defect beta = exp(-2 (eps1 + eps2 ||K||_J^2 / 2))."""
    if eps1 < 0 or eps2 < 0 or normKJ_sq < 0:
        raise ValueError("deviation parameters must be nonnegative")
    return math.exp(-2.0 * (eps1 + eps2 * normKJ_sq / 2.0))


def warmness_log_bound(d: int, normKJ_sq: float, eps1: float, eps2: float) -> float:
    """ln M for the one-step warm start:

    ln 3 + d ln(120 ||K||_J^2) + 3 eps1 + 2 eps2 ||K||_J^2 + 1.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if normKJ_sq <= 0:
        raise ValueError("normKJ_sq must be positive")
    if eps1 < 0 or eps2 < 0:
        raise ValueError("deviation parameters must be nonnegative")
    return math.log(3.0) + d * math.log(120.0 * normKJ_sq) + 3.0 * eps1 + 2.0 * eps2 * normKJ_sq + 1.0


@dataclass(frozen=True)
class ScheduleInputs:
    """Inputs of the complexity formulas.

    phi        conductance lower bound in (0, 1]
    ln_M       log warmness of the start distribution, >= 0
    g_bar      sup-norm bound of the integrand over K, >= 0
    gamma0     stationary variance of the integrand, >= 0
    eps        target mean squared error, > 0
    phi_source provenance of phi: 'user', 'gaussian_walk_bound', or 'empirical_proxy'
    """

    phi: float
    ln_M: float
    g_bar: float
    gamma0: float
    eps: float
    phi_source: str = "user"

    def __post_init__(self) -> None:
        if not (0.0 < self.phi <= 1.0):
            raise ValueError(f"phi must lie in (0, 1], got {self.phi}")
        if self.ln_M < 0:
            raise ValueError("ln_M must be >= 0")
        if self.g_bar < 0:
            raise ValueError("g_bar must be >= 0")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")


@dataclass(frozen=True)
class SchedulePlan:
    """Integer schedule: burn-in B, sample count N, spacing S (subsample only)."""

    method: Method
    B: int
    N: int
    S: int
    phi_source: str = "user"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.B < 0 or self.N < 1 or self.S < 1:
            raise ValueError("plan requires B >= 0, N >= 1, S >= 1")


def _ceil_count(x: float, lower: int) -> int:
    # absorb float-rounding noise just above an integer before taking the ceiling
    nudge = 1e-9 * max(1.0, abs(x))
    return max(int(math.ceil(x - nudge)), lower)


def plan(method: Method, inputs: ScheduleInputs) -> SchedulePlan:
    """Schedule achieving MSE < eps for the given method.

    A zero ``gamma0`` degenerates to N = 1 (constant integrand); a zero
    ``g_bar`` makes the burn-in requirement vacuous, so B = 0.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    phi2 = inputs.phi * inputs.phi
    if inputs.g_bar > 0:
        b_raw = (2.0 / phi2) * (
            math.log(24.0) + inputs.ln_M / 2.0 + 2.0 * math.log(inputs.g_bar) - math.log(inputs.eps)
        )
    else:
        b_raw = 0.0
    B = _ceil_count(b_raw, 0)

    S = 1
    if inputs.gamma0 == 0.0:
        N = 1
    elif method == "long_run":
        N = _ceil_count((inputs.gamma0 / inputs.eps) * (6.0 / phi2), 1)
    elif method == "subsample":
        N = _ceil_count(3.0 * inputs.gamma0 / inputs.eps, 1)
        s_raw = (2.0 / phi2) * math.log(6.0 * inputs.gamma0 / inputs.eps)
        S = _ceil_count(s_raw, 1)
    else:  # multi_start
        N = _ceil_count(2.0 * inputs.gamma0 / (3.0 * inputs.eps), 1)

    return SchedulePlan(method=method, B=B, N=N, S=S, phi_source=inputs.phi_source)


def total_work(p: SchedulePlan) -> int:
    """Walk steps consumed by a plan: B+N, B+S*N, or B*N by method."""
    if p.method == "long_run":
        return p.B + p.N
    if p.method == "subsample":
        return p.B + p.S * p.N
    return p.B * p.N
