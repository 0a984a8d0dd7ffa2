"""Canonical Gaussian Metropolis random walk on the support ball.

One step: propose y ~ N(current, sigma^2 I); if y leaves the ball, stay put;
otherwise move with probability min{exp(log_ell(y) - log_ell(current)), 1}.
A "proper move" is an accepted transition to a distinct point inside the
ball.  A single chain is strictly sequential; many chains may share one
immutable target, each owning its own random stream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import stream
from .target import LocalTarget, in_support

NEG_INF = float("-inf")


def sigma_default(d: int, lambda_max: float, normK: float) -> float:
    """Theoretical proposal deviation min{1/(4 sqrt(d) L), ||K||/(120 d)}.

    L = lambda_max * ||K|| bounds the Lipschitz constant of the Gaussian
    reference's log over the ball.  The result never exceeds ||K||/(120 d).
    """
    if d < 1 or lambda_max <= 0 or normK <= 0:
        raise ValueError("d, lambda_max and normK must be positive")
    L = lambda_max * normK
    return min(1.0 / (4.0 * math.sqrt(d) * L), normK / (120.0 * d))


@dataclass(frozen=True)
class WalkConfig:
    """Proposal deviation, stream seed, and starting point (must lie in K).

    ``proposal_transform`` optionally premultiplies the standard normal
    proposal (e.g. J^{-1/2} for a reference-preconditioned walk); the
    canonical walk leaves it unset.
    """

    sigma: float
    seed: int
    init: np.ndarray
    proposal_transform: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        init = np.asarray(self.init, dtype=float).copy()
        init.setflags(write=False)
        object.__setattr__(self, "init", init)
        if self.proposal_transform is not None:
            T = np.asarray(self.proposal_transform, dtype=float).copy()
            d = init.shape[0]
            if T.shape != (d, d):
                raise ValueError("proposal_transform must be d x d")
            T.setflags(write=False)
            object.__setattr__(self, "proposal_transform", T)


@dataclass(frozen=True)
class ChainTrace:
    """Ordered walk record: states (T+1, d), per-step accept/proper flags."""

    states: np.ndarray
    accepted: np.ndarray
    proper: np.ndarray
    proposals_outside: int

    def __post_init__(self) -> None:
        if self.states.shape[0] != self.accepted.shape[0] + 1:
            raise ValueError("trace needs exactly one more state than steps")
        if self.accepted.shape != self.proper.shape:
            raise ValueError("flag arrays must align")

    @property
    def n_steps(self) -> int:
        return self.accepted.shape[0]

    @property
    def acceptance_rate(self) -> float:
        if self.n_steps == 0:
            return 0.0
        return float(self.accepted.mean())


def step(
    current: np.ndarray,
    target: LocalTarget,
    config: WalkConfig,
    rng: np.random.Generator,
    log_ell_current: Optional[float] = None,
) -> tuple[np.ndarray, bool, bool]:
    """One Metropolis step from ``current``; returns (next, accepted, proper).

    Draws one d-vector of proposal noise and one uniform per call, whether or
    not they end up used, so a loop over ``step`` consumes the stream exactly
    like :func:`run_chain`.
    """
    current = np.asarray(current, dtype=float)
    lx = target.log_ell(current) if log_ell_current is None else log_ell_current
    if lx == NEG_INF:
        raise ValueError("walk state has zero density; the chain must never occupy it")
    z = rng.standard_normal(target.dim)
    if config.proposal_transform is not None:
        z = config.proposal_transform @ z
    u = rng.random()
    y = current + config.sigma * z
    if not in_support(target.support, y):
        return current, False, False
    ly = target.log_ell(y)
    if ly >= lx or u < math.exp(ly - lx):
        proper = bool(np.any(y != current))
        return y, True, proper
    return current, False, False


def run_chain(target: LocalTarget, config: WalkConfig, steps: int) -> ChainTrace:
    """Run the walk for ``steps`` steps; the trace includes the start state.

    Deterministic given the config seed.  Rejects a start outside the ball
    or with zero density.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    d = target.dim
    x = np.asarray(config.init, dtype=float)
    if x.shape != (d,):
        raise ValueError(f"init must have shape ({d},)")
    if not in_support(target.support, x):
        raise ValueError("init lies outside the support ball")
    log_ell = target.log_ell
    lx = log_ell(x)
    if lx == NEG_INF:
        raise ValueError("init has zero density under the target")

    rng = stream(config.seed)
    sigma = config.sigma
    transform = config.proposal_transform
    r2 = target.support.radius ** 2

    states = np.empty((steps + 1, d))
    accepted = np.zeros(steps, dtype=bool)
    proper = np.zeros(steps, dtype=bool)
    outside = 0
    states[0] = x
    for t in range(steps):
        z = rng.standard_normal(d)
        if transform is not None:
            z = transform @ z
        u = rng.random()
        y = x + sigma * z
        ny = float(y @ y)
        if ny > r2:
            outside += 1
        else:
            ly = log_ell(y)
            if ly >= lx or u < math.exp(ly - lx):
                accepted[t] = True
                proper[t] = bool(np.any(y != x))
                x, lx = y, ly
        states[t + 1] = x

    states.setflags(write=False)
    accepted.setflags(write=False)
    proper.setflags(write=False)
    return ChainTrace(states=states, accepted=accepted, proper=proper, proposals_outside=outside)


def proper_move_rate(trace: ChainTrace) -> float:
    """Fraction of steps that were proper moves."""
    if trace.states.shape[0] < 2:
        raise ValueError("trace must contain at least one step")
    return float(trace.proper.mean())


def write_trace_csv(trace: ChainTrace, path: str) -> None:
    """Trace export: step, lambda_1..lambda_d, accepted, proper (RFC-4180)."""
    d = trace.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"lambda_{j+1}" for j in range(d)] + ["accepted", "proper"])
        w.writerow([0] + [format(v, ".17g") for v in trace.states[0]] + ["", ""])
        for t in range(trace.n_steps):
            w.writerow(
                [t + 1]
                + [format(v, ".17g") for v in trace.states[t + 1]]
                + [int(trace.accepted[t]), int(trace.proper[t])]
            )
