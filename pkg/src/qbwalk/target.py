"""Localized target densities, the Gaussian reference, and support geometry.

The local parameter lives on a closed Euclidean ball K centered at the
origin.  A target bundles the log of the localized criterion ratio (zero at
the origin by construction) with the symmetric positive definite matrix J
whose quadratic form is the Gaussian reference the target is compared
against.  Everything here is immutable after construction and safe to share
across concurrently running chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

NEG_INF = float("-inf")

# Relative eigenvalue floor below which a matrix is rejected as not SPD.
_SPD_RTOL = 1e-12
# Element-wise symmetry tolerance for J.
_SYM_ATOL = 1e-12


@dataclass(frozen=True)
class SupportBall:
    """Closed ball B(0, radius) in R^dim; membership is inclusive."""

    dim: int
    radius: float

    def __post_init__(self) -> None:
        if int(self.dim) < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"radius must be a positive real, got {self.radius}")

    def contains(self, lam: np.ndarray) -> bool:
        return in_support(self, lam)


def in_support(support: SupportBall, lam: np.ndarray) -> bool:
    """True iff ``lam`` lies in the closed ball (boundary included)."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (support.dim,):
        raise ValueError(f"expected shape ({support.dim},), got {lam.shape}")
    return float(lam @ lam) <= support.radius * support.radius


@dataclass(frozen=True)
class NormalReference:
    """SPD matrix J with cached eigenvalue extremes and the induced ball norm.

    ``norm_K_J`` is sqrt(lambda_max) * radius of the companion support ball,
    i.e. the largest value of ||J^{1/2} v|| over the ball.
    """

    J: np.ndarray
    lambda_min: float
    lambda_max: float
    norm_K_J: float

    @classmethod
    def from_matrix(cls, J: np.ndarray, support: SupportBall) -> "NormalReference":
        J = np.asarray(J, dtype=float)
        d = support.dim
        if J.shape != (d, d):
            raise ValueError(f"J must be {d}x{d}, got {J.shape}")
        if np.max(np.abs(J - J.T)) > _SYM_ATOL:
            raise ValueError("J is not symmetric within tolerance 1e-12")
        eigs = np.linalg.eigvalsh(J)
        lam_min, lam_max = float(eigs[0]), float(eigs[-1])
        if lam_max <= 0 or lam_min <= _SPD_RTOL * lam_max:
            raise ValueError(
                f"J is not positive definite: eigenvalue range [{lam_min}, {lam_max}]"
            )
        frozen = J.copy()
        frozen.setflags(write=False)
        return cls(
            J=frozen,
            lambda_min=lam_min,
            lambda_max=lam_max,
            norm_K_J=math.sqrt(lam_max) * support.radius,
        )

    @property
    def dim(self) -> int:
        return self.J.shape[0]


def quadratic_reference(ref: NormalReference, lam: np.ndarray) -> float:
    """Log of the unnormalized Gaussian reference: -1/2 * lam' J lam."""
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (ref.dim,):
        raise ValueError(f"expected shape ({ref.dim},), got {lam.shape}")
    if not np.all(np.isfinite(lam)):
        raise ValueError("lam must be finite")
    return -0.5 * float(lam @ ref.J @ lam)


def support_radius(ref: NormalReference, C: float) -> float:
    """Support ball radius C * sqrt(d / lambda_min) for a constant C > 1.

    C <= 1 is rejected: the concentration argument behind the radius choice
    needs a constant strictly above one.
    """
    if not C > 1.0:
        raise ValueError(f"C must be > 1, got {C}")
    return C * math.sqrt(ref.dim / ref.lambda_min)


@dataclass(frozen=True)
class LocalTarget:
    """Evaluator of the localized log criterion together with its geometry.

    ``log_ell`` maps a d-vector to a float or -inf; -inf marks points where
    the criterion is undefined and is treated as automatic rejection by the
    walk.  Evaluation must be pure.  Targets built by the ``models`` module
    satisfy log_ell(0) = 0 exactly (the criterion is a ratio normalized at
    the origin).
    """

    dim: int
    support: SupportBall
    log_ell: Callable[[np.ndarray], float]
    reference: NormalReference

    def __post_init__(self) -> None:
        if self.support.dim != self.dim:
            raise ValueError("support dimension does not match target dimension")
        if self.reference.dim != self.dim:
            raise ValueError("reference dimension does not match target dimension")


def gaussian_reference_target(
    J: np.ndarray, radius: float | None = None, C: float = 2.0
) -> LocalTarget:
    """Target whose log criterion is exactly the Gaussian reference quadratic.

    Used for calibration runs and benchmarks.  The support radius defaults
    to the concentration rule C sqrt(d / lambda_min).
    """
    J = np.asarray(J, dtype=float)
    d = J.shape[0]
    if radius is None:
        probe = SupportBall(dim=d, radius=1.0)
        radius = support_radius(NormalReference.from_matrix(J, probe), C)
    ball = SupportBall(dim=d, radius=float(radius))
    ref = NormalReference.from_matrix(J, ball)

    def log_ell(lam: np.ndarray) -> float:
        lam = np.asarray(lam, dtype=float)
        return -0.5 * float(lam @ J @ lam)

    return LocalTarget(dim=d, support=ball, log_ell=log_ell, reference=ref)


def uniform_in_ball(rng: np.random.Generator, ball: SupportBall, size: int) -> np.ndarray:
    """Draw ``size`` points uniformly from the closed ball, shape (size, dim)."""
    d = ball.dim
    z = rng.standard_normal((size, d))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0.0] = 1.0
    radii = ball.radius * rng.random(size) ** (1.0 / d)
    return z * (radii / norms)[:, None]
