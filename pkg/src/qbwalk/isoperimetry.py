"""Numerical checks of the iso-perimetric inequality and the concave envelope.

The inequality bounds the mass of the separating set in a partition
K = S1 u S3 u S2 with d(S1, S2) >= t:

    Gaussian e^{-|x|^2} times a log-beta-concave factor m   (1-d form)
        Q(S3) >= beta (2 t e^{-t^2/4} / sqrt(pi)) min{Q(S1), Q(S2)}

    Gaussian e^{-x'Jx/2} times m, J SPD                     (general form)
        Q(S3) >= beta sqrt(lambda_min) t e^{-lambda_min t^2 / 8}
                 sqrt(2/pi) min{Q(S1), Q(S2)}

Partitions are slabs (or finite unions of intervals in 1-d) so the
separation constraint is checkable in closed form; integrals use adaptive
quadrature to absolute tolerance 1e-9, with explicit break points wherever
the factor m is discontinuous or kinked so the quadrature never straddles
them.  The concave upper envelope of a grid function is computed by the
monotone-chain upper hull.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

QUAD_ABS_TOL = 1e-9
HOLD_MARGIN = 1e-6

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)

Interval = tuple[float, float]


# ---------------------------------------------------------------------------
# partitions


def _check_intervals(intervals: Sequence[Interval], lo: float, hi: float, label: str) -> None:
    for a, b in intervals:
        if not (lo - 1e-12 <= a <= b <= hi + 1e-12):
            raise ValueError(f"{label} interval [{a}, {b}] leaves K = [{lo}, {hi}]")


def _interval_distance(p: Interval, q: Interval) -> float:
    return max(0.0, p[0] - q[1], q[0] - p[1])


@dataclass(frozen=True)
class Partition1D:
    """K = [lo, hi] split into S1, S2 (unions of closed intervals) and the rest.

    The infimum distance between S1 and S2 must be at least ``t``.
    """

    lo: float
    hi: float
    s1: tuple[Interval, ...]
    s2: tuple[Interval, ...]
    t: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValueError("empty support interval")
        if self.t < 0:
            raise ValueError("separation must be nonnegative")
        _check_intervals(self.s1, self.lo, self.hi, "S1")
        _check_intervals(self.s2, self.lo, self.hi, "S2")
        for p in self.s1:
            for q in self.s2:
                if _interval_distance(p, q) < self.t - 1e-12:
                    raise ValueError("S1 and S2 are closer than the declared separation")


@dataclass(frozen=True)
class SlabPartition2D:
    """Ball of the given radius cut by a slab orthogonal to ``direction``.

    S1 = {a'x <= c1}, S2 = {a'x >= c2}, S3 the open slab in between;
    the separation is t = c2 - c1.
    """

    radius: float
    direction: np.ndarray
    c1: float
    c2: float

    def __post_init__(self) -> None:
        a = np.asarray(self.direction, dtype=float)
        if a.shape != (2,):
            raise ValueError("direction must be a 2-vector")
        norm = float(np.linalg.norm(a))
        if norm == 0.0:
            raise ValueError("direction must be nonzero")
        a = a / norm
        a.setflags(write=False)
        object.__setattr__(self, "direction", a)
        if not self.c1 <= self.c2:
            raise ValueError("need c1 <= c2")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def t(self) -> float:
        return self.c2 - self.c1


@dataclass(frozen=True)
class IsoCheckResult:
    lhs: float
    rhs: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


# ---------------------------------------------------------------------------
# quadrature


def _quad_1d(
    f: Callable[[float], float], a: float, b: float, breakpoints: Sequence[float]
) -> float:
    if b <= a:
        return 0.0
    pts = sorted({a, b, *(p for p in breakpoints if a < p < b)})
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=QUAD_ABS_TOL, epsrel=1e-10, limit=200)
        total += val
    return total


def _regions_1d(partition: Partition1D) -> tuple[list[Interval], list[Interval], list[Interval]]:
    lo, hi = partition.lo, partition.hi
    taken = sorted([*partition.s1, *partition.s2], key=lambda iv: iv[0])
    for (a1, b1), (a2, b2) in zip(taken[:-1], taken[1:]):
        if a2 < b1 - 1e-12:
            raise ValueError("S1 and S2 overlap")
    s3: list[Interval] = []
    cursor = lo
    for a, b in taken:
        if a > cursor:
            s3.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < hi:
        s3.append((cursor, hi))
    return list(partition.s1), list(partition.s2), s3


def _masses_1d(
    density: Callable[[float], float],
    partition: Partition1D,
    breakpoints: Sequence[float],
) -> tuple[float, float, float]:
    s1, s2, s3 = _regions_1d(partition)
    q1 = sum(_quad_1d(density, a, b, breakpoints) for a, b in s1)
    q2 = sum(_quad_1d(density, a, b, breakpoints) for a, b in s2)
    q3 = sum(_quad_1d(density, a, b, breakpoints) for a, b in s3)
    z = q1 + q2 + q3
    if not (math.isfinite(z) and z > 0.0):
        raise ValueError("density integrates to zero or diverges on K")
    return q1 / z, q2 / z, q3 / z


def iso_check_1d(
    m_fn: Callable[[np.ndarray], np.ndarray],
    beta: float,
    partition: Partition1D,
    breakpoints: Sequence[float] = (),
) -> IsoCheckResult:
    """Check the 1-d inequality for f(x) = e^{-x^2} m(x).

    ``m_fn`` must accept an array of abscissae.  ``breakpoints`` lists the
    discontinuities or kinks of m so each quadrature panel stays smooth.
    """
    density = lambda x: math.exp(-x * x) * float(m_fn(np.array([x]))[0])
    q1, q2, q3 = _masses_1d(density, partition, breakpoints)
    t = partition.t
    rhs = beta * (2.0 * t * math.exp(-t * t / 4.0) / math.sqrt(math.pi)) * min(q1, q2)
    return IsoCheckResult(lhs=q3, rhs=rhs, holds=q3 >= rhs - HOLD_MARGIN)


def _gauss_const(beta: float, lam_min: float, t: float) -> float:
    return beta * math.sqrt(lam_min) * t * math.exp(-lam_min * t * t / 8.0) * math.sqrt(2.0 / math.pi)


def _slab_chord_integral(
    J: np.ndarray,
    m_fn: Callable[[np.ndarray], np.ndarray],
    R: float,
    rot: np.ndarray,
    u: float,
    breaklines: Sequence[tuple[np.ndarray, float]],
    breakcircles: Sequence[tuple[np.ndarray, float]],
) -> float:
    # integrate exp(-x'Jx/2) m(x) over the chord {u} x [-w, w] in slab coordinates
    w = R * R - u * u
    if w <= 0.0:
        return 0.0
    w = math.sqrt(w)
    cuts = {-w, w}
    for b, c in breaklines:
        bu = float(b @ rot[:, 0])
        bv = float(b @ rot[:, 1])
        if abs(bv) > 1e-14:
            v = (c - u * bu) / bv
            if -w < v < w:
                cuts.add(v)
    for center, rho in breakcircles:
        cu = float(center @ rot[:, 0])
        cv = float(center @ rot[:, 1])
        disc = rho * rho - (u - cu) ** 2
        if disc > 0.0:
            for v in (cv - math.sqrt(disc), cv + math.sqrt(disc)):
                if -w < v < w:
                    cuts.add(v)
    edges = sorted(cuts)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo < 1e-15:
            continue
        v = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
        pts = np.outer(np.full_like(v, u), rot[:, 0]) + np.outer(v, rot[:, 1])
        expo = -0.5 * np.einsum("ij,jk,ik->i", pts, J, pts)
        vals = np.exp(expo) * m_fn(pts)
        total += 0.5 * (hi - lo) * float(_GL_WEIGHTS @ vals)
    return total


def iso_check_gauss(
    J: np.ndarray,
    beta: float,
    partition,
    m_fn: Callable[[np.ndarray], np.ndarray],
    breakpoints: Sequence[float] = (),
    breaklines: Sequence[tuple[np.ndarray, float]] = (),
    breakcircles: Sequence[tuple[np.ndarray, float]] = (),
) -> IsoCheckResult:
    """Check the general inequality for f(x) = e^{-x'Jx/2} m(x), dim 1 or 2.

    One-dimensional partitions are :class:`Partition1D`; two-dimensional
    ones are slab cuts of a ball (:class:`SlabPartition2D`).  Higher
    dimensions are outside quadrature reach and are rejected.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    lam_min = float(np.linalg.eigvalsh(J)[0])
    if lam_min <= 0:
        raise ValueError("J must be positive definite")

    if isinstance(partition, Partition1D):
        if J.shape != (1, 1):
            raise ValueError("1-d partition needs a 1x1 matrix J")
        j = float(J[0, 0])
        density = lambda x: math.exp(-0.5 * j * x * x) * float(m_fn(np.array([x]))[0])
        q1, q2, q3 = _masses_1d(density, partition, breakpoints)
        rhs = _gauss_const(beta, lam_min, partition.t) * min(q1, q2)
        return IsoCheckResult(lhs=q3, rhs=rhs, holds=q3 >= rhs - HOLD_MARGIN)

    if isinstance(partition, SlabPartition2D):
        if J.shape != (2, 2):
            raise ValueError("2-d partition needs a 2x2 matrix J")
        R = partition.radius
        a = partition.direction
        rot = np.column_stack([a, np.array([-a[1], a[0]])])
        chord = lambda u: _slab_chord_integral(J, m_fn, R, rot, u, breaklines, breakcircles)

        outer_points: set[float] = set()
        for b, c in breaklines:
            nb = float(np.linalg.norm(b))
            bu = float(b @ rot[:, 0])
            # u where the line b'x = c meets the chord endpoints (kinks of the
            # chord integral): nb^2 u^2 - 2 c bu u + c^2 - (nb^2 - bu^2) R^2 = 0
            coeffs = [nb * nb, -2.0 * c * bu, c * c - (nb * nb - bu * bu) * R * R]
            roots = np.roots(coeffs)
            for r in roots:
                if abs(r.imag) < 1e-12:
                    outer_points.add(float(r.real))
        for center, rho in breakcircles:
            cu = float(center @ rot[:, 0])
            outer_points.add(cu - rho)
            outer_points.add(cu + rho)

        def mass(u_lo: float, u_hi: float) -> float:
            u_lo, u_hi = max(u_lo, -R), min(u_hi, R)
            if u_hi <= u_lo:
                return 0.0
            return _quad_1d(chord, u_lo, u_hi, sorted(outer_points))

        q1 = mass(-R, partition.c1)
        q2 = mass(partition.c2, R)
        q3 = mass(partition.c1, partition.c2)
        z = q1 + q2 + q3
        if not (math.isfinite(z) and z > 0.0):
            raise ValueError("density integrates to zero or diverges on K")
        q1, q2, q3 = q1 / z, q2 / z, q3 / z
        rhs = _gauss_const(beta, lam_min, partition.t) * min(q1, q2)
        return IsoCheckResult(lhs=q3, rhs=rhs, holds=q3 >= rhs - HOLD_MARGIN)

    raise ValueError("unsupported partition dimension (only 1 and 2 are feasible)")


# ---------------------------------------------------------------------------
# concave upper envelope (grid functions)


@dataclass(frozen=True)
class GridFunction:
    """Values h(x_i) on strictly increasing abscissae (at least 2 points)."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != v.shape or x.shape[0] < 2:
            raise ValueError("grid needs at least two aligned points")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissae must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        x = x.copy()
        v = v.copy()
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "values", v)


def concave_upper_envelope(h: GridFunction) -> GridFunction:
    """Smallest concave function above the grid points, evaluated on the grid.

    Monotone-chain upper hull of the planar points (x_i, h_i), linearly
    interpolated back onto every abscissa.  The envelope dominates h and
    touches it at the hull vertices; applying it twice changes nothing.
    """
    x, v = h.x, h.values
    hull_x: list[float] = []
    hull_v: list[float] = []
    for xi, vi in zip(x, v):
        while len(hull_x) >= 2:
            cross = (hull_x[-1] - hull_x[-2]) * (vi - hull_v[-2]) - (
                hull_v[-1] - hull_v[-2]
            ) * (xi - hull_x[-2])
            if cross >= 0.0:  # middle point is at or below the chord
                hull_x.pop()
                hull_v.pop()
            else:
                break
        hull_x.append(float(xi))
        hull_v.append(float(vi))
    env = np.interp(x, hull_x, hull_v)
    env = np.maximum(env, v)  # guard against interpolation rounding
    return GridFunction(x=x, values=env)


def beta_from_envelope(h: GridFunction) -> float:
    """Log-concavity defect exp(-max_i (m(x_i) - h(x_i))) of a grid function."""
    env = concave_upper_envelope(h)
    gap = float(np.max(env.values - h.values))
    return math.exp(-gap)


# ---------------------------------------------------------------------------
# fuzzing families (shared by the CLI and the acceptance suite)


@dataclass(frozen=True)
class FuzzCase:
    dim: int
    beta: float
    m_fn: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple[float, ...]
    breaklines: tuple[tuple[np.ndarray, float], ...]
    breakcircles: tuple[tuple[np.ndarray, float], ...]
    partition: object
    J: np.ndarray


def random_fuzz_case(
    family: str, beta: float, dim: int, rng: np.random.Generator, radius: float = 3.0
) -> FuzzCase:
    """One random slab partition plus a log-beta-concave factor.

    family 'step':   two-level factor with ratio beta (constant when beta=1);
    family 'smooth': Gaussian bump truncated below at beta (untruncated when
    beta = 1).  Both are lower semi-continuous by construction.
    """
    if family not in ("step", "smooth"):
        raise ValueError(f"unknown factor family {family!r}")
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must lie in (0, 1]")
    if dim == 1:
        lo, hi = -radius, radius
        t = float(rng.uniform(0.1, 1.2))
        c1 = float(rng.uniform(lo + 0.3, hi - 0.3 - t))
        c2 = c1 + t
        partition = Partition1D(lo=lo, hi=hi, s1=((lo, c1),), s2=((c2, hi),), t=t)
        J = np.array([[float(rng.uniform(0.5, 3.0))]])
        if family == "step":
            cut = float(rng.uniform(lo, hi))
            kappa = beta

            def m(x: np.ndarray) -> np.ndarray:
                return np.where(np.asarray(x) >= cut, kappa, 1.0)

            return FuzzCase(1, beta, m, (cut,), (), (), partition, J)
        x0 = float(rng.uniform(lo / 2, hi / 2))
        width = float(rng.uniform(1.0, 4.0))
        if beta >= 1.0:

            def m(x: np.ndarray) -> np.ndarray:
                return np.exp(-((np.asarray(x) - x0) ** 2) / width)

            return FuzzCase(1, beta, m, (), (), (), partition, J)
        rho = math.sqrt(-width * math.log(beta))

        def m(x: np.ndarray) -> np.ndarray:
            return np.maximum(np.exp(-((np.asarray(x) - x0) ** 2) / width), beta)

        return FuzzCase(1, beta, m, (x0 - rho, x0 + rho), (), (), partition, J)

    if dim == 2:
        ang = rng.uniform(0.0, 2.0 * math.pi)
        a = np.array([math.cos(ang), math.sin(ang)])
        t = float(rng.uniform(0.1, 1.0))
        c1 = float(rng.uniform(-radius + 0.4, radius - 0.4 - t))
        partition = SlabPartition2D(radius=radius, direction=a, c1=c1, c2=c1 + t)
        e1 = float(rng.uniform(0.5, 3.0))
        e2 = float(rng.uniform(0.5, 3.0))
        th = rng.uniform(0.0, math.pi)
        Q = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        J = Q @ np.diag([e1, e2]) @ Q.T
        if family == "step":
            bng = rng.uniform(0.0, 2.0 * math.pi)
            b = np.array([math.cos(bng), math.sin(bng)])
            c = float(rng.uniform(-radius / 2, radius / 2))
            kappa = beta

            def m(pts: np.ndarray) -> np.ndarray:
                return np.where(pts @ b >= c, kappa, 1.0)

            return FuzzCase(2, beta, m, (), ((b, c),), (), partition, J)
        x0 = rng.uniform(-radius / 2, radius / 2, size=2)
        width = float(rng.uniform(1.0, 4.0))
        if beta >= 1.0:

            def m(pts: np.ndarray) -> np.ndarray:
                d2 = ((pts - x0) ** 2).sum(axis=-1)
                return np.exp(-d2 / width)

            return FuzzCase(2, beta, m, (), (), (), partition, J)
        rho = math.sqrt(-width * math.log(beta))

        def m(pts: np.ndarray) -> np.ndarray:
            d2 = ((pts - x0) ** 2).sum(axis=-1)
            return np.maximum(np.exp(-d2 / width), beta)

        return FuzzCase(2, beta, m, (), (), ((x0, rho),), partition, J)

    raise ValueError("fuzzing supports dims 1 and 2 only")


def run_fuzz_case(case: FuzzCase) -> IsoCheckResult:
    """Evaluate the general-form inequality on one fuzz case."""
    return iso_check_gauss(
        case.J,
        case.beta,
        case.partition,
        case.m_fn,
        breakpoints=case.breakpoints,
        breaklines=case.breaklines,
        breakcircles=case.breakcircles,
    )
