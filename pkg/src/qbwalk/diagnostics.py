"""Empirical verification of the CLT conditions and chain mixing diagnostics.

Contents: the (eps1, eps2) deviation fit (a two-variable LP solved exactly),
a self-normalized importance-sampling estimate of the L1 distance between
the target and its Gaussian reference on the support ball, autocovariance
tables with the conductance-style decay proxy, the integrated
autocorrelation time, and the mixing-time scaling benchmark.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import child_seed, stream
from .schedule import beta_factor
from .target import (
    LocalTarget,
    NormalReference,
    SupportBall,
    gaussian_reference_target,
    uniform_in_ball,
)
from .walk import ChainTrace, WalkConfig, run_chain, sigma_default

_FLOOR_MULT = 3.0  # Bartlett-style noise floor: 3 gamma_0 / sqrt(N)


# ---------------------------------------------------------------------------
# deviation fit (CLT condition C.2)


@dataclass(frozen=True)
class CltFit:
    """Fitted deviation envelope |r| <= eps1 + eps2 q/2 over sampled points.

    ``beta`` is the induced log-concavity defect; ``worst_lambda`` is the
    sample point with the largest absolute residual.  ``eps1`` is +inf when
    some residual was infinite (criterion undefined inside the ball).
    """

    eps1: float
    eps2: float
    beta: float
    n_samples: int
    worst_lambda: np.ndarray
    max_residual: float


def fit_deviation_bounds(
    quad_forms: np.ndarray, residuals: np.ndarray, normKJ_sq: float
) -> tuple[float, float]:
    """Minimize eps1 + eps2 ||K||_J^2 / 2 subject to |r_i| <= eps1 + eps2 q_i/2.

    Exact solution of the two-variable LP by enumerating the vertices of the
    feasible region, i.e. the intersections of adjacent active constraint
    pairs plus the two axis points.  Ties in the objective are broken toward
    the smaller eps1.
    """
    q = np.asarray(quad_forms, dtype=float)
    a = np.abs(np.asarray(residuals, dtype=float))
    if q.shape != a.shape or q.ndim != 1:
        raise ValueError("quad_forms and residuals must be aligned 1-d arrays")
    if np.any(q < -1e-12):
        raise ValueError("quadratic forms must be nonnegative")
    w = q / 2.0
    keep = a > 0.0
    if not np.any(keep):
        return 0.0, 0.0
    w, a = w[keep], a[keep]

    # constraint eps1 >= a_i - w_i eps2: only the upper envelope of these
    # lines can be active, so prune dominated lines first
    order = np.argsort(w, kind="stable")
    w, a = w[order], a[order]
    lines: list[tuple[float, float]] = []  # (w, a) with w asc, a asc
    best_a = -math.inf
    for wi, ai in zip(w, a):
        if ai > best_a:
            lines.append((wi, ai))
            best_a = ai
    # envelope construction over t = eps2 >= 0, processing steeper lines first
    stack: list[tuple[float, float]] = []
    breaks: list[float] = []  # breakpoint where stack[i] hands over to stack[i+1]
    for wi, ai in reversed(lines):  # w desc, a desc
        while stack:
            wj, aj = stack[-1]
            if wj == wi:
                break
            t = (aj - ai) / (wj - wi)  # intersection with current top
            if breaks and t <= breaks[-1]:
                stack.pop()
                breaks.pop()
            else:
                breaks.append(t)
                break
        if not stack or stack[-1][0] != wi:
            stack.append((wi, ai))

    def env(t: float) -> float:
        return max(ai - wi * t for wi, ai in stack)

    half_norm = normKJ_sq / 2.0
    candidates: list[tuple[float, float]] = [(env(0.0), 0.0)]
    for t in breaks:
        e1 = env(t)
        if e1 >= 0.0:
            candidates.append((e1, t))
    if all(wi > 0.0 for wi, ai in stack):
        t_end = max(ai / wi for wi, ai in stack)
        candidates.append((0.0, t_end))

    feasible = []
    for e1, e2 in candidates:
        e1c, e2c = max(e1, 0.0), max(e2, 0.0)
        slack = e1c + w * e2c - a
        if slack.min() >= -1e-9 * max(1.0, a.max()):
            feasible.append((e1c + half_norm * e2c, e1c, e2c))
    if not feasible:  # numerically degenerate; fall back to the eps1-only vertex
        e1 = float(a.max())
        return e1, 0.0
    best_obj = min(obj for obj, _, _ in feasible)
    tol = 1e-12 * max(1.0, abs(best_obj))
    near = [(e1, e2) for obj, e1, e2 in feasible if obj <= best_obj + tol]
    e1, e2 = min(near, key=lambda p: p[0])
    return float(e1), float(e2)


def clt_fit(target: LocalTarget, ref: NormalReference, m: int, seed: int) -> CltFit:
    """Fit (eps1, eps2) from m uniform draws in K plus the origin.

    Residuals are r(lam) = log_ell(lam) + lam' J lam / 2.  Uniform sampling
    stresses the envelope where the quadratic term binds; the origin anchors
    the fit at r(0).
    """
    if m < 10:
        raise ValueError("need at least 10 sample points")
    rng = stream(seed)
    pts = uniform_in_ball(rng, target.support, m)
    pts = np.vstack([np.zeros((1, target.dim)), pts])
    J = ref.J
    q = np.einsum("ij,jk,ik->i", pts, J, pts)
    r = np.array([target.log_ell(p) for p in pts]) + 0.5 * q
    worst = int(np.argmax(np.abs(r)))
    if not np.all(np.isfinite(r)):
        bad = int(np.argmax(~np.isfinite(r)))
        return CltFit(
            eps1=math.inf,
            eps2=0.0,
            beta=0.0,
            n_samples=m,
            worst_lambda=pts[bad].copy(),
            max_residual=math.inf,
        )
    eps1, eps2 = fit_deviation_bounds(q, r, ref.norm_K_J**2)
    return CltFit(
        eps1=eps1,
        eps2=eps2,
        beta=beta_factor(eps1, eps2, ref.norm_K_J**2),
        n_samples=m,
        worst_lambda=pts[worst].copy(),
        max_residual=float(np.abs(r[worst])),
    )


# ---------------------------------------------------------------------------
# distance to the Gaussian reference


def _reference_sqrt_inverse(ref: NormalReference) -> np.ndarray:
    evals, vecs = np.linalg.eigh(ref.J)
    return vecs @ np.diag(1.0 / np.sqrt(evals)) @ vecs.T


def sample_reference_in_ball(
    ref: NormalReference, ball: SupportBall, m: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw m points from N(0, J^{-1}) restricted to the ball by rejection."""
    half = _reference_sqrt_inverse(ref)
    out = np.empty((m, ball.dim))
    have = 0
    attempts = 0
    while have < m:
        batch = max(m - have, 1024)
        z = rng.standard_normal((batch, ball.dim)) @ half.T
        inside = z[(z * z).sum(axis=1) <= ball.radius**2]
        take = min(len(inside), m - have)
        out[have : have + take] = inside[:take]
        have += take
        attempts += batch
        if attempts > 1000 * m + 100000:
            raise RuntimeError("rejection sampling from the reference keeps missing the ball")
    return out


def tv_to_normal(target: LocalTarget, ref: NormalReference, m: int, seed: int) -> float:
    """Estimate the L1 distance between the target and the Gaussian reference on K.

    Draws lam_i from the reference restricted to K, forms self-normalized
    weights w_i = exp(log_ell(lam_i) + lam_i' J lam_i / 2), and returns
    mean |w_i / wbar - 1|, an importance-sampling estimate of
    integral_K |f_K - phi_K| in [0, 2].  Adding a constant to log_ell leaves
    the result unchanged.
    """
    if m < 1000:
        raise ValueError("need at least 1e3 draws")
    rng = stream(seed)
    pts = sample_reference_in_ball(ref, target.support, m, rng)
    J = ref.J
    q = np.einsum("ij,jk,ik->i", pts, J, pts)
    logw = np.array([target.log_ell(p) for p in pts]) + 0.5 * q
    logw = logw - np.max(logw[np.isfinite(logw)])
    w = np.exp(logw)
    wbar = w.mean()
    if wbar == 0.0:
        raise ValueError("all importance weights vanished")
    return float(np.mean(np.abs(w / wbar - 1.0)))


def tv_to_normal_quadrature(target: LocalTarget, ref: NormalReference) -> float:
    """Adaptive-quadrature value of integral_K |f_K - phi_K| for d <= 2 (oracle)."""
    from scipy import integrate

    d = target.dim
    R = target.support.radius
    J = ref.J
    if d == 1:
        j = float(J[0, 0])
        f = lambda x: math.exp(target.log_ell(np.array([x])))
        p = lambda x: math.exp(-0.5 * j * x * x)
        zf, _ = integrate.quad(f, -R, R, epsabs=1e-11, limit=400)
        zp, _ = integrate.quad(p, -R, R, epsabs=1e-11, limit=400)
        val, _ = integrate.quad(
            lambda x: abs(f(x) / zf - p(x) / zp), -R, R, epsabs=1e-9, limit=800
        )
        return float(val)
    if d == 2:
        f = lambda y, x: math.exp(target.log_ell(np.array([x, y])))
        p = lambda y, x: math.exp(-0.5 * (J[0, 0] * x * x + 2 * J[0, 1] * x * y + J[1, 1] * y * y))
        lo = lambda x: -math.sqrt(max(R * R - x * x, 0.0))
        hi = lambda x: math.sqrt(max(R * R - x * x, 0.0))
        zf, _ = integrate.dblquad(f, -R, R, lo, hi, epsabs=1e-10)
        zp, _ = integrate.dblquad(p, -R, R, lo, hi, epsabs=1e-10)
        val, _ = integrate.dblquad(
            lambda y, x: abs(f(y, x) / zf - p(y, x) / zp), -R, R, lo, hi, epsabs=1e-8
        )
        return float(val)
    raise ValueError("quadrature oracle supports d <= 2 only")


# ---------------------------------------------------------------------------
# autocovariance, conductance proxy, IAT


@dataclass(frozen=True)
class AutoCovTable:
    """Biased (1/N) empirical autocovariances gamma_0..gamma_maxlag."""

    gammas: np.ndarray
    n: int

    def __post_init__(self) -> None:
        if self.gammas.ndim != 1 or self.gammas.shape[0] < 1:
            raise ValueError("need at least lag 0")
        if self.gammas[0] < 0:
            raise ValueError("gamma_0 must be nonnegative")

    @property
    def maxlag(self) -> int:
        return self.gammas.shape[0] - 1


def autocovariance_series(values: np.ndarray, maxlag: int) -> AutoCovTable:
    """Autocovariance table of a scalar series (FFT-based, 1/N normalization)."""
    y = np.asarray(values, dtype=float)
    if y.ndim != 1:
        raise ValueError("values must be one-dimensional")
    n = y.shape[0]
    if maxlag < 1 or n < 10 * maxlag:
        raise ValueError("series must be at least 10x the maximum lag")
    if np.max(y) == np.min(y):  # constant series: exactly zero, not FFT dust
        zeros = np.zeros(maxlag + 1)
        zeros.setflags(write=False)
        return AutoCovTable(gammas=zeros, n=n)
    y = y - y.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    f = np.fft.rfft(y, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: maxlag + 1].real / n
    acov.setflags(write=False)
    return AutoCovTable(gammas=acov, n=n)


def autocovariance(
    trace: ChainTrace, g: Callable[[np.ndarray], float], maxlag: int, burn_in: int = 0
) -> AutoCovTable:
    """Autocovariances of g along the chain after discarding ``burn_in`` states."""
    states = trace.states[burn_in:]
    vals = np.apply_along_axis(g, 1, states)
    return autocovariance_series(vals, maxlag)


@dataclass(frozen=True)
class ConductanceProxy:
    """Heuristic conductance estimate from autocovariance decay.

    The geometric envelope |gamma_k| <= (1 - phi^2/2)^k gamma_0 only upper
    bounds the covariances, so ``phi_hat`` is an optimistic (upper) proxy for
    the true conductance, never a certified bound.
    """

    rho_hat: float
    phi_hat: float
    lags_used: tuple[int, ...]
    r_squared: float
    note: str = "heuristic proxy: autocovariance decay only upper-bounds conductance"


def conductance_proxy(table: AutoCovTable) -> ConductanceProxy:
    """Fit ln|gamma_k| against k over lags above the noise floor.

    rho_hat = exp(slope), phi_hat = min(1, sqrt(2 (1 - rho_hat))).  When
    fewer than 3 lags clear the floor the covariances die within the noise,
    which is treated as immediate decay: rho_hat = 0, phi_hat = 1.
    """
    g0 = float(table.gammas[0])
    if g0 <= 0.0:
        raise ValueError("gamma_0 must be positive")
    floor = _FLOOR_MULT * g0 / math.sqrt(table.n)
    lags = np.arange(1, table.maxlag + 1)
    usable = lags[np.abs(table.gammas[1:]) > floor]
    if usable.size < 3:
        return ConductanceProxy(rho_hat=0.0, phi_hat=1.0, lags_used=tuple(int(k) for k in usable), r_squared=float("nan"))
    yk = np.log(np.abs(table.gammas[usable]))
    slope, intercept = np.polyfit(usable, yk, 1)
    pred = slope * usable + intercept
    ss_res = float(np.sum((yk - pred) ** 2))
    ss_tot = float(np.sum((yk - yk.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    rho = min(max(math.exp(slope), 0.0), 1.0 - 1e-15)
    phi = min(1.0, math.sqrt(2.0 * (1.0 - rho)))
    return ConductanceProxy(
        rho_hat=rho, phi_hat=phi, lags_used=tuple(int(k) for k in usable), r_squared=r2
    )


@dataclass(frozen=True)
class CovarianceBoundCheck:
    holds: bool
    margins: np.ndarray  # envelope_k - |gamma_k|; negative entries are violations


def covariance_bound_check(table: AutoCovTable, phi: float) -> CovarianceBoundCheck:
    """Check |gamma_k| <= (1 - phi^2/2)^k gamma_0 + 3 gamma_0 / sqrt(N) for all k."""
    if not (0.0 < phi <= 1.0):
        raise ValueError("phi must lie in (0, 1]")
    g0 = float(table.gammas[0])
    slack = _FLOOR_MULT * g0 / math.sqrt(table.n)
    k = np.arange(table.maxlag + 1)
    envelope = (1.0 - phi * phi / 2.0) ** k * g0 + slack
    margins = envelope - np.abs(table.gammas)
    return CovarianceBoundCheck(holds=bool(np.all(margins >= 0.0)), margins=margins)


def iat(table: AutoCovTable) -> float:
    """Integrated autocorrelation time 1 + 2 sum gamma_k/gamma_0.

    The sum is truncated at the first k with gamma_k + gamma_{k+1} <= 0
    (paired-sum rule); a degenerate series (gamma_0 = 0) returns 1 by
    convention, and the estimate is floored at 1.
    """
    g0 = float(table.gammas[0])
    if g0 <= 0.0:
        return 1.0
    acc = 0.0
    for k in range(1, table.maxlag):
        if table.gammas[k] + table.gammas[k + 1] <= 0.0:
            break
        acc += float(table.gammas[k])
    return max(1.0, 1.0 + 2.0 * acc / g0)


# ---------------------------------------------------------------------------
# mixing-time scaling benchmark


@dataclass(frozen=True)
class MixingScalingResult:
    rows: tuple[tuple[int, float], ...]  # (dimension, iat estimate)
    slope: float  # log-log LS slope; nan with fewer than two dims


def _mixing_cell(args: tuple[int, int, int, float]) -> tuple[int, float]:
    d, steps, seed, C = args
    target = gaussian_reference_target(np.eye(d), C=C)
    sigma = sigma_default(d, target.reference.lambda_max, target.support.radius)
    burn = 10 * d * d
    cfg = WalkConfig(sigma=sigma, seed=seed, init=np.zeros(d))
    trace = run_chain(target, cfg, burn + steps)
    series = trace.states[burn + 1 :, 0]
    table = autocovariance_series(series, maxlag=max(1, steps // 10))
    return d, iat(table)


def mixing_scaling(
    dims: Sequence[int],
    steps: int,
    master_seed: int,
    C: float = 2.0,
    workers: int = 1,
) -> MixingScalingResult:
    """IAT of the first coordinate of standard-normal targets across dimensions.

    Each cell runs the canonical walk with the theoretical sigma after a
    burn-in of 10 d^2 steps; cells use independent child streams so results
    are identical whether run sequentially or in parallel.
    """
    dims = list(dims)
    if dims != sorted(dims) or any(d < 1 for d in dims):
        raise ValueError("dims must be sorted and positive")
    jobs = [(d, steps, child_seed(master_seed, i), C) for i, d in enumerate(dims)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_mixing_cell, jobs))
    else:
        rows = [_mixing_cell(j) for j in jobs]
    rows.sort(key=lambda r: r[0])
    if len(rows) >= 2:
        ln_d = np.log([r[0] for r in rows])
        ln_tau = np.log([r[1] for r in rows])
        slope = float(np.polyfit(ln_d, ln_tau, 1)[0])
    else:
        slope = float("nan")
    return MixingScalingResult(rows=tuple(rows), slope=slope)
