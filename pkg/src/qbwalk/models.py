"""Model localizations: exponential families, curved families, Z-problems.

Each ``make_*_target`` factory turns a model specification, a dataset, and a
localization (center, first-order shift s, sample size n) into a
:class:`~qbwalk.target.LocalTarget` whose log criterion is normalized to zero
at the origin, paired with the matching Gaussian reference matrix.

Synthetic data generators and CSV ingestion live here as well so experiments
can round-trip through the same schema.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import stream
from .target import LocalTarget, NormalReference, SupportBall, support_radius

DEFAULT_SUPPORT_C = 2.0

Array = np.ndarray
LogPrior = Callable[[Array], float]


def flat_prior(_theta: Array) -> float:
    return 0.0


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    """n records of fixed width with named columns."""

    data: Array
    columns: tuple[str, ...]

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("dataset needs at least one record of fixed width")
        if data.shape[1] != len(self.columns):
            raise ValueError("column names do not match record width")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> Array:
        return self.data[:, self.columns.index(name)]

    def block(self, names: Sequence[str]) -> Array:
        idx = [self.columns.index(c) for c in names]
        return self.data[:, idx]


@dataclass(frozen=True)
class DataSchema:
    """Maps column names to roles: response Y, regressors X, instruments Z."""

    y: Optional[str] = None
    x: tuple[str, ...] = ()
    z: tuple[str, ...] = ()
    censor: Optional[str] = None


def write_dataset_csv(ds: Dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ds.columns)
        for row in ds.data:
            w.writerow([format(v, ".17g") for v in row])


def read_dataset_csv(path: str) -> Dataset:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r if row]
    return Dataset(np.array(rows, dtype=float), tuple(header))


# ---------------------------------------------------------------------------
# model specifications


@dataclass(frozen=True)
class ExpFamilySpec:
    """Canonical exponential family h(x; theta) = exp(x'theta - psi(theta))."""

    dim: int
    psi: Callable[[Array], float]
    grad_psi: Callable[[Array], Array]
    hess_psi: Callable[[Array], Array]
    log_prior: LogPrior = flat_prior


def gaussian_location_family(dim: int, log_prior: LogPrior = flat_prior) -> ExpFamilySpec:
    """N(theta, I) location family: psi(theta) = ||theta||^2 / 2."""
    return ExpFamilySpec(
        dim=dim,
        psi=lambda th: 0.5 * float(th @ th),
        grad_psi=lambda th: np.asarray(th, dtype=float),
        hess_psi=lambda th: np.eye(dim),
        log_prior=log_prior,
    )


@dataclass(frozen=True)
class CurvedSpec:
    """Curved exponential family: ambient theta = theta_map(eta), eta in R^{dim_eta}.

    ``base`` carries the ambient family's psi and prior.  ``G`` is the linear
    operator approximating the map around the localization point; its Gram
    matrix G'G must be nonsingular.  ``delta1``/``delta2`` record the
    magnitudes of the linearization errors when they are known.
    """

    base: ExpFamilySpec
    dim_eta: int
    theta_map: Callable[[Array], Array]
    G: Array
    delta1: float = 0.0
    delta2: float = 0.0

    def __post_init__(self) -> None:
        G = np.asarray(self.G, dtype=float)
        if G.shape != (self.base.dim, self.dim_eta):
            raise ValueError(f"G must be {self.base.dim}x{self.dim_eta}, got {G.shape}")
        gram_eigs = np.linalg.eigvalsh(G.T @ G)
        if gram_eigs[0] <= 1e-8:
            raise ValueError("G'G is rank deficient (eigenvalue <= 1e-8)")
        G = G.copy()
        G.setflags(write=False)
        object.__setattr__(self, "G", G)


@dataclass(frozen=True)
class ZProblem:
    """Z-estimation problem with a d1-dimensional moment function, d1 >= d.

    ``moment`` maps one record and theta to a d1-vector.  ``moment_batch``,
    when given, maps the full (n, width) data matrix and theta to (n, d1) and
    is used on hot paths; the default falls back to a per-record loop.
    ``jacobian`` is A = d/dtheta E[m(X, theta)] at the center; when None it
    is estimated by central finite differences with step n^{-1/4}.
    """

    dim: int
    dim_m: int
    moment: Callable[[Array, Array], Array]
    center: Array
    moment_batch: Optional[Callable[[Array, Array], Array]] = None
    jacobian: Optional[Array] = None
    radius: Optional[float] = None
    mu: Optional[float] = None
    delta: Optional[float] = None

    def __post_init__(self) -> None:
        if self.dim_m < self.dim:
            raise ValueError("moment dimension must be >= parameter dimension")
        center = np.asarray(self.center, dtype=float)
        if center.shape != (self.dim,):
            raise ValueError("center has wrong shape")
        center = center.copy()
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        if self.jacobian is not None:
            A = np.asarray(self.jacobian, dtype=float)
            if A.shape != (self.dim_m, self.dim):
                raise ValueError(f"A must be {self.dim_m}x{self.dim}, got {A.shape}")
            if np.linalg.eigvalsh(A.T @ A)[0] <= 1e-8:
                raise ValueError("A'A is singular (eigenvalue <= 1e-8)")
            A = A.copy()
            A.setflags(write=False)
            object.__setattr__(self, "jacobian", A)

    def moments_matrix(self, data: Dataset, theta: Array) -> Array:
        """(n, d1) matrix of per-record moment values."""
        if self.moment_batch is not None:
            return np.asarray(self.moment_batch(data.data, theta), dtype=float)
        return np.array([self.moment(row, theta) for row in data.data], dtype=float)


@dataclass(frozen=True)
class Localization:
    """Localization center theta_c = theta0 + s/sqrt(n), shift s, sample size n."""

    center: Array
    s: Array
    n: int

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=float)
        s = np.asarray(self.s, dtype=float)
        if center.shape != s.shape:
            raise ValueError("center and s must have the same shape")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        center = center.copy()
        center.setflags(write=False)
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "s", s)


# ---------------------------------------------------------------------------
# moment functions


def quantile_moments(
    record: Array,
    theta: Array,
    alpha: float,
    W: Array,
    p: Callable[[Array], float] = lambda _th: 1.0,
    schema_widths: tuple[int, int, int] | None = None,
) -> Array:
    """Censored-quantile moment W (alpha/p(theta) - 1(Y <= X'theta)) Z.

    The record is laid out as (Y, X-block, Z-block); by default the X and Z
    blocks split the remainder evenly (Z = X designs pass the same columns
    twice or give ``schema_widths``).

    Parameters
    ----------
    record : array
        One observation (Y, X..., Z...).
    theta : array
        Parameter at which the moment is evaluated.
    alpha : float
        Quantile index in (0, 1).
    W : array
        Positive definite weighting matrix, shape (len(Z), len(Z)).
    p : callable
        Censoring-weight function theta -> (0, 1]; defaults to 1.
    schema_widths : (1, dx, dz), optional
        Explicit widths of the Y/X/Z blocks.
    """
    record = np.asarray(record, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if schema_widths is None:
        dx = len(theta)
        y, x, z = record[0], record[1 : 1 + dx], record[1 + dx :]
        if z.size == 0:
            z = x
    else:
        _, dx, dz = schema_widths
        y = record[0]
        x = record[1 : 1 + dx]
        z = record[1 + dx : 1 + dx + dz]
    pw = float(p(theta))
    if pw <= 0.0:
        raise ValueError("censoring weight p(theta) must be positive")
    indicator = 1.0 if y <= float(x @ theta) else 0.0
    return np.asarray(W, dtype=float) @ ((alpha / pw - indicator) * z)


def empirical_moments(problem: ZProblem, data: Dataset, theta: Array) -> Array:
    """Normalized empirical moments S_n(theta) = n^{-1/2} sum_i m(U_i, theta).

    Exact sum; no smoothing is applied to the indicator-type moments.
    """
    theta = np.asarray(theta, dtype=float)
    M = problem.moments_matrix(data, theta)
    return M.sum(axis=0) / math.sqrt(data.n)


def estimate_jacobian(problem: ZProblem, data: Dataset, theta: Array) -> Array:
    """Central finite-difference estimate of A = d/dtheta E[m(X, theta)].

    Differentiates the averaged map theta -> (1/n) sum_i m(U_i, theta) with
    step h = n^{-1/4} per coordinate; the population map is assumed smooth
    even when the per-record moments are not.
    """
    theta = np.asarray(theta, dtype=float)
    n = data.n
    h = n ** (-0.25)
    cols = []
    for j in range(problem.dim):
        e = np.zeros(problem.dim)
        e[j] = h
        plus = problem.moments_matrix(data, theta + e).mean(axis=0)
        minus = problem.moments_matrix(data, theta - e).mean(axis=0)
        cols.append((plus - minus) / (2.0 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# first-order shifts and localization


def first_order_s(model, data: Dataset, anchor: Optional[Array] = None) -> Array:
    """First-order approximation s of the normalized extremum estimator.

    exponential family   s = sqrt(n) (xbar - grad_psi(theta0))
    curved family        s = (G'G)^{-1} G' sqrt(n) (xbar - grad_psi(theta(eta0)))
    Z-problem            s = -(A'A)^{-1} A' S_n(theta0)

    ``anchor`` is theta0 (eta0 for the curved family); a Z-problem defaults
    to its stored center.
    """
    n = data.n
    if isinstance(model, ExpFamilySpec):
        if anchor is None:
            raise ValueError("exponential family localization needs theta0")
        xbar = data.data.mean(axis=0)
        return math.sqrt(n) * (xbar - np.asarray(model.grad_psi(np.asarray(anchor, float))))
    if isinstance(model, CurvedSpec):
        if anchor is None:
            raise ValueError("curved family localization needs eta0")
        xbar = data.data.mean(axis=0)
        mu = np.asarray(model.base.grad_psi(model.theta_map(np.asarray(anchor, float))))
        G = model.G
        return np.linalg.solve(G.T @ G, G.T @ (math.sqrt(n) * (xbar - mu)))
    if isinstance(model, ZProblem):
        theta0 = model.center if anchor is None else np.asarray(anchor, dtype=float)
        A = model.jacobian
        if A is None:
            A = estimate_jacobian(model, data, theta0)
        Sn = empirical_moments(model, data, theta0)
        return -np.linalg.solve(A.T @ A, A.T @ Sn)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def localize(model, data: Dataset, anchor: Optional[Array] = None) -> Localization:
    """Localization at theta0 + s/sqrt(n) with s from :func:`first_order_s`."""
    if anchor is None:
        if not isinstance(model, ZProblem):
            raise ValueError("anchor is required for this model type")
        anchor = model.center
    anchor = np.asarray(anchor, dtype=float)
    s = first_order_s(model, data, anchor)
    return Localization(center=anchor + s / math.sqrt(data.n), s=s, n=data.n)


def pilot_center(
    problem: ZProblem,
    data: Dataset,
    box: Sequence[tuple[float, float]],
    points_per_dim: int = 11,
) -> Array:
    """Coarse grid minimizer of ||S_n(theta)|| over a box.

    Heuristic pilot for real data where theta0 is unknown; the grid is the
    Cartesian product of ``points_per_dim`` equispaced points per coordinate.
    """
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in box]
    grids = np.meshgrid(*axes, indexing="ij")
    thetas = np.stack([g.ravel() for g in grids], axis=1)
    best, best_val = None, math.inf
    for th in thetas:
        val = float(np.linalg.norm(empirical_moments(problem, data, th)))
        if val < best_val:
            best, best_val = th, val
    return np.asarray(best, dtype=float)


# ---------------------------------------------------------------------------
# target factories


def _reference_and_ball(J: Array, dim: int, C: float) -> tuple[SupportBall, NormalReference]:
    eigs = np.linalg.eigvalsh(np.asarray(J, dtype=float))
    if eigs[0] <= 1e-12 * max(eigs[-1], 0.0) or eigs[-1] <= 0:
        raise ValueError("reference matrix is not positive definite")
    radius = C * math.sqrt(dim / float(eigs[0]))
    ball = SupportBall(dim=dim, radius=radius)
    return ball, NormalReference.from_matrix(J, ball)


def make_exp_target(
    spec: ExpFamilySpec,
    data: Dataset,
    loc: Localization,
    C: float = DEFAULT_SUPPORT_C,
) -> tuple[LocalTarget, NormalReference]:
    """Localized posterior target for a canonical exponential family.

    log_ell(lam) = xbar' sqrt(n) lam - n psi(c + lam/sqrt(n)) + n psi(c)
                   + log pi(c + lam/sqrt(n)) - log pi(c),     c = loc.center.

    The reference is J = hess_psi(c); the support radius follows the
    concentration rule with the given constant C.
    """
    if loc.n != data.n:
        raise ValueError("localization sample size must match the dataset")
    d = spec.dim
    c = loc.center
    J = np.asarray(spec.hess_psi(c), dtype=float)
    ball, ref = _reference_and_ball(J, d, C)
    sqrt_n = math.sqrt(loc.n)
    n = float(loc.n)
    xbar = data.data.mean(axis=0)
    psi_c = float(spec.psi(c))
    log_prior_c = float(spec.log_prior(c))
    psi, log_prior = spec.psi, spec.log_prior

    def log_ell(lam: Array) -> float:
        th = c + np.asarray(lam, dtype=float) / sqrt_n
        return (
            float(xbar @ lam) * sqrt_n
            - n * (float(psi(th)) - psi_c)
            + float(log_prior(th))
            - log_prior_c
        )

    return LocalTarget(dim=d, support=ball, log_ell=log_ell, reference=ref), ref


def make_curved_target(
    spec: CurvedSpec,
    data: Dataset,
    loc: Localization,
    C: float = DEFAULT_SUPPORT_C,
) -> tuple[LocalTarget, NormalReference]:
    """Localized posterior target for a curved exponential family.

    The walk runs over the low-dimensional parameter gamma; the criterion is
    the three-factor ratio (moment term, psi terms, prior ratio) evaluated at
    eta = c + gamma/sqrt(n), and the reference is J = G'G.
    """
    if loc.n != data.n:
        raise ValueError("localization sample size must match the dataset")
    d1 = spec.dim_eta
    c = loc.center
    if c.shape != (d1,):
        raise ValueError("localization center must live in the eta space")
    G = spec.G
    ball, ref = _reference_and_ball(G.T @ G, d1, C)
    sqrt_n = math.sqrt(loc.n)
    n = float(loc.n)
    xbar = data.data.mean(axis=0)
    theta_map, psi, log_prior = spec.theta_map, spec.base.psi, spec.base.log_prior
    theta_c = np.asarray(theta_map(c), dtype=float)
    psi_c = float(psi(theta_c))
    log_prior_c = float(log_prior(theta_c))

    def log_ell(gamma: Array) -> float:
        th = np.asarray(theta_map(c + np.asarray(gamma, dtype=float) / sqrt_n), dtype=float)
        return (
            n * float(xbar @ (th - theta_c))
            - n * (float(psi(th)) - psi_c)
            + float(log_prior(th))
            - log_prior_c
        )

    return LocalTarget(dim=d1, support=ball, log_ell=log_ell, reference=ref), ref


def make_z_target(
    problem: ZProblem,
    data: Dataset,
    loc: Localization,
    C: float = DEFAULT_SUPPORT_C,
) -> tuple[LocalTarget, NormalReference]:
    """Quasi-posterior target for a Z-problem: criterion Q_n = -||S_n||^2.

    log_ell(lam) = Q_n(theta_c + lam/sqrt(n)) - Q_n(theta_c) with theta_c the
    localization center; the reference is J = 2 A'A.
    """
    if loc.n != data.n:
        raise ValueError("localization sample size must match the dataset")
    d = problem.dim
    A = problem.jacobian
    if A is None:
        A = estimate_jacobian(problem, data, loc.center)
    J = 2.0 * (A.T @ A)
    ball, ref = _reference_and_ball(J, d, C)
    sqrt_n = math.sqrt(loc.n)
    theta_c = loc.center

    def q_n(theta: Array) -> float:
        s = empirical_moments(problem, data, theta)
        return -float(s @ s)

    q_c = q_n(theta_c)

    def log_ell(lam: Array) -> float:
        return q_n(theta_c + np.asarray(lam, dtype=float) / sqrt_n) - q_c

    return LocalTarget(dim=d, support=ball, log_ell=log_ell, reference=ref), ref


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Descriptor of a synthetic data generating process.

    family: 'gaussian_location' (X ~ N(theta0, I)),
            'linear_regression'  (Y = X'theta0 + N(0,1), X ~ N(0, I)),
            'quantile'           (Y = X'theta0 + eps, alpha-quantile of eps is 0,
                                  X = (1, N(0,1)^{d-1}), Z = X).
    """

    family: str
    dim: int
    theta0: tuple[float, ...]
    alpha: float = 0.5

    def theta(self) -> Array:
        return np.asarray(self.theta0, dtype=float)


def gen_synthetic(spec: SyntheticSpec, n: int, seed: int) -> Dataset:
    """Deterministic synthetic dataset for the given descriptor and seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed)
    d = spec.dim
    theta0 = spec.theta()
    if theta0.shape != (d,):
        raise ValueError("theta0 has wrong length")
    if spec.family == "gaussian_location":
        X = theta0 + rng.standard_normal((n, d))
        return Dataset(X, tuple(f"x{j+1}" for j in range(d)))
    if spec.family == "linear_regression":
        X = rng.standard_normal((n, d))
        Y = X @ theta0 + rng.standard_normal(n)
        return Dataset(
            np.column_stack([Y, X]), ("y",) + tuple(f"x{j+1}" for j in range(d))
        )
    if spec.family == "quantile":
        from scipy.stats import norm as _norm

        X = rng.standard_normal((n, d))
        X[:, 0] = 1.0
        # shift the noise so its alpha-quantile is exactly zero
        eps = rng.standard_normal(n) - _norm.ppf(spec.alpha)
        Y = X @ theta0 + eps
        return Dataset(
            np.column_stack([Y, X]), ("y",) + tuple(f"x{j+1}" for j in range(d))
        )
    raise ValueError(f"unknown synthetic family {spec.family!r}")


def linear_regression_problem(dim: int, analytic: bool = True) -> ZProblem:
    """Z-problem for linear regression moments m(U, theta) = (Y - X'theta) X.

    With a standard normal design the analytic Jacobian is A = -I.
    """

    def moment(record: Array, theta: Array) -> Array:
        y, x = record[0], record[1:]
        return (y - float(x @ theta)) * x

    def moment_batch(data: Array, theta: Array) -> Array:
        y, X = data[:, 0], data[:, 1:]
        return X * (y - X @ theta)[:, None]

    return ZProblem(
        dim=dim,
        dim_m=dim,
        moment=moment,
        moment_batch=moment_batch,
        center=np.zeros(dim),
        jacobian=-np.eye(dim) if analytic else None,
    )


def quantile_problem(
    dim: int,
    alpha: float,
    center: Array,
    W: Optional[Array] = None,
    jacobian: Optional[Array] = None,
) -> ZProblem:
    """Censored-quantile Z-problem with p == 1 and Z = X over (y, x...) records."""
    Wm = np.eye(dim) if W is None else np.asarray(W, dtype=float)

    def moment(record: Array, theta: Array) -> Array:
        # records are (y, x...); Z = X, so the default block split applies
        return quantile_moments(record, theta, alpha, Wm)

    def moment_batch(data: Array, theta: Array) -> Array:
        y, X = data[:, 0], data[:, 1:]
        score = alpha - (y <= X @ theta)
        return (X * score[:, None]) @ Wm.T

    return ZProblem(
        dim=dim,
        dim_m=dim,
        moment=moment,
        moment_batch=moment_batch,
        center=np.asarray(center, dtype=float),
        jacobian=jacobian,
    )
