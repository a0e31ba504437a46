"""Core types and exact oracles for lattice-supported distributions.

The central objects are sums of independent categorical random vectors
("k-CRVs", one-hot vectors in R^k). A parameter matrix holds one probability
row per summand; the exact pmf of the sum lives on the lattice simplex
{x >= 0 : sum x = n} and is computed by dynamic programming. Around that sit
discretized Gaussians (normal draws rounded coordinate-wise), block
structured discretized Gaussians with per-block pivot coordinates, sparse
pmf tables, distances, and the hypothesis wrappers used by the selection and
learning layers.

All objects are immutable after construction and all randomized operations
take an explicit numpy Generator, so everything here is safe to call
concurrently.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from . import _kernels

__all__ = [
    "PmdError",
    "SupportCapError",
    "SingularCovarianceError",
    "support_cap",
    "ParamMatrix",
    "GmdParams",
    "SparsePmf",
    "GaussianBlock",
    "BlockGaussian",
    "StructuralDecomposition",
    "DecompositionConfig",
    "pmd_pmf_exact",
    "gmd_pmf_exact",
    "pmd_sample",
    "siirv_pmf_exact",
    "tv_distance",
    "kolmogorov_distance_1d",
    "convolve",
    "crv_covariance",
    "reduce_degenerate",
    "discretized_gaussian_pmf",
    "discretized_gaussian_grid",
    "block_gaussian_pmf",
    "block_gaussian_sample",
    "block_gaussian_table",
    "hybrid_pmf_at",
    "hybrid_pmf_table",
    "Hypothesis",
    "ExactPmdHypothesis",
    "GaussianPlusSparseHypothesis",
    "SiirvFormHypothesis",
    "TabulatedHypothesis",
]

SUPPORT_CAP_ENV = "PMDLAB_SUPPORT_CAP"
DEFAULT_SUPPORT_CAP = 10_000_000

# Entries this small are dropped from sparse tables; the removed mass is
# recorded on the object.
PRUNE_EPS = 1e-15

# Minimum eigenvalue accepted for a covariance after exactly-degenerate
# directions have been split off.
EIG_FLOOR = 1e-8

# Materialization radius (in per-coordinate standard deviations) used when a
# discretized Gaussian is tabulated; the tail beyond it is below 1e-20.
TABLE_RADIUS = 9.5


class PmdError(Exception):
    """Base error for this package."""


class SupportCapError(PmdError):
    """An exact-oracle support would exceed the configured point cap."""


class SingularCovarianceError(PmdError):
    """Covariance has an eigenvalue below the supported floor."""


def support_cap() -> int:
    raw = os.environ.get(SUPPORT_CAP_ENV)
    if raw is None:
        return DEFAULT_SUPPORT_CAP
    return int(raw)


# ---------------------------------------------------------------------------
# parameter matrices
# ---------------------------------------------------------------------------

class ParamMatrix:
    """Parameter matrix of a sum of n independent k-CRVs.

    Row i is the probability vector of summand i over the k basis vectors.
    Rows must sum to 1 within 1e-12.
    """

    __slots__ = ("rows",)

    def __init__(self, rows):
        arr = np.array(rows, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("parameter matrix must be 2-dimensional")
        if arr.shape[1] < 1:
            raise ValueError("need at least one column")
        if arr.size:
            if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
                raise ValueError("entries must lie in [0, 1]")
            sums = arr.sum(axis=1)
            if np.abs(sums - 1.0).max() > 1e-12:
                raise ValueError("rows must sum to 1 within 1e-12")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        self.rows = arr

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def k(self) -> int:
        return self.rows.shape[1]

    def mean(self) -> np.ndarray:
        """Mean vector of the sum: column sums of the matrix."""
        return self.rows.sum(axis=0)

    def covariance(self) -> np.ndarray:
        """Covariance of the sum (singular: the all-ones vector is in its kernel)."""
        total = np.zeros((self.k, self.k))
        for row in self.rows:
            total += np.diag(row) - np.outer(row, row)
        return total

    def __eq__(self, other):
        return isinstance(other, ParamMatrix) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())

    def __repr__(self):
        return f"ParamMatrix(n={self.n}, k={self.k})"


class GmdParams:
    """Truncated-CRV parameters: visible columns plus an implied invisible mass.

    Row i gives the probabilities of the visible outcomes e_1..e_m; the
    remaining mass rho(i, 0) = 1 - sum_j rho(i, j) goes to the invisible zero
    outcome.
    """

    __slots__ = ("rows",)

    def __init__(self, rows):
        arr = np.array(rows, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("visible parameter block must be 2-dimensional")
        if arr.size:
            if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
                raise ValueError("entries must lie in [0, 1]")
            if (1.0 - arr.sum(axis=1)).min() < -1e-12:
                raise ValueError("row sums must not exceed 1")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        self.rows = arr

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dims(self) -> int:
        return self.rows.shape[1]

    def invisible(self) -> np.ndarray:
        """The per-row invisible mass rho(i, 0)."""
        return np.clip(1.0 - self.rows.sum(axis=1), 0.0, 1.0)

    @classmethod
    def from_param_matrix(cls, pm: ParamMatrix, drop: int = 0) -> "GmdParams":
        """View a full parameter matrix as truncated rows with column ``drop`` invisible."""
        keep = [j for j in range(pm.k) if j != drop]
        return cls(pm.rows[:, keep])

    def mean(self) -> np.ndarray:
        return self.rows.sum(axis=0)

    def covariance(self) -> np.ndarray:
        total = np.zeros((self.dims, self.dims))
        for row in self.rows:
            total += np.diag(row) - np.outer(row, row)
        return total

    def __repr__(self):
        return f"GmdParams(n={self.n}, dims={self.dims})"


# ---------------------------------------------------------------------------
# sparse pmf tables
# ---------------------------------------------------------------------------

class SparsePmf:
    """Finite pmf on the integer lattice, stored point -> probability.

    Entries below the prune threshold are dropped and their mass recorded in
    ``pruned_mass``. Total mass must match 1 within ``mass_tol`` (the
    tolerance is kept on the object so truncated tables can carry a looser
    one).
    """

    __slots__ = ("dims", "table", "pruned_mass", "mass_tol", "_atoms", "_cum")

    def __init__(self, dims, table, *, mass_tol=1e-9, prune=PRUNE_EPS,
                 pruned_mass=0.0, validate=True):
        dims = int(dims)
        if dims < 1:
            raise ValueError("dims must be >= 1")
        clean = {}
        dropped = float(pruned_mass)
        for point, p in table.items():
            p = float(p)
            if p < 0.0:
                if p < -1e-12:
                    raise ValueError(f"negative probability {p} at {point}")
                p = 0.0
            if p <= prune:
                dropped += p
                continue
            pt = tuple(int(v) for v in point)
            if len(pt) != dims:
                raise ValueError("point dimension mismatch")
            clean[pt] = clean.get(pt, 0.0) + p
        self.dims = dims
        self.table = clean
        self.pruned_mass = dropped
        self.mass_tol = float(mass_tol)
        self._atoms = None
        self._cum = None
        if validate:
            total = self.mass() + self.pruned_mass
            if abs(total - 1.0) > self.mass_tol:
                raise ValueError(
                    f"mass {total} differs from 1 by more than {self.mass_tol}")

    @classmethod
    def point_mass(cls, point) -> "SparsePmf":
        point = tuple(int(v) for v in point)
        return cls(len(point), {point: 1.0})

    def mass(self) -> float:
        return float(sum(self.table.values()))

    def __len__(self):
        return len(self.table)

    def __iter__(self):
        return iter(self.table.items())

    def pmf_at(self, point) -> float:
        return self.table.get(tuple(int(v) for v in point), 0.0)

    def mean(self) -> np.ndarray:
        out = np.zeros(self.dims)
        for point, p in self.table.items():
            out += p * np.asarray(point, dtype=np.float64)
        return out

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        out = np.zeros((self.dims, self.dims))
        for point, p in self.table.items():
            d = np.asarray(point, dtype=np.float64) - mu
            out += p * np.outer(d, d)
        return out

    def project(self, coords) -> "SparsePmf":
        """Marginal over a subset of coordinates (a deterministic projection)."""
        coords = list(coords)
        out = {}
        for point, p in self.table.items():
            key = tuple(point[c] for c in coords)
            out[key] = out.get(key, 0.0) + p
        return SparsePmf(len(coords), out, mass_tol=self.mass_tol,
                         pruned_mass=self.pruned_mass, validate=False)

    def project_dot(self, weights) -> "SparsePmf":
        """Pushforward under x -> round(w . x) for an integer weight vector."""
        w = np.asarray(weights)
        out = {}
        for point, p in self.table.items():
            key = (int(round(float(np.dot(w, point)))),)
            out[key] = out.get(key, 0.0) + p
        return SparsePmf(1, out, mass_tol=self.mass_tol,
                         pruned_mass=self.pruned_mass, validate=False)

    def shift(self, offset) -> "SparsePmf":
        off = tuple(int(v) for v in offset)
        out = {tuple(a + b for a, b in zip(pt, off)): p
               for pt, p in self.table.items()}
        return SparsePmf(self.dims, out, mass_tol=self.mass_tol,
                         pruned_mass=self.pruned_mass, validate=False)

    def _ensure_sampler(self):
        if self._atoms is None:
            atoms = sorted(self.table.keys())
            probs = np.array([self.table[a] for a in atoms])
            cum = np.cumsum(probs)
            total = cum[-1]
            self._atoms = np.asarray(atoms, dtype=np.int64)
            self._cum = cum / total

    def sample(self, rng, size=None):
        self._ensure_sampler()
        m = 1 if size is None else int(size)
        idx = np.searchsorted(self._cum, rng.random(m), side="right")
        idx = np.minimum(idx, len(self._cum) - 1)
        pts = self._atoms[idx]
        if size is None:
            return tuple(int(v) for v in pts[0])
        return pts

    def __repr__(self):
        return (f"SparsePmf(dims={self.dims}, points={len(self.table)}, "
                f"mass={self.mass():.12f})")


def tv_distance(p: SparsePmf, q: SparsePmf) -> float:
    """Total variation distance: half the l1 gap over the support union."""
    if p.dims != q.dims:
        raise ValueError("dimension mismatch")
    keys = p.table.keys() | q.table.keys()
    pt = p.table
    qt = q.table
    return 0.5 * sum(abs(pt.get(x, 0.0) - qt.get(x, 0.0)) for x in keys)


def kolmogorov_distance_1d(p: SparsePmf, q: SparsePmf) -> float:
    """Largest absolute CDF gap between two 1-D pmfs."""
    if p.dims != 1 or q.dims != 1:
        raise ValueError("kolmogorov distance needs 1-D pmfs")
    keys = sorted({x[0] for x in p.table} | {x[0] for x in q.table})
    fp = 0.0
    fq = 0.0
    best = 0.0
    for x in keys:
        fp += p.table.get((x,), 0.0)
        fq += q.table.get((x,), 0.0)
        gap = abs(fp - fq)
        if gap > best:
            best = gap
    return best


def convolve(p: SparsePmf, q: SparsePmf) -> SparsePmf:
    """Exact convolution of two sparse pmfs on the same lattice."""
    if p.dims != q.dims:
        raise ValueError("dimension mismatch")
    cap = support_cap()
    if len(p) * len(q) > 50 * cap:
        raise SupportCapError(
            f"convolution would touch {len(p) * len(q)} point pairs")
    out = {}
    for xp, pp in p.table.items():
        for xq, pq in q.table.items():
            key = tuple(a + b for a, b in zip(xp, xq))
            out[key] = out.get(key, 0.0) + pp * pq
    if len(out) > cap:
        raise SupportCapError(f"convolution support {len(out)} exceeds cap {cap}")
    tol = max(p.mass_tol, q.mass_tol)
    return SparsePmf(p.dims, out, mass_tol=tol,
                     pruned_mass=p.pruned_mass + q.pruned_mass, validate=False)


# ---------------------------------------------------------------------------
# exact pmf oracles
# ---------------------------------------------------------------------------

def _check_simplex_cap(n: int, k: int):
    cap = support_cap()
    points = math.comb(n + k - 1, k - 1)
    dense = (n + 1) ** (k - 1)
    if points > cap or dense > 10 * cap:
        raise SupportCapError(
            f"support of size {points} (dense store {dense}) exceeds cap {cap}")


def pmd_pmf_exact(pm: ParamMatrix) -> SparsePmf:
    """Exact pmf of the CRV sum on {x >= 0 : sum x = n}, by dynamic programming.

    The recurrence adds one summand at a time: P_i(x) = sum_j pi(i, j) *
    P_{i-1}(x - e_j). States are indexed by the first k-1 coordinates; the
    last one is implied by the running total.
    """
    n, k = pm.n, pm.k
    if k == 1:
        return SparsePmf.point_mass((n,))
    _check_simplex_cap(n, k)
    dense = _kernels.pmd_dp(pm.rows)
    table = {}
    for idx in np.argwhere(dense > PRUNE_EPS):
        s = int(idx.sum())
        if s > n:
            continue
        table[tuple(int(v) for v in idx) + (n - s,)] = float(dense[tuple(idx)])
    return SparsePmf(k, table, validate=False)


def gmd_pmf_exact(g: GmdParams) -> SparsePmf:
    """Exact pmf of a truncated-CRV sum on {x >= 0 : sum x <= n}.

    Computed by the same dynamic program with the invisible outcome as an
    extra absorbing column.
    """
    if g.dims < 1:
        raise ValueError("need at least one visible column")
    aug = np.column_stack([g.rows, g.invisible()])
    _check_simplex_cap(g.n, g.dims + 1)
    dense = _kernels.pmd_dp(aug)
    table = {}
    for idx in np.argwhere(dense > PRUNE_EPS):
        if int(idx.sum()) > g.n:
            continue
        table[tuple(int(v) for v in idx)] = float(dense[tuple(idx)])
    return SparsePmf(g.dims, table, validate=False)


def pmd_sample(pm: ParamMatrix, rng, size=None):
    """Draw from the CRV sum: one categorical draw per row, histogram the picks."""
    m = 1 if size is None else int(size)
    n, k = pm.n, pm.k
    out = np.zeros((m, k), dtype=np.int64)
    if n:
        cum = np.cumsum(pm.rows, axis=1)
        cum[:, -1] = 1.0
        u = rng.random((m, n))
        picks = (u[:, :, None] > cum[None, :, :]).sum(axis=2)
        for j in range(k):
            out[:, j] = (picks == j).sum(axis=1)
    if size is None:
        return tuple(int(v) for v in out[0])
    return out


def siirv_pmf_exact(pm: ParamMatrix) -> SparsePmf:
    """Exact pmf of (0, 1, ..., k-1) . X for the CRV sum X, on {0..(k-1)n}."""
    n, k = pm.n, pm.k
    if n * (k - 1) + 1 > support_cap():
        raise SupportCapError("projected support exceeds cap")
    if n == 0 or k == 1:
        return SparsePmf.point_mass((0,))
    dense = _kernels.siirv_dp(pm.rows)
    table = {(int(v),): float(p) for v, p in enumerate(dense) if p > PRUNE_EPS}
    return SparsePmf(1, table, validate=False)


def crv_covariance(row) -> np.ndarray:
    """Covariance of a truncated CRV given its visible probabilities.

    The invisible mass is 1 - sum(row). Diagonal rho_i (1 - rho_i), off
    diagonal -rho_i rho_j; symmetric and diagonally dominant.
    """
    rho = np.asarray(row, dtype=np.float64)
    return np.diag(rho) - np.outer(rho, rho)


# ---------------------------------------------------------------------------
# discretized Gaussians
# ---------------------------------------------------------------------------

def reduce_degenerate(mu, cov, tol=1e-12):
    """Split exactly-degenerate coordinates off a covariance.

    Returns (free_idx, fixed_idx, fixed_values, mu_free, cov_free) where the
    fixed coordinates have (numerically) zero variance and are pinned to
    round(mu) with ties to even.
    """
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    cov = 0.5 * (cov + cov.T)
    d = mu.size
    diag = np.diag(cov) if d else np.zeros(0)
    free = [i for i in range(d) if diag[i] > tol]
    fixed = [i for i in range(d) if diag[i] <= tol]
    fixed_values = np.rint(mu[fixed]).astype(np.int64)
    mu_free = mu[free]
    cov_free = cov[np.ix_(free, free)]
    return free, fixed, fixed_values, mu_free, cov_free


def _chol_psd(cov):
    """Cholesky factor, via eigendecomposition when the matrix is semidefinite."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        w = np.clip(w, 0.0, None)
        a = v * np.sqrt(w)
        # re-triangularize via QR of the transpose
        q, r = np.linalg.qr(a.T)
        L = r.T
        # ensure nonnegative diagonal
        sign = np.sign(np.diag(L))
        sign[sign == 0] = 1.0
        return L * sign


def _box_prob_3d(mu, L, x):
    """Box probability for three free dimensions by sequential conditioning."""
    nodes, weights = _kernels._GL_NODES, _kernels._GL_WEIGHTS
    zmax = _kernels.ZMAX
    a = np.asarray(x, dtype=np.float64) - 0.5
    b = a + 1.0

    slope1 = max(abs(L[1, 0]) / L[1, 1], abs(L[2, 0]) / L[2, 2], 1.0)
    wp1 = max(0.5 / slope1, 1.0 / 64.0)
    slope2 = max(abs(L[2, 1]) / L[2, 2], 1.0)
    wp2 = max(0.5 / slope2, 1.0 / 64.0)

    za = max((a[0] - mu[0]) / L[0, 0], -zmax)
    zb = min((b[0] - mu[0]) / L[0, 0], zmax)
    if za >= zb:
        return 0.0
    npan1 = min(int(math.ceil((zb - za) / wp1)), 256)
    h1 = (zb - za) / npan1
    total = 0.0
    for p1 in range(npan1):
        c1 = za + (p1 + 0.5) * h1
        for q1 in range(nodes.size):
            z1 = c1 + 0.5 * h1 * nodes[q1]
            w1 = 0.5 * h1 * weights[q1] * _kernels._INV_SQRT_2PI * math.exp(-0.5 * z1 * z1)
            ya = max((a[1] - mu[1] - L[1, 0] * z1) / L[1, 1], -zmax)
            yb = min((b[1] - mu[1] - L[1, 0] * z1) / L[1, 1], zmax)
            if ya >= yb:
                continue
            npan2 = min(int(math.ceil((yb - ya) / wp2)), 256)
            h2 = (yb - ya) / npan2
            centers = ya + (np.arange(npan2) + 0.5) * h2
            z2 = (centers[:, None] + 0.5 * h2 * nodes[None, :]).ravel()
            w2 = np.tile(0.5 * h2 * weights, npan2) * _kernels._INV_SQRT_2PI * np.exp(-0.5 * z2 * z2)
            shift = mu[2] + L[2, 0] * z1 + L[2, 1] * z2
            inner = ndtr((b[2] - shift) / L[2, 2]) - ndtr((a[2] - shift) / L[2, 2])
            total += w1 * float(np.dot(w2, inner))
    return total


_QMC_REPLICATES = 8
_QMC_POINTS = 2 ** 13  # per replicate; 2**16 total


def _box_prob_qmc(mu, L, x):
    """Box probability for 4..8 free dimensions by quasi-random integration.

    Sobol' points drive the sequential-conditioning transform; eight randomly
    shifted replicates give the estimate and a spread-based error bound. The
    shifts are seeded with a fixed constant so the function stays pure.
    """
    d = len(mu)
    a = np.asarray(x, dtype=np.float64) - 0.5 - np.asarray(mu, dtype=np.float64)
    b = a + 1.0
    base = qmc.Sobol(d - 1, scramble=False).random(_QMC_POINTS)
    rng = np.random.default_rng(20201116)
    estimates = []
    for _ in range(_QMC_REPLICATES):
        u = (base + rng.random(d - 1)) % 1.0
        f = ndtr(a[0] / L[0, 0])
        e = ndtr(b[0] / L[0, 0])
        val = np.full(_QMC_POINTS, e - f)
        lo = np.full(_QMC_POINTS, f)
        hi = np.full(_QMC_POINTS, e)
        zs = np.zeros((_QMC_POINTS, d - 1))
        for i in range(1, d):
            quantile = np.clip(lo + u[:, i - 1] * (hi - lo), 1e-300, 1 - 1e-16)
            zs[:, i - 1] = ndtri(quantile)
            shift = zs[:, :i] @ L[i, :i]
            lo = ndtr((a[i] - shift) / L[i, i])
            hi = ndtr((b[i] - shift) / L[i, i])
            val = val * np.clip(hi - lo, 0.0, 1.0)
        estimates.append(float(val.mean()))
    est = float(np.mean(estimates))
    err = 3.0 * float(np.std(estimates)) / math.sqrt(_QMC_REPLICATES) + 1e-16
    return est, err


def discretized_gaussian_pmf(mu, sigma, x, *, with_error=False):
    """Probability that N(mu, sigma) rounds coordinate-wise to the lattice point x.

    Equals the integral of the density over the unit box centered at x.
    Exactly-degenerate directions are split off automatically; the remaining
    covariance must have eigenvalues >= 1e-8. Up to three free dimensions use
    deterministic quadrature (absolute error <= 1e-9); four to eight use
    quasi-random integration (error bound reported via ``with_error``).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x))
    free, fixed, fixed_values, mu_f, cov_f = reduce_degenerate(mu, sigma)
    for pos, j in enumerate(fixed):
        if int(x[j]) != int(fixed_values[pos]):
            return (0.0, 0.0) if with_error else 0.0
    d = len(free)
    if d == 0:
        return (1.0, 0.0) if with_error else 1.0
    w = np.linalg.eigvalsh(cov_f)
    if w.min() < EIG_FLOOR:
        raise SingularCovarianceError(
            f"free-direction covariance eigenvalue {w.min():.3e} below {EIG_FLOOR}")
    xf = np.asarray([x[j] for j in free], dtype=np.float64)
    err = 0.0
    if d == 1:
        p = float(_kernels.box_probs_1d(mu_f[0], math.sqrt(cov_f[0, 0]),
                                        int(xf[0]), int(xf[0]))[0])
        err = 1e-15
    elif d == 2:
        L = _chol_psd(cov_f)
        p = float(_kernels.box_probs_2d(mu_f, L, int(xf[0]), int(xf[0]),
                                        int(xf[1]), int(xf[1]))[0, 0])
        err = 1e-10
    elif d == 3:
        L = _chol_psd(cov_f)
        p = _box_prob_3d(mu_f, L, xf)
        err = 1e-9
    elif d <= 8:
        L = _chol_psd(cov_f)
        p, err = _box_prob_qmc(mu_f, L, xf)
    else:
        raise PmdError("more than 8 free dimensions are not supported")
    p = max(p, 0.0)
    return (p, err) if with_error else p


def discretized_gaussian_grid(mu, sigma, lo, hi):
    """Dense array of box probabilities over an axis-aligned integer box.

    Supports one or two free dimensions after degenerate reduction (the only
    shapes the desk-scale tabulations need). Returns an array indexed by
    x - lo over the full-dimension box.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    lo = np.atleast_1d(np.asarray(lo, dtype=np.int64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.int64))
    free, fixed, fixed_values, mu_f, cov_f = reduce_degenerate(mu, sigma)
    shape = tuple(int(h - l + 1) for l, h in zip(lo, hi))
    out = np.zeros(shape)
    for pos, j in enumerate(fixed):
        if not (lo[j] <= fixed_values[pos] <= hi[j]):
            return out
    d = len(free)
    if d == 0:
        idx = tuple(int(fixed_values[fixed.index(j)] - lo[j]) for j in range(mu.size))
        out[idx] = 1.0
        return out
    w = np.linalg.eigvalsh(cov_f)
    if w.min() < EIG_FLOOR:
        raise SingularCovarianceError(
            f"free-direction covariance eigenvalue {w.min():.3e} below {EIG_FLOOR}")
    if d == 1:
        j = free[0]
        vals = _kernels.box_probs_1d(mu_f[0], math.sqrt(cov_f[0, 0]),
                                     int(lo[j]), int(hi[j]))
    elif d == 2:
        L = _chol_psd(cov_f)
        j1, j2 = free
        vals = _kernels.box_probs_2d(mu_f, L, int(lo[j1]), int(hi[j1]),
                                     int(lo[j2]), int(hi[j2]))
    else:
        raise PmdError("grid tabulation supports at most two free dimensions")
    # place the free-dimension table into the full box with fixed coords pinned
    index = []
    vshape = []
    for j in range(mu.size):
        if j in fixed:
            index.append(int(fixed_values[fixed.index(j)] - lo[j]))
        else:
            index.append(slice(None))
            vshape.append(shape[j])
    out[tuple(index)] = np.asarray(vals).reshape(vshape)
    return out


# ---------------------------------------------------------------------------
# block discretized Gaussians
# ---------------------------------------------------------------------------

class GaussianBlock:
    """One block: a coordinate set, a pivot inside it, an integer total,
    and mean/covariance over the non-pivot coordinates.

    A draw samples the non-pivot coordinates from the Gaussian, rounds them
    to integers (ties to even), and sets the pivot so that the block sums to
    its total.
    """

    __slots__ = ("coords", "pivot", "total", "mean", "cov")

    def __init__(self, coords, pivot, total, mean, cov):
        coords = tuple(sorted(int(c) for c in coords))
        pivot = int(pivot)
        if pivot not in coords:
            raise ValueError("pivot must belong to the block")
        if len(set(coords)) != len(coords):
            raise ValueError("duplicate coordinates in block")
        total = int(total)
        if total < 0:
            raise ValueError("block total must be a nonnegative integer")
        d = len(coords) - 1
        mean = np.asarray(mean, dtype=np.float64).reshape(d)
        cov = np.asarray(cov, dtype=np.float64).reshape(d, d)
        cov = 0.5 * (cov + cov.T)
        if d and np.linalg.eigvalsh(cov).min() < -1e-9:
            raise ValueError("block covariance must be positive semidefinite")
        cov = cov.copy()
        mean = mean.copy()
        mean.flags.writeable = False
        cov.flags.writeable = False
        self.coords = coords
        self.pivot = pivot
        self.total = total
        self.mean = mean
        self.cov = cov

    @property
    def frees(self):
        """Non-pivot coordinates, in sorted order (the mean/cov index order)."""
        return tuple(c for c in self.coords if c != self.pivot)

    def __repr__(self):
        return (f"GaussianBlock(coords={self.coords}, pivot={self.pivot}, "
                f"total={self.total})")


class BlockGaussian:
    """Block-diagonal discretized Gaussian over k lattice coordinates."""

    __slots__ = ("dims", "blocks")

    def __init__(self, dims, blocks):
        dims = int(dims)
        blocks = tuple(blocks)
        seen = set()
        for b in blocks:
            if not isinstance(b, GaussianBlock):
                raise TypeError("blocks must be GaussianBlock instances")
            if any(c < 0 or c >= dims for c in b.coords):
                raise ValueError("block coordinate out of range")
            if seen & set(b.coords):
                raise ValueError("blocks must use pairwise disjoint coordinates")
            seen |= set(b.coords)
        self.dims = dims
        self.blocks = blocks

    def covered(self):
        out = set()
        for b in self.blocks:
            out |= set(b.coords)
        return out

    def mean_full(self) -> np.ndarray:
        """Mean vector over all k coordinates (pivot mean = total - free means)."""
        mu = np.zeros(self.dims)
        for b in self.blocks:
            mu[list(b.frees)] = b.mean
            mu[b.pivot] = b.total - b.mean.sum()
        return mu

    def __repr__(self):
        return f"BlockGaussian(dims={self.dims}, blocks={len(self.blocks)})"


def block_gaussian_pmf(bg: BlockGaussian, x) -> float:
    """Pmf of the block Gaussian at a lattice point.

    Zero unless every block's coordinates sum to its total and every
    uncovered coordinate is zero; otherwise the product of per-block box
    probabilities over the non-pivot coordinates.
    """
    x = np.atleast_1d(np.asarray(x))
    if x.size != bg.dims:
        raise ValueError("point dimension mismatch")
    covered = bg.covered()
    for j in range(bg.dims):
        if j not in covered and int(x[j]) != 0:
            return 0.0
    p = 1.0
    for b in bg.blocks:
        if int(sum(int(x[c]) for c in b.coords)) != b.total:
            return 0.0
        frees = b.frees
        if frees:
            p *= discretized_gaussian_pmf(b.mean, b.cov, [int(x[c]) for c in frees])
            if p == 0.0:
                return 0.0
    return p


def block_gaussian_sample(bg: BlockGaussian, rng, size=None):
    """Sample: per block, draw the free coordinates, round half-to-even,
    and set the pivot to the remaining total."""
    m = 1 if size is None else int(size)
    out = np.zeros((m, bg.dims), dtype=np.int64)
    for b in bg.blocks:
        frees = b.frees
        if frees:
            d = len(frees)
            L = _chol_psd(b.cov)
            draws = b.mean[None, :] + rng.standard_normal((m, d)) @ L.T
            rounded = np.rint(draws).astype(np.int64)
            out[:, list(frees)] = rounded
            out[:, b.pivot] = b.total - rounded.sum(axis=1)
        else:
            out[:, b.pivot] = b.total
    if size is None:
        return tuple(int(v) for v in out[0])
    return out


def _block_table(b: GaussianBlock, dims: int, radius=TABLE_RADIUS):
    """Sparse table of one block's pmf over its own coordinates (others zero)."""
    frees = b.frees
    if not frees:
        pt = [0] * dims
        pt[b.pivot] = b.total
        return {tuple(pt): 1.0}
    sd = np.sqrt(np.clip(np.diag(b.cov), 0.0, None))
    lo = np.floor(b.mean - radius * sd - 1.0).astype(np.int64)
    hi = np.ceil(b.mean + radius * sd + 1.0).astype(np.int64)
    grid = discretized_gaussian_grid(b.mean, b.cov, lo, hi)
    table = {}
    for idx in np.argwhere(grid > PRUNE_EPS):
        pt = [0] * dims
        for pos, c in enumerate(frees):
            pt[c] = int(lo[pos] + idx[pos])
        pt[b.pivot] = b.total - int(idx.sum() + lo.sum())
        table[tuple(pt)] = float(grid[tuple(idx)])
    return table


def block_gaussian_table(bg: BlockGaussian, radius=TABLE_RADIUS) -> SparsePmf:
    """Materialize the block Gaussian pmf out to ``radius`` standard deviations."""
    acc = {tuple([0] * bg.dims): 1.0}
    for b in bg.blocks:
        table = _block_table(b, bg.dims, radius)
        nxt = {}
        for pt, p in acc.items():
            for qt, q in table.items():
                key = tuple(a + c for a, c in zip(pt, qt))
                nxt[key] = nxt.get(key, 0.0) + p * q
        acc = nxt
        if len(acc) > support_cap():
            raise SupportCapError("block table exceeds support cap")
    return SparsePmf(bg.dims, acc, validate=False)


# ---------------------------------------------------------------------------
# structural decomposition (Gaussian plus sparse part)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecompositionConfig:
    """Knobs of the structural decomposition.

    ``c`` is the parameter floor used by rounding, ``t`` the base bucket
    size, ``gamma`` the bucket growth exponent. Theory mode evaluates the
    asymptotic settings (astronomically large; reporting only).
    """

    c: float
    t: float
    gamma: float = 6.5
    theory_mode: bool = False

    def __post_init__(self):
        if not (0.0 < self.c):
            raise ValueError("c must be positive")
        if self.t < 1:
            raise ValueError("t must be at least 1")
        if self.gamma <= 6:
            raise ValueError("gamma must exceed 6")

    def validate_for(self, k: int):
        if self.c > 1.0 / (2 * k) + 1e-15:
            raise ValueError(f"c={self.c} violates c <= 1/(2k) for k={k}")

    @classmethod
    def theory(cls, k: int, eps: float) -> "DecompositionConfig":
        """The asymptotic parameter choices, with the growth deltas fixed
        at 0.1 (c, t) and 0.5 (gamma)."""
        c = (eps ** 2 / k ** 5) ** 1.1
        t = (k ** 19 / (c * eps ** 6)) ** 1.1
        return cls(c=c, t=t, gamma=6.5, theory_mode=True)


class StructuralDecomposition:
    """A block discretized Gaussian convolved with a small CRV sum."""

    __slots__ = ("gaussian", "sparse")

    def __init__(self, gaussian: BlockGaussian, sparse: ParamMatrix,
                 sparse_cap=None):
        if gaussian.dims != sparse.k:
            raise ValueError("component dimension mismatch")
        if sparse_cap is not None and sparse.n > sparse_cap:
            raise ValueError(
                f"sparse component has {sparse.n} rows, cap is {sparse_cap}")
        self.gaussian = gaussian
        self.sparse = sparse

    @property
    def dims(self) -> int:
        return self.sparse.k

    def __repr__(self):
        return (f"StructuralDecomposition(blocks={len(self.gaussian.blocks)}, "
                f"sparse_rows={self.sparse.n})")


def hybrid_pmf_at(sd: StructuralDecomposition, x, sparse_pmf=None) -> float:
    """Pmf of Gaussian + sparse sum at x: sum_y sparse(y) * gaussian(x - y)."""
    if sparse_pmf is None:
        sparse_pmf = pmd_pmf_exact(sd.sparse)
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    total = 0.0
    for y, p in sparse_pmf.table.items():
        total += p * block_gaussian_pmf(sd.gaussian, x - np.asarray(y))
    return total


def hybrid_pmf_table(sd: StructuralDecomposition, radius=TABLE_RADIUS) -> SparsePmf:
    """Materialized pmf of the decomposition (exact convolution of tables)."""
    sparse_pmf = pmd_pmf_exact(sd.sparse)
    gauss = block_gaussian_table(sd.gaussian, radius)
    return convolve(sparse_pmf, gauss)


# ---------------------------------------------------------------------------
# hypotheses
# ---------------------------------------------------------------------------

class Hypothesis:
    """A selectable distribution: pmf evaluation plus sampling.

    ``pmf_many`` is the bulk entry point the tournament uses; subclasses
    override it with vectorized implementations.
    """

    kind = "abstract"
    dims = 0

    def pmf_at(self, x) -> float:
        return float(self.pmf_many(np.asarray([x], dtype=np.int64))[0])

    def pmf_many(self, points) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    def support_pmf(self) -> SparsePmf:
        """Materialized pmf over the (numerically) full support."""
        raise NotImplementedError

    def normalization_gap(self) -> float:
        tab = self.support_pmf()
        return abs(1.0 - tab.mass() - tab.pruned_mass)

    def describe(self) -> dict:
        return {"kind": self.kind}


class ExactPmdHypothesis(Hypothesis):
    """Exact CRV-sum distribution for a given parameter matrix."""

    kind = "exact-pmd"

    def __init__(self, pm: ParamMatrix):
        self.pm = pm
        self.dims = pm.k
        self._table = None

    def _pmf(self) -> SparsePmf:
        if self._table is None:
            self._table = pmd_pmf_exact(self.pm)
        return self._table

    def pmf_many(self, points):
        tab = self._pmf().table
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        return np.array([tab.get(tuple(int(v) for v in p), 0.0) for p in pts])

    def sample(self, rng, size=None):
        return pmd_sample(self.pm, rng, size)

    def support_pmf(self) -> SparsePmf:
        return self._pmf()

    def describe(self):
        return {"kind": self.kind, "n": self.pm.n, "k": self.pm.k}


class TabulatedHypothesis(Hypothesis):
    """A distribution given directly by a sparse pmf table."""

    kind = "tabulated"

    def __init__(self, pmf: SparsePmf):
        self.pmf = pmf
        self.dims = pmf.dims

    def pmf_many(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        tab = self.pmf.table
        return np.array([tab.get(tuple(int(v) for v in p), 0.0) for p in pts])

    def sample(self, rng, size=None):
        return self.pmf.sample(rng, size)

    def support_pmf(self) -> SparsePmf:
        return self.pmf

    def describe(self):
        return {"kind": self.kind, "points": len(self.pmf)}


class GaussianPlusSparseHypothesis(Hypothesis):
    """Block discretized Gaussian convolved with a small CRV sum."""

    kind = "gaussian-plus-sparse"

    def __init__(self, sd: StructuralDecomposition):
        self.sd = sd
        self.dims = sd.dims
        self._sparse_pmf = None
        self._grids = None

    def _sparse(self) -> SparsePmf:
        if self._sparse_pmf is None:
            self._sparse_pmf = pmd_pmf_exact(self.sd.sparse)
        return self._sparse_pmf

    def _block_grids(self):
        """Per-block dense grids over the free coordinates (2-D blocks only)."""
        if self._grids is None:
            grids = {}
            for bi, b in enumerate(self.sd.gaussian.blocks):
                if len(b.frees) >= 2:
                    sd_ = np.sqrt(np.clip(np.diag(b.cov), 0.0, None))
                    lo = np.floor(b.mean - TABLE_RADIUS * sd_ - 1.0).astype(np.int64)
                    hi = np.ceil(b.mean + TABLE_RADIUS * sd_ + 1.0).astype(np.int64)
                    grids[bi] = (lo, discretized_gaussian_grid(b.mean, b.cov, lo, hi))
            self._grids = grids
        return self._grids

    def _block_pmf_many(self, pts) -> np.ndarray:
        bg = self.sd.gaussian
        m = pts.shape[0]
        out = np.ones(m)
        covered = bg.covered()
        for j in range(bg.dims):
            if j not in covered:
                out *= pts[:, j] == 0
        grids = self._block_grids()
        for bi, b in enumerate(bg.blocks):
            out *= pts[:, list(b.coords)].sum(axis=1) == b.total
            frees = b.frees
            if not frees:
                continue
            if len(frees) == 1:
                z = pts[:, frees[0]].astype(np.float64)
                sigma = math.sqrt(b.cov[0, 0]) if b.cov[0, 0] > 1e-12 else 0.0
                if sigma == 0.0:
                    out *= pts[:, frees[0]] == int(np.rint(b.mean[0]))
                else:
                    out *= ndtr((z + 0.5 - b.mean[0]) / sigma) - ndtr(
                        (z - 0.5 - b.mean[0]) / sigma)
            else:
                lo, grid = grids[bi]
                idx = pts[:, list(frees)] - lo[None, :]
                ok = np.all((idx >= 0) & (idx < np.asarray(grid.shape)[None, :]), axis=1)
                vals = np.zeros(m)
                if ok.any():
                    sel = idx[ok]
                    vals[ok] = grid[tuple(sel.T)]
                out *= vals
        return out

    def pmf_many(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        total = np.zeros(pts.shape[0])
        for y, p in self._sparse().table.items():
            total += p * self._block_pmf_many(pts - np.asarray(y, dtype=np.int64))
        return total

    def sample(self, rng, size=None):
        m = 1 if size is None else int(size)
        g = block_gaussian_sample(self.sd.gaussian, rng, m)
        s = self._sparse().sample(rng, m)
        out = g + s
        if size is None:
            return tuple(int(v) for v in out[0])
        return out

    def support_pmf(self) -> SparsePmf:
        return hybrid_pmf_table(self.sd)

    def describe(self):
        return {
            "kind": self.kind,
            "blocks": len(self.sd.gaussian.blocks),
            "sparse_rows": self.sd.sparse.n,
        }


class SiirvFormHypothesis(Hypothesis):
    """scale * round(N(mu, sigma^2)) + residue, the two parts independent.

    The residue lives on {0..scale-1}, so a value v decomposes uniquely into
    its residue v mod scale and the Gaussian integer (v - residue) / scale.
    """

    kind = "siirv-form"

    def __init__(self, scale: int, mu: float, sigma: float, residue):
        scale = int(scale)
        if scale < 1:
            raise ValueError("scale must be a positive integer")
        residue = np.asarray(residue, dtype=np.float64).reshape(scale)
        if residue.min() < -1e-12 or abs(residue.sum() - 1.0) > 1e-9:
            raise ValueError("residue must be a probability vector")
        self.scale = scale
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.residue = np.clip(residue, 0.0, None)
        self.dims = 1

    def _gauss_prob(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.sigma <= 0.0:
            return (z == np.rint(self.mu)).astype(np.float64)
        return ndtr((z + 0.5 - self.mu) / self.sigma) - ndtr(
            (z - 0.5 - self.mu) / self.sigma)

    def pmf_many(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))[:, 0]
        r = np.mod(pts, self.scale)
        z = (pts - r) // self.scale
        return self.residue[r] * self._gauss_prob(z)

    def sample(self, rng, size=None):
        m = 1 if size is None else int(size)
        z = np.rint(self.mu + self.sigma * rng.standard_normal(m)).astype(np.int64)
        r = np.searchsorted(np.cumsum(self.residue) / self.residue.sum(),
                            rng.random(m), side="right")
        r = np.minimum(r, self.scale - 1)
        out = (self.scale * z + r)[:, None]
        if size is None:
            return (int(out[0, 0]),)
        return out

    def support_pmf(self) -> SparsePmf:
        half = int(math.ceil(TABLE_RADIUS * max(self.sigma, 1.0) + 1))
        center = int(np.rint(self.mu))
        table = {}
        for z in range(center - half, center + half + 1):
            g = float(self._gauss_prob(z))
            if g <= PRUNE_EPS:
                continue
            for r in range(self.scale):
                p = g * self.residue[r]
                if p > PRUNE_EPS:
                    table[(self.scale * z + r,)] = p
        return SparsePmf(1, table, validate=False)

    def describe(self):
        return {
            "kind": self.kind,
            "scale": self.scale,
            "mu": self.mu,
            "sigma": self.sigma,
            "residue": [float(v) for v in self.residue],
        }
