"""Moment estimation from samples and the PSD-matrix cover search.

Three groups of tools live here. `empirical_moments` plus
`directional_error_check` handle the sample side: unbiased mean/covariance
estimates and the per-direction accuracy conditions they are supposed to
satisfy. `psd_cover` enumerates candidate covariance matrices around an
estimate so that any PSD matrix inside a spectral band of the estimate is
directionally approximated by some candidate. The remaining helpers
(`rounding_drift_check`, `directional_gaussian_tv_bound`,
`block_structure_guesses`, `block_total_guesses`) are small verdict and
enumeration utilities used by the learners.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import SingularCovarianceError

_SYM_TOL = 1e-12
_EIG_TOL = 1e-9


def _quad(mat, dirs):
    # y^T M y for each row y of dirs
    return np.einsum("di,ij,dj->d", dirs, mat, dirs)


@dataclass(frozen=True)
class EmpiricalMoments:
    """Sample mean and unbiased (m-1 divisor) sample covariance."""

    m: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        scale = max(1.0, float(np.abs(cov).max()) if cov.size else 1.0)
        if np.abs(cov - cov.T).max() > _SYM_TOL * scale:
            raise ValueError("covariance estimate must be symmetric")
        sym = 0.5 * (cov + cov.T)
        if np.linalg.eigvalsh(sym).min() < -_EIG_TOL * scale:
            raise ValueError("covariance estimate is not PSD")


def empirical_moments(samples) -> EmpiricalMoments:
    """Mean and unbiased covariance of a batch of lattice points.

    Needs at least two samples; a single point has no covariance estimate.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    m = arr.shape[0]
    if m < 2:
        raise ValueError("need at least 2 samples for the unbiased estimator")
    mean = arr.mean(axis=0)
    dev = arr - mean
    cov = dev.T @ dev / (m - 1)
    return EmpiricalMoments(m, mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class DirectionalReport:
    """Per-direction verdicts for the mean and covariance conditions."""

    eps: float
    mean_ok: np.ndarray
    cov_ok: np.ndarray
    mean_ratio: np.ndarray
    cov_ratio: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(self.mean_ok.all() and self.cov_ok.all())


def directional_error_check(est: EmpiricalMoments, mean, cov, directions,
                            eps: float) -> DirectionalReport:
    """Check |y'(mu_hat - mu)| <= eps sqrt(y'Sy) and |y'(S_hat - S)y| <= eps y'Sy.

    The reference covariance must have minimum eigenvalue at least 1; the
    guarantees are stated in that regime and degenerate directions would
    divide by zero anyway.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < 1.0 - 1e-9:
        raise SingularCovarianceError(
            "reference covariance needs minimum eigenvalue >= 1")
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    den = _quad(cov, dirs)
    mean_num = np.abs(dirs @ (est.mean - mean))
    cov_num = np.abs(_quad(est.cov - cov, dirs))
    mean_ratio = mean_num / np.sqrt(den)
    cov_ratio = cov_num / den
    tol = 1.0 + 1e-12
    return DirectionalReport(
        eps=float(eps),
        mean_ok=mean_ratio <= eps * tol,
        cov_ok=cov_ratio <= eps * tol,
        mean_ratio=mean_ratio,
        cov_ratio=cov_ratio,
    )


# ---------------------------------------------------------------------------
# PSD cover
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsdCoverSpec:
    """Band parameters (eps1, eps2), output accuracy eps, and the projection
    grid accuracy eps_prime (derived from eps when left unset)."""

    eps1: float
    eps2: float
    eps: float
    eps_prime: float = None

    def __post_init__(self):
        if not 0.0 <= self.eps1 < 0.25:
            raise ValueError("eps1 must lie in [0, 1/4)")
        if self.eps2 < 0.0:
            raise ValueError("eps2 must be nonnegative")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.eps_prime is not None and self.eps_prime <= 0.0:
            raise ValueError("eps_prime must be positive")

    def grid_accuracy(self, k: int) -> float:
        if self.eps_prime is not None:
            return self.eps_prime
        return math.sqrt(self.eps) * ((1.0 + self.eps2) * k) ** -1.5 / 8.0


def eigen_candidates(values, eps1: float, eps2: float, eps: float):
    """Candidate eigenvalue grids, one array per input eigenvalue.

    Additive corrections are quarter-integer offsets inside [-eps2, eps2]
    (just {0} when eps2 < 1/4), composed with a multiplicative (1+eps) grid
    wide enough to reach a factor of [0.4, 2.5] around each shifted base.
    Everything is floored at 1, the domain where the band argument applies.
    """
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if values.min() < 1.0 - 1e-9:
        raise ValueError("eigenvalues must be at least 1")
    half = int(math.floor(4.0 * eps2 + 1e-9))
    offsets = np.arange(-half, half + 1) * 0.25
    j_lo = math.floor(math.log(0.4) / math.log1p(eps))
    j_hi = math.ceil(math.log(2.5) / math.log1p(eps))
    factors = (1.0 + eps) ** np.arange(j_lo, j_hi + 1)
    del eps1  # the band width only affects how callers pick the factor range
    grids = []
    for mu in values:
        bases = np.maximum(mu - offsets, 1.0)
        cands = np.maximum(np.outer(bases, factors).ravel(), 1.0)
        grids.append(np.unique(cands))
    return grids


def _sym_grid(radius: float, step: float) -> np.ndarray:
    """Symmetric grid of step multiples inside [-radius, radius], with the
    endpoints themselves included so boundary values stay reachable."""
    m = int(math.floor(radius / step + 1e-9))
    core = np.arange(-m, m + 1) * step
    return np.unique(np.concatenate([core, [-radius, 0.0, radius]]))


def _unit_candidates(axes, slack):
    """Grid points of the axis product that can be snapped unit vectors."""
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    tol = (2.0 * slack + slack * slack) * 1.5
    keep = np.abs(np.einsum("ij,ij->i", pts, pts) - 1.0) <= tol
    pts = pts[keep]
    # one representative per sign pair: v and -v span the same projector
    lead = np.take_along_axis(
        pts, np.argmax(np.abs(pts), axis=1)[:, None], axis=1).ravel()
    return pts[lead > 0.0]


def _frame_guesses(mu, eps2: float, eps_prime: float):
    """Orthonormal frames built from gridded eigenvector projections.

    For the z-th vector, the projection onto the i-th reference eigenvector
    is gridded at accuracy eps_prime * min(2 sqrt((mu_i + eps2) /
    max(mu_z - 2 eps2, 1)), 1); candidates far from unit norm or far from
    orthogonal to the previously chosen vectors are pruned, and each
    surviving tuple is Gram-Schmidt orthonormalized in order.
    """
    k = len(mu)
    cand_sets, slacks = [], []
    for z in range(k):
        caps = np.minimum(
            2.0 * np.sqrt((mu + eps2) / max(mu[z] - 2.0 * eps2, 1.0)), 1.0)
        deltas = eps_prime * caps
        axes = [_sym_grid(caps[i], deltas[i]) for i in range(k)]
        slack = 0.5 * float(np.linalg.norm(deltas))
        cand_sets.append(_unit_candidates(axes, slack))
        slacks.append(slack)

    frames = []

    def extend(z, raw, ortho):
        if z == k:
            frames.append(np.column_stack(ortho))
            return
        pts = cand_sets[z]
        mask = np.ones(len(pts), dtype=bool)
        for w, v in enumerate(raw):
            tol = (slacks[z] + slacks[w] + slacks[z] * slacks[w]) * 1.5
            mask &= np.abs(pts @ v) <= tol
        for v in pts[mask]:
            u = v.copy()
            for o in ortho:
                u -= (u @ o) * o
            nrm = np.linalg.norm(u)
            if nrm < 0.5:
                continue
            extend(z + 1, raw + [v], ortho + [u / nrm])

    extend(0, [], [])
    return frames


def psd_cover(a, spec: PsdCoverSpec):
    """Stream PSD matrices covering the band around the PSD matrix ``a``.

    Every matrix B with |y'(a - B)y| <= eps1 y'ay + eps2 y'y (for all y) and
    minimum eigenvalue >= 1 should be approximated by some emitted matrix to
    a directional factor 1 +- eps. Candidates combine an eigenvalue grid per
    index with orthonormal frames near a's eigenbasis; the emitted matrix is
    the exact spectral assembly, so its eigenvalues are the grid values.
    """
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > 1e-9 * scale:
        raise ValueError("reference matrix must be symmetric")
    mu, q = np.linalg.eigh(0.5 * (a + a.T))
    if mu.min() < 1.0 - 1e-9:
        raise ValueError("reference matrix needs minimum eigenvalue >= 1")
    grids = eigen_candidates(mu, spec.eps1, spec.eps2, spec.eps)
    frames = _frame_guesses(mu, spec.eps2, spec.grid_accuracy(k))
    for frame in frames:
        w = q @ frame
        for lam in itertools.product(*grids):
            b = (w * np.asarray(lam)) @ w.T
            yield 0.5 * (b + b.T)


def sample_check_directions(a, count: int, rng) -> np.ndarray:
    """Unit directions for band and closeness checks: half uniform on the
    sphere, half perturbations of the eigenvectors of ``a`` at mixed scales
    (near-eigenvector directions are where spectral errors concentrate)."""
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[0]
    n_uni = count // 2
    dirs = np.empty((count, k))
    g = rng.standard_normal((n_uni, k))
    dirs[:n_uni] = g / np.linalg.norm(g, axis=1, keepdims=True)
    _, vecs = np.linalg.eigh(0.5 * (a + a.T))
    for r in range(n_uni, count):
        base = vecs[:, r % k]
        sigma = 10.0 ** rng.uniform(-3.0, -0.5)
        v = base + sigma * rng.standard_normal(k)
        dirs[r] = v / np.linalg.norm(v)
    return dirs


# ---------------------------------------------------------------------------
# verdict helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftReport:
    max_ratio: float
    bound: float
    passed: bool


def rounding_drift_check(cov1, cov2, eps: float, directions=None,
                         rng=None) -> DriftReport:
    """Largest sampled |y'(S1 - S2)y| / y'S1y, compared against 9 eps.

    Requires the first covariance to have minimum eigenvalue at least
    1/eps^3; that is the regime in which close distributions are known to
    have directionally close covariances.
    """
    cov1 = np.asarray(cov1, dtype=np.float64)
    cov2 = np.asarray(cov2, dtype=np.float64)
    if np.linalg.eigvalsh(0.5 * (cov1 + cov1.T)).min() < (1.0 - 1e-9) / eps ** 3:
        raise ValueError("minimum eigenvalue of cov1 must be at least 1/eps^3")
    if directions is None:
        rng = np.random.default_rng(0) if rng is None else rng
        directions = sample_check_directions(cov1, 1000, rng)
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    ratio = float(np.max(np.abs(_quad(cov1 - cov2, dirs)) / _quad(cov1, dirs)))
    bound = 9.0 * eps
    return DriftReport(max_ratio=ratio, bound=bound,
                       passed=ratio <= bound * (1.0 + 1e-12))


def _closure_directions(cov):
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam.min() <= 0.0:
        raise SingularCovarianceError("reference covariance is degenerate")
    scaled = vec / np.sqrt(lam)  # columns v_i / sqrt(lambda_i)
    singles = scaled.T
    pairs = (scaled.T[:, None, :] + scaled.T[None, :, :]).reshape(-1, len(lam))
    return np.vstack([singles, pairs])


def directional_gaussian_tv_bound(mean1, cov1, mean2, cov2) -> float:
    """2 eps k for the smallest eps satisfying the directional mean and
    covariance conditions over the eigen-closure direction set of the first
    Gaussian (the k scaled eigenvectors and their k^2 pairwise sums)."""
    mean1 = np.asarray(mean1, dtype=np.float64)
    mean2 = np.asarray(mean2, dtype=np.float64)
    cov1 = np.asarray(cov1, dtype=np.float64)
    cov2 = np.asarray(cov2, dtype=np.float64)
    k = len(mean1)
    dirs = _closure_directions(cov1)
    den = _quad(cov1, dirs)
    eps_mean = np.max(np.abs(dirs @ (mean2 - mean1)) / np.sqrt(den))
    eps_cov = np.max(np.abs(_quad(cov2 - cov1, dirs)) / den)
    return 2.0 * k * float(max(eps_mean, eps_cov))


def mean_projection_candidates(basis, lams, center, half_width,
                               eps: float):
    """Grid candidate mean vectors by their projections onto an (approximate)
    eigenbasis: the z-th projection moves in steps of sqrt(lam_z) eps / k
    inside [proj(center) - half_width, proj(center) + half_width].
    ``half_width`` may be a scalar or one radius per direction."""
    basis = np.asarray(basis, dtype=np.float64)
    lams = np.asarray(lams, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    k = basis.shape[1]
    widths = np.broadcast_to(np.asarray(half_width, dtype=np.float64), (k,))
    mid = basis.T @ center
    axes = []
    for z in range(k):
        step = math.sqrt(max(lams[z], 0.0)) * eps / max(len(center), 1)
        step = max(step, 1e-12)
        m = int(math.floor(widths[z] / step + 1e-9))
        axes.append(mid[z] + np.arange(-m, m + 1) * step)
    for proj in itertools.product(*axes):
        yield basis @ np.asarray(proj)


# ---------------------------------------------------------------------------
# combinatorial guesses for the PMD learner
# ---------------------------------------------------------------------------

def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def block_structure_guesses(k: int):
    """All partitions of {0..k-1} into blocks with one pivot per block."""
    if k < 1:
        raise ValueError("k must be at least 1")
    for part in _set_partitions(list(range(k))):
        blocks = tuple(sorted(tuple(sorted(b)) for b in part))
        for pivots in itertools.product(*blocks):
            yield blocks, pivots


def block_total_guesses(x, blocks, sparse_cap: int):
    """Integer total candidates per block given one observed sample.

    A block's total is its coordinate sum in the sample minus the sparse
    component's contribution, which is between 0 and sparse_cap; negative
    candidates are dropped.
    """
    x = np.asarray(x)
    per_block = []
    for block in blocks:
        s = int(x[list(block)].sum())
        per_block.append([s - ell for ell in range(int(sparse_cap) + 1)
                          if s - ell >= 0])
    yield from itertools.product(*per_block)
