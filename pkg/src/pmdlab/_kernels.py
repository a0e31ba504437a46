"""Hot numeric kernels with numba and pure-numpy implementations.

Every kernel exists in two versions: an explicit-loop one compiled with
``numba.njit`` and a vectorized numpy one. ``pmdlab._backend`` decides which
set is exported; both produce identical results up to floating-point
associativity (the test suite runs the cross-check).

Kernels:
  * ``pmd_dp``      dense dynamic program for the pmf of a sum of categorical
                    vectors (support indexed by the first k-1 coordinates).
  * ``siirv_dp``    1-D dynamic program for sums of {0..k-1}-valued variables.
  * ``box_probs_1d``    unit-box normal probabilities on an integer range.
  * ``box_probs_2d``    same for a correlated 2-D normal, whitened with the
                        Cholesky factor and integrated by panelled
                        Gauss-Legendre with an exact inner CDF difference.
"""

import math

import numpy as np
from scipy.special import ndtr

from ._backend import USE_NUMBA

# Integration domain clip in whitened units; the discarded tail carries less
# than 1e-16 mass per side.
ZMAX = 8.6

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_2 = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _pmd_dp_numpy(rows):
    n, k = rows.shape
    shape = (n + 1,) * (k - 1)
    p = np.zeros(shape)
    p[(0,) * (k - 1)] = 1.0
    for i in range(n):
        row = rows[i]
        nxt = p * row[k - 1]
        for j in range(k - 1):
            if row[j] == 0.0:
                continue
            dst = [slice(None)] * (k - 1)
            src = [slice(None)] * (k - 1)
            dst[j] = slice(1, None)
            src[j] = slice(None, -1)
            nxt[tuple(dst)] += row[j] * p[tuple(src)]
        p = nxt
    return p


def _siirv_dp_numpy(rows):
    n, k = rows.shape
    p = np.ones(1)
    for i in range(n):
        p = np.convolve(p, rows[i])
    full = np.zeros(n * (k - 1) + 1)
    full[: p.size] = p
    return full


def _box_probs_1d_numpy(mu, sigma, lo, hi):
    edges = (np.arange(lo, hi + 2, dtype=np.float64) - 0.5 - mu) / sigma
    cdf = ndtr(edges)
    return np.diff(cdf)


def _box_probs_2d_numpy(mu1, mu2, l11, l21, l22, lo1, hi1, lo2, hi2):
    m1 = hi1 - lo1 + 1
    m2 = hi2 - lo2 + 1
    out = np.zeros((m1, m2))
    edges2 = np.arange(lo2, hi2 + 2, dtype=np.float64) - 0.5

    # Panel width in whitened units: half the smaller of the standard normal
    # scale and the scale on which the inner conditional CDF varies.
    slope = abs(l21) / l22
    wp = 0.5 / max(1.0, slope)
    if wp < 1.0 / 64.0:
        wp = 1.0 / 64.0

    zs = []
    ws = []
    cells = []
    for i in range(m1):
        za = (lo1 + i - 0.5 - mu1) / l11
        zb = (lo1 + i + 0.5 - mu1) / l11
        if za < -ZMAX:
            za = -ZMAX
        if zb > ZMAX:
            zb = ZMAX
        if za >= zb:
            continue
        npan = int(math.ceil((zb - za) / wp))
        if npan > 256:
            npan = 256
        h = (zb - za) / npan
        for p in range(npan):
            c = za + (p + 0.5) * h
            zs.append(c + 0.5 * h * _GL_NODES)
            ws.append(0.5 * h * _GL_WEIGHTS)
            cells.append(np.full(_GL_NODES.size, i))
    if not zs:
        return out
    z = np.concatenate(zs)
    w = np.concatenate(ws) * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    cell = np.concatenate(cells)

    inner_edges = (edges2[None, :] - mu2 - l21 * z[:, None]) / l22
    inner = np.diff(ndtr(inner_edges), axis=1)
    np.add.at(out, cell, w[:, None] * inner)
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USE_NUMBA:
    from numba import njit

    @njit(cache=True)
    def _pmd_dp_1d_numba(rows):
        n = rows.shape[0]
        p = np.zeros(n + 1)
        p[0] = 1.0
        for i in range(n):
            r0 = rows[i, 0]
            r1 = rows[i, 1]
            for a in range(i + 1, -1, -1):
                v = r1 * p[a]
                if a > 0:
                    v += r0 * p[a - 1]
                p[a] = v
        return p

    @njit(cache=True)
    def _pmd_dp_2d_numba(rows):
        n = rows.shape[0]
        p = np.zeros((n + 1, n + 1))
        p[0, 0] = 1.0
        for i in range(n):
            r0 = rows[i, 0]
            r1 = rows[i, 1]
            r2 = rows[i, 2]
            for a in range(i + 1, -1, -1):
                for b in range(i + 1 - a, -1, -1):
                    v = r2 * p[a, b]
                    if a > 0:
                        v += r0 * p[a - 1, b]
                    if b > 0:
                        v += r1 * p[a, b - 1]
                    p[a, b] = v
        return p

    @njit(cache=True)
    def _pmd_dp_3d_numba(rows):
        n = rows.shape[0]
        p = np.zeros((n + 1, n + 1, n + 1))
        p[0, 0, 0] = 1.0
        for i in range(n):
            r0 = rows[i, 0]
            r1 = rows[i, 1]
            r2 = rows[i, 2]
            r3 = rows[i, 3]
            for a in range(i + 1, -1, -1):
                for b in range(i + 1 - a, -1, -1):
                    for c in range(i + 1 - a - b, -1, -1):
                        v = r3 * p[a, b, c]
                        if a > 0:
                            v += r0 * p[a - 1, b, c]
                        if b > 0:
                            v += r1 * p[a, b - 1, c]
                        if c > 0:
                            v += r2 * p[a, b, c - 1]
                        p[a, b, c] = v
        return p

    def _pmd_dp_numba(rows):
        k = rows.shape[1]
        if k == 2:
            return _pmd_dp_1d_numba(rows)
        if k == 3:
            return _pmd_dp_2d_numba(rows)
        if k == 4:
            return _pmd_dp_3d_numba(rows)
        return _pmd_dp_numpy(rows)

    @njit(cache=True)
    def _siirv_dp_numba(rows):
        n, k = rows.shape
        m = n * (k - 1)
        p = np.zeros(m + 1)
        p[0] = 1.0
        for i in range(n):
            top = (i + 1) * (k - 1)
            for v in range(top, -1, -1):
                acc = rows[i, 0] * p[v]
                jmax = v if v < k - 1 else k - 1
                for j in range(1, jmax + 1):
                    acc += rows[i, j] * p[v - j]
                p[v] = acc
        return p

    @njit(cache=True)
    def _ndtr_scalar(x):
        return 0.5 * (1.0 + math.erf(x * _INV_SQRT_2))

    @njit(cache=True)
    def _box_probs_1d_numba(mu, sigma, lo, hi):
        m = hi - lo + 1
        out = np.empty(m)
        prev = _ndtr_scalar((lo - 0.5 - mu) / sigma)
        for i in range(m):
            cur = _ndtr_scalar((lo + i + 0.5 - mu) / sigma)
            out[i] = cur - prev
            prev = cur
        return out

    @njit(cache=True)
    def _box_probs_2d_numba(mu1, mu2, l11, l21, l22, lo1, hi1, lo2, hi2,
                            nodes, weights):
        m1 = hi1 - lo1 + 1
        m2 = hi2 - lo2 + 1
        out = np.zeros((m1, m2))
        slope = abs(l21) / l22
        wp = 0.5 / max(1.0, slope)
        if wp < 1.0 / 64.0:
            wp = 1.0 / 64.0
        cdfbuf = np.empty(m2 + 1)
        for i in range(m1):
            za = (lo1 + i - 0.5 - mu1) / l11
            zb = (lo1 + i + 0.5 - mu1) / l11
            if za < -ZMAX:
                za = -ZMAX
            if zb > ZMAX:
                zb = ZMAX
            if za >= zb:
                continue
            npan = int(math.ceil((zb - za) / wp))
            if npan > 256:
                npan = 256
            h = (zb - za) / npan
            for p in range(npan):
                c = za + (p + 0.5) * h
                for q in range(nodes.size):
                    z = c + 0.5 * h * nodes[q]
                    w = (0.5 * h * weights[q] * _INV_SQRT_2PI
                         * math.exp(-0.5 * z * z))
                    for j in range(m2 + 1):
                        e = (lo2 + j - 0.5 - mu2 - l21 * z) / l22
                        cdfbuf[j] = _ndtr_scalar(e)
                    for j in range(m2):
                        out[i, j] += w * (cdfbuf[j + 1] - cdfbuf[j])
        return out


# ---------------------------------------------------------------------------
# exported dispatchers
# ---------------------------------------------------------------------------

def pmd_dp(rows):
    """Dense pmf array of sum of independent categorical rows.

    ``rows`` is (n, k) with each row a probability vector. The result has
    shape (n+1,)*(k-1); entry [x1,...,x_{k-1}] is the probability that the
    first k-1 coordinates of the sum equal x (the last coordinate is implied
    by the total n). k=1 is handled by the caller.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if USE_NUMBA:
        return _pmd_dp_numba(rows)
    return _pmd_dp_numpy(rows)


def siirv_dp(rows):
    """Pmf of sum_i V_i where V_i takes value j with probability rows[i, j]."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if USE_NUMBA:
        return _siirv_dp_numba(rows)
    return _siirv_dp_numpy(rows)


def box_probs_1d(mu, sigma, lo, hi):
    """P[g - 1/2 <= N(mu, sigma^2) <= g + 1/2] for g = lo..hi."""
    if USE_NUMBA:
        return _box_probs_1d_numba(float(mu), float(sigma), int(lo), int(hi))
    return _box_probs_1d_numpy(float(mu), float(sigma), int(lo), int(hi))


def box_probs_2d(mu, chol, lo1, hi1, lo2, hi2):
    """Unit-box probabilities of a correlated 2-D normal on an integer grid.

    ``chol`` is the lower Cholesky factor of the covariance. Integration runs
    in whitened coordinates: Gauss-Legendre panels along the first factor
    direction and exact CDF differences along the second.
    """
    mu1, mu2 = float(mu[0]), float(mu[1])
    l11 = float(chol[0, 0])
    l21 = float(chol[1, 0])
    l22 = float(chol[1, 1])
    if USE_NUMBA:
        return _box_probs_2d_numba(mu1, mu2, l11, l21, l22, int(lo1), int(hi1),
                                   int(lo2), int(hi2), _GL_NODES, _GL_WEIGHTS)
    return _box_probs_2d_numpy(mu1, mu2, l11, l21, l22, int(lo1), int(hi1),
                               int(lo2), int(hi2))
