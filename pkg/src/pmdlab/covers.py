"""Finite covers of the model class, two ways.

The direct route grids every parameter: sparse-part rows on a simplex
lattice, Gaussian means on a cube grid, covariances through the entries of a
lower-triangular factor (so every emitted matrix is PSD by construction).

The sparser route prunes the gridded sparse candidates by moment matching:
rows are first binned into narrow mean boxes, and within a box only the
power sums up to order w matter, because two parameter sets with equal power
sums share the same truncated expansion around a common multinomial. The
expansion (coefficients, backward differences, and its l1 error knob alpha)
is implemented here and doubles as the correctness oracle for that pruning.
"""

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .core import BlockGaussian, GaussianBlock, GmdParams, ParamMatrix
from . import io as _io

__all__ = [
    "GridSpec",
    "MomentProfile",
    "grid_cover_gaussian",
    "grid_cover_sparse_pmd",
    "group_by_mean_box",
    "manifest_lines",
    "mean_box_count",
    "moment_matching_cover",
    "moment_profile",
    "multinomial_pmf",
    "roos_alpha",
    "roos_approximator_pmf",
    "roos_coefficients",
    "roos_l1_gap",
]


def _lattice(k: int, w: int):
    """All u in Z^k with u_i >= 0 and sum(u) <= w, lexicographic order."""
    for u in itertools.product(range(w + 1), repeat=k):
        if sum(u) <= w:
            yield u


# ---------------------------------------------------------------------------
# grid covers
# ---------------------------------------------------------------------------

def grid_cover_sparse_pmd(n_max: int, k: int, granularity: float):
    """Yield every matrix with up to n_max rows whose entries sit on the
    simplex lattice of step 1/ceil(1/granularity).

    Rows are combined as multisets (row order never changes the
    distribution), so the stream is finite and duplicate-free. Any valid
    matrix is within ``granularity`` of an emitted one entry-wise.
    """
    if not (0.0 < granularity < 1.0 + 1e-12):
        raise ValueError("granularity must lie in (0, 1]")
    steps = max(1, int(math.ceil(1.0 / granularity - 1e-9)))
    rows = [np.asarray(c, dtype=np.float64) / steps
            for c in _compositions(steps, k)]
    for n in range(n_max + 1):
        for combo in itertools.combinations_with_replacement(range(len(rows)), n):
            if n == 0:
                yield ParamMatrix(np.zeros((0, k)))
            else:
                yield ParamMatrix(np.vstack([rows[i] for i in combo]))


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


@dataclass(frozen=True)
class GridSpec:
    """Granularities of the direct cover."""

    param_granularity: float
    mean_side: float
    chol_granularity: float
    total_range: tuple = None

    def __post_init__(self):
        if self.param_granularity <= 0 or self.mean_side <= 0 \
                or self.chol_granularity <= 0:
            raise ValueError("granularities must be positive")


def _axis_grid(lo: float, hi: float, step: float):
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(count)]


def grid_cover_gaussian(n: int, k: int, spec: GridSpec, coords=None, pivot=None):
    """Yield single-block Gaussians on ``coords``: every integer total in
    range, every mean-grid node in [0, n]^d, and every lower-triangular
    factor with entries on the granularity grid inside [-sqrt(n), sqrt(n)]
    (diagonal restricted to >= 0). Covariances are L L^T, hence PSD.
    """
    if coords is None:
        coords = tuple(range(k))
    if pivot is None:
        pivot = min(coords)
    d = len(coords) - 1
    lo_t, hi_t = spec.total_range if spec.total_range is not None else (0, n)
    root = math.sqrt(n)
    diag_vals = _axis_grid(0.0, root, spec.chol_granularity)
    off_vals = _axis_grid(-math.floor(root / spec.chol_granularity)
                          * spec.chol_granularity, root, spec.chol_granularity)
    mean_vals = _axis_grid(0.0, float(n), spec.mean_side)
    tri = [(r, c) for r in range(d) for c in range(r + 1)]
    entry_sets = [diag_vals if r == c else off_vals for r, c in tri]
    for total in range(lo_t, hi_t + 1):
        for mean in itertools.product(mean_vals, repeat=d):
            for entries in itertools.product(*entry_sets):
                L = np.zeros((d, d))
                for (r, c), v in zip(tri, entries):
                    L[r, c] = v
                blk = GaussianBlock(coords, pivot, total,
                                    np.asarray(mean), L @ L.T)
                yield BlockGaussian(k, [blk])


def manifest_lines(elements):
    """Serialize cover elements to JSON lines (index, type tag, parameters)."""
    for idx, el in enumerate(elements):
        if isinstance(el, ParamMatrix):
            body = {"kind": "pmd", "params": _io.param_matrix_to_json(el)}
        elif isinstance(el, BlockGaussian):
            body = {"kind": "gaussian",
                    "params": _io.block_gaussian_to_json(el)}
        else:
            raise TypeError(f"unsupported cover element {type(el)!r}")
        yield json.dumps({"index": idx, **body}, sort_keys=True)


# ---------------------------------------------------------------------------
# moment profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentProfile:
    """Power sums sum_i prod_j rho(i,j)^u_j for all u with |u| <= order.

    Quantization (when a granularity is given) floors the order-i entries to
    multiples of granularity^i; the zero entry is the exact row count.
    """

    order: int
    dims: int
    entries: tuple  # ((u, value) pairs, lexicographic in u)
    granularity: float = None

    def value(self, u):
        for v, x in self.entries:
            if v == tuple(u):
                return x
        raise KeyError(u)

    def key(self):
        out = []
        for u, x in self.entries:
            lvl = sum(u)
            if lvl == 0:
                out.append((u, int(round(x))))
            elif self.granularity is None:
                out.append((u, round(x, 12)))
            else:
                step = self.granularity ** lvl
                out.append((u, int(math.floor(x / step + 1e-9))))
        return tuple(out)

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, MomentProfile) and self.key() == other.key()


def moment_profile(pm, w: int, quantizer: float = None) -> MomentProfile:
    """Exact power-sum profile of a parameter matrix up to total order w."""
    if w < 0:
        raise ValueError("order must be nonnegative")
    rows = pm.rows if hasattr(pm, "rows") else np.asarray(pm, dtype=np.float64)
    n, k = rows.shape
    entries = []
    for u in _lattice(k, w):
        if n == 0:
            entries.append((u, 0.0))
            continue
        prod = np.ones(n)
        for j, e in enumerate(u):
            if e:
                prod = prod * rows[:, j] ** e
        entries.append((u, float(prod.sum())))
    return MomentProfile(w, k, tuple(entries), quantizer)


def mean_box_count(k: int) -> int:
    """Number of per-coordinate mean boxes."""
    return int(math.ceil(4.0 * math.e * k ** 3))


def group_by_mean_box(pm: ParamMatrix):
    """Partition rows into boxes of per-coordinate width 1/ceil(4ek^3).

    A value exactly on a box edge goes to the lower box. Within every group
    the per-column spread is at most the box width.
    """
    b = mean_box_count(pm.k)
    groups = {}
    for i in range(pm.n):
        v = tuple(max(1, int(math.ceil(pm.rows[i, j] * b - 1e-12)))
                  for j in range(pm.k))
        groups.setdefault(v, []).append(i)
    return {v: np.asarray(idx, dtype=np.int64) for v, idx in groups.items()}


def _signature(pm: ParamMatrix, w: int, quantizer):
    parts = []
    for v, idx in sorted(group_by_mean_box(pm).items()):
        prof = moment_profile(pm.rows[idx], w, quantizer)
        parts.append((v, prof.key()))
    return tuple(parts)


def moment_matching_cover(candidates, w: int, quantizer: float = None):
    """Keep one candidate per (mean-box -> quantized profile) signature.

    Yields representatives lazily in first-seen order; two candidates whose
    per-box profiles all agree are never both yielded.
    """
    seen = set()
    for pm in candidates:
        sig = _signature(pm, w, quantizer)
        if sig not in seen:
            seen.add(sig)
            yield pm


# ---------------------------------------------------------------------------
# the truncated expansion around a multinomial
# ---------------------------------------------------------------------------

def multinomial_pmf(n: int, q, x) -> float:
    """Multinomial mass at x for k visible categories plus the invisible
    remainder category with probability 1 - sum(q)."""
    q = np.asarray(q, dtype=np.float64)
    if q.min() < -1e-12 or q.sum() > 1.0 + 1e-9:
        raise ValueError("q must be nonnegative with total at most 1")
    q0 = max(0.0, 1.0 - float(q.sum()))
    x = np.asarray(x, dtype=np.int64)
    if x.size != q.size:
        raise ValueError("dimension mismatch")
    rest = int(n - x.sum())
    if n < 0 or (x < 0).any() or rest < 0:
        return 0.0
    coef = math.factorial(n)
    for xi in x:
        coef //= math.factorial(int(xi))
    coef //= math.factorial(rest)
    p = float(coef)
    for qi, xi in zip(q, x):
        if xi:
            if qi <= 0.0:
                return 0.0
            p *= qi ** int(xi)
    if rest:
        if q0 <= 0.0:
            return 0.0
        p *= q0 ** rest
    return p


def _rows_of(rho):
    if isinstance(rho, GmdParams):
        return rho.rows
    if isinstance(rho, ParamMatrix):
        raise TypeError("expected truncated rows; drop a coordinate first")
    return np.asarray(rho, dtype=np.float64)


def roos_coefficients(rho, q, w: int):
    """Coefficients a_u of prod_j z_j^{u_j} in
    prod_i (1 + sum_j (rho(i,j) - q_j) z_j), for all |u| <= w.

    Built by incremental polynomial multiplication truncated at degree w.
    """
    rows = _rows_of(rho)
    n, k = rows.shape
    q = np.asarray(q, dtype=np.float64).reshape(k)
    shape = (w + 1,) * k
    poly = np.zeros(shape)
    poly[(0,) * k] = 1.0
    for i in range(n):
        d = rows[i] - q
        nxt = poly.copy()
        for j in range(k):
            if d[j] == 0.0:
                continue
            src = [slice(None)] * k
            dst = [slice(None)] * k
            src[j] = slice(0, w)
            dst[j] = slice(1, w + 1)
            nxt[tuple(dst)] += d[j] * poly[tuple(src)]
        poly = nxt
    return {u: float(poly[u]) for u in _lattice(k, w)}


def _delta_multinomial(m: int, q, x, u) -> float:
    """Backward difference of the multinomial mass: per coordinate j,
    (D_j h)(x) = h(x - e_j) - h(x), applied u_j times.

    This is the measure-shift form of the backward difference; the opposite
    sign, h(x) - h(x - e_j), breaks the exact full-order identity on odd
    orders (checked by the identity tests down to 1e-10).
    """
    x = np.asarray(x, dtype=np.int64)
    order = sum(u)
    total = 0.0
    for v in itertools.product(*(range(uj + 1) for uj in u)):
        sign = -1.0 if (order - sum(v)) % 2 else 1.0
        w8 = 1.0
        for uj, vj in zip(u, v):
            w8 *= math.comb(uj, vj)
        total += sign * w8 * multinomial_pmf(m, q, x - np.asarray(v))
    return total


def roos_approximator_pmf(rho, q, w: int, x) -> float:
    """Truncated expansion value at x; exact at w = n, possibly negative
    below that."""
    rows = _rows_of(rho)
    n = rows.shape[0]
    if w > n:
        raise ValueError("order cannot exceed the row count")
    coeffs = roos_coefficients(rows, q, w)
    val = 0.0
    for u, a in coeffs.items():
        if a == 0.0:
            continue
        val += a * _delta_multinomial(n - sum(u), q, x, u)
    return val


def roos_alpha(rho, q) -> float:
    """The contraction rate of the truncated expansion:
    e^(1/2) * sum_j sqrt((2*sum_i d_ij^2 + (sum_i d_ij)^2) / (2n q0 q_j))
    with d = rho - q. Below 1, the l1 error decays like alpha^(w+1)."""
    rows = _rows_of(rho)
    n, k = rows.shape
    q = np.asarray(q, dtype=np.float64).reshape(k)
    q0 = 1.0 - float(q.sum())
    if q0 <= 0.0:
        raise ValueError("invisible mass q0 must be positive")
    if n == 0:
        return 0.0
    d = rows - q
    total = 0.0
    for j in range(k):
        num = 2.0 * float((d[:, j] ** 2).sum()) + float(d[:, j].sum()) ** 2
        if num == 0.0:
            continue
        if q[j] <= 0.0:
            return float("inf")
        total += math.sqrt(num / (2.0 * n * q0 * q[j]))
    return math.exp(0.5) * total


def roos_l1_gap(rho, q, w: int) -> float:
    """l1 distance between the exact pmf and the order-w expansion, summed
    over the whole support."""
    from .core import gmd_pmf_exact

    rows = _rows_of(rho)
    n, k = rows.shape
    g = rho if isinstance(rho, GmdParams) else GmdParams(rows)
    exact = gmd_pmf_exact(g)
    gap = 0.0
    for x in _lattice(k, n):
        gap += abs(exact.pmf_at(x) - roos_approximator_pmf(rows, q, w, x))
    return gap
