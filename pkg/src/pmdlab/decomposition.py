"""Split a PMD into a block discretized Gaussian plus a small leftover PMD.

Pipeline: round the parameters away from (0, c), partition rows by their
heaviest coordinate, group each partition's rows by support pattern into
size buckets, replace each bucket by a Gaussian with the exact same mean and
covariance (parameter level only; the CLT error is bookkept, not computed),
peel rows out of the smallest bucket until every live column is well
populated, and finally merge all per-group Gaussians through pivot swaps.

Every lossy step appends an upper-bound entry to a TV ledger. The bounds are
conservative and can exceed 1 at small scale; they are bookkeeping, not
measurements.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import (
    BlockGaussian,
    DecompositionConfig,
    GaussianBlock,
    ParamMatrix,
    StructuralDecomposition,
)
from .rounding import round_parameters

__all__ = [
    "FullBlockCovariance",
    "TvLedger",
    "bucketize",
    "clt_error_bound",
    "decompose",
    "extend_to_full_block",
    "gmd_moments",
    "merge_blocks",
    "min_dropped_eigenvalue",
    "partition_by_heaviest",
    "rounding_error_bound",
    "sparse_bin_split",
    "swap_pivot",
    "verify_chained_covariances",
]

_ZERO_COV = 1e-12


def clt_error_bound(n: int, k: int, sigma: float) -> float:
    """Bound on the TV gap between an (n,k) truncated-row sum and the
    discretized Gaussian with the same moments; sigma^2 is the smallest
    eigenvalue of the covariance. Pure formula, reporting only."""
    if n <= 0 or k <= 0:
        return 0.0
    if sigma <= 0:
        return float("inf")
    body = 2.2 * (3.1 + 0.83 * np.log(n)) ** (2.0 / 3.0)
    return float(k ** (4.0 / 3.0) / sigma ** (1.0 / 3.0) * body)


def rounding_error_bound(c: float, k: int) -> float:
    """Ledger entry for the parameter-rounding step."""
    u = c * k
    if u >= 1.0:
        raise ValueError("rounding bound needs c*k < 1")
    return float(5.0 * np.sqrt(c * k * np.log(1.0 / u)) * k * k)


@dataclass
class TvLedger:
    """Accumulated per-step TV-cost upper bounds."""

    entries: list = field(default_factory=list)

    def add(self, label: str, value: float):
        self.entries.append((label, float(value)))

    @property
    def total(self) -> float:
        return float(sum(v for _, v in self.entries))

    def as_dict(self):
        return {"entries": [{"label": l, "bound": v} for l, v in self.entries],
                "total": self.total}


# ---------------------------------------------------------------------------
# partitioning and bucketing
# ---------------------------------------------------------------------------

def partition_by_heaviest(pm: ParamMatrix):
    """Split rows into k groups by their largest entry (first index on ties).

    Within group j every row has its j-th entry >= 1/k.
    """
    if pm.n == 0:
        return [np.empty(0, dtype=np.int64) for _ in range(pm.k)]
    heavy = np.argmax(pm.rows, axis=1)
    return [np.nonzero(heavy == j)[0].astype(np.int64) for j in range(pm.k)]


def _level_of(size: int, t: float, gamma: float) -> int:
    if size < t:
        return 0
    return int(np.floor((size / t) ** (1.0 / gamma) + 1e-12))


def bucketize(rows: np.ndarray, group: np.ndarray, heavy: int,
              t: float, gamma: float):
    """Group a partition's rows by support pattern, then bucket the patterns
    by size: a pattern with s rows lands in the level l with
    l^gamma * t <= s < (l+1)^gamma * t.

    Returns {level: {pattern(frozenset of columns != heavy): index array}}.
    """
    patterns = {}
    for i in group:
        pat = frozenset(int(j) for j in np.nonzero(rows[i] > 0)[0]
                        if j != heavy)
        patterns.setdefault(pat, []).append(int(i))
    out = {}
    for pat, idx in patterns.items():
        level = _level_of(len(idx), t, gamma)
        out.setdefault(level, {})[pat] = np.asarray(sorted(idx), dtype=np.int64)
    return out


def sparse_bin_split(rows: np.ndarray, b0: np.ndarray, heavy: int, t: float):
    """Partition the level-0 rows into a dense part and a small leftover.

    Repeatedly find a column (other than ``heavy``) whose nonzero count among
    the remaining rows is positive but below t, and move those rows to the
    leftover. Each column triggers at most once, so the leftover holds fewer
    than k*t rows; in the dense part every live column has >= t nonzeros.
    """
    k = rows.shape[1]
    remaining = [int(i) for i in b0]
    leftover = []
    cols = [j for j in range(k) if j != heavy]
    changed = True
    while changed and remaining:
        changed = False
        for j in cols:
            nz = [i for i in remaining if rows[i, j] > 0]
            if 0 < len(nz) < t:
                leftover.extend(nz)
                remaining = [i for i in remaining if rows[i, j] <= 0]
                changed = True
    if len(leftover) > k * t:
        # defensive only: the loop moves under t rows per column. Keep the
        # most common support pattern dense and push everything else out.
        buckets = {}
        for i in b0:
            pat = frozenset(int(j) for j in np.nonzero(rows[i] > 0)[0]
                            if j != heavy)
            buckets.setdefault(pat, []).append(int(i))
        best = max(buckets.values(), key=len)
        remaining = best
        leftover = [i for i in b0 if int(i) not in set(best)]
    return (np.asarray(sorted(remaining), dtype=np.int64),
            np.asarray(sorted(leftover), dtype=np.int64))


# ---------------------------------------------------------------------------
# moments and block algebra
# ---------------------------------------------------------------------------

def gmd_moments(rows: np.ndarray, idx, dropped: int):
    """Exact mean and covariance of the truncated-row sum over ``idx``.

    Coordinates are all columns except ``dropped``, in ascending order.
    The covariance is the sum of per-row crv covariances.
    """
    k = rows.shape[1]
    coords = [j for j in range(k) if j != dropped]
    sub = rows[np.asarray(idx, dtype=np.int64)][:, coords]
    mean = sub.sum(axis=0)
    cov = np.diag(mean) - sub.T @ sub
    return mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class FullBlockCovariance:
    """A block's moments with the pivot coordinate reinstated.

    The covariance rows sum to zero (the all-ones vector is in the kernel),
    so dropping any one coordinate gives a valid pivot choice.
    """

    coords: tuple
    mean: np.ndarray
    cov: np.ndarray
    total: int

    def __post_init__(self):
        d = len(self.coords)
        mean = np.asarray(self.mean, dtype=np.float64).reshape(d)
        cov = np.asarray(self.cov, dtype=np.float64).reshape(d, d)
        scale = max(1.0, float(np.abs(cov).max()) if d else 1.0)
        if d and np.abs(cov.sum(axis=1)).max() > 1e-9 * scale:
            raise ValueError("full covariance rows must sum to zero")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def drop(self, pivot: int) -> GaussianBlock:
        if pivot not in self.coords:
            raise ValueError(f"coordinate {pivot} not in block {self.coords}")
        pos = self.coords.index(pivot)
        keep = [p for p in range(len(self.coords)) if p != pos]
        return GaussianBlock(self.coords, pivot, self.total,
                             self.mean[keep], self.cov[np.ix_(keep, keep)])


def extend_to_full_block(block: GaussianBlock) -> FullBlockCovariance:
    """Reinstate the pivot row/column so that all covariance rows sum to 0
    and the pivot mean completes the total."""
    coords = block.coords
    d = len(coords)
    pos = coords.index(block.pivot)
    keep = [p for p in range(d) if p != pos]
    cov = np.zeros((d, d))
    cov[np.ix_(keep, keep)] = block.cov
    colsum = block.cov.sum(axis=0)
    cov[pos, keep] = -colsum
    cov[keep, pos] = -colsum
    cov[pos, pos] = block.cov.sum()
    mean = np.zeros(d)
    mean[keep] = block.mean
    mean[pos] = block.total - block.mean.sum()
    return FullBlockCovariance(coords, mean, cov, block.total)


def swap_pivot(block: GaussianBlock, new_pivot: int):
    """Re-express the block with a different pivot coordinate.

    Parameters move exactly (through the zero-row-sum extension); the
    discretization orders differ, which costs at most d/(2*sigma) in TV,
    where sigma^2 is the smallest eigenvalue of the retained covariance and
    d the number of block coordinates. Returns (block, bookkept cost).
    """
    if new_pivot not in block.coords:
        raise ValueError(f"coordinate {new_pivot} not in block {block.coords}")
    if new_pivot == block.pivot:
        return block, 0.0
    swapped = extend_to_full_block(block).drop(new_pivot)
    if swapped.cov.size == 0 or np.abs(swapped.cov).max() <= _ZERO_COV:
        return swapped, 0.0
    sig2 = float(np.linalg.eigvalsh(swapped.cov).min())
    if sig2 <= 0:
        return swapped, float("inf")
    return swapped, len(block.coords) / (2.0 * np.sqrt(sig2))


def _extended_variances(block: GaussianBlock, coords):
    """Variance of the block along each coordinate in ``coords`` (pivot
    direction carries the summed covariance)."""
    out = np.zeros(len(coords))
    frees = block.frees
    for pos, c in enumerate(coords):
        if c == block.pivot:
            out[pos] = block.cov.sum()
        elif c in frees:
            j = frees.index(c)
            out[pos] = block.cov[j, j]
    return np.clip(out, 0.0, None)


def merge_blocks(b1: GaussianBlock, b2: GaussianBlock):
    """Add two same-pivot blocks: coordinate union, summed moments and totals.

    The bookkept TV cost is d/(2*sigma) with sigma = min over involved free
    directions of the larger of the two standard deviations, and d the count
    of those directions. Merging with a deterministic block is free.
    """
    if b1.pivot != b2.pivot:
        raise ValueError("blocks must share a pivot to merge")
    pivot = b1.pivot
    coords = tuple(sorted(set(b1.coords) | set(b2.coords)))
    frees = [c for c in coords if c != pivot]
    d = len(frees)
    mean = np.zeros(d)
    cov = np.zeros((d, d))
    for b in (b1, b2):
        pos = [frees.index(c) for c in b.frees]
        mean[pos] += b.mean
        cov[np.ix_(pos, pos)] += b.cov
    merged = GaussianBlock(coords, pivot, b1.total + b2.total, mean, cov)

    deterministic = any(b.cov.size == 0 or np.abs(b.cov).max() <= _ZERO_COV
                        for b in (b1, b2))
    if deterministic:
        return merged, 0.0
    v1 = _extended_variances(b1, frees)
    v2 = _extended_variances(b2, frees)
    best = np.maximum(v1, v2)
    live = best > 0
    if not live.any():
        return merged, 0.0
    sigma = float(np.sqrt(best[live].min()))
    return merged, int(live.sum()) / (2.0 * sigma)


def min_dropped_eigenvalue(cov: np.ndarray) -> float:
    """Smallest eigenvalue over all single-coordinate deletions of ``cov``."""
    d = cov.shape[0]
    if d <= 1:
        return float("inf")
    best = np.inf
    for j in range(d):
        keep = [p for p in range(d) if p != j]
        best = min(best, float(np.linalg.eigvalsh(cov[np.ix_(keep, keep)]).min()))
    return best


def verify_chained_covariances(fulls, lam: float) -> bool:
    """Check the hypotheses under which summed zero-row-sum covariances keep
    a dropped-coordinate eigenvalue floor of lam/(2k^3): each component has
    the all-ones kernel, some pivot deletion with eigenvalues >= lam, and a
    coordinate shared with the union of its predecessors."""
    seen = set()
    for pos, f in enumerate(fulls):
        d = len(f.coords)
        if d and np.abs(f.cov.sum(axis=1)).max() > 1e-9 * max(1.0, np.abs(f.cov).max()):
            return False
        ok = False
        for j in range(d):
            keep = [p for p in range(d) if p != j]
            sub = f.cov[np.ix_(keep, keep)]
            if sub.size == 0 or np.linalg.eigvalsh(sub).min() >= lam - 1e-12:
                ok = True
                break
        if not ok:
            return False
        if pos > 0 and not (seen & set(f.coords)):
            return False
        seen |= set(f.coords)
    return True


# ---------------------------------------------------------------------------
# the full pipeline
# ---------------------------------------------------------------------------

def _bucket_block(rows: np.ndarray, idx: np.ndarray, heavy: int):
    """Gaussian block with the exact moments of the rows in ``idx``, over the
    live columns plus the pivot. Returns (block, live column count)."""
    k = rows.shape[1]
    sub = rows[idx]
    live = [j for j in range(k) if j != heavy and sub[:, j].sum() > 0]
    coords = tuple(sorted(live + [heavy]))
    if not live:
        return GaussianBlock(coords, heavy, len(idx),
                             np.zeros(0), np.zeros((0, 0))), 0
    r = sub[:, live]
    mean = r.sum(axis=0)
    cov = np.diag(mean) - r.T @ r
    return GaussianBlock(coords, heavy, len(idx), mean,
                         0.5 * (cov + cov.T)), len(live)


def decompose(pm: ParamMatrix, cfg: DecompositionConfig):
    """Build the Gaussian-plus-sparse form of a PMD.

    Returns (StructuralDecomposition, TvLedger). The sparse part keeps at
    most k^2*t of the rounded rows; the Gaussian part carries the exact
    moments of everything else, merged into disjoint blocks.
    """
    k = pm.k
    cfg.validate_for(k)
    ledger = TvLedger()
    rounded = round_parameters(pm, cfg.c)
    ledger.add("rounding", rounding_error_bound(cfg.c, k))

    sparse_rows = []
    group_blocks = []
    groups = partition_by_heaviest(rounded)
    for heavy in range(k):
        g = groups[heavy]
        if g.size == 0:
            continue
        buckets = bucketize(rounded.rows, g, heavy, cfg.t, cfg.gamma)
        candidate = None
        for level in sorted(buckets, reverse=True):
            idx = np.concatenate(list(buckets[level].values()))
            idx.sort()
            if level == 0:
                idx, leftover = sparse_bin_split(rounded.rows, idx, heavy, cfg.t)
                sparse_rows.extend(int(i) for i in leftover)
                if idx.size == 0:
                    continue
            block, nlive = _bucket_block(rounded.rows, idx, heavy)
            if nlive:
                sig2 = float(np.linalg.eigvalsh(block.cov).min())
                ledger.add(f"clt[group {heavy}, level {level}]",
                           clt_error_bound(len(idx), nlive, np.sqrt(max(sig2, 0.0))))
            if candidate is None:
                candidate = block
            else:
                candidate, cost = merge_blocks(candidate, block)
                ledger.add(f"merge[group {heavy}]", cost)
        if candidate is not None:
            group_blocks.append(candidate)

    # cross-group phase: while two blocks overlap, swap both pivots to the
    # first shared coordinate and add them
    blocks = group_blocks
    changed = True
    while changed:
        changed = False
        for a in range(len(blocks)):
            for b in range(a + 1, len(blocks)):
                shared = sorted(set(blocks[a].coords) & set(blocks[b].coords))
                if not shared:
                    continue
                piv = shared[0]
                ba, cost_a = swap_pivot(blocks[a], piv)
                if cost_a:
                    ledger.add(f"swap[{piv}]", cost_a)
                bb, cost_b = swap_pivot(blocks[b], piv)
                if cost_b:
                    ledger.add(f"swap[{piv}]", cost_b)
                merged, cost = merge_blocks(ba, bb)
                ledger.add("merge[cross]", cost)
                blocks[a] = merged
                del blocks[b]
                changed = True
                break
            if changed:
                break

    if cfg.theory_mode:
        floor = cfg.t * cfg.c / (2.0 * k ** 4)
        for b in blocks:
            if b.cov.size and np.linalg.eigvalsh(b.cov).min() < floor:
                raise ValueError("block eigenvalue fell below the theory floor")

    sparse_rows.sort()
    sparse = ParamMatrix(rounded.rows[sparse_rows]) if sparse_rows else \
        ParamMatrix(np.zeros((0, k)))
    gaussian = BlockGaussian(k, blocks)
    cap = int(np.ceil(cfg.t)) * k * k
    return StructuralDecomposition(gaussian, sparse, sparse_cap=cap), ledger
