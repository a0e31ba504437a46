"""Parameter rounding: move every matrix entry out of (0, c).

One pass fixes a coordinate pair (x, y): among rows whose x-entry is in
(0, c) and whose heaviest coordinate is y, a floor-preserving number of rows
keep exactly c in column x and the rest drop to 0, with column y absorbing
the difference so each row still sums to 1. Passes run for all ordered pairs;
since y-columns stay at or above 1/k - c >= c, later passes never undo
earlier ones, and the whole procedure is idempotent.

The Fork sampler is the two-branch equivalent of direct categorical
sampling used to reason about a single pass; it isolates the x/y coordinate
pair behind a 1/k coin.
"""

from dataclasses import dataclass

import numpy as np

from .core import ParamMatrix

__all__ = ["RoundingPlan", "round_parameters", "fork_sample"]


@dataclass(frozen=True)
class RoundingPlan:
    """Record of one (x, y) pass: which rows were touched and what they keep."""

    x: int
    y: int
    index_set: tuple
    retained: tuple
    floor: float

    def mass_shift(self) -> float:
        """Change applied to the column-x mass (bounded by the floor value)."""
        return len(self.retained) * self.floor - self._group_mass

    # populated at construction time by round_parameters
    _group_mass: float = 0.0


def round_parameters(pm: ParamMatrix, c: float, return_plans: bool = False):
    """Round every entry of the matrix out of the open interval (0, c).

    Requires c <= 1/(2k). Rows keep summing to 1; per pass, the column mass
    of the rounded coordinate moves by less than c. The result is a fixpoint:
    rounding again changes nothing.
    """
    k = pm.k
    if not (0.0 < c <= 1.0 / (2 * k) + 1e-15):
        raise ValueError(f"need 0 < c <= 1/(2k); got c={c}, k={k}")
    rows = pm.rows.copy()
    n = pm.n
    plans = []
    for x in range(k):
        for y in range(k):
            if y == x:
                continue
            if n == 0:
                continue
            heavy = np.argmax(rows, axis=1)  # first max: lexicographic ties
            in_range = (rows[:, x] > 0.0) & (rows[:, x] < c)
            group = np.nonzero(in_range & (heavy == y))[0]
            if group.size == 0:
                continue
            mass = float(rows[group, x].sum())
            keep = int(np.floor(mass / c + 1e-9))
            keep = min(keep, group.size)
            # retained set: largest x-entries first, ties by row index
            order = sorted(group, key=lambda i: (-rows[i, x], i))
            retained = set(int(i) for i in order[:keep])
            for i in group:
                new_x = c if int(i) in retained else 0.0
                rows[i, y] += rows[i, x] - new_x
                rows[i, x] = new_x
            if return_plans:
                plan = RoundingPlan(x=x, y=y,
                                    index_set=tuple(int(i) for i in group),
                                    retained=tuple(sorted(retained)),
                                    floor=c)
                object.__setattr__(plan, "_group_mass", mass)
                plans.append(plan)
    out = ParamMatrix(rows)
    if return_plans:
        return out, plans
    return out


def fork_sample(row, x: int, y: int, rng, size=None):
    """Sample a categorical index by the two-branch process.

    A 1/k coin decides the branch. Heads restricts the outcome to {x, y}
    with the x-probability amplified by k; tails excludes x and rescales the
    rest. Well defined when rho(x) <= 1/k and rho(x) + rho(y) >= 1/k, and
    then distributed exactly like a direct draw from the row.
    """
    rho = np.asarray(row, dtype=np.float64)
    k = rho.size
    if x == y or not (0 <= x < k) or not (0 <= y < k):
        raise ValueError("x and y must be distinct coordinates")
    if rho[x] > 1.0 / k + 1e-12:
        raise ValueError("rho(x) must be at most 1/k")
    if rho[x] + rho[y] < 1.0 / k - 1e-12:
        raise ValueError("rho(x) + rho(y) must be at least 1/k")

    heads = np.zeros(k)
    heads[x] = k * rho[x]
    heads[y] = 1.0 - k * rho[x]

    tails = (k / (k - 1.0)) * rho
    tails[x] = 0.0
    tails[y] = (k / (k - 1.0)) * (rho[x] + rho[y] - 1.0 / k)

    m = 1 if size is None else int(size)
    coin = rng.random(m) < 1.0 / k
    out = np.empty(m, dtype=np.int64)
    for probs, mask in ((heads, coin), (tails, ~coin)):
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        cum = np.cumsum(probs)
        cum /= cum[-1]
        out[mask] = np.searchsorted(cum, rng.random(cnt), side="right")
    out = np.minimum(out, k - 1)
    if size is None:
        return int(out[0])
    return out
