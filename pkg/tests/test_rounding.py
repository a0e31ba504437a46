import numpy as np
import pytest

from pmdlab.core import ParamMatrix, pmd_pmf_exact, tv_distance
from pmdlab.rounding import fork_sample, round_parameters


def random_matrix(n, k, rng, alpha=1.0):
    return ParamMatrix(rng.dirichlet(np.full(k, alpha), size=n))


def test_rejects_large_floor():
    pm = ParamMatrix(np.full((4, 3), 1.0 / 3))
    with pytest.raises(ValueError):
        round_parameters(pm, 0.2)  # 1/(2k) = 1/6


def test_identity_when_already_clean():
    rows = np.array([[0.5, 0.5, 0.0], [0.2, 0.3, 0.5], [0.1, 0.1, 0.8]])
    pm = ParamMatrix(rows)
    out = round_parameters(pm, 0.05)
    assert np.array_equal(out.rows, rows)


def test_floor_count_in_single_group():
    # five rows put 0.005 each in column 0 (total 0.025); floor(0.025/0.01)=2
    # of them keep exactly 0.01 and the other three drop to zero.
    rows = np.zeros((5, 3))
    rows[:, 0] = 0.005
    rows[:, 1] = 0.9
    rows[:, 2] = 0.095
    pm = ParamMatrix(rows)
    out, plans = round_parameters(pm, 0.01, return_plans=True)
    col = out.rows[:, 0]
    assert np.sum(np.isclose(col, 0.01)) == 2
    assert np.sum(col == 0.0) == 3
    assert len(plans) == 1
    assert plans[0].x == 0 and plans[0].y == 1
    assert len(plans[0].retained) == 2
    np.testing.assert_allclose(out.rows.sum(axis=1), 1.0, atol=1e-12)


def test_retained_prefers_largest_entries():
    rows = np.zeros((4, 3))
    rows[:, 0] = [0.004, 0.009, 0.002, 0.009]
    rows[:, 1] = 0.9
    rows[:, 2] = 1.0 - rows[:, 0] - rows[:, 1]
    pm = ParamMatrix(rows)
    out, plans = round_parameters(pm, 0.01, return_plans=True)
    # mass 0.024 -> keep 2; the two 0.009 rows win, tie broken by index
    assert plans[0].retained == (1, 3)
    assert np.isclose(out.rows[1, 0], 0.01)
    assert np.isclose(out.rows[3, 0], 0.01)
    assert out.rows[0, 0] == 0.0 and out.rows[2, 0] == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_no_entries_left_in_band(seed):
    rng = np.random.default_rng(seed)
    pm = random_matrix(30, 4, rng, alpha=0.3)
    c = 1.0 / 8
    out = round_parameters(pm, c)
    band = (out.rows > 0) & (out.rows < c - 1e-12)
    assert not band.any()
    np.testing.assert_allclose(out.rows.sum(axis=1), 1.0, atol=1e-10)
    assert out.rows.min() >= 0.0


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_idempotent(seed):
    rng = np.random.default_rng(seed)
    pm = random_matrix(25, 3, rng, alpha=0.4)
    once = round_parameters(pm, 0.05)
    twice = round_parameters(once, 0.05)
    assert np.array_equal(once.rows, twice.rows)


def test_column_mass_shift_bounded_per_pass():
    rng = np.random.default_rng(11)
    pm = random_matrix(40, 4, rng, alpha=0.25)
    c = 0.1
    out, plans = round_parameters(pm, c, return_plans=True)
    assert plans, "expected at least one nontrivial pass"
    for plan in plans:
        assert abs(plan.mass_shift()) <= c + 1e-12
    # net column drift is at most (k-1) passes touching each column as x
    for x in range(4):
        drift = abs(out.rows[:, x].sum() - pm.rows[:, x].sum())
        assert drift <= 3 * c + 1e-9


def test_row_sums_and_range_preserved():
    rng = np.random.default_rng(12)
    pm = random_matrix(60, 5, rng, alpha=0.2)
    out = round_parameters(pm, 0.05)
    np.testing.assert_allclose(out.rows.sum(axis=1), 1.0, atol=1e-10)
    assert out.rows.min() >= 0.0
    assert out.rows.max() <= 1.0 + 1e-12


def test_tv_decays_with_floor():
    rng = np.random.default_rng(2024)
    pm = random_matrix(50, 3, rng, alpha=0.35)
    base = pmd_pmf_exact(pm)
    tvs = []
    for c in (0.05, 0.02, 0.01, 0.005):
        rounded = round_parameters(pm, c)
        tvs.append(tv_distance(base, pmd_pmf_exact(rounded)))
    for a, b in zip(tvs, tvs[1:]):
        assert b <= a + 1e-12
    # recorded from a reference run; guards against regressions in the pass
    # order or retained-set selection
    ref = [0.009922, 0.004519, 0.002673, 0.000848]
    np.testing.assert_allclose(tvs, ref, atol=5e-5)


def test_fork_validates_preconditions():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        fork_sample([0.5, 0.3, 0.2], 0, 1, rng)  # rho(x) > 1/k
    with pytest.raises(ValueError):
        fork_sample([0.05, 0.05, 0.9], 0, 1, rng)  # rho(x)+rho(y) < 1/k
    with pytest.raises(ValueError):
        fork_sample([0.2, 0.3, 0.5], 1, 1, rng)


def test_fork_zero_entry_never_drawn():
    rng = np.random.default_rng(1)
    draws = fork_sample([0.0, 0.6, 0.4], 0, 1, rng, size=20000)
    assert not (draws == 0).any()


def test_fork_matches_direct_sampling():
    rng = np.random.default_rng(7)
    row = np.array([0.08, 0.55, 0.37])
    draws = fork_sample(row, 0, 1, rng, size=200000)
    emp = np.bincount(draws, minlength=3) / draws.size
    assert 0.5 * np.abs(emp - row).sum() < 0.01


def test_fork_scalar_mode():
    rng = np.random.default_rng(3)
    v = fork_sample([0.1, 0.5, 0.4], 0, 1, rng)
    assert isinstance(v, int) and 0 <= v < 3
