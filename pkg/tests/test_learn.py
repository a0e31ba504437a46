"""End-to-end learners: robust 1-D fits, the CDF gate, the sparse and
shifted-Gaussian sub-learners, and the two top-level pipelines."""
import json
import math

import numpy as np
import pytest

from pmdlab.core import (
    GaussianPlusSparseHypothesis,
    ParamMatrix,
    SiirvFormHypothesis,
    SparsePmf,
    TabulatedHypothesis,
    pmd_pmf_exact,
    siirv_pmf_exact,
    tv_distance,
)
from pmdlab.learn import (
    LearnConfig,
    empirical_cdf_check,
    learn_heavy,
    learn_pmd,
    learn_siirv,
    learn_sparse,
    median_iqr_fit,
)
from pmdlab.selection import TOURNAMENT_FAILURE

NORMAL_IQR = 1.3489795003921634


def _pmd_oracle(pm, rng):
    truth = pmd_pmf_exact(pm)

    def oracle(m):
        return truth.sample(rng, m)

    return oracle, truth


def _value_oracle(pm, rng):
    truth = siirv_pmf_exact(pm)

    def oracle(m):
        return truth.sample(rng, m)[:, 0]

    return oracle, truth


# ---------------------------------------------------------- median_iqr_fit


def test_median_iqr_small_example():
    mu, sigma = median_iqr_fit([-1, 0, 0, 1])
    assert mu == 0.0
    # quartiles sit at -0.5 and 0.5, so the IQR is exactly 1
    assert sigma == pytest.approx(1.0 / NORMAL_IQR, rel=1e-15)


def test_median_iqr_standard_normal_battery():
    hits = 0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        mu, sigma = median_iqr_fit(rng.normal(0.0, 1.0, 100_000))
        hits += (abs(mu) <= 0.02) and (abs(sigma - 1.0) <= 0.02)
    assert hits >= 95


def test_median_iqr_affine_equivariant_exact():
    rng = np.random.default_rng(5)
    s = rng.integers(-50, 50, size=101).astype(np.float64)
    mu, sigma = median_iqr_fit(s)
    # power-of-two scale and integer data keep every step exact
    mu2, sigma2 = median_iqr_fit(-2.0 * s + 8.0)
    assert mu2 == -2.0 * mu + 8.0
    assert sigma2 == 2.0 * sigma


def test_median_iqr_affine_equivariant_general():
    rng = np.random.default_rng(6)
    s = rng.normal(3.0, 2.0, 257)
    mu, sigma = median_iqr_fit(s)
    mu2, sigma2 = median_iqr_fit(-2.5 * s + 7.3)
    assert mu2 == pytest.approx(-2.5 * mu + 7.3, rel=1e-12)
    assert sigma2 == pytest.approx(2.5 * sigma, rel=1e-12)


def test_median_iqr_needs_four_samples():
    with pytest.raises(ValueError):
        median_iqr_fit([1.0, 2.0, 3.0])


# ------------------------------------------------------ empirical_cdf_check


def test_cdf_check_own_empirical_is_zero():
    vals = np.array([0, 0, 1, 2, 2, 2, 5])
    emp = SparsePmf(1, {(0,): 2 / 7, (1,): 1 / 7, (2,): 3 / 7, (5,): 1 / 7})
    chk = empirical_cdf_check(vals, emp, eps=0.05, delta=0.1)
    assert chk.d_k == 0.0
    assert chk.passed


def test_cdf_check_flags_large_shift():
    vals = np.arange(50)
    far = SparsePmf(1, {(10 ** 6,): 1.0})
    chk = empirical_cdf_check(vals, far, eps=0.1, delta=0.1)
    assert chk.d_k >= 0.99
    assert not chk.passed


def test_cdf_check_dkw_battery():
    ref = siirv_pmf_exact(ParamMatrix([[0.5, 0.5]] * 20))
    eps, delta = 0.15, 0.2
    m = math.ceil(math.log(2.0 / delta) / (2.0 * eps ** 2))
    assert m == 52
    passes = 0
    for trial in range(50):
        rng = np.random.default_rng(trial)
        vals = ref.sample(rng, m)[:, 0]
        chk = empirical_cdf_check(vals, ref, eps, delta)
        assert chk.dkw_bound == pytest.approx(
            2.0 * math.exp(-2.0 * m * eps ** 2))
        passes += chk.passed
    # DKW puts the per-trial failure rate under 2 exp(-2 m eps^2) < 2 delta
    assert passes >= int(50 * (1.0 - 2.0 * delta))


# --------------------------------------------------------------- learn_heavy


def test_learn_heavy_scale_one_gaussian_fit():
    rng = np.random.default_rng(2)
    vals = np.round(rng.normal(50.0, 10.0, 20_000)).astype(np.int64)
    h = learn_heavy(vals, 1, eps=0.1, delta=0.1)
    assert isinstance(h, SiirvFormHypothesis)
    assert h.scale == 1
    assert np.allclose(h.residue, [1.0])
    assert abs(h.mu - 50.0) <= 1.0
    assert abs(h.sigma - 10.0) <= 1.0


def test_learn_heavy_even_samples_residue():
    rng = np.random.default_rng(3)
    vals = 2 * np.round(rng.normal(30.0, 5.0, 5_000)).astype(np.int64)
    h = learn_heavy(vals, 2, eps=0.1, delta=0.1)
    assert np.allclose(h.residue, [1.0, 0.0])


def test_learn_heavy_mod_structure():
    pm = ParamMatrix([[0.5, 0.0, 0.5]] * 100 + [[2 / 3, 1 / 3, 0.0]])
    truth = siirv_pmf_exact(pm)
    rng = np.random.default_rng(4)
    vals = truth.sample(rng, 4_000)[:, 0]
    h = learn_heavy(vals, 2, eps=0.1, delta=0.1)
    assert tv_distance(h.support_pmf(), truth) <= 0.15
    # residue frequencies track the Bernoulli(1/3) summand
    assert abs(h.residue[0] - 2 / 3) <= 0.05


def test_learn_heavy_rejects_bad_scale():
    with pytest.raises(ValueError):
        learn_heavy([1, 2, 3, 4], 0, eps=0.1, delta=0.1)


# -------------------------------------------------------------- learn_sparse


def test_learn_sparse_constant_recovers_point_mass():
    out = learn_sparse(np.full(400, 42), 3, eps=0.1, delta=0.1,
                       rng=np.random.default_rng(0))
    assert out.support_pmf().table == {(42,): 1.0}


def test_learn_sparse_three_point_support_window():
    rng = np.random.default_rng(7)
    vals = rng.integers(7, 10, size=4_000)
    out = learn_sparse(vals, 3, eps=0.1, delta=0.1, rng=rng)
    support = sorted(pt[0] for pt in out.support_pmf().table)
    assert 0 <= support[0] and support[-1] <= 20
    truth = SparsePmf(1, {(7,): 1 / 3, (8,): 1 / 3, (9,): 1 / 3})
    # the half-grid candidates cannot express exact thirds; 1/6 is the
    # best any of them achieves
    assert tv_distance(out.support_pmf(), truth) <= 1 / 6 + 1e-9


def test_learn_sparse_recovers_shifted_binomial():
    rng = np.random.default_rng(7)
    vals = rng.binomial(30, 0.5, size=6_000) + 1_000
    log = {}
    out = learn_sparse(vals, 2, eps=0.1, delta=0.1, rng=rng, log=log)
    truth = siirv_pmf_exact(ParamMatrix([[0.5, 0.5]] * 30)).shift((1_000,))
    assert tv_distance(out.support_pmf(), truth) <= 0.15
    lo = min(pt[0] for pt in out.support_pmf().table)
    assert abs(lo - 1_000) <= 3
    assert log["hypotheses"] >= log["candidates"]


def test_learn_sparse_rejects_empty():
    with pytest.raises(ValueError):
        learn_sparse(np.zeros((0,), dtype=np.int64), 2, eps=0.1, delta=0.1)


# --------------------------------------------------------------- learn_siirv


def test_learn_siirv_poisson_binomial():
    pm = ParamMatrix([[1.0 - p, p] for p in np.linspace(0.2, 0.8, 500)])
    rng = np.random.default_rng(11)
    oracle, truth = _value_oracle(pm, rng)
    log = {}
    out = learn_siirv(oracle, 2, eps=0.1, delta=0.1, rng=rng, log=log)
    assert out is not TOURNAMENT_FAILURE
    assert tv_distance(out.support_pmf(), truth) <= 0.15
    assert log["cdf_gate"]["passed"]


def test_learn_siirv_mod_structure():
    pm = ParamMatrix([[0.5, 0.0, 0.5]] * 100 + [[2 / 3, 1 / 3, 0.0]])
    for seed in range(2):
        rng = np.random.default_rng(seed)
        oracle, truth = _value_oracle(pm, rng)
        out = learn_siirv(oracle, 3, eps=0.1, delta=0.1, rng=rng)
        assert tv_distance(out.support_pmf(), truth) <= 0.15
        assert isinstance(out, SiirvFormHypothesis)
        assert out.scale == 2
        # residue distribution lands within tv 0.05 of (2/3, 1/3)
        gap = 0.5 * (abs(out.residue[0] - 2 / 3) + abs(out.residue[1] - 1 / 3))
        assert gap <= 0.05


def test_learn_siirv_constant_is_point_mass():
    rng = np.random.default_rng(21)

    def oracle(m):
        return np.full(m, 7, dtype=np.int64)

    out = learn_siirv(oracle, 2, eps=0.1, delta=0.1, rng=rng)
    table = out.support_pmf().table
    assert table.get((7,), 0.0) >= 0.999


def test_learn_siirv_variance_routing():
    # low variance: a single three-valued summand, the tabulated sparse
    # hypothesis should win essentially always
    low = siirv_pmf_exact(ParamMatrix([[0.25, 0.5, 0.25]]))
    sparse_wins = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)

        def oracle(m):
            return low.sample(rng, m)[:, 0]

        out = learn_siirv(oracle, 3, eps=0.1, delta=0.1, rng=rng)
        sparse_wins += isinstance(out, TabulatedHypothesis)
    assert sparse_wins >= 8

    # high variance: the mod-structure sum, the scale-2 Gaussian form wins
    pm = ParamMatrix([[0.5, 0.0, 0.5]] * 100 + [[2 / 3, 1 / 3, 0.0]])
    heavy_wins = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        oracle, _ = _value_oracle(pm, rng)
        out = learn_siirv(oracle, 3, eps=0.1, delta=0.1, rng=rng)
        heavy_wins += isinstance(out, SiirvFormHypothesis)
    assert heavy_wins >= 8


def test_learn_siirv_deterministic_given_seed():
    pm = ParamMatrix([[0.5, 0.0, 0.5]] * 60 + [[0.5, 0.5, 0.0]])

    def run():
        rng = np.random.default_rng(33)
        oracle, _ = _value_oracle(pm, rng)
        log = {}
        out = learn_siirv(oracle, 3, eps=0.1, delta=0.1, rng=rng, log=log)
        return out.describe(), log["tournament"]["scores"]

    d1, s1 = run()
    d2, s2 = run()
    assert d1 == d2
    assert s1 == s2


def test_learn_siirv_rejects_k_below_two():
    with pytest.raises(ValueError):
        learn_siirv(lambda m: np.zeros(m, dtype=np.int64), 1,
                    eps=0.1, delta=0.1)


# ----------------------------------------------------------------- learn_pmd


def test_learn_pmd_deterministic_exact():
    pm = ParamMatrix([[1.0, 0.0, 0.0]] * 3 + [[0.0, 0.0, 1.0]] * 2)
    rng = np.random.default_rng(1)
    oracle, truth = _pmd_oracle(pm, rng)
    cfg = LearnConfig(eps=0.1, delta=0.1)
    out = learn_pmd(oracle, 3, cfg, rng=rng)
    assert tv_distance(out.support_pmf(), truth) == 0.0


def test_learn_pmd_binomial():
    pm = ParamMatrix([[0.5, 0.5]] * 200)
    rng = np.random.default_rng(2)
    oracle, truth = _pmd_oracle(pm, rng)
    cfg = LearnConfig(eps=0.1, delta=0.1)
    log = {}
    out = learn_pmd(oracle, 2, cfg, rng=rng, log=log)
    assert out is not TOURNAMENT_FAILURE
    assert tv_distance(out.support_pmf(), truth) <= 0.15
    assert log["oracle_draws_total"] == 1 + log["moment_draws"] + \
        log["tournament"]["x_draws"]


def test_learn_pmd_two_group():
    pm = ParamMatrix([[0.45, 0.55, 0.0]] * 100 + [[0.0, 0.0, 1.0]] * 50)
    rng = np.random.default_rng(3)
    oracle, truth = _pmd_oracle(pm, rng)
    out = learn_pmd(oracle, 3, LearnConfig(eps=0.1, delta=0.1), rng=rng)
    tv = tv_distance(out.support_pmf(), truth)
    blocks = len(out.sd.gaussian.blocks) \
        if isinstance(out, GaussianPlusSparseHypothesis) else 0
    assert tv <= 0.15 or blocks >= 2


def test_learn_pmd_guess_accounting():
    pm = ParamMatrix([[0.5, 0.5]] * 100)
    rng = np.random.default_rng(4)
    oracle, _ = _pmd_oracle(pm, rng)
    cfg = LearnConfig(eps=0.1, delta=0.1, paranoid=True)
    log = {}
    out = learn_pmd(oracle, 2, cfg, rng=rng, log=log)
    assert out is not TOURNAMENT_FAILURE
    assert log["mean_pruned"] == 0
    assert log["assembled"] == sum(s["assembled"] for s in log["structures"])
    assert not log["truncated"]
    assert log["tournament"]["n_hypotheses"] == log["assembled"]
    # every structure record carries its factor counts
    for srec in log["structures"]:
        assert len(srec["block_factors"]) == len(srec["blocks"])
    assert json.dumps(log, default=float)


def test_learn_pmd_paranoid_keeps_at_least_as_many():
    pm = ParamMatrix([[0.5, 0.5]] * 100)

    def run(paranoid):
        rng = np.random.default_rng(5)
        oracle, _ = _pmd_oracle(pm, rng)
        log = {}
        learn_pmd(oracle, 2,
                  LearnConfig(eps=0.1, delta=0.1, paranoid=paranoid),
                  rng=rng, log=log)
        return log["assembled"]

    assert run(True) >= run(False)


def test_learn_pmd_deterministic_given_seed():
    pm = ParamMatrix([[0.5, 0.5]] * 80)

    def run():
        rng = np.random.default_rng(6)
        oracle, _ = _pmd_oracle(pm, rng)
        log = {}
        out = learn_pmd(oracle, 2, LearnConfig(eps=0.1, delta=0.1),
                        rng=rng, log=log)
        return out.describe(), log["tournament"]["winner"]

    assert run() == run()


def test_learn_pmd_first_draw_logged():
    pm = ParamMatrix([[0.3, 0.7]] * 50)
    rng = np.random.default_rng(7)
    oracle, _ = _pmd_oracle(pm, rng)
    log = {}
    learn_pmd(oracle, 2, LearnConfig(eps=0.1, delta=0.1), rng=rng, log=log)
    first = np.asarray(log["first_sample"])
    assert first.shape == (2,)
    assert first.sum() == 50


def test_learn_config_validation():
    with pytest.raises(ValueError):
        LearnConfig(eps=0.0, delta=0.1)
    with pytest.raises(ValueError):
        LearnConfig(eps=0.1, delta=1.5)
    with pytest.raises(ValueError):
        LearnConfig(eps=0.1, delta=0.1, sparse_cap=-1)


def test_learn_config_theory_report():
    cfg = LearnConfig(eps=0.2, delta=0.1)
    rep = cfg.theory_report(3)
    assert rep["moment_samples"] == math.ceil(40.0 * 81 / 0.04)
    assert rep["siirv_variance_threshold"] > 1e6
    assert cfg.resolved_moment_samples(3) == max(
        500, math.ceil(40.0 * 81 / 0.04))
