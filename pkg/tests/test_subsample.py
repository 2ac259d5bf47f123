import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ember.errors import DataError
from ember.grid_data import PixelDayTable
from ember.subsample import (SubsampleConfig, inclusion_probabilities, stratified_subsample,
                             weighted_poisson_negloglik)

from .oracles import inclusion_enumeration


def _table(cells=4, years=(2010, 2011), days=40, seed=0, pos_rate=0.05, const_fwi=False):
    rng = np.random.default_rng(seed)
    rows = []
    for c in range(cells):
        for y in years:
            for d in range(days):
                rows.append((c, y * 1000 + d, y, 6 + d % 5))
    cell, day, year, month = map(np.array, zip(*rows))
    n = len(cell)
    fwi = np.full(n, 3.0) if const_fwi else rng.gamma(2.0, 8.0, n)
    count = (rng.uniform(size=n) < pos_rate).astype(int)
    return PixelDayTable(cell_id=cell, day_index=day, year=year, month=month,
                         x_km=cell * 8.0, y_km=np.zeros(n), fwi=fwi, fa=np.full(n, 50.0),
                         count=count, volume=np.full(n, 64.0))


def test_only_positive_counts():
    t = _table(pos_rate=1.0)
    s = stratified_subsample(t)
    assert np.array_equal(s.rows, np.arange(len(t)))
    assert np.all(s.weight == 1.0)


def test_weight_reciprocal():
    t = _table()
    s = stratified_subsample(t)
    assert np.allclose(s.weight * s.p_incl, 1.0, rtol=0, atol=1e-15)
    assert 1 / 0.9 == pytest.approx(1.1111111111, rel=1e-10)


def test_uniform_fallback():
    t = _table(cells=1, years=(2010,), days=100, pos_rate=0.0, const_fwi=True)
    s = stratified_subsample(t, SubsampleConfig(k_per_stratum=2))
    assert len(s) == 2
    assert np.all(s.p_incl == 2 / 100)
    assert np.all(s.weight == 50.0)


def test_small_strata_kept_whole():
    t = _table(cells=2, years=(2010,), days=2, pos_rate=0.0)
    s = stratified_subsample(t, SubsampleConfig(k_per_stratum=2))
    assert len(s) == 4 and np.all(s.p_incl == 1.0) and np.all(s.weight == 1.0)


def test_positive_rows_always_present_and_reproducible():
    t = _table(seed=3, pos_rate=0.1)
    pos = set(np.flatnonzero(t.count > 0))
    a = stratified_subsample(t, SubsampleConfig(seed=9))
    b = stratified_subsample(t, SubsampleConfig(seed=9))
    c = stratified_subsample(t, SubsampleConfig(seed=10))
    assert pos <= set(a.rows)
    assert np.array_equal(a.rows, b.rows) and np.array_equal(a.p_incl, b.p_incl)
    assert not np.array_equal(a.rows, c.rows)
    assert np.all((a.p_incl > 0) & (a.p_incl <= 1))
    assert np.all(a.weight[a.p_incl == 1] == 1)
    # k zero rows per stratum
    zero = a.rows[t.count[a.rows] == 0]
    assert len(zero) == 2 * 4 * 2


def test_high_fwi_overrepresented_and_invert_flag():
    t = _table(cells=1, years=(2010,), days=200, pos_rate=0.0, seed=1)
    q = np.quantile(t.fwi, 0.7)
    hi = t.fwi >= q
    s_def = stratified_subsample(t)
    s_inv = stratified_subsample(t, SubsampleConfig(invert_fwi_classes=True))
    # per-row inclusion: high rows are favoured by default, low rows when inverted
    ip = inclusion_probabilities
    _, mi = np.unique(t.month, return_inverse=True)
    pd = ip(mi, hi, 2, 0.9)
    pi = ip(mi, hi, 2, 0.1)
    assert pd[hi].mean() > pd[~hi].mean()
    assert pi[hi].mean() < pi[~hi].mean()
    assert np.allclose(s_def.p_incl, pd[s_def.rows])
    assert np.allclose(s_inv.p_incl, pi[s_inv.rows])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.booleans()), min_size=2, max_size=7),
       st.integers(1, 3), st.floats(0.05, 0.95))
def test_inclusion_matches_enumeration(rows, k, p_high):
    month, high = map(np.array, zip(*rows))
    _, month = np.unique(month, return_inverse=True)
    k = min(k, len(rows))
    exact = inclusion_probabilities(month, high, k, p_high)
    brute = inclusion_enumeration(month, high, k, p_high)
    assert np.allclose(exact, brute, atol=1e-12)
    assert exact.sum() == pytest.approx(k, abs=1e-12)


def test_horvitz_thompson_unbiased():
    t = _table(cells=3, years=(2010, 2011), days=60, seed=5, pos_rate=0.05)
    f = np.sin(t.fwi) + 2.0            # bounded per-row statistic
    full = f.sum()
    est = np.array([np.sum(s.weight * f[s.rows]) for s in
                    (stratified_subsample(t, SubsampleConfig(seed=r)) for r in range(300))])
    se = est.std(ddof=1) / np.sqrt(len(est))
    assert abs(est.mean() - full) < 3 * se


def test_negloglik_examples():
    assert weighted_poisson_negloglik([0], [3.0], [np.log(0.5)]) == pytest.approx(1.5)
    rng = np.random.default_rng(0)
    n = rng.poisson(2.0, 50)
    lm = rng.normal(0.5, 0.2, 50)
    from scipy import stats
    ref = -stats.poisson.logpmf(n, np.exp(lm)).sum()
    assert weighted_poisson_negloglik(n, np.ones(50), lm) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        weighted_poisson_negloglik([1, 2], [1.0], [0.0, 0.0])
    with pytest.raises(FloatingPointError):
        weighted_poisson_negloglik([1], [1.0], [np.inf])


def test_negloglik_expectation():
    t = _table(cells=3, years=(2010, 2011), days=60, seed=6, pos_rate=0.05)
    lm = -3.0 + 0.05 * t.fwi
    full = weighted_poisson_negloglik(t.count, np.ones(len(t)), lm)
    vals = []
    for r in range(200):
        s = stratified_subsample(t, SubsampleConfig(seed=r))
        vals.append(weighted_poisson_negloglik(t.count[s.rows], s.weight, lm[s.rows]))
    vals = np.array(vals)
    assert abs(vals.mean() - full) < 3 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_config_validation():
    with pytest.raises(ValueError):
        SubsampleConfig(p_fwi=1.0)
    with pytest.raises(ValueError):
        SubsampleConfig(p_ss=0.0)
    with pytest.raises(ValueError):
        SubsampleConfig(k_per_stratum=0)
    empty = _table(cells=1, years=(2010,), days=1).subset(np.array([], dtype=int))
    with pytest.raises(DataError):
        stratified_subsample(empty)
