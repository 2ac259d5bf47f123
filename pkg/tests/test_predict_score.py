import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from ember.errors import DataError, ModelSpecError
from ember.inference import Component, Effect, ModelSpec, fit, sample_posterior
from ember.marked_pp import simulate_marked_process
from ember.predict_score import (aggregate, auc, brier, crps, excursion_from_samples,
                                 excursion_function, group_labels, interval_coverage,
                                 observed_per_row, observed_totals, permutation_test,
                                 pit_values, pointwise_loglik, predictive_counts,
                                 predictive_sizes, prefix_excursion, report_orientation, scrps,
                                 waic)
from ember.synthetic import synthetic_table

# -- sCRPS ------------------------------------------------------------------------------


def test_scrps_hand_enumeration():
    v = scrps([0.0, 2.0], 1.0)
    assert v == pytest.approx(-0.5 - 0.5 * np.log(2), abs=1e-12)
    assert abs(v) == pytest.approx(0.8466, abs=1e-4)
    assert report_orientation("scrps", v) == pytest.approx(0.8466, abs=1e-4)
    assert report_orientation("brier", 0.2) == 0.2


def test_scrps_sharp_correct_forecast_rewarded():
    rng = np.random.default_rng(0)
    z = rng.standard_normal(200)
    vals = [scrps(3.0 + j * z, 3.0) for j in (1.0, 1e-3, 1e-6)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 5


def test_scrps_errors():
    with pytest.raises(ValueError):
        scrps([1.0, 1.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        scrps([1.0], 1.0)


def test_scrps_vectorised_matches_loop():
    rng = np.random.default_rng(1)
    S = rng.gamma(2.0, size=(5, 30))
    y = rng.gamma(2.0, size=5)
    assert np.allclose(scrps(S, y), [scrps(S[i], y[i]) for i in range(5)], rtol=1e-14)


def test_crps_matches_pairwise_definition():
    x = np.array([0.3, 1.2, 2.5, 4.0])
    pairs = np.abs(x[:, None] - x[None, :]).sum() / (4 * 3)
    assert crps(x, 1.0) == pytest.approx(np.mean(np.abs(x - 1.0)) - 0.5 * pairs, abs=1e-14)


_samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=20)


@settings(max_examples=100, deadline=None)
@given(_samples, st.floats(-100, 100), st.floats(-50, 50), st.floats(0.01, 100), st.randoms())
def test_scrps_invariances(xs, y, c, lam, rnd):
    x = np.array(xs)
    assume(np.ptp(x) > 1e-3)
    base = scrps(x, y)
    perm = x.copy()
    rnd.shuffle(perm)
    assert scrps(perm, y) == pytest.approx(base, abs=1e-10)
    assert scrps(x + c, y + c) == pytest.approx(base, abs=1e-9 * max(1, abs(base)))
    assert scrps(lam * x, lam * y) - base == pytest.approx(-0.5 * np.log(lam), abs=1e-10)


# -- Brier and AUC ---------------------------------------------------------------------------


def test_brier_cases():
    assert brier([1.0, 0.0], [1, 0]) == 0.0
    assert brier(np.full(7, 0.5), [1, 0, 1, 1, 0, 0, 1]) == 0.25
    assert brier([0.2, 0.9, 0.4], [0, 1, 1]) == pytest.approx((0.04 + 0.01 + 0.36) / 3, abs=1e-15)
    with pytest.raises(ValueError):
        brier([0.5, 0.5], [1])
    with pytest.raises(ValueError):
        brier([1.5], [1])


def test_brier_base_rate_on_shuffled_outcomes():
    rng = np.random.default_rng(2)
    o = (rng.uniform(size=400) < 0.3).astype(int)
    base = o.mean()
    vals = [brier(np.full(len(o), base), rng.permutation(o)) for _ in range(50)]
    assert np.mean(vals) == pytest.approx(base * (1 - base), abs=1e-12)


def test_auc_cases():
    assert auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert auc([4, 3, 2, 1], [0, 0, 1, 1]) == 0.0
    assert auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(ValueError):
        auc([1, 2], [1, 1])


def test_auc_null_near_half():
    rng = np.random.default_rng(3)
    assert auc(rng.normal(size=4000), rng.integers(0, 2, 4000)) == pytest.approx(0.5, abs=0.03)


def test_auc_matches_scipy_mann_whitney():
    rng = np.random.default_rng(4)
    s = rng.integers(0, 5, 60).astype(float)
    lab = rng.integers(0, 2, 60)
    U = stats.mannwhitneyu(s[lab == 1], s[lab == 0]).statistic
    assert auc(s, lab) == pytest.approx(U / (lab.sum() * (60 - lab.sum())), abs=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=4, max_size=30), st.randoms())
def test_auc_invariant_to_increasing_transform(xs, rnd):
    s = np.array(xs) / 100.0
    lab = np.array([rnd.randint(0, 1) for _ in xs])
    assume(0 < lab.sum() < len(lab))
    assert auc(np.exp(s / 3) + 2 * s, lab) == auc(s, lab)


# -- WAIC -------------------------------------------------------------------------------------


def test_waic_identical_samples():
    ell = np.array([-1.2, -0.3, -2.5])
    assert waic(np.tile(ell, (10, 1))) == pytest.approx(-2 * ell.sum(), abs=1e-12)


def test_waic_hand_case():
    ll = np.log(np.array([[0.2, 0.5], [0.4, 0.5]]))
    lppd = np.log(0.3) + np.log(0.5)
    p = np.var(ll[:, 0], ddof=1)
    w, terms = waic(ll, return_terms=True)
    assert w == pytest.approx(-2 * (lppd - p), abs=1e-14)
    assert terms["p_waic"] == pytest.approx(p, abs=1e-15)


def test_waic_order_invariant():
    rng = np.random.default_rng(5)
    ll = rng.normal(size=(50, 8))
    assert waic(ll[rng.permutation(50)]) == pytest.approx(waic(ll), abs=1e-10)


def test_waic_irrelevant_parameter_increases_penalty():
    rng = np.random.default_rng(6)
    n, S = 100, 2000
    for _ in range(5):
        y = rng.normal(size=n)
        z = rng.normal(size=n)
        mu = rng.normal(y.mean(), 1 / np.sqrt(n), S)
        ll1 = stats.norm.logpdf(y[None, :], mu[:, None])
        b = rng.normal(np.dot(z, y - y.mean()) / np.dot(z, z), 1 / np.sqrt(z @ z), S)
        ll2 = stats.norm.logpdf(y[None, :], mu[:, None] + b[:, None] * z[None, :])
        assert waic(ll2, True)[1]["p_waic"] > waic(ll1, True)[1]["p_waic"]


# -- permutation test --------------------------------------------------------------------------


def test_permutation_test_cases():
    assert permutation_test(np.zeros(30), 2000, 0) == 1.0
    d = -np.abs(np.random.default_rng(7).normal(size=100)) - 0.1
    assert permutation_test(d, 2000, 0) <= 1 / 2001
    assert permutation_test(d, 100, 3) == permutation_test(d, 100, 3)


def test_permutation_test_null_uniform():
    rng = np.random.default_rng(8)
    p = [permutation_test(rng.normal(size=40), 400, rng.integers(1 << 30)) for _ in range(300)]
    assert stats.kstest(p, "uniform").pvalue > 0.05


# -- excursion functions -----------------------------------------------------------------------


def test_excursion_singleton():
    E = np.zeros((1000, 1), dtype=bool)
    E[:800] = True
    F, order, marg = prefix_excursion(E)
    assert F[0] == 0.8


def test_excursion_two_independent_nodes():
    rng = np.random.default_rng(9)
    n = 40_000
    S = np.column_stack([stats.norm.ppf(0.9) + rng.normal(size=n),
                         stats.norm.ppf(0.6) + rng.normal(size=n)])
    r = excursion_from_samples(S, 0.0, "+")
    se = np.sqrt(np.array([0.9 * 0.1, 0.54 * 0.46]) / n)
    assert np.all(np.abs(r.f_plus - [0.9, 0.54]) < 3 * se)


def test_excursion_sure_exceedance_and_negative_side():
    S = np.random.default_rng(0).normal(size=(1000, 6))
    r = excursion_from_samples(S, -1e9)
    assert np.all(r.f_plus == 1.0)
    r = excursion_from_samples(-S - 5, 0.1, "-")
    assert np.all(r.f_minus == 1.0) and r.f_plus is None
    assert set(r.excursion_set(0.05, "-")) == set(range(6))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1, 1))
def test_excursion_nonincreasing_along_order(seed, u):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(300, 5)) @ rng.normal(size=(5, 5)) + rng.normal(size=5)
    r = excursion_from_samples(S, u)
    assert np.all(np.diff(r.f_plus[r.order_plus]) <= 0)
    assert np.all(np.diff(r.f_minus[r.order_minus]) <= 0)
    assert np.all((r.f_plus >= 0) & (r.f_plus <= 1))
    assert np.all(r.f_plus <= r.marginal_plus + 1e-15)


# -- predictive simulation ----------------------------------------------------------------------

U = 30.0
TRUTH = {"COX.a": -4.0, "BIN.a": -1.5, "BETA.a": -0.5, "GPD.a": np.log(15.0)}


@pytest.fixture(scope="module")
def mixture_fit():
    tab = synthetic_table(nx=4, ny=4, n_days=40, seed=1)
    data = simulate_marked_process(tab, TRUTH["COX.a"], TRUTH["BIN.a"],
                                   1 / (1 + np.exp(-TRUTH["BETA.a"])), 4.0,
                                   np.exp(TRUTH["GPD.a"]), 0.4, U, seed=2)
    spec = ModelSpec(tuple(Component(c, f, (f"{c}.a", f"{c}.cell")) for c, f in
                           (("COX", "poisson"), ("BIN", "bernoulli"), ("BETA", "beta"),
                            ("GPD", "gpd"))),
                     tuple(e for c in ("COX", "BIN", "BETA", "GPD")
                           for e in (Effect(f"{c}.a", "intercept"),
                                     Effect(f"{c}.cell", "iid", "cell_id"))))
    fixed = {"BETA.phi": 4.0, "GPD.xi": 0.4, "COX.cell.tau": 1e4, "BIN.cell.tau": 1e4,
             "BETA.cell.tau": 1e4, "GPD.cell.tau": 1e4}
    return fit(spec, data, fixed=fixed), data


def _truth_latent(f, n):
    x = np.zeros(f.layout.n)
    for k, v in TRUTH.items():
        x[f.layout.blocks[k].slice] = v
    return np.tile(x, (n, 1))


def test_predictive_sizes_degenerate_mixture(mixture_fit):
    f, data = mixture_fit
    s = predictive_sizes(f, data.table, data.event_row, 50, seed=0, u=U, p_exc=1.0)
    assert np.all(s.values > U)
    s = predictive_sizes(f, data.table, data.event_row, 50, seed=0, u=U, p_exc=0.0)
    assert np.all((s.values > 1) & (s.values <= U))


def test_predictive_sizes_deterministic(mixture_fit):
    f, data = mixture_fit
    a = predictive_sizes(f, data.table, data.event_row[:20], 30, seed=5, u=U)
    b = predictive_sizes(f, data.table, data.event_row[:20], 30, seed=5, u=U)
    assert np.array_equal(a.values, b.values)
    assert a.values.shape == (20, 30)
    assert np.all(a.values > 1)


def test_predictive_sizes_pit_uniform_at_truth(mixture_fit):
    f, data = mixture_fit
    n = 400
    s = predictive_sizes(f, data.table, data.event_row, n, seed=1, u=U,
                         latent=_truth_latent(f, n))
    pit = pit_values(s.values, data.burnt_area, np.random.default_rng(0))
    assert stats.kstest(pit, "uniform").pvalue > 0.05


def test_predictive_counts_zero_intensity(mixture_fit):
    f, data = mixture_fit
    X = _truth_latent(f, 20)
    X[:, f.layout.blocks["COX.a"].slice] = -60.0
    c = predictive_counts(f, data.table, n=20, seed=0, latent=X)
    g = aggregate(c, group_labels(data.table, by="all"))
    assert list(g.groups) == ["all"]
    assert np.all(g.values == 0)


def test_aggregate_partition_additivity(mixture_fit):
    f, data = mixture_fit
    c, ba = predictive_counts(f, data.table, n=40, seed=3, u=U, with_burnt_area=True)
    assert np.all(ba.values[c.values == 0] == 0)
    assert np.all(ba.values[c.values > 0] > 1)
    tot_c = c.values.sum(axis=0)
    for by in ("year", "month", "cell", "year_month"):
        g = aggregate(c, group_labels(data.table, by=by))
        assert np.array_equal(g.values.sum(axis=0), tot_c)
    half = {cell: ("W" if cell % 4 < 2 else "E") for cell in range(16)}
    g = aggregate(ba, group_labels(data.table, by="group", cell_groups=half))
    assert list(g.groups) == ["E", "W"]
    assert np.allclose(g.values.sum(axis=0), ba.values.sum(axis=0), rtol=1e-12)


def test_grouping_errors(mixture_fit):
    f, data = mixture_fit
    with pytest.raises(DataError):
        group_labels(data.table, by="group", cell_groups={0: "A"})
    with pytest.raises(ValueError):
        group_labels(data.table, by="region")
    with pytest.raises(DataError):
        observed_totals([1.0], ["Z"], ["A"])


def test_observed_totals_and_coverage(mixture_fit):
    f, data = mixture_fit
    obs = observed_per_row(data, "burnt_area")
    assert obs.sum() == pytest.approx(data.burnt_area.sum())
    lab = group_labels(data.table, by="cell")
    c, ba = predictive_counts(f, data.table, n=200, seed=4, u=U, with_burnt_area=True)
    g = aggregate(ba, lab)
    tot = observed_totals(obs, lab, g.groups)
    cov, inside = interval_coverage(g, tot)
    assert 0 <= cov <= 1 and inside.shape == (16,)


def test_size_model_required():
    spec = ModelSpec((Component("COX", "poisson", ("a",)),), (Effect("a", "intercept"),))
    tab = synthetic_table(nx=2, ny=2, n_days=10, seed=0)
    data = simulate_marked_process(tab, -4.0, -2.0, 0.3, 4.0, 10.0, 0.3, U, seed=0)
    f = fit(spec, data)
    with pytest.raises(ModelSpecError):
        predictive_sizes(f, data.table, [0], 10, 0, u=U)


def test_pointwise_loglik_and_waic(mixture_fit):
    f, data = mixture_fit
    ll = pointwise_loglik(f, f.model, n=50, seed=0)
    assert ll.shape == (50, f.model.n_obs)
    assert np.isfinite(waic(ll))
    cox = pointwise_loglik(f, f.model, n=50, seed=0, components=("COX",))
    assert cox.shape[1] == len(data.table)


def test_excursion_function_on_fit(mixture_fit):
    f, _ = mixture_fit
    r = excursion_function(f, "COX.cell", u=0.0, n_samples=1000, seed=0)
    assert r.f_plus.shape == (16,)
    with pytest.raises(ValueError):
        excursion_function(f, "COX.cell", n_samples=10)
    with pytest.raises(KeyError):
        excursion_function(f, "nope", n_samples=1000)
