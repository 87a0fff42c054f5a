import json
import math

import numpy as np
import pytest
from scipy import signal, stats

from feqrboot.simlab import (
    METHODS,
    ErrorKind,
    Family,
    SimulationDesign,
    ar_path,
    arma_quantile,
    generate,
    generate_dynamic,
    generate_static,
    rep_stream,
    run_coverage_study,
    true_beta,
)


def _design(name, **kw):
    return SimulationDesign.from_name(name, **kw)


class TestDesign:
    def test_names(self):
        d = _design("locscaledep")
        assert d.family is Family.STATIC_LOCATION_SCALE and d.error_kind is ErrorKind.ARMA_CHISQ
        assert d.gamma == 0.2 and d.name == "locscaledep"
        assert (d.reps, d.B, d.level, d.taus) == (200, 299, 0.9, (0.25, 0.5, 0.75))

    def test_full_scale(self):
        d = _design("loc").full_scale()
        assert (d.reps, d.B) == (1000, 999)

    def test_invariants(self):
        with pytest.raises(ValueError):
            SimulationDesign(Family.STATIC_LOCATION, gamma=0.2)
        with pytest.raises(ValueError):
            SimulationDesign(Family.DYNAMIC, ErrorKind.ARMA_CHISQ)
        with pytest.raises(ValueError):
            SimulationDesign(Family.STATIC_LOCATION, taus=())
        with pytest.raises(ValueError):
            SimulationDesign.from_name("nope")


class TestTruths:
    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
    def test_location_constant(self, tau):
        assert true_beta(_design("loc"), tau) == 1.0
        assert true_beta(_design("locdep"), tau) == 1.0

    def test_location_scale_iid(self):
        assert stats.chi2.ppf(0.5, 4) == pytest.approx(3.35669, abs=1e-5)
        assert true_beta(_design("locscale"), 0.5) == pytest.approx(1.67134, abs=1e-5)

    def test_dynamic(self):
        d = _design("dynamic")
        assert true_beta(d, 0.25) == true_beta(d, 0.75) == 0.4

    @pytest.mark.parametrize("name", ["locscale", "locscaledep"])
    def test_increasing_in_tau(self, name):
        vals = [true_beta(_design(name), t) for t in (0.1, 0.25, 0.5, 0.75, 0.9)]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_arma_oracle_against_independent_chain(self):
        # one long chain from an unrelated generator; tolerance covers the
        # Monte Carlo error of both estimates
        g = np.random.default_rng(777)
        eta = g.chisquare(4, size=2_000_100)
        e = signal.lfilter([1.0, 0.5], [1.0, -0.4], eta)[100:]
        for tau in (0.25, 0.5, 0.75):
            assert arma_quantile(tau) == pytest.approx(np.quantile(e, tau), abs=0.05)

    def test_arma_mean(self):
        # stationary mean 4 (1 + theta) / (1 - rho) = 10 lies above the median of a right-skewed law
        assert 8.0 < arma_quantile(0.5) < 10.0

    def test_burn_in_sufficient(self):
        a = [arma_quantile(t, chains=100, length=1000, burn_in=100, seed=5) for t in (0.25, 0.5, 0.75)]
        b = [arma_quantile(t, chains=100, length=1000, burn_in=200, seed=5) for t in (0.25, 0.5, 0.75)]
        # 10^5 draws; three Monte Carlo standard errors of the difference is about 0.15
        assert np.max(np.abs(np.subtract(a, b))) < 0.15


class TestGenerate:
    def test_static_shapes(self):
        d = _design("locscaledep", n=7, T=11)
        gp = generate_static(d, rep_stream(d, 0))
        assert gp.data.y.shape == (7, 11) and gp.data.X.shape == (7, 11, 1)
        assert np.all((gp.alpha_true >= 0) & (gp.alpha_true <= 1))
        assert np.all(gp.data.X > 0.3 * gp.alpha_true[:, None, None])
        assert set(gp.beta_true_at) == set(d.taus)

    def test_static_formula(self):
        d = _design("locscale", n=5, T=6)
        g1, g2 = rep_stream(d, 3), rep_stream(d, 3)
        gp = generate_static(d, g1)
        alpha = g2.uniform(size=5)
        x = 0.3 * alpha[:, None] + g2.chisquare(3, size=(5, 6))
        e = g2.chisquare(4, size=(5, 6))
        np.testing.assert_array_equal(gp.data.y, alpha[:, None] + x + (1 + 0.2 * x) * e)

    def test_static_location_moments(self):
        d = _design("loc", n=400, T=200)
        gp = generate_static(d, rep_stream(d, 0))
        assert gp.data.X.mean() == pytest.approx(0.3 * 0.5 + 3.0, abs=0.02)
        resid = gp.data.y - gp.alpha_true[:, None] - gp.data.X[:, :, 0]
        assert resid.mean() == pytest.approx(4.0, abs=0.03)

    def test_wrong_family(self):
        with pytest.raises(ValueError):
            generate_static(_design("dynamic"), np.random.default_rng(0))
        with pytest.raises(ValueError):
            generate_dynamic(_design("loc"), np.random.default_rng(0))

    def test_dynamic_fixed_point(self):
        y = ar_path(np.ones(2), np.zeros((2, 60)), 0.4, 50)
        np.testing.assert_allclose(y, 1 / 0.6, rtol=1e-9)

    def test_dynamic_lag_structure(self):
        d = _design("dynamic", n=3, T=8)
        gp = generate_dynamic(d, rep_stream(d, 1))
        np.testing.assert_array_equal(gp.data.X[:, 1:, 0], gp.data.y[:, :-1])

    def test_dynamic_autocorrelation(self):
        g = np.random.default_rng(11)
        y = ar_path(np.zeros(1), g.chisquare(4, size=(1, 1_000_050)), 0.4, 50)[0]
        y = y - y.mean()
        assert np.dot(y[1:], y[:-1]) / np.dot(y, y) == pytest.approx(0.4, abs=0.01)

    def test_reproducible(self):
        d = _design("locdep", n=4, T=5, seed=9)
        a = generate(d, rep_stream(d, 2)).data.y
        b = generate(d, rep_stream(d, 2)).data.y
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, generate(d, rep_stream(d, 3)).data.y)


class TestCoverage:
    def test_single_rep(self):
        d = _design("loc", n=10, T=10, reps=1, B=39, taus=(0.5,))
        rep = run_coverage_study(d)
        for row in rep.rows:
            assert row.coverage in (0.0, 1.0) and row.reps_used == 1

    def test_deterministic_across_threads(self):
        d = _design("locscale", n=8, T=10, reps=3, B=29, taus=(0.3, 0.6), seed=4)
        a = run_coverage_study(d, threads=1)
        b = run_coverage_study(d, threads=3)
        assert a.to_json(records=True) == b.to_json(records=True)
        assert a.to_csv() == b.to_csv()

    def test_report_contents(self):
        d = _design("dynamic", n=10, T=12, reps=4, B=29, taus=(0.5,), seed=1)
        rep = run_coverage_study(d)
        assert [r.method for r in rep.rows] == list(METHODS)
        for r in rep.rows:
            assert r.coverage * r.reps_used == pytest.approx(round(r.coverage * r.reps_used))
            assert r.mc_stderr == pytest.approx(math.sqrt(r.coverage * (1 - r.coverage) / r.reps_used))
        assert rep.to_csv().splitlines()[0] == "tau,method,coverage,avg_width,reps_used,mc_stderr"
        doc = json.loads(rep.to_json())
        assert doc["schema_version"] == 1 and doc["provenance"]["seed"] == 1
        assert len(rep.records) == 4
        assert rep.row(0.5, "RWBp").reps_used == 4

    def test_rep_order_exchangeable(self):
        d = _design("loc", n=8, T=8, reps=4, B=29, taus=(0.5,), seed=2)
        rep = run_coverage_study(d)
        hits = sum(r["RWBp"]["covered"] for r in rep.records)
        assert rep.row(0.5, "RWBp").coverage == hits / 4
