import json

import numpy as np
import pytest

from latticeflow.diagnostics import (
    Histogram,
    compare_ensembles,
    fit_pairs,
    histogram_distance,
    seff_correlation,
)
from latticeflow.flow import FlowModel
from latticeflow.lattice import ActionParams, Ensemble, histogram, moments
from latticeflow.training import prior_ensemble

P = ActionParams(-0.14, 0.02)


def ensemble(seed=0, n=200, L=4, scale=1.0):
    return Ensemble(L, np.random.default_rng(seed).standard_normal((n, L * L)) * scale, "mcmc", P)


class TestSeffCorrelation:
    def test_exact_gaussian_match(self):
        # single site, M^2 = 1, lambda = 0: an identity flow is exactly e^{-S}/Z
        model = FlowModel.build(dim=1, n_layers=2, quantum=False)
        ens = Ensemble(1, np.random.default_rng(0).standard_normal((300, 1)), "flow")
        pairs, fit = seff_correlation(model, ens, ActionParams(1.0, 0.0))
        assert pairs.shape == (300, 2)
        assert fit["slope"] == pytest.approx(1.0, abs=1e-6)
        assert fit["pearson_r"] == pytest.approx(1.0, abs=1e-6)
        assert fit["intercept"] == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        s_eff = rng.standard_normal(50)
        s = 2 * s_eff + rng.standard_normal(50) * 0.3
        a, b = fit_pairs(s_eff, s), fit_pairs(s_eff + 17.5, s)
        assert b["slope"] == pytest.approx(a["slope"], rel=1e-12)
        assert b["pearson_r"] == pytest.approx(a["pearson_r"], rel=1e-12)

    def test_too_few(self):
        model = FlowModel.build(dim=16, n_layers=1, quantum=False)
        with pytest.raises(ValueError, match="at least 3"):
            seff_correlation(model, ensemble(n=2), P)

    def test_degenerate(self):
        with pytest.raises(ValueError, match="zero variance"):
            fit_pairs(np.ones(5), np.arange(5.0))


class TestHistogramDistance:
    def test_identical(self):
        h = Histogram(*histogram(np.random.default_rng(0).standard_normal(100), 10, (-3, 3)))
        assert histogram_distance(h, h) == 0.0

    def test_disjoint_point_masses(self):
        a = Histogram(*histogram([-1.0], 4, (-2, 2)))
        b = Histogram(*histogram([1.5], 4, (-2, 2)))
        assert histogram_distance(a, b) == pytest.approx(2.0)

    def test_sampling_noise(self):
        rng = np.random.default_rng(2)
        a = Histogram(*histogram(rng.standard_normal(100_000), 50, (-4, 4)))
        b = Histogram(*histogram(rng.standard_normal(100_000), 50, (-4, 4)))
        assert histogram_distance(a, b) < 0.05

    def test_mismatched_edges(self):
        a = Histogram(*histogram([0.0], 4, (-2, 2)))
        b = Histogram(*histogram([0.0], 4, (-1, 1)))
        with pytest.raises(ValueError, match="identical bin edges"):
            histogram_distance(a, b)


class TestCompare:
    def test_self_comparison(self):
        e = ensemble()
        rep = compare_ensembles(e, e, P)
        assert rep.field_hist_distance == 0.0 and rep.action_hist_distance == 0.0
        assert rep.moments_ref == rep.moments_gen
        assert rep.c0_ratio == 1.0

    def test_shared_edges(self):
        rep = compare_ensembles(ensemble(0), ensemble(1, scale=2.0), P)
        np.testing.assert_array_equal(rep.field_hist_ref.edges, rep.field_hist_gen.edges)
        np.testing.assert_array_equal(rep.action_hist_ref.edges, rep.action_hist_gen.edges)

    def test_c0_equals_phi2(self):
        rep = compare_ensembles(ensemble(0), ensemble(1, scale=0.5), P)
        assert abs(rep.two_point_gen[0] - rep.moments_gen["phi2"]) < 1e-12

    def test_prior_vs_reference_well_formed(self, tmp_path):
        ref = ensemble(0, scale=0.4)
        gen = prior_ensemble(16, 100, seed=3)
        model = FlowModel.build(dim=16, n_layers=2, quantum=False)
        rep = compare_ensembles(ref, gen, P, model=model)
        assert rep.moments_gen["phi2"] != pytest.approx(moments(ref)["phi2"], rel=0.2)
        assert rep.fit is not None and rep.seff_pairs.shape == (100, 2)
        rep.write(tmp_path)
        for name in ("report.json", "two_point.csv", "action_hist.csv", "field_hist.csv", "moments.csv", "seff_pairs.csv"):
            assert (tmp_path / name).exists()
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["n_gen"] == 100 and "slope_seff_on_s" in doc["fit"]
        assert (tmp_path / "two_point.csv").read_text().splitlines()[0] == "r,C_ref,C_gen"

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            compare_ensembles(ensemble(L=4), ensemble(L=3), P)
