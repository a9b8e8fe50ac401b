import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latticeflow.lattice import (
    ActionParams,
    Ensemble,
    FieldConfig,
    action,
    action_gradient,
    field_histogram,
    histogram,
    moments,
    read_ensemble,
    two_point,
    write_ensemble,
)

BENCH = ActionParams(-4.0, 8.0)


def loop_action(phi, L, p):
    """Independent site-by-site evaluation of the action."""
    S = 0.0
    for y in range(L):
        for x in range(L):
            v = phi[x + L * y]
            S += 0.5 * (v - phi[(x + 1) % L + L * y]) ** 2
            S += 0.5 * (v - phi[x + L * ((y + 1) % L)]) ** 2
            S += 0.5 * p.mass_squared * v**2 + p.quartic * v**4
    return S


def brute_two_point(samples, L):
    """Triple loop over samples, sites and axes."""
    C = np.zeros(L)
    for r in range(L):
        acc = 0.0
        for phi in samples:
            for y in range(L):
                for x in range(L):
                    v = phi[x + L * y]
                    acc += v * phi[(x + r) % L + L * y]
                    acc += v * phi[x + L * ((y + r) % L)]
        C[r] = acc / (len(samples) * L * L * 2)
    return C


def fd_gradient(phi, L, p, h=1e-5):
    g = np.zeros_like(phi)
    for i in range(phi.size):
        up, dn = phi.copy(), phi.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (action(FieldConfig(L, up), p) - action(FieldConfig(L, dn), p)) / (2 * h)
    return g


class TestTypes:
    def test_config_length_checked(self):
        with pytest.raises(ValueError):
            FieldConfig(3, np.zeros(8))

    def test_config_rejects_nan(self):
        with pytest.raises(ValueError):
            FieldConfig(2, [0, 1, np.nan, 0])

    def test_negative_quartic_rejected(self):
        with pytest.raises(ValueError):
            ActionParams(1.0, -0.1)

    def test_mixed_sizes_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            Ensemble.from_configs([FieldConfig(2, np.zeros(4)), FieldConfig(3, np.zeros(9))])

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ValueError):
            Ensemble(2, np.zeros((0, 4)))


class TestAction:
    @pytest.mark.parametrize("L", [1, 2, 5])
    def test_zero_field(self, L):
        assert action(FieldConfig(L, np.zeros(L * L)), BENCH) == 0.0

    def test_single_site(self):
        # kinetic term vanishes; -0.5 + 0.5
        assert action(FieldConfig(1, [0.5]), BENCH) == pytest.approx(0.0, abs=1e-15)

    def test_checkerboard(self):
        phi = np.array([1.0, -1.0, -1.0, 1.0])
        assert loop_action(phi, 2, BENCH) == pytest.approx(40.0)
        assert action(FieldConfig(2, phi), BENCH) == pytest.approx(40.0, abs=1e-12)

    def test_matches_loop(self):
        rng = np.random.default_rng(3)
        for L in (3, 4, 6):
            phi = rng.standard_normal(L * L)
            assert action(FieldConfig(L, phi), BENCH) == pytest.approx(loop_action(phi, L, BENCH), rel=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(
        arrays(np.float64, (4, 4), elements=st.floats(-3, 3)),
        st.integers(0, 3),
        st.integers(0, 3),
    )
    def test_translation_and_z2_invariance(self, grid, dx, dy):
        S = action(FieldConfig(4, grid), BENCH)
        shifted = np.roll(np.roll(grid, dx, axis=1), dy, axis=0)
        assert abs(action(FieldConfig(4, shifted), BENCH) - S) <= 1e-12 * max(1.0, abs(S))
        assert abs(action(FieldConfig(4, -grid), BENCH) - S) <= 1e-12 * max(1.0, abs(S))


class TestActionGradient:
    def test_zero(self):
        assert np.all(action_gradient(FieldConfig(3, np.zeros(9)), BENCH) == 0)

    def test_constant_field(self):
        c = 0.7
        g = action_gradient(FieldConfig(4, np.full(16, c)), BENCH)
        np.testing.assert_allclose(g, BENCH.mass_squared * c + 4 * BENCH.quartic * c**3, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        phi = np.random.default_rng(seed).standard_normal(16)
        g = action_gradient(FieldConfig(4, phi), BENCH)
        fd = fd_gradient(phi, 4, BENCH)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-6


class TestTwoPoint:
    def test_constant_one(self):
        np.testing.assert_array_equal(two_point(Ensemble(4, np.ones((1, 16)))), np.ones(4))

    def test_zero(self):
        np.testing.assert_array_equal(two_point(Ensemble(3, np.zeros((1, 9)))), np.zeros(3))

    def test_hand_picked_2x2(self):
        samples = np.array([[1.0, 2.0, -1.0, 0.5], [0.0, -2.0, 3.0, 1.0]])
        np.testing.assert_allclose(two_point(Ensemble(2, samples)), brute_two_point(samples, 2), atol=1e-12)

    @pytest.mark.parametrize("L", [2, 3])
    def test_random_matches_brute_force(self, L):
        samples = np.random.default_rng(L).standard_normal((4, L * L))
        np.testing.assert_allclose(two_point(Ensemble(L, samples)), brute_two_point(samples, L), atol=1e-12)

    def test_c0_is_phi2(self):
        ens = Ensemble(5, np.random.default_rng(0).standard_normal((7, 25)))
        assert abs(two_point(ens)[0] - moments(ens)["phi2"]) < 1e-12


class TestMoments:
    def test_ones(self):
        assert moments(Ensemble(2, np.ones((3, 4)))) == {"phi2": 1.0, "phi4": 1.0}

    def test_hand_computed(self):
        samples = np.array([[1, 2, 0, -1], [0.5, 0.5, 0.5, 0.5], [3, 0, 0, 0]], dtype=float)
        vals = samples.reshape(-1)
        assert moments(Ensemble(2, samples))["phi2"] == pytest.approx(sum(v * v for v in vals) / 12)
        assert moments(Ensemble(2, samples))["phi4"] == pytest.approx(sum(v**4 for v in vals) / 12)


class TestHistogram:
    def test_point_mass_at_zero(self):
        edges, dens = field_histogram(Ensemble(2, np.zeros((1, 4))), bins=2, range=(-1, 1))
        np.testing.assert_array_equal(edges, [-1, 0, 1])
        np.testing.assert_array_equal(dens, [0.0, 1.0])

    def test_uniform_fill(self):
        vals = np.linspace(-2, 2, 4000, endpoint=False) + 0.0005
        _, dens = histogram(vals, 8, (-2, 2))
        np.testing.assert_allclose(dens, 1 / 4)

    def test_out_of_range_clamped(self):
        edges, dens = histogram([-10.0, 10.0, 0.1], 4, (-1, 1))
        assert dens[0] > 0 and dens[-1] > 0
        assert np.sum(dens * np.diff(edges)) == pytest.approx(1.0)

    def test_gaussian(self):
        vals = np.random.default_rng(0).standard_normal(100_000)
        edges, dens = histogram(vals, 50, (-4, 4))
        centers = 0.5 * (edges[1:] + edges[:-1])
        pdf = np.exp(-0.5 * centers**2) / math.sqrt(2 * math.pi)
        assert np.max(np.abs(dens - pdf)) < 0.05

    def test_invalid(self):
        with pytest.raises(ValueError):
            histogram([0.0], 0, (0, 1))
        with pytest.raises(ValueError):
            histogram([0.0], 3, (1, 1))


def test_ensemble_file_roundtrip(tmp_path):
    samples = np.random.default_rng(1).standard_normal((5, 9)) * 1e3
    ens = Ensemble(3, samples, "flow")
    write_ensemble(tmp_path / "e.txt", ens, ActionParams(-1.5, 0.25))
    header = (tmp_path / "e.txt").read_text().splitlines()[0]
    assert header == "L=3 N=5 params=-1.5,0.25 provenance=flow"
    back = read_ensemble(tmp_path / "e.txt")
    np.testing.assert_array_equal(back.samples, samples)
    assert back.params == ActionParams(-1.5, 0.25)
    assert back.provenance == "flow"
