import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idescope.errors import DivergenceError, MissingMetadataError, OrderingError
from idescope.models import bh_autonomous, linear_exninv, spatial_ricker
from idescope.process import ModelSpec, evolve, NONNEGATIVE
from idescope.semilinear import (FORWARD, PULLBACK, LinearPart, SemilinearParams, absorbing_radius,
                                 darbo_bound, gronwall_bound, semilinear_model, spectral_radius_estimate,
                                 transition_matrix, voc_evolve)

REL = 1e-12


def _random_semilinear(rng, d=3):
    mats = {t: rng.normal(0, 0.4, (d, d)) for t in range(-10, 30)}
    lin = LinearPart(lambda t: mats[t], d)
    c = rng.normal(0, 1, d)
    nonlin = lambda t, u: 0.3 * np.tanh(u) + 0.1 * np.cos(t) * c
    return lin, nonlin


def _gronwall_oracle(alpha, a, b, K, tau, t, norm_u):
    """Direct sum sup-bound: K prod g ||u|| + K sum b_s prod_{r>s} g_r."""
    g = lambda r: alpha(r) + K * a(r)
    first = K * norm_u * np.prod([g(r) for r in range(tau, t)])
    rest = K * sum(b(s) * np.prod([g(r) for r in range(s + 1, t)]) for s in range(tau, t))
    return first + rest


class TestTransitionMatrix:
    def test_identity_when_equal(self):
        lin = LinearPart(lambda t: np.array([[2.0, 1.0], [0.0, 3.0]]), 2)
        assert np.array_equal(transition_matrix(lin, 4, 4), np.eye(2))

    def test_scalar_power(self):
        lin = LinearPart(lambda t: np.array([[0.5]]), 1)
        assert transition_matrix(lin, 3, 0)[0, 0] == 0.125

    def test_cocycle(self, rng):
        lin, _ = _random_semilinear(rng)
        for tau, s, t in [(-5, 0, 6), (0, 0, 3), (2, 9, 9)]:
            lhs = transition_matrix(lin, t, s) @ transition_matrix(lin, s, tau)
            np.testing.assert_allclose(lhs, transition_matrix(lin, t, tau), rtol=1e-12, atol=1e-14)

    def test_diagonal_cocycle_is_exact(self):
        lin = LinearPart(lambda t: np.diag([0.5, 2.0]), 2)
        lhs = transition_matrix(lin, 7, 3) @ transition_matrix(lin, 3, 0)
        assert np.array_equal(lhs, transition_matrix(lin, 7, 0))

    def test_ordering(self):
        with pytest.raises(OrderingError):
            transition_matrix(LinearPart(lambda t: np.eye(1), 1), 0, 1)


class TestVariationOfConstants:
    def test_zero_nonlinearity(self, rng):
        lin, _ = _random_semilinear(rng)
        u = rng.normal(size=3)
        got = voc_evolve(lin, lambda t, x: np.zeros_like(x), -2, 5, u)
        np.testing.assert_allclose(got, transition_matrix(lin, 5, -2) @ u, rtol=REL)

    def test_zero_linear_part(self):
        lin = LinearPart(lambda t: np.zeros((1, 1)), 1)
        nonlin = lambda t, u: np.sqrt(np.abs(u)) + t
        assert voc_evolve(lin, nonlin, 0, 3, np.array([4.0]))[0] == nonlin(2, nonlin(1, nonlin(0, 4.0)))

    def test_linear_example(self):
        m = linear_exninv(0.5)
        sl = m.metadata["semilinear"]
        assert voc_evolve(sl["linear"], sl["nonlinear"], 0, 2, np.array([0.0]))[0] == pytest.approx(1.0, rel=REL)

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_recursion(self, seed):
        rng = np.random.default_rng(seed)
        lin, nonlin = _random_semilinear(rng)
        m = semilinear_model(lin, nonlin)
        u = rng.normal(size=3)
        tau = int(rng.integers(-10, 0))
        t = tau + int(rng.integers(0, 25))
        a, b = voc_evolve(lin, nonlin, tau, t, u), evolve(m, tau, t, u)
        assert np.max(np.abs(a - b)) <= REL * max(1.0, np.max(np.abs(b)))

    def test_shape_mismatch(self):
        lin = LinearPart(lambda t: np.eye(2), 2)
        with pytest.raises(ValueError):
            voc_evolve(lin, lambda t, u: np.zeros(3), 0, 1, np.zeros(2))


class TestGronwall:
    def test_no_inhomogeneity(self):
        p = SemilinearParams(K=2.0, alpha_seq=0.5, a_seq=0.1, b_seq=0.0)
        assert gronwall_bound(p, 0, 3, 1.0) == pytest.approx(2.0 * 0.7 ** 3)

    def test_identity_linear(self):
        p = SemilinearParams(K=1.0, alpha_seq=1.0)
        assert gronwall_bound(p, -4, 9, 3.5) == 3.5

    def test_matches_direct_sum(self, rng):
        al = rng.uniform(0, 1.2, 40)
        aa = rng.uniform(0, 0.3, 40)
        bb = rng.uniform(0, 2, 40)
        p = SemilinearParams(K=1.7, alpha_seq=lambda t: al[t], a_seq=lambda t: aa[t], b_seq=lambda t: bb[t])
        for tau, t in [(0, 0), (0, 1), (3, 17), (0, 39)]:
            want = _gronwall_oracle(p.alpha_seq, p.a_seq, p.b_seq, p.K, tau, t, 2.0)
            assert gronwall_bound(p, tau, t, 2.0) == pytest.approx(want, rel=1e-12)

    def test_linear_example_is_sound(self):
        m = linear_exninv(0.5)
        p = m.metadata["semilinear"]["params"]
        for u in (-3.0, 0.0, 2.0):
            for t in range(0, 15):
                assert abs(evolve(m, 0, t, np.array([u]))[0]) <= gronwall_bound(p, 0, t, abs(u)) * (1 + 1e-12)

    def test_invalid_growth(self):
        p = SemilinearParams(alpha_seq=-1.0)
        with pytest.raises(ValueError):
            gronwall_bound(p, 0, 2, 1.0)


class TestAbsorbingRadius:
    def test_no_inhomogeneity(self):
        p = SemilinearParams(alpha_seq=0.5)
        assert absorbing_radius(p, 0, 1.0) == 1.0
        assert absorbing_radius(p, 0, 1.0, FORWARD) == 1.0

    @pytest.mark.parametrize("direction", [PULLBACK, FORWARD])
    def test_constant_sequences(self, direction):
        K, al, a, b = 1.5, 0.3, 0.1, 0.4
        p = SemilinearParams(K, al, a, b)
        want = 1.0 + K * b / (1 - al - K * a)
        assert absorbing_radius(p, 7, 1.0, direction) == pytest.approx(want, rel=1e-10)

    def test_scalar_example(self):
        p = SemilinearParams(1.0, 0.5, 0.0, 0.25)
        assert absorbing_radius(p, 0, 1.0) == pytest.approx(1.5, rel=1e-10)

    def test_divergence_reports_partial(self):
        p = SemilinearParams(1.0, 1.2, 0.0, 1.0)
        with pytest.raises(DivergenceError) as exc:
            absorbing_radius(p, 0, 1.0, truncation=50)
        assert exc.value.partial > 0

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            absorbing_radius(SemilinearParams(), 0, 1.0, "sideways")

    @settings(max_examples=40, deadline=None)
    @given(rho=st.floats(0.1, 10), b=st.floats(0, 2), db=st.floats(0, 1), al=st.floats(0, 0.8))
    def test_monotone_in_rho_and_b(self, rho, b, db, al):
        base = absorbing_radius(SemilinearParams(1.0, al, 0.0, b), 0, rho)
        assert absorbing_radius(SemilinearParams(1.0, al, 0.0, b + db), 0, rho) >= base
        assert absorbing_radius(SemilinearParams(1.0, al, 0.0, b), 0, rho + 0.5) >= base


class TestDarbo:
    def _model(self, c):
        return ModelSpec("m", lambda t, u: u, 1, domain=NONNEGATIVE, metadata={"darbo": lambda s: c})

    def test_empty_product(self):
        assert darbo_bound(self._model(3.0), 4, 4) == 1.0

    def test_two_steps(self):
        # (1 - theta) alpha with theta = 1/4 and alpha = 4
        assert darbo_bound(self._model(0.75 * 4.0), 0, 2) == 9.0

    def test_pure_urysohn(self):
        assert darbo_bound(spatial_ricker(n=16), 0, 5) == 0.0

    def test_missing_metadata(self):
        with pytest.raises(MissingMetadataError):
            darbo_bound(bh_autonomous(), 0, 1)


class TestSpectralRadius:
    def test_identity(self):
        assert spectral_radius_estimate(np.eye(4)).value == 1.0

    def test_diagonal(self):
        est = spectral_radius_estimate(np.diag([0.3, 0.9]))
        assert est.converged and est.value == pytest.approx(0.9, rel=1e-10)

    def test_nonnegative_matches_eigvals(self, rng):
        m = rng.uniform(0, 1, (20, 20))
        est = spectral_radius_estimate(m)
        assert est.value == pytest.approx(np.max(np.abs(np.linalg.eigvals(m))), rel=1e-9)

    def test_laplace_operator(self):
        from idescope.nystrom import build_quadrature, _laplace_matrix
        q = build_quadrature((-10, 10), 128)
        m = 0.12 * _laplace_matrix(q, 2.0)
        est = spectral_radius_estimate(m)
        assert est.value == pytest.approx(np.max(np.abs(np.linalg.eigvals(m))), rel=1e-8)
        assert est.value < 0.12

    def test_zero(self):
        assert spectral_radius_estimate(np.zeros((3, 3))).value == 0.0

    def test_non_square(self):
        with pytest.raises(ValueError):
            spectral_radius_estimate(np.ones((2, 3)))
