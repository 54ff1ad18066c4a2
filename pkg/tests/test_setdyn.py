import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idescope import setdyn as sd
from idescope.errors import EmptySetError, PreconditionError
from idescope.models import (bh_asy, bh_autonomous, bh_closed_form, bh_forward_fiber_formula, bh_piecewise,
                             linear_exninv, ricker_limit, spatial_bh)
from idescope.process import ModelSpec, evolve

RES = 1e-3


def interval_source(lo, hi, res=RES, seed=0):
    return lambda t: sd.sample_set({"kind": "interval", "lo": lo, "hi": hi}, res, seed, time=t)


def brute_semidist(a, b):
    return max(min(np.max(np.abs(x - y)) for y in b) for x in a)


class TestHausdorff:
    def test_self_distance(self, rng):
        a = rng.normal(size=(30, 2))
        assert sd.hausdorff(a, a) == 0.0

    def test_nested_intervals(self):
        a = sd.sample_set({"kind": "interval", "lo": 0, "hi": 2}, RES)
        b = sd.sample_set({"kind": "interval", "lo": 0, "hi": 1}, RES)
        assert sd.hausdorff_semidist(a, b) == pytest.approx(1.0, abs=RES)
        assert sd.hausdorff_semidist(b, a) <= RES / 2

    def test_against_brute_force(self, rng):
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(40, 3))
        assert sd.hausdorff_semidist(a, b) == pytest.approx(brute_semidist(a, b), rel=1e-15)
        assert sd.hausdorff(a, b) == max(brute_semidist(a, b), brute_semidist(b, a))

    def test_empty_target(self):
        with pytest.raises(EmptySetError):
            sd.hausdorff_semidist(np.zeros((2, 1)), np.zeros((0, 1)))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_metric_properties(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (r.normal(size=(r.integers(1, 20), 2)) for _ in range(3))
        assert sd.hausdorff(a, c) <= sd.hausdorff(a, b) + sd.hausdorff(b, c) + 1e-12
        assert sd.hausdorff(a, b) == sd.hausdorff(b, a)
        assert sd.hausdorff(a[::-1], b) == sd.hausdorff(a, b)


class TestSampling:
    def test_interval_endpoints_and_mesh(self):
        c = sd.sample_set({"kind": "interval", "lo": 0, "hi": 1}, 0.01, seed=3)
        y = c.points[:, 0]
        assert y[0] == 0.0 and y[-1] == 1.0 and np.max(np.diff(y)) <= 0.01

    def test_points_verbatim(self):
        c = sd.sample_set([[1.0], [3.0]], 0.1)
        assert c.points[:, 0].tolist() == [1.0, 3.0]

    def test_box_covers(self, rng):
        c = sd.sample_set({"kind": "box", "lo": [0, 0], "hi": [1, 2]}, 0.05, seed=1)
        probe = rng.uniform([0, 0], [1, 2], (500, 2))
        assert np.max(sd.nearest_distances(probe, c)) <= 0.05

    def test_nonpositive_resolution(self):
        with pytest.raises(ValueError):
            sd.sample_set({"kind": "interval", "lo": 0, "hi": 1}, 0.0)

    def test_seed_determinism(self):
        d = {"kind": "interval", "lo": 0, "hi": 1}
        assert np.array_equal(sd.sample_set(d, 0.01, 7).points, sd.sample_set(d, 0.01, 7).points)
        assert not np.array_equal(sd.sample_set(d, 0.01, 7).points, sd.sample_set(d, 0.01, 8).points)

    def test_random_includes_corners(self):
        c = sd.sample_set({"kind": "random", "lo": [0, 0, 0], "hi": [1, 2, 3], "count": 5}, 0.1)
        assert c.size == 7 and np.max(c.points[:, 2]) == 3.0

    def test_dedup_merges_close_points(self):
        c = sd.FiberCloud(0, [0.0, 1e-14, 1.0], 0.1)
        assert c.size == 2

    def test_empty_cloud_rejected(self):
        with pytest.raises(EmptySetError):
            sd.FiberCloud(0, np.zeros((0, 1)), 0.1)


class TestRefinedImage:
    def test_gaps_below_resolution(self):
        X = np.linspace(0, 1, 5)[:, None]
        src, img, capped = sd.refined_image(lambda x: np.exp(3 * x), X, 0.01)
        assert not capped and np.max(np.abs(np.diff(img[:, 0]))) <= 0.01
        np.testing.assert_array_equal(img, np.exp(3 * src))


class TestPullback:
    def test_autonomous_bh(self):
        c, tr = sd.pullback_limit_fiber(bh_autonomous(3.0), interval_source(0, 4), 0, (10, 20, 40), 1e-3)
        lo, hi = c.interval()
        assert tr.converged and lo == 0.0 and hi == pytest.approx(2.0, abs=1e-6)

    def test_piecewise_collapses_to_zero(self):
        c, tr = sd.pullback_limit_fiber(bh_piecewise(0.5, 3.0), interval_source(0, 4), 0, (20, 40, 80), 1e-3)
        assert tr.converged and c.sup_norm() < 1e-6

    def test_affine_series(self):
        b = lambda t: 0.5 ** abs(t)
        m = ModelSpec("affine", lambda t, u: 0.5 * np.asarray(u) + b(t), 1)
        for tau in (-3, 0, 4):
            c, tr = sd.pullback_limit_fiber(m, interval_source(-1, 1), tau, (20, 40, 60), 1e-6)
            want = sum(0.5 ** (k - 1) * b(tau - k) for k in range(1, 200))
            assert tr.converged and sd.hausdorff(c, np.array([[want]])) < 1e-6

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            sd.pullback_limit_fiber(bh_autonomous(), interval_source(0, 1), 0, (5, 5), 1e-3)


class TestForwardFiber:
    def test_linear_limsup_is_zero(self):
        c, tr = sd.forward_limit_fiber(linear_exninv(0.5), interval_source(-2, 2), 0, (40, 60, 80), 1e-6)
        assert tr.converged and c.sup_norm() < 1e-6

    def test_linear_nested_is_empty(self):
        with pytest.raises(EmptySetError):
            sd.forward_limit_fiber(linear_exninv(0.5), interval_source(-2, 2), 0, (40, 80), 1e-6, sd.NESTED)

    @pytest.mark.parametrize("mode", [sd.LIMSUP, sd.NESTED])
    def test_piecewise_positive_times(self, mode):
        c, tr = sd.forward_limit_fiber(bh_piecewise(0.5, 3.0), interval_source(0, 4), 2, (50, 100, 150), 1e-3,
                                 mode)
        lo, hi = c.interval()
        assert tr.converged and lo == 0.0 and hi == pytest.approx(2.0, abs=2 * RES)

    @pytest.mark.parametrize("tau", [-1, -3, -8])
    def test_nested_matches_formula(self, tau):
        m = bh_piecewise(1.5, 3.0)
        c, tr = sd.forward_limit_fiber(m, interval_source(0, 4), tau, (50, 100), 1e-3, sd.NESTED)
        want = bh_forward_fiber_formula(m.metadata["bh"], tau)
        assert tr.converged and c.interval()[1] == pytest.approx(want[1], abs=2 * RES)

    def test_fibres_increase_in_tau(self):
        m = bh_piecewise(1.5, 3.0)
        his = [sd.forward_limit_fiber(m, interval_source(0, 4), tau, (50, 100), 1e-3, sd.NESTED)[0].interval()[1]
               for tau in (-6, -4, -2, 0)]
        assert all(b >= a - RES for a, b in zip(his, his[1:]))

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            sd.forward_limit_fiber(bh_autonomous(), interval_source(0, 1), 0, (1, 2), 1e-3, "liminf")


class TestOmegaForward:
    def test_autonomous_constant_fibres(self):
        om = sd.omega_forward(bh_autonomous(3.0), interval_source(0, 4), range(-2, 3), (50, 100, 150), 1e-3)
        his = [f.interval()[1] for f in om.fibers.values()]
        assert max(his) - min(his) < RES and om.converged

    def test_two_three_row(self):
        om = sd.omega_forward(bh_piecewise(2.0, 3.0), interval_source(0, 4), range(-15, 6, 2), (50, 100, 150),
                              1e-3, sd.NESTED)
        minus, plus = om
        assert minus.interval()[1] == pytest.approx(1.0, abs=2e-3)
        assert plus.interval()[1] == pytest.approx(2.0, abs=2e-3)
        assert sd.hausdorff_semidist(minus, plus) <= RES

    def test_linear_collapses(self):
        minus, plus = sd.omega_forward(linear_exninv(0.5), interval_source(-2, 2), range(0, 4), (40, 80), 1e-6)
        assert plus.sup_norm() < 1e-6 and minus.sup_norm() < 1e-6


class TestAttractorAndOmegaStar:
    def _star(self, am, ap, lo=-20, hi=60):
        m = bh_piecewise(am, ap)
        return m, sd.attractor_star_fibers(m, m.metadata["absorbing"], range(lo, hi + 1), 40, 1e-3, RES)

    def test_subcritical_is_zero(self):
        _, star = self._star(0.5, 0.8)
        assert all(star[t].sup_norm() < 1e-6 for t in star)

    def test_row_five_positive_fibres(self):
        _, star = self._star(3.0, 2.0)
        assert star.converged
        # from [0, 2] at t = 0 the rate-2 map gives 2^(t+1) / (2^(t+1) - 1)
        for t in (0, 5, 12):
            assert star[t].interval()[1] == pytest.approx(2.0 ** (t + 1) / (2.0 ** (t + 1) - 1), abs=RES)
        assert star[60].interval()[1] == pytest.approx(1.0, abs=RES)

    def test_omega_star_rows(self):
        m, star = self._star(0.5, 3.0)
        ws, tr = sd.omega_star(m, star, range(20, 61), 1e-3)
        assert ws.sup_norm() < 1e-6
        m, star = self._star(2.0, 3.0)
        ws, tr = sd.omega_star(m, star, range(20, 61), 1e-3)
        assert ws.interval()[1] == pytest.approx(2.0, abs=RES) and tr.converged

    def test_fibres_are_invariant(self):
        m, star = self._star(2.0, 3.0, -10, 10)
        assert sd.check_invariance(m, star, 1e-3).invariant

    def test_precondition_witness(self):
        with pytest.raises(PreconditionError) as exc:
            sd.attractor_star_fibers(bh_autonomous(3.0), {"kind": "interval", "lo": 0, "hi": 1},
                                     range(0, 3), 20, 1e-3, 0.01)
        assert exc.value.witness["image"][0] > 1.0

    def test_spatial_fibres_below_extremal_solution(self):
        m = spatial_bh(n=16)
        R = 3.0 * 0.75 + 0.25 * 4.0 + 1.0
        box = {"kind": "random", "lo": [0.0] * 16, "hi": [R] * 16, "count": 20}
        c, tr = sd.pullback_limit_fiber(m, lambda t: sd.sample_set(box, 0.1, 0, time=t), 0, (10, 20, 40), 1e-3)
        upper = evolve(m, -40, 0, np.full(16, R))
        assert np.all(c.points <= upper + 1e-12)
        assert tr.converged


class TestInvariance:
    def test_singleton_zero_not_positively_invariant_for_linear(self):
        m = linear_exninv(0.5)
        fibers = {t: sd.FiberCloud(t, [0.0], RES) for t in range(0, 3)}
        assert not sd.check_invariance(m, fibers, 1e-3).positive

    def test_linear_absorbing_positively_invariant(self):
        m = linear_exninv(0.5)
        sd.check_positive_invariance(m, m.metadata["absorbing"], range(0, 10), 0.01)

    def test_fixed_point_invariant(self):
        m = ricker_limit(n=16)
        from idescope.nystrom import fixed_point_iterate
        u = fixed_point_iterate(m, np.zeros(16)).u
        fibers = {t: sd.FiberCloud(t, u[None, :], RES) for t in range(3)}
        assert sd.check_invariance(m, fibers, 1e-10).invariant


class TestAsymptoticInvariance:
    def _plus(self):
        return sd.sample_set({"kind": "interval", "lo": 0, "hi": 2}, RES)

    def test_autonomous_positive(self):
        rep = sd.verify_asymptotic_invariance(bh_autonomous(3.0), self._plus(), "positive", [1e-3], range(-3, 3),
                                              horizon=5)
        assert rep.succeeded and rep.T[1e-3] == -3

    def test_piecewise_invariant_at_all_times(self):
        # F_t maps [0, 2] into itself for both rates
        rep = sd.verify_asymptotic_invariance(bh_piecewise(0.5, 3.0), self._plus(), "positive", [1e-3],
                                              range(-3, 5), horizon=5)
        assert rep.succeeded and rep.T[1e-3] == -3

    def test_too_small_set_fails(self):
        small = sd.sample_set({"kind": "interval", "lo": 0, "hi": 1}, RES)
        rep = sd.verify_asymptotic_invariance(bh_piecewise(0.5, 3.0), small, "positive", [1e-3],
                                              range(-3, 5), horizon=5)
        want = bh_closed_form(lambda t: 3.0, 0, 5, 1.0) - 1.0
        assert not rep.succeeded and rep.distances[4] == pytest.approx(want, rel=1e-12)

    def test_piecewise_negative(self):
        rep = sd.verify_asymptotic_invariance(bh_piecewise(0.5, 3.0), self._plus(), "negative", [1e-3],
                                              range(3, 8), T_list=(3,))
        assert rep.succeeded and len(rep.witnesses[(3, 1e-3)]) > 0
        w = rep.witnesses[(3, 1e-3)][0]
        assert abs(evolve(bh_piecewise(0.5, 3.0), w["t"] - 3, w["t"], np.array(w["u_star"]))[0] - w["u"][0]) < 1e-3


class TestForwardAttraction:
    def test_row_five_attracts(self):
        m = bh_piecewise(3.0, 2.0)
        star = sd.attractor_star_fibers(m, m.metadata["absorbing"], range(-20, 81), 40, 1e-3, RES)
        v = sd.verify_forward_attraction(m, star, interval_source(0, 4), 0, range(0, 81, 10))
        assert v.attracting

    def test_row_two_does_not_attract(self):
        m = bh_piecewise(0.5, 3.0)
        star = sd.attractor_star_fibers(m, m.metadata["absorbing"], range(-20, 81), 40, 1e-3, RES)
        v = sd.verify_forward_attraction(m, star, interval_source(0, 4), 0, range(0, 81, 10))
        assert not v.attracting and v.trace[-1][1] == pytest.approx(2.0, abs=1e-3)


class TestAsymptoticAutonomy:
    def test_identical_models(self):
        m = bh_autonomous(2.0)
        rep = sd.verify_asymptotic_autonomy(m, m, {"kind": "interval", "lo": 0.5, "hi": 5}, [0, 3], 20)
        assert rep.final == 0.0

    def test_bh_asy_approaches_limit(self):
        rep = sd.verify_asymptotic_autonomy(bh_asy(2.0, 1, 1.0), bh_autonomous(2.0),
                                            {"kind": "interval", "lo": 0.5, "hi": 5}, [0, 5], 400)
        tr = rep.traces[0]
        assert tr[-1][1] < tr[5][1] and tr[-1][1] < 1e-2
        assert not rep.exponential

    def test_limit_must_be_autonomous(self):
        with pytest.raises(ValueError):
            sd.verify_asymptotic_autonomy(bh_autonomous(), bh_piecewise(), [[1.0]], [0], 5)


class TestReport:
    def test_json_and_csv(self, tmp_path):
        rep = sd.LimitSetReport("bh_autonomous", {"alpha": 3.0}, RES, 1e-3)
        rep.omega_plus = sd.FiberCloud(0, [0.0, 1.0, 2.0], RES)
        rep.omega_minus = sd.FiberCloud(0, [0.0, 1.0], RES)
        rep.distance_traces["x"] = [(1, 0.5), (2, 0.25)]
        rep.verdicts.update(rep.check_inclusions())
        rep.write_json(tmp_path / "r.json")
        d = json.loads((tmp_path / "r.json").read_text())
        assert d["intervals"]["omega_plus"] == [0, 2] and d["verdicts"]["omega_minus_in_plus"]
        paths = rep.write_csv(tmp_path / "csv")
        rows = list(csv.reader(open(tmp_path / "csv" / "trace_x.csv")))
        assert rows == [["s", "dist"], ["1", "0.5"], ["2", "0.25"]] and len(paths) == 3
