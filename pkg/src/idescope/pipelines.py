"""End-to-end experiments assembled from the set-dynamics primitives."""
from __future__ import annotations

import numpy as np

from . import setdyn as sd
from .models import bh_omega_table, bh_piecewise, ricker_limit, spatial_ricker
from .nystrom import fixed_point_iterate
from .process import ModelSpec

BH_TAU_RANGE = tuple(range(-15, 6, 2))
BH_S_GRID = (50, 100, 150, 200)


def _sampler(descriptor, resolution, seed):
    return lambda t: sd.sample_set(descriptor, resolution, seed, time=t)


def omega_experiment(model: ModelSpec, source=None, resolution: float = 2.5e-4, tol: float = 1e-3,
                     seed: int = 0, tau_range=BH_TAU_RANGE, s_grid=BH_S_GRID, mode: str = sd.NESTED,
                     attractor_range=(-20, 200), attractor_s_max: int = 200, tail=(100, 200),
                     attraction_tau: int = -10, attraction_step: int = 10) -> sd.LimitSetReport:
    """Forward fibres, omega^-, omega^+, attractor fibres, omega*, and the
    forward-attraction verdict for one model with a positively invariant A."""
    descriptor = source if source is not None else model.metadata["absorbing"]
    A = _sampler(descriptor, resolution, seed)
    rep = sd.LimitSetReport(model.name, dict(model.params), resolution, tol)
    om = sd.omega_forward(model, A, tau_range, s_grid, tol, mode)
    rep.omega_fibers = om.fibers
    rep.omega_minus, rep.omega_plus = om.minus, om.plus
    for tau, tr in om.traces.items():
        rep.distance_traces[f"omega_fiber_{tau}"] = tr.values
    rep.converged["omega_fibers"] = om.converged

    lo, hi = attractor_range
    star = sd.attractor_star_fibers(model, descriptor, range(lo, hi + 1), attractor_s_max, tol,
                                    resolution, seed)
    rep.attractor_fibers = {t: star[t] for t in star if t % 10 == 0 or lo <= t <= lo + 30}
    rep.distance_traces["attractor_pullback"] = star.trace.values
    rep.converged["attractor_pullback"] = star.converged

    inv = sd.check_invariance(model, {t: star[t] for t in range(lo, min(hi, lo + 30) + 1)}, tol)
    rep.verdicts["attractor_invariant"] = inv.invariant

    ws, wtr = sd.omega_star(model, star, range(tail[0], tail[1] + 1), tol)
    rep.omega_star = ws
    rep.distance_traces["omega_star"] = wtr.values
    rep.converged["omega_star"] = wtr.converged

    grid = list(range(0, hi - attraction_tau + 1, attraction_step))
    grid = [s for s in grid if attraction_tau + s <= hi]
    att = sd.verify_forward_attraction(model, star, A, attraction_tau, grid, tol)
    rep.distance_traces["forward_attraction"] = att.trace
    rep.verdicts["forward_attracting"] = att.attracting
    same = (sd.hausdorff_semidist(rep.omega_plus, ws) < tol and sd.hausdorff_semidist(ws, rep.omega_plus) < tol)
    rep.verdicts["omega_plus_equals_star"] = same
    rep.verdicts["dichotomy_consistent"] = att.attracting == same
    rep.verdicts.update(rep.check_inclusions())
    rep.extra["source_points"] = A(tau_range[0]).size
    return rep


def compare_with_table(rep: sd.LimitSetReport, alpha_minus: float, alpha_plus: float, tol: float = 1e-3):
    """Endpoint differences between computed omega sets and the expected table row."""
    row = bh_omega_table(bh_piecewise(alpha_minus, alpha_plus).metadata["bh"])
    got = rep.intervals()
    diffs = {}
    for name in ("omega_star", "omega_minus", "omega_plus"):
        exp = getattr(row, name)
        if name not in got:
            diffs[name] = float("inf")
            continue
        diffs[name] = max(abs(got[name][0] - exp[0]), abs(got[name][1] - exp[1]))
    return row, diffs, all(d < tol for d in diffs.values())


def bh_table_experiment(alpha_minus: float, alpha_plus: float, **kw):
    model = bh_piecewise(alpha_minus, alpha_plus)
    rep = omega_experiment(model, **kw)
    row, diffs, ok = compare_with_table(rep, alpha_minus, alpha_plus, rep.tol)
    rep.extra["expected"] = row.as_dict()
    rep.extra["endpoint_diffs"] = diffs
    rep.verdicts["matches_table"] = ok
    return rep


def ricker_forward_experiment(n: int = 128, resolution: float = 1e-6, tol: float = 1e-8, seed: int = 0,
                              count: int = 32, tau_range=range(0, 6), s_grid=(50, 100, 150, 200),
                              horizon: int = 200, **params):
    """omega^+ of the spatial Ricker equation from a random ball, u* of the limit
    equation, and the asymptotic-autonomy trace."""
    model = spatial_ricker(n=n, **params)
    limit_kw = {k: v for k, v in params.items() if k in ("a", "L", "alpha_plus", "b_amp", "b_scale", "rule", "kink")}
    limit = ricker_limit(n=n, **limit_kw)
    q = model.metadata["quadrature"]
    R = max(model.metadata["bounds"](t).rho_t for t in range(0, 50))
    box = {"kind": "random", "lo": [0.0] * q.size, "hi": [R] * q.size, "count": count}
    A = _sampler(box, resolution, seed)
    om = sd.omega_forward(model, A, tau_range, s_grid, tol, sd.LIMSUP)
    fp = fixed_point_iterate(limit, np.zeros(q.size))
    aut = sd.verify_asymptotic_autonomy(model, limit, box, list(tau_range)[:3], horizon, resolution, seed)
    rep = sd.LimitSetReport(model.name, dict(model.params), resolution, tol)
    rep.omega_fibers = om.fibers
    rep.omega_minus, rep.omega_plus = om.minus, om.plus
    rep.converged["omega_fibers"] = om.converged
    for tau, tr in aut.traces.items():
        rep.distance_traces[f"autonomy_{tau}"] = tr
    rep.extra.update(u_star=fp.u, omega_plus_to_ustar=sd.hausdorff(om.plus, fp.u[None, :]),
                     autonomy_slope=aut.slope, autonomy_first_below=aut.first_below(1e-8),
                     smallness_margin=model.metadata["smallness"].margin, absorbing_radius=R)
    rep.verdicts["exponential_autonomy"] = aut.exponential
    return rep, aut, fp
