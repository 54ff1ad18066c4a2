"""Catalog of concrete models with closed-form oracles.

Scalar Beverton-Holt equations u_{t+1} = a_t u_t / (1 + u_t), the
inhomogeneous linear equation u_{t+1} = alpha u_t + alpha^t, and the
spatial Beverton-Holt and Ricker integrodifference equations.
"""
from __future__ import annotations

import inspect
import math
from dataclasses import dataclass

import numpy as np

from .nystrom import (BevertonHoltGrowth, LaplaceBHKernel, RickerKernel, ZeroGrowth,
                      build_quadrature, ide_model, laplace_gamma, ricker_smallness_check)
from .process import DiscreteInterval, ModelSpec, NONNEGATIVE
from .semilinear import LinearPart, SemilinearParams, semilinear_model


# --- scalar Beverton-Holt ----------------------------------------------------

def _bh_rhs(rate):
    def rhs(t, u):
        u = np.asarray(u, dtype=float)
        return rate(t) * u / (1.0 + u)
    return rhs


@dataclass(frozen=True)
class BhPiecewiseParams:
    alpha_minus: float
    alpha_plus: float

    def __post_init__(self):
        if not (self.alpha_minus > 0 and self.alpha_plus > 0):
            raise ValueError("alpha_minus and alpha_plus must be positive")

    def rate(self, t: int) -> float:
        return self.alpha_minus if t < 0 else self.alpha_plus

    @property
    def absorbing_upper(self) -> float:
        return max(self.alpha_minus, self.alpha_plus) + 1.0


@dataclass(frozen=True)
class BhAsyParams:
    """a_t = alpha f_{t+1} / f_t with f_t = (t + c)^n; n = 0 gives constant f."""

    alpha: float
    n: int = 1
    c: float = 1.0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.n not in (0, 1, 2, 3, 4):
            raise ValueError("n must be one of 0, 1, 2, 3, 4")

    @property
    def first_time(self) -> int:
        """Smallest integer t with t + c > 0."""
        return int(math.floor(-self.c)) + 1

    def log_f(self, t):
        t = np.asarray(t, dtype=float)
        base = t + self.c
        if np.any(base <= 0):
            raise ValueError(f"f_t = (t + c)^n is not positive on the requested range (c={self.c})")
        return self.n * np.log(base)

    def rate(self, t: int) -> float:
        return self.alpha * math.exp(float(self.log_f(t + 1) - self.log_f(t)))


def bh_closed_form(params, tau: int, t: int, v: float) -> float:
    """v P / (1 + v sum_{s=tau}^{t-1} P(s, tau)) with P(s, tau) = prod_{r=tau}^{s-1} a_r.

    ``params`` is a BhPiecewiseParams, a BhAsyParams or a callable t -> a_t.
    Products are handled in log space.
    """
    if v < 0:
        raise ValueError("v must be nonnegative")
    if tau > t:
        raise ValueError("need tau <= t")
    if v == 0 or t == tau:
        return float(v)
    rate = params.rate if hasattr(params, "rate") else params
    logs = np.log([rate(r) for r in range(tau, t)])
    L = np.concatenate([[0.0], np.cumsum(logs)])
    n = t - tau
    # u = v / (exp(-L_n) + v sum_{k<n} exp(L_k - L_n))
    denom = math.exp(-L[n]) + v * float(np.sum(np.exp(L[:n] - L[n])))
    return float(v / denom)


def bh_asy_closed_form(params: BhAsyParams, tau: int, t: int, a: float) -> float:
    """phi(tau + t; tau, a) for the asymptotically autonomous equation.

    Written as a / (alpha^-t f_tau / f_{tau+t} + a sum_{s<t} alpha^{s-t} f_{tau+s} / f_{tau+t}).
    """
    if not a > 0:
        raise ValueError("a must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return float(a)
    la = math.log(params.alpha)
    s = np.arange(t + 1)
    lf = params.log_f(tau + s)
    first = math.exp(-t * la + lf[0] - lf[t])
    tail = np.exp((s[:t] - t) * la + lf[:t] - lf[t])
    return float(a / (first + a * float(np.sum(tail))))


@dataclass(frozen=True)
class SeriesLimit:
    value: float
    converged: bool
    t: int


def bh_series_limit(params: BhAsyParams, tau: int = 0, t_max: int = 1_000_000, tol: float = 1e-4) -> SeriesLimit:
    """sum_{s=0}^{t-1} f_{tau+s} / f_{tau+t} alpha^{s-t} at doubling t until Cauchy < tol."""
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    la = math.log(params.alpha)

    def partial(t):
        s = np.arange(t)
        return float(np.sum(np.exp((s - t) * la + params.log_f(tau + s) - params.log_f(tau + t))))

    t = 1
    prev = partial(t)
    while 2 * t <= t_max:
        t *= 2
        cur = partial(t)
        if abs(cur - prev) < tol:
            return SeriesLimit(cur, True, t)
        prev = cur
    return SeriesLimit(prev, False, t)


@dataclass(frozen=True)
class OmegaTableRow:
    case: str
    omega_star: tuple
    omega_minus: tuple
    omega_plus: tuple

    def as_dict(self):
        return {"case": self.case, "omega_star": list(self.omega_star),
                "omega_minus": list(self.omega_minus), "omega_plus": list(self.omega_plus)}


def bh_omega_table(params: BhPiecewiseParams) -> OmegaTableRow:
    """Expected omega sets for the five constellations of (alpha_-, alpha_+).

    Intervals are (lo, hi); the singleton {0} is (0, 0).
    """
    am, ap = params.alpha_minus, params.alpha_plus
    zero = (0.0, 0.0)
    if am <= 1 and ap <= 1:
        return OmegaTableRow("alpha_-,alpha_+<=1", zero, zero, zero)
    if am <= 1 < ap:
        return OmegaTableRow("alpha_-<=1<alpha_+", zero, zero, (0.0, ap - 1))
    if ap <= 1 < am:
        return OmegaTableRow("alpha_+<=1<alpha_-", zero, zero, zero)
    if 1 < am < ap:
        return OmegaTableRow("1<alpha_-<alpha_+", (0.0, ap - 1), (0.0, am - 1), (0.0, ap - 1))
    # 1 < alpha_+ <= alpha_-
    return OmegaTableRow("1<alpha_+<=alpha_-", (0.0, ap - 1), (0.0, ap - 1), (0.0, ap - 1))


def bh_forward_fiber_formula(params: BhPiecewiseParams, tau: int):
    """Forward limit fibre [0, upper] in the case 1 <= alpha_- < alpha_+."""
    am, ap = params.alpha_minus, params.alpha_plus
    if not 1 <= am < ap:
        raise ValueError("the fibre formula needs 1 <= alpha_- < alpha_+")
    if tau >= 0:
        return (0.0, ap - 1)
    return (0.0, bh_closed_form(params, tau, 0, ap + 1))


# --- builders ----------------------------------------------------------------

def linear_exninv(alpha: float = 0.5) -> ModelSpec:
    """u_{t+1} = alpha u_t + alpha^t on the nonnegative integers."""
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lin = LinearPart(lambda t: np.array([[alpha]]), 1)
    nonlin = lambda t, u: np.full(np.shape(u), alpha ** t)
    params = SemilinearParams(K=1.0, alpha_seq=alpha, a_seq=0.0, b_seq=lambda t: alpha ** t)
    m = semilinear_model(lin, nonlin, "linear_exninv", DiscreteInterval(0, None), params)
    m.metadata["absorbing"] = {"kind": "interval", "lo": -2.0, "hi": 2.0}
    m.params.update(alpha=alpha)
    return m


def bh_autonomous(alpha: float = 3.0) -> ModelSpec:
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return ModelSpec("bh_autonomous", _bh_rhs(lambda t: alpha), 1, DiscreteInterval(), NONNEGATIVE,
                     period=1, params={"alpha": alpha},
                     metadata={"absorbing": {"kind": "interval", "lo": 0.0, "hi": alpha + 1.0}})


def bh_piecewise(alpha_minus: float = 0.5, alpha_plus: float = 3.0) -> ModelSpec:
    p = BhPiecewiseParams(float(alpha_minus), float(alpha_plus))
    return ModelSpec("bh_piecewise", _bh_rhs(p.rate), 1, DiscreteInterval(), NONNEGATIVE,
                     period=1 if p.alpha_minus == p.alpha_plus else None,
                     params={"alpha_minus": p.alpha_minus, "alpha_plus": p.alpha_plus},
                     metadata={"bh": p, "omega_table": bh_omega_table(p),
                               "absorbing": {"kind": "interval", "lo": 0.0, "hi": p.absorbing_upper}})


def bh_asy(alpha: float = 2.0, n: int = 1, c: float = 1.0) -> ModelSpec:
    p = BhAsyParams(float(alpha), int(n), float(c))
    return ModelSpec("bh_asy", _bh_rhs(p.rate), 1, DiscreteInterval(p.first_time, None), NONNEGATIVE,
                     period=1 if p.n == 0 else None,
                     params={"alpha": p.alpha, "n": p.n, "c": p.c}, metadata={"bh_asy": p})


def bh_growth_field(t, x):
    """a_t(x) = 3 - sin(t x / 10)."""
    return 3.0 - np.sin(t * np.asarray(x, dtype=float) / 10.0)


def spatial_bh(theta: float = 0.25, a: float = 10.0, L: float = math.pi, n: int = 128,
               rule: str = "trapezoid", kink: str = "subtract") -> ModelSpec:
    """Spatial Beverton-Holt IDE with Laplace dispersal and growth field 3 - sin(tx/10)."""
    q = build_quadrature((-L, L), n, rule)
    g = BevertonHoltGrowth(theta, bh_growth_field)
    k = LaplaceBHKernel(theta, a, bh_growth_field, kink)
    m = ide_model(g, k, q, "spatial_bh", DiscreteInterval(), NONNEGATIVE,
                  params={"theta": theta, "a": a, "L": L, "n": n, "rule": rule, "kink": kink})
    m.metadata.update(
        gamma=lambda t: g.gamma(t, q),
        ell=lambda t: g.ell(t, q),
        rho=lambda t: k.rho(t, q),
        kappa=lambda t: theta * k.alpha(t, q) * k.matrix(q) / q.weights[None, :],
    )
    return m


def _ricker_parts(a, L, alpha_plus, alpha_minus, b_amp, b_scale, decay, n, rule):
    q = build_quadrature((-L, L), n, rule)
    gamma = laplace_gamma(a, (-L, L))
    alpha = alpha_plus * gamma if decay is None else float(decay)

    def alpha_seq(t):
        return alpha_plus * (1.0 + alpha ** t) if t >= 0 else alpha_minus

    def b_seq(t, x):
        if t < 0:
            return np.zeros_like(x)
        return b_amp * np.cos(x / b_scale)

    return q, gamma, alpha, alpha_seq, b_seq


def spatial_ricker(a: float = 2.0, L: float = 10.0, alpha_plus: float = 0.12, alpha_minus: float = 14.0,
                   b_amp: float = 5.0, b_scale: float = 8.0, decay: float | None = None,
                   n: int = 128, rule: str = "trapezoid", kink: str = "subtract") -> ModelSpec:
    """Urysohn Ricker IDE with alpha_t = alpha_+(1 + alpha^t) for t >= 0 and alpha_- before.

    The decay rate alpha defaults to alpha_+ gamma with gamma = 1 - e^{-aL}.
    """
    q, gamma, alpha, alpha_seq, b_seq = _ricker_parts(a, L, alpha_plus, alpha_minus, b_amp, b_scale,
                                                      decay, n, rule)
    k = RickerKernel(a, alpha_seq, b_seq, kink)
    m = ide_model(ZeroGrowth(), k, q, "spatial_ricker", DiscreteInterval(), NONNEGATIVE,
                  params={"a": a, "L": L, "alpha_plus": alpha_plus, "alpha_minus": alpha_minus,
                          "b_amp": b_amp, "b_scale": b_scale, "decay": alpha, "n": n, "rule": rule,
                          "kink": kink})
    m.metadata.update(alpha_seq=alpha_seq, gamma_kernel=gamma, decay=alpha,
                      smallness=ricker_smallness_check(alpha) if 0 < alpha < 1 else None)
    return m


def ricker_limit(a: float = 2.0, L: float = 10.0, alpha_plus: float = 0.12, b_amp: float = 5.0,
                 b_scale: float = 8.0, n: int = 128, rule: str = "trapezoid",
                 kink: str = "subtract") -> ModelSpec:
    """The autonomous limit u -> alpha_+ int k u e^{-u} + b."""
    q = build_quadrature((-L, L), n, rule)
    k = RickerKernel(a, lambda t: alpha_plus, lambda t, x: b_amp * np.cos(x / b_scale), kink)
    m = ide_model(ZeroGrowth(), k, q, "ricker_limit", DiscreteInterval(), NONNEGATIVE, period=1,
                  params={"a": a, "L": L, "alpha_plus": alpha_plus, "b_amp": b_amp,
                          "b_scale": b_scale, "n": n, "rule": rule, "kink": kink})
    m.metadata.update(gamma_kernel=laplace_gamma(a, (-L, L)))
    return m


CATALOG = {
    "linear_exninv": (linear_exninv, "u_{t+1} = alpha u_t + alpha^t on t >= 0"),
    "bh_autonomous": (bh_autonomous, "u_{t+1} = alpha u_t / (1 + u_t)"),
    "bh_piecewise": (bh_piecewise, "Beverton-Holt with rate alpha_minus for t < 0 and alpha_plus for t >= 0"),
    "bh_asy": (bh_asy, "Beverton-Holt with rate alpha (t+1+c)^n / (t+c)^n"),
    "spatial_bh": (spatial_bh, "spatial Beverton-Holt IDE, Laplace kernel, growth 3 - sin(tx/10)"),
    "spatial_ricker": (spatial_ricker, "spatial Ricker IDE, Laplace kernel, alpha_t = alpha_+(1 + alpha^t)"),
    "ricker_limit": (ricker_limit, "autonomous limit of the spatial Ricker IDE"),
}


def catalog_defaults(name: str) -> dict:
    fn = CATALOG[name][0]
    return {k: v.default for k, v in inspect.signature(fn).parameters.items()}


def catalog_instantiate(name: str, params: dict | None = None) -> ModelSpec:
    if name not in CATALOG:
        raise ValueError(f"unknown catalog model {name!r}; choose from {sorted(CATALOG)}")
    params = dict(params or {})
    allowed = catalog_defaults(name)
    extra = set(params) - set(allowed)
    if extra:
        raise ValueError(f"unknown parameters for {name}: {sorted(extra)}")
    return CATALOG[name][0](**params)
