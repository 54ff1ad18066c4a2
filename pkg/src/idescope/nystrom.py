"""Nystrom discretisation of integrodifference equations

    u_{t+1}(x) = g_t(x, u_t(x)) + int_Omega k_t(x, y, u_t(y)) dmu(y)

on a one-dimensional habitat.  A state is the vector of values at the
quadrature nodes, and the integral becomes sum_j w_j k_t(x_i, x_j, u_j).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DivergenceError, MissingMetadataError
from .process import DiscreteInterval, ModelSpec, NONNEGATIVE

RULES = ("midpoint", "trapezoid", "gauss_legendre")
DEFAULT_RULE = "trapezoid"
DEFAULT_NODES = 128


@dataclass(frozen=True, eq=False)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray
    habitat: tuple | None
    measure_total: float
    rule: str = "explicit"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-D arrays of equal length")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if len(np.unique(nodes)) != len(nodes):
            raise ValueError("quadrature nodes must be pairwise distinct")
        if self.habitat is not None:
            lo, hi = self.habitat
            if np.any(nodes < lo) or np.any(nodes > hi):
                raise ValueError("quadrature nodes must lie in the habitat")
        if abs(weights.sum() - self.measure_total) > 1e-12 * max(1.0, self.measure_total):
            raise ValueError("weights do not sum to the habitat measure")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def cached(self, key, build):
        """Per-quadrature cache for kernel matrices (built once, read-only)."""
        if key not in self._cache:
            mat = np.asarray(build(), dtype=float)
            mat.setflags(write=False)
            self._cache[key] = mat
        return self._cache[key]


def build_quadrature(habitat, n: int = DEFAULT_NODES, rule: str = DEFAULT_RULE) -> Quadrature:
    """Nodes and positive weights on ``habitat = (lo, hi)``.

    Weights are rescaled so that they sum to hi - lo.
    """
    if n < 2:
        raise ValueError("a quadrature needs n >= 2 nodes")
    lo, hi = (float(v) for v in habitat)
    if not hi > lo:
        raise ValueError(f"degenerate habitat {habitat}")
    length = hi - lo
    if rule == "trapezoid":
        nodes = np.linspace(lo, hi, n)
        h = length / (n - 1)
        weights = np.full(n, h)
        weights[0] = weights[-1] = h / 2
    elif rule == "midpoint":
        h = length / n
        nodes = lo + h * (np.arange(n) + 0.5)
        weights = np.full(n, h)
    elif rule == "gauss_legendre":
        ref, w = np.polynomial.legendre.leggauss(n)
        nodes = lo + (ref + 1.0) * (length / 2)
        weights = w * (length / 2)
    else:
        raise ValueError(f"unknown rule {rule!r}; choose from {RULES}")
    weights = weights * (length / weights.sum())
    return Quadrature(nodes, weights, (lo, hi), length, rule)


def quadrature_from_nodes(nodes, weights) -> Quadrature:
    """A countable habitat given directly as weighted nodes."""
    weights = np.asarray(weights, dtype=float)
    return Quadrature(np.asarray(nodes, dtype=float), weights, None, float(weights.sum()))


def composite_gauss(f, lo: float, hi: float, panels: int = 64, order: int = 8) -> float:
    """Composite Gauss-Legendre integral of a vectorised ``f`` over [lo, hi]."""
    if hi <= lo:
        return 0.0
    ref, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    pts = (mids[:, None] + half[:, None] * ref[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return float(np.dot(wts, f(pts)))


def split_row_integrals(kfun, habitat, x_eval, panels: int = 64, order: int = 8) -> np.ndarray:
    """int k(x, y) dy for each x, splitting the habitat at y = x.

    Kernels with a derivative jump on the diagonal (the Laplace kernel) keep
    full Gauss accuracy this way.
    """
    lo, hi = habitat
    out = np.empty(len(x_eval))
    for i, x in enumerate(np.asarray(x_eval, dtype=float)):
        left = composite_gauss(lambda y: kfun(x, y), lo, x, panels, order)
        right = composite_gauss(lambda y: kfun(x, y), x, hi, panels, order)
        out[i] = left + right
    return out


def laplace_kernel(a: float, x, y):
    """k(x, y) = a/2 exp(-a |x - y|)."""
    return 0.5 * a * np.exp(-a * np.abs(np.subtract(x, y)))


def laplace_row_integral(a: float, habitat, x):
    """Exact int_lo^hi k(x, y) dy for the Laplace kernel."""
    lo, hi = habitat
    x = np.asarray(x, dtype=float)
    return 1.0 - 0.5 * (np.exp(-a * (x - lo)) + np.exp(-a * (hi - x)))


def laplace_gamma(a: float, habitat) -> float:
    """sup_x int k(x, y) dy = 1 - exp(-a L) on a habitat of half-width L."""
    lo, hi = habitat
    return float(-np.expm1(-a * (hi - lo) / 2))


KINKS = ("subtract", "plain")


def _laplace_matrix(q: Quadrature, a: float, kink: str = "subtract") -> np.ndarray:
    """W_ij = w_j k(x_i, x_j), optionally with singularity subtraction.

    The plain trapezoid sum loses accuracy at the kink y = x of the Laplace
    kernel.  With ``kink="subtract"`` the diagonal absorbs the difference
    between the exact row integral and the row sum,

        sum_j w_j k(x_i, x_j) (f_j - f_i) + f_i int k(x_i, y) dy,

    which keeps the matrix nonnegative and makes its row sums exact.
    """
    if kink not in KINKS:
        raise ValueError(f"kink must be one of {KINKS}")

    def build():
        w = laplace_kernel(a, q.nodes[:, None], q.nodes[None, :]) * q.weights[None, :]
        if kink == "subtract" and q.habitat is not None:
            exact = laplace_row_integral(a, q.habitat, q.nodes)
            w[np.diag_indices_from(w)] += exact - w.sum(axis=1)
        return w

    return q.cached(("laplace", float(a), kink), build)


# --- Nemytskii parts -------------------------------------------------------

class ZeroGrowth:
    """g_t = 0 (pure Urysohn equations)."""

    family = "zero"
    certified = True

    def apply(self, t, x, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def gamma(self, t, q):
        return 0.0

    def ell(self, t, q):
        return 0.0


class BevertonHoltGrowth:
    """g_t(x, z) = (1 - theta) a_t(x) z / (1 + z) on z >= 0."""

    family = "laplace_bh"
    certified = True

    def __init__(self, theta: float, growth_field: Callable):
        if not 0 <= theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        self.theta = float(theta)
        self.growth_field = growth_field

    def alpha(self, t, q):
        """alpha_t = max_i a_t(x_i)."""
        return float(np.max(self.growth_field(t, q.nodes)))

    def apply(self, t, x, u):
        u = np.asarray(u, dtype=float)
        return (1 - self.theta) * self.growth_field(t, x) * u / (1 + u)

    def gamma(self, t, q):
        return (1 - self.theta) * self.alpha(t, q)

    def ell(self, t, q):
        return (1 - self.theta) * self.alpha(t, q)


class CustomGrowth:
    """User-supplied g_t(x, z); bounds are optional but required for certification."""

    family = "custom"

    def __init__(self, func, gamma=None, ell=None):
        self.func = func
        self._gamma = gamma
        self._ell = ell
        self.certified = False

    def apply(self, t, x, u):
        return np.asarray(self.func(t, x, np.asarray(u, dtype=float)), dtype=float)

    def gamma(self, t, q):
        if self._gamma is None:
            raise MissingMetadataError("custom growth declares no sup bound gamma_t")
        return float(self._gamma(t)) if callable(self._gamma) else float(self._gamma)

    def ell(self, t, q):
        if self._ell is None:
            raise MissingMetadataError("custom growth declares no Lipschitz constant ell_t")
        return float(self._ell(t)) if callable(self._ell) else float(self._ell)


def nemytskii_apply(g, t: int, u, q: Quadrature) -> np.ndarray:
    """(G_t u)(x_i) = g_t(x_i, u(x_i))."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != q.size:
        raise ValueError(f"state has {u.shape[-1]} values for {q.size} nodes")
    return g.apply(t, q.nodes, u)


# --- Urysohn parts ---------------------------------------------------------

class LaplaceBHKernel:
    """k_t(x, y, z) = theta k(x, y) a_t(y) z / (1 + z) with the Laplace kernel."""

    family = "laplace_bh"
    certified = True

    def __init__(self, theta: float, a: float, growth_field: Callable, kink: str = "subtract"):
        self.theta = float(theta)
        self.a = float(a)
        self.growth_field = growth_field
        self.kink = kink

    def alpha(self, t, q):
        return float(np.max(self.growth_field(t, q.nodes)))

    def matrix(self, q):
        return _laplace_matrix(q, self.a, self.kink)

    def integrand(self, t, q, u):
        return self.growth_field(t, q.nodes) * u / (1 + u)

    def apply(self, t, q, u):
        u = np.asarray(u, dtype=float)
        if self.theta == 0:
            return np.zeros_like(u)
        f = self.growth_field(t, q.nodes) * u / (1 + u)
        return self.theta * (f @ self.matrix(q).T)

    def rho(self, t, q):
        # kappa_t = theta alpha_t k
        return self.theta * self.alpha(t, q) * float(np.max(self.matrix(q).sum(axis=1)))

    def lambda_sup(self, t, q):
        # |d/dz z/(1+z)| <= 1 on z >= 0
        return self.rho(t, q)

    def rho_analytic(self, t, q):
        if q.habitat is None:
            return None
        return self.theta * self.alpha(t, q) * laplace_gamma(self.a, q.habitat)



class RickerKernel:
    """k_t(x, y, z) = alpha_t k(x, y) z e^{-z} + b_t(x) / mu(Omega), Laplace k."""

    family = "ricker"
    certified = True

    def __init__(self, a: float, alpha_seq: Callable[[int], float], b_seq: Callable, kink: str = "subtract"):
        self.a = float(a)
        self.alpha_seq = alpha_seq
        self.b_seq = b_seq
        self.kink = kink

    def matrix(self, q):
        return _laplace_matrix(q, self.a, self.kink)

    def integrand(self, t, q, u):
        return u * np.exp(-u)

    def b_values(self, t, x):
        return np.asarray(self.b_seq(t, np.asarray(x, dtype=float)), dtype=float) * np.ones(np.shape(x))

    def apply(self, t, q, u):
        u = np.asarray(u, dtype=float)
        growth = self.alpha_seq(t) * ((u * np.exp(-u)) @ self.matrix(q).T)
        # the inhomogeneity integrates b_t(x)/mu over Omega
        return growth + self.b_values(t, q.nodes) * (q.weights.sum() / q.measure_total)

    def gamma_discrete(self, q):
        return float(np.max(self.matrix(q).sum(axis=1)))

    def rho(self, t, q):
        rows = self.matrix(q).sum(axis=1)
        return float(np.max(self.alpha_seq(t) * rows / math.e + self.b_values(t, q.nodes)))

    def lambda_sup(self, t, q):
        # |d/dz z e^{-z}| <= 1 on z >= 0
        return self.alpha_seq(t) * self.gamma_discrete(q)

    def rho_analytic(self, t, q):
        if q.habitat is None:
            return None
        return self.alpha_seq(t) * laplace_gamma(self.a, q.habitat) / math.e + float(
            np.max(self.b_values(t, q.nodes)))



class CustomKernel:
    """User kernel k_t(x, y, z) given as a broadcasting function.

    ``kappa(t, x, y)`` and ``lam(t, x, y)`` are the optional dominating
    and Lipschitz functions of the kernel; without them no bounds can be reported.
    """

    family = "custom"

    def __init__(self, func, kappa=None, lam=None):
        self.func = func
        self.kappa = kappa
        self.lam = lam
        self.certified = False

    def apply(self, t, q, u):
        u = np.asarray(u, dtype=float)
        x = q.nodes[:, None]
        y = q.nodes[None, :]
        # vals[..., i, j] = k_t(x_i, x_j, u_j)
        vals = self.func(t, x, y, u[..., None, :])
        return np.sum(np.asarray(vals, dtype=float) * q.weights, axis=-1)

    def _row_max(self, fn, t, q, what):
        if fn is None:
            raise MissingMetadataError(f"custom kernel declares no {what}")
        vals = fn(t, q.nodes[:, None], q.nodes[None, :]) * np.ones((q.size, q.size))
        return float(np.max(vals @ q.weights))

    def rho(self, t, q):
        return self._row_max(self.kappa, t, q, "dominating function kappa_t")

    def lambda_sup(self, t, q):
        return self._row_max(self.lam, t, q, "Lipschitz function lambda_t")

    def rho_analytic(self, t, q):
        if self.kappa is None or q.habitat is None:
            return None
        rows = split_row_integrals(lambda x, y: self.kappa(t, x, y) * np.ones_like(y),
                                   q.habitat, q.nodes)
        return float(np.max(rows))


def constant_kernel(c: float) -> CustomKernel:
    """k == c, independent of the state."""
    c = float(c)
    return CustomKernel(lambda t, x, y, z: np.full(np.broadcast_shapes(np.shape(x), np.shape(y), np.shape(z)), c),
                        kappa=lambda t, x, y: abs(c) + 0 * (x - y),
                        lam=lambda t, x, y: 0 * (x - y))


def urysohn_apply(k, q: Quadrature, t: int, u) -> np.ndarray:
    """(K_t u)(x_i) = sum_j w_j k_t(x_i, x_j, u_j)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != q.size:
        raise ValueError(f"state has {u.shape[-1]} values for {q.size} nodes")
    return k.apply(t, q, u)


def nystrom_interpolant(k, q: Quadrature, t: int, u):
    """x -> (K_t u)(x) at arbitrary habitat points (natural Nystrom interpolation).

    With singularity subtraction the integrand at x is interpolated linearly
    between the nodes.
    """
    if not isinstance(k, (RickerKernel, LaplaceBHKernel)):
        raise TypeError("no interpolant for this kernel family")
    u = np.asarray(u, dtype=float)
    f = k.integrand(t, q, u)

    def interp(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        kv = laplace_kernel(k.a, x[:, None], q.nodes[None, :]) * q.weights[None, :]
        val = kv @ f
        if k.kink == "subtract" and q.habitat is not None:
            fx = np.interp(x, q.nodes, f)
            val = val + (laplace_row_integral(k.a, q.habitat, x) - kv.sum(axis=1)) * fx
        if isinstance(k, RickerKernel):
            return k.alpha_seq(t) * val + k.b_values(t, x)
        return k.theta * val

    return interp


# --- bounds ------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisBounds:
    """Constants of the hypotheses at one time t.

    ``rho`` and ``lambda_sup`` are discrete maxima over node rows;
    ``rho_analytic`` is the exact sup-integral where one is available.
    """

    gamma_t: float
    ell_t: float
    rho_t: float
    lambda_sup_t: float
    rho_analytic: float | None = None
    certified: bool = True

    def __post_init__(self):
        for name in ("gamma_t", "ell_t", "rho_t", "lambda_sup_t"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def hypothesis_bounds(g, k, q: Quadrature, t: int) -> HypothesisBounds:
    return HypothesisBounds(
        gamma_t=float(g.gamma(t, q)),
        ell_t=float(g.ell(t, q)),
        rho_t=float(k.rho(t, q)),
        lambda_sup_t=float(k.lambda_sup(t, q)),
        rho_analytic=k.rho_analytic(t, q),
        certified=bool(g.certified and k.certified),
    )


IG_PROP = "growth_and_kernel"
I0_PROP = "kernel_only"


def absorbing_bound(bounds, t: int, variant: str = IG_PROP, t_min: int | None = None,
                    t_range=None, which: str = "discrete") -> float:
    """Radius of the absorbing fibre at time t.

    ``bounds`` maps t to HypothesisBounds (a Mapping or a callable).  For the
    Urysohn variant the radius is sup_t rho_t over ``t_range`` (defaults to the
    mapping's keys).
    """
    def get(s):
        try:
            b = bounds[s] if isinstance(bounds, Mapping) else bounds(s)
        except KeyError:
            raise MissingMetadataError(f"no hypothesis bounds at t={s}") from None
        if b is None:
            raise MissingMetadataError(f"no hypothesis bounds at t={s}")
        return b

    def rho_of(b):
        if which == "analytic":
            if b.rho_analytic is None:
                raise MissingMetadataError("no analytic rho available")
            return b.rho_analytic
        return b.rho_t

    if variant == IG_PROP:
        t_star = t if (t_min is not None and t == t_min) else t - 1
        b = get(t_star)
        return b.gamma_t + rho_of(b)
    if variant == I0_PROP:
        keys = t_range if t_range is not None else (bounds.keys() if isinstance(bounds, Mapping) else None)
        if keys is None:
            raise MissingMetadataError("the Urysohn radius needs a finite t_range")
        return max(rho_of(get(s)) for s in keys)
    raise ValueError(f"unknown variant {variant!r}")


# --- models ------------------------------------------------------------------

def ide_model(g, k, q: Quadrature, name: str = "ide", time_domain=None, domain=NONNEGATIVE,
              period=None, params=None) -> ModelSpec:
    """The Nystrom map u -> G_t(u) + K_t(u) as a ModelSpec."""
    if getattr(k, "kernel_nodes", None) is not None and k.kernel_nodes != q.size:
        raise ValueError("kernel and quadrature disagree on the node count")
    nodes = q.nodes

    def rhs(t, u):
        return g.apply(t, nodes, u) + k.apply(t, q, u)

    metadata = {
        "quadrature": q,
        "growth": g,
        "kernel": k,
        "bounds": lambda t: hypothesis_bounds(g, k, q, t),
        "darbo": lambda t: g.ell(t, q),
        "certified": bool(g.certified and k.certified),
    }
    return ModelSpec(name=name, rhs=rhs, dimension=q.size,
                     time_domain=time_domain or DiscreteInterval(), domain=domain,
                     period=period, params=dict(params or {}), metadata=metadata)


@dataclass
class FixedPointResult:
    u: np.ndarray
    increments: list
    ratios: list
    iterations: int
    converged: bool


def fixed_point_iterate(model: ModelSpec, u0, tol: float = 1e-12, max_iter: int = 10_000,
                        t: int = 0) -> FixedPointResult:
    """Picard iteration of an autonomous model until ||u_{k+1} - u_k|| < tol.

    The ratios ||u_{k+1} - u_k|| / ||u_k - u_{k-1}|| are the empirical
    contraction factors.
    """
    if not model.autonomous:
        raise ValueError(f"model {model.name!r} is not autonomous (period != 1)")
    u = np.asarray(u0, dtype=float)
    increments, ratios = [], []
    for k in range(1, max_iter + 1):
        nxt = model.rhs(t, u)
        inc = float(np.max(np.abs(nxt - u)))
        if increments and increments[-1] > 0:
            ratios.append(inc / increments[-1])
        increments.append(inc)
        u = nxt
        if inc < tol:
            return FixedPointResult(u, increments, ratios, k, True)
        if not math.isfinite(inc):
            break
    res = FixedPointResult(u, increments, ratios, len(increments), False)
    raise DivergenceError(f"fixed-point iteration of {model.name!r} did not converge "
                          f"within {max_iter} steps", partial=res)


@dataclass(frozen=True)
class SmallnessCheck:
    holds: bool
    margin: float
    general_holds: bool
    general_margin: float
    K: float


def ricker_smallness_check(alpha: float, K: float | None = None) -> SmallnessCheck:
    """Smallness condition for exponential asymptotic autonomy of the Ricker IDE.

    With sup_t alpha_t = 2 alpha_+ and alpha = alpha_+ gamma the general
    condition reads 2(1 + e^-2) alpha < (1 - alpha)/K; with the growth
    constant K = exp(1/(1 - alpha)) it becomes the specialised inequality.
    Margins are right-hand side minus left-hand side.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    k_special = math.exp(1 / (1 - alpha))
    if K is None:
        K = k_special
    if K < 1:
        raise ValueError("K must be >= 1")
    lhs = 2 * (1 + math.exp(-2)) * alpha
    general_margin = (1 - alpha) / K - lhs
    special_margin = (1 - alpha) - lhs * k_special
    return SmallnessCheck(special_margin > 0, special_margin, general_margin > 0, general_margin, K)


@dataclass
class RefinementTable:
    n: list
    values: list
    differences: list

    @property
    def decreasing(self) -> bool:
        d = self.differences
        return all(b < a for a, b in zip(d, d[1:]))

    def rows(self):
        out = []
        for i, (n, v) in enumerate(zip(self.n, self.values)):
            out.append((n, v, self.differences[i - 1] if i > 0 else None))
        return out


def refine_and_compare(build, n_list, observable=None) -> RefinementTable:
    """Evaluate ``observable(build(n))`` for each n and tabulate successive differences.

    The observable returns a float or an array on a grid shared by all n.
    """
    n_list = list(n_list)
    if len(n_list) < 2:
        raise ValueError("need at least two resolutions")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    values = []
    for n in n_list:
        obj = build(n)
        values.append(observable(obj) if observable is not None else obj)
    diffs = [float(np.max(np.abs(np.asarray(b, dtype=float) - np.asarray(a, dtype=float))))
             for a, b in zip(values, values[1:])]
    return RefinementTable(n_list, values, diffs)
