"""Semilinear structure F_t = L_t + N_t: transition operators, growth bounds,
absorbing radii and Darbo-constant products.

Norms are sup-norms on vectors and the induced (row-sum) norm on matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, MissingMetadataError, OrderingError
from .process import ModelSpec, REAL, DiscreteInterval

PULLBACK = "pullback"
FORWARD = "forward"


def _as_seq(value) -> Callable[[int], float]:
    if callable(value):
        return value
    v = float(value)
    return lambda t: v


@dataclass(frozen=True)
class SemilinearParams:
    """Growth data for ||Phi(t,s)|| <= K prod alpha_r and ||N_t(u)|| <= b_t + a_t||u||.

    The sequences may be given as constants or as callables of t.
    """

    K: float
    alpha_seq: Callable[[int], float]
    a_seq: Callable[[int], float]
    b_seq: Callable[[int], float]

    def __init__(self, K=1.0, alpha_seq=0.0, a_seq=0.0, b_seq=0.0):
        if not K >= 1:
            raise ValueError(f"K must be >= 1, got {K}")
        object.__setattr__(self, "K", float(K))
        object.__setattr__(self, "alpha_seq", _as_seq(alpha_seq))
        object.__setattr__(self, "a_seq", _as_seq(a_seq))
        object.__setattr__(self, "b_seq", _as_seq(b_seq))

    def growth(self, r: int) -> float:
        """alpha_r + K a_r, checked for admissibility."""
        al, a = self.alpha_seq(r), self.a_seq(r)
        if not (al >= 0 and a >= 0 and math.isfinite(al) and math.isfinite(a)):
            raise ValueError(f"invalid growth data at t={r}: alpha={al}, a={a}")
        return al + self.K * a

    def inhom(self, s: int) -> float:
        b = self.b_seq(s)
        if not (b >= 0 and math.isfinite(b)):
            raise ValueError(f"invalid b_{s} = {b}")
        return b


@dataclass(frozen=True)
class LinearPart:
    """t -> L_t as a d x d matrix."""

    matrix_of: Callable[[int], np.ndarray]
    dimension: int

    def __call__(self, t: int) -> np.ndarray:
        m = np.asarray(self.matrix_of(t), dtype=float).reshape(self.dimension, self.dimension)
        if not np.all(np.isfinite(m)):
            raise ValueError(f"L_{t} has non-finite entries")
        return m


def transition_matrix(lin: LinearPart, t: int, tau: int) -> np.ndarray:
    """Phi(t, tau) = L_{t-1} ... L_tau, the identity when t == tau."""
    if tau > t:
        raise OrderingError(f"transition_matrix needs tau <= t, got tau={tau}, t={t}")
    phi = np.eye(lin.dimension)
    for r in range(tau, t):
        phi = lin(r) @ phi
    return phi


def voc_evolve(lin: LinearPart, nonlin, tau: int, t: int, u) -> np.ndarray:
    """General solution through the variation of constants formula.

    The states phi(s; tau, u) feeding the nonlinearity are computed by the
    recursion itself; the returned value is then assembled from transition
    matrices.
    """
    if tau > t:
        raise OrderingError(f"voc_evolve needs tau <= t, got tau={tau}, t={t}")
    u = np.asarray(u, dtype=float)
    if u.shape != (lin.dimension,):
        raise ValueError(f"state has shape {u.shape}, expected ({lin.dimension},)")
    forcing = []
    x = u
    for s in range(tau, t):
        n_s = np.asarray(nonlin(s, x), dtype=float)
        if n_s.shape != u.shape:
            raise ValueError(f"N_{s} returned shape {n_s.shape}, expected {u.shape}")
        forcing.append(n_s)
        x = lin(s) @ x + n_s
    out = transition_matrix(lin, t, tau) @ u
    for s in range(tau, t):
        out = out + transition_matrix(lin, t, s + 1) @ forcing[s - tau]
    return out


def semilinear_model(lin: LinearPart, nonlin, name="semilinear", time_domain=None,
                     params: SemilinearParams | None = None, domain=REAL) -> ModelSpec:
    """Assemble F_t(u) = L_t u + N_t(u) as a batch-capable ModelSpec."""

    def rhs(t, u):
        u = np.asarray(u, dtype=float)
        lu = u @ lin(t).T
        return lu + nonlin(t, u)

    meta = {"semilinear": {"linear": lin, "nonlinear": nonlin}}
    if params is not None:
        meta["semilinear"]["params"] = params
    return ModelSpec(name=name, rhs=rhs, dimension=lin.dimension,
                     time_domain=time_domain or DiscreteInterval(), domain=domain,
                     metadata=meta)


def gronwall_bound(params: SemilinearParams, tau: int, t: int, norm_u: float) -> float:
    """Upper bound for ||phi(t; tau, u)|| from the discrete Gronwall lemma."""
    if tau > t:
        raise OrderingError(f"gronwall_bound needs tau <= t, got tau={tau}, t={t}")
    if norm_u < 0:
        raise ValueError("norm_u must be nonnegative")
    K = params.K
    # products prod_{r=s+1}^{t-1}, accumulated from the right
    total = 0.0
    prod = 1.0
    for s in range(t - 1, tau - 1, -1):
        total += params.inhom(s) * prod
        prod *= params.growth(s)
    return K * norm_u * prod + K * total


def absorbing_radius(params: SemilinearParams, tau: int, rho: float, direction: str = PULLBACK,
                     truncation: int = 100_000, tol: float = 1e-12) -> float:
    """rho + R_tau for the pullback or forward absorbing ball.

    The series is summed until the latest increment drops below ``tol``; the
    decay of the growth products is checked along the way.  Failing either
    within ``truncation`` terms raises DivergenceError with the partial sum.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    K = params.K
    if direction == PULLBACK:
        # R = K sum_{s<tau} b_s prod_{r=s+1}^{tau-1} g_r, walk s = tau-1, tau-2, ...
        total = 0.0
        prod = 1.0
        for k in range(truncation):
            s = tau - 1 - k
            inc = params.inhom(s) * prod
            total += inc
            prod *= params.growth(s)
            if k > 0 and inc < tol and prod < tol:
                return rho + K * total
        raise DivergenceError(
            f"pullback series at tau={tau} did not settle within {truncation} terms "
            f"(last product {prod:.3g})", partial=K * total)
    if direction == FORWARD:
        # S_{t+1} = g_t S_t + b_t with S_tau = 0, so R = K lim S_t
        acc = 0.0
        prod = 1.0
        for k in range(truncation):
            s = tau + k
            new = params.growth(s) * acc + params.inhom(s)
            prod *= params.growth(s)
            inc = abs(new - acc)
            acc = new
            if k > 0 and inc < tol and prod < tol:
                return rho + K * acc
        raise DivergenceError(
            f"forward series from tau={tau} did not settle within {truncation} terms "
            f"(last product {prod:.3g})", partial=K * acc)
    raise ValueError(f"direction must be {PULLBACK!r} or {FORWARD!r}")


def darbo_bound(model: ModelSpec, tau: int, t: int) -> float:
    """prod_{s=tau}^{t-1} dar(G_s) from declared metadata (1 when t == tau)."""
    if tau > t:
        raise OrderingError(f"darbo_bound needs tau <= t, got tau={tau}, t={t}")
    darbo = model.metadata.get("darbo")
    if darbo is None:
        raise MissingMetadataError(f"model {model.name!r} declares no Darbo constants")
    out = 1.0
    for s in range(tau, t):
        out *= float(darbo(s))
    return out


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return self.value


def spectral_radius_estimate(m, iterations: int = 10_000, tol: float = 1e-12) -> SpectralEstimate:
    """Power iteration from the all-ones vector.

    The estimate is the growth factor ||M v|| / ||v|| in the sup-norm.  It is
    reliable for nonnegative matrices (Perron root); for matrices whose
    dominant eigenvalues form a complex pair it may not settle, which shows up
    as ``converged=False``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {m.shape}")
    v = np.ones(m.shape[0])
    est = 0.0
    for k in range(1, iterations + 1):
        w = m @ v
        norm = np.max(np.abs(w))
        if norm == 0.0:
            return SpectralEstimate(0.0, True, k)
        new = norm / np.max(np.abs(v))
        v = w / norm
        if k > 1 and abs(new - est) <= tol * max(1.0, new):
            return SpectralEstimate(float(new), True, k)
        est = new
    return SpectralEstimate(float(est), False, iterations)
