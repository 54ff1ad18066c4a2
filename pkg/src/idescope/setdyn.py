"""Point-cloud approximation of nonautonomous sets and their limit sets.

A fibre is a finite cloud of states with a resolution: the sampled source
sets have no gaps wider than the resolution, and every set statement holds
up to that scale.  One-dimensional clouds are kept sorted and are read as
intervals ("chained"): when an iterate opens a gap wider than the
resolution, the chord midpoint of the preimages is inserted and mapped, so
the image of an interval stays a covered interval.  Segments in higher
dimension are chained in their sampling order the same way.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySetError, PreconditionError
from .process import ModelSpec, evolve, step
from .util import dumps, rng_for

MERGE_TOL = 1e-12
SAMPLED = "sampled"
ITERATED = "iterated"
INTERSECTED = "intersected"
CLOSURE = "closure"
PROVENANCES = (SAMPLED, ITERATED, INTERSECTED, CLOSURE)
LIMSUP = "limsup"
NESTED = "nested"
MAX_POINTS = 400_000


def _dedup(points: np.ndarray, chained: bool) -> np.ndarray:
    if len(points) <= 1:
        return points
    if points.shape[1] == 1:
        y = np.sort(points[:, 0])
        keep = np.empty(len(y), dtype=bool)
        keep[0] = True
        keep[1:] = np.diff(y) > MERGE_TOL
        return y[keep, None]
    tree = cKDTree(points)
    pairs = tree.query_pairs(MERGE_TOL, p=np.inf, output_type="ndarray")
    if len(pairs) == 0:
        return points
    drop = np.zeros(len(points), dtype=bool)
    drop[np.max(pairs, axis=1)] = True
    return points[~drop]


@dataclass(eq=False)
class FiberCloud:
    """Finite approximation of one fibre at ``time``.

    ``points`` has shape (m, d); a 1-D array is read as m scalar points.
    Points closer than 1e-12 in the sup-norm are merged.
    """

    time: int
    points: np.ndarray
    resolution: float
    provenance: str = SAMPLED
    chained: bool = False
    allow_empty: bool = False
    notes: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be an (m, d) array")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if len(pts) == 0 and not self.allow_empty:
            raise EmptySetError("empty fibre cloud (pass allow_empty=True to allow)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud points must be finite")
        self.points = _dedup(pts, self.chained)
        self.time = int(self.time)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return len(self.points)

    def interval(self):
        """(min, max) of a scalar cloud."""
        if self.dimension != 1:
            raise ValueError("interval() needs a scalar cloud")
        return float(self.points[0, 0]), float(self.points[-1, 0])

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.points), initial=0.0))

    def replace(self, **kw) -> "FiberCloud":
        args = dict(time=self.time, points=self.points, resolution=self.resolution,
                    provenance=self.provenance, chained=self.chained,
                    allow_empty=self.allow_empty, notes=self.notes)
        args.update(kw)
        return FiberCloud(**args)


def _pts(c) -> np.ndarray:
    if isinstance(c, FiberCloud):
        return c.points
    p = np.asarray(c, dtype=float)
    return p[:, None] if p.ndim == 1 else p


def nearest_distances(a, b) -> np.ndarray:
    """For each point of a, the sup-norm distance to the nearest point of b."""
    pa, pb = _pts(a), _pts(b)
    if len(pb) == 0:
        raise EmptySetError("distance to an empty set is undefined")
    if pa.shape[1] != pb.shape[1]:
        raise ValueError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    if len(pa) == 0:
        return np.zeros(0)
    if pa.shape[1] == 1:
        y = np.sort(pb[:, 0])
        x = pa[:, 0]
        i = np.searchsorted(y, x)
        left = np.abs(x - y[np.clip(i - 1, 0, len(y) - 1)])
        right = np.abs(y[np.clip(i, 0, len(y) - 1)] - x)
        return np.minimum(left, right)
    d, _ = cKDTree(pb).query(pa, p=np.inf)
    return d


def hausdorff_semidist(a, b) -> float:
    """dist(a, b) = max over p in a of min over q in b of |p - q|_inf."""
    return float(np.max(nearest_distances(a, b), initial=0.0))


def hausdorff(a, b) -> float:
    return max(hausdorff_semidist(a, b), hausdorff_semidist(b, a))


def thin(points: np.ndarray, h: float) -> np.ndarray:
    """One representative per sup-norm bin of width h (the smallest point in it)."""
    points = _pts(points)
    if len(points) <= 1:
        return points
    order = np.lexsort(points.T[::-1])
    p = points[order]
    keys = np.floor(p / h).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return p[np.sort(first)]


# --- sampling ----------------------------------------------------------------

def _axis_grid(lo, hi, resolution, rng):
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if hi == lo:
        return np.array([lo])
    h = 2.0 * resolution / 3.0
    m = int(math.ceil((hi - lo) / h)) + 1
    g = np.linspace(lo, hi, m)
    step_ = (hi - lo) / (m - 1)
    # jitter keeps the mesh below 1.5 * step <= resolution; endpoints stay exact
    g[1:-1] += rng.uniform(-step_ / 4, step_ / 4, m - 2)
    return g


def sample_set(descriptor, resolution: float, seed: int = 0, time: int = 0,
               max_points: int = 2_000_000) -> FiberCloud:
    """Deterministic grid-plus-jitter sample of a set descriptor.

    Descriptors are dicts with ``kind`` one of
    ``interval`` (lo, hi), ``box`` (lo, hi as lists), ``ball`` (center, radius;
    sup-norm ball), ``segment`` (a, b), ``random`` (lo, hi, count) or
    ``points`` (points).  A list of points is read as ``points``.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if isinstance(descriptor, FiberCloud):
        return descriptor.replace(time=time)
    if not isinstance(descriptor, Mapping):
        descriptor = {"kind": "points", "points": descriptor}
    kind = descriptor.get("kind")
    rng = rng_for(seed, time)
    if kind == "points":
        pts = np.asarray(descriptor["points"], dtype=float)
        return FiberCloud(time, pts, resolution, SAMPLED)
    if kind == "interval":
        g = _axis_grid(float(descriptor["lo"]), float(descriptor["hi"]), resolution, rng)
        return FiberCloud(time, g[:, None], resolution, SAMPLED, chained=True)
    if kind in ("box", "ball"):
        if kind == "box":
            lo = np.atleast_1d(np.asarray(descriptor["lo"], dtype=float))
            hi = np.atleast_1d(np.asarray(descriptor["hi"], dtype=float))
        else:
            c = np.atleast_1d(np.asarray(descriptor["center"], dtype=float))
            r = float(descriptor["radius"])
            lo, hi = c - r, c + r
        axes = [_axis_grid(l, h, resolution, rng) for l, h in zip(lo, hi)]
        count = int(np.prod([len(a) for a in axes], dtype=float))
        if count > max_points:
            raise ValueError(f"a grid of {count} points exceeds max_points={max_points}; "
                             "use a 'random' descriptor in high dimension")
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return FiberCloud(time, pts, resolution, SAMPLED, chained=len(lo) == 1)
    if kind == "segment":
        a = np.atleast_1d(np.asarray(descriptor["a"], dtype=float))
        b = np.atleast_1d(np.asarray(descriptor["b"], dtype=float))
        length = float(np.max(np.abs(b - a)))
        s = _axis_grid(0.0, 1.0, resolution / length, rng) if length > 0 else np.array([0.0])
        pts = a[None, :] + s[:, None] * (b - a)[None, :]
        return FiberCloud(time, pts, resolution, SAMPLED, chained=True)
    if kind == "random":
        lo = np.atleast_1d(np.asarray(descriptor["lo"], dtype=float))
        hi = np.atleast_1d(np.asarray(descriptor["hi"], dtype=float))
        count = int(descriptor["count"])
        pts = lo + (hi - lo) * rng.random((count, len(lo)))
        # the extreme corners are always included
        pts = np.vstack([lo[None, :], hi[None, :], pts])
        return FiberCloud(time, pts, resolution, SAMPLED)
    raise ValueError(f"unknown set descriptor kind {kind!r}")


def descriptor_contains(descriptor, points, tol: float = 0.0) -> np.ndarray:
    """Membership mask of points (m, d) in the closed set described."""
    p = _pts(points)
    if isinstance(descriptor, FiberCloud) or not isinstance(descriptor, Mapping):
        ref = descriptor if isinstance(descriptor, FiberCloud) else np.asarray(descriptor, dtype=float)
        return nearest_distances(p, ref) <= tol
    kind = descriptor["kind"]
    if kind == "points":
        return nearest_distances(p, descriptor["points"]) <= tol
    if kind == "interval":
        lo, hi = float(descriptor["lo"]), float(descriptor["hi"])
        return np.all((p >= lo - tol) & (p <= hi + tol), axis=1)
    if kind in ("box", "random"):
        lo = np.asarray(descriptor["lo"], dtype=float)
        hi = np.asarray(descriptor["hi"], dtype=float)
        return np.all((p >= lo - tol) & (p <= hi + tol), axis=1)
    if kind == "ball":
        c = np.asarray(descriptor["center"], dtype=float)
        return np.max(np.abs(p - c), axis=1) <= float(descriptor["radius"]) + tol
    if kind == "segment":
        a = np.atleast_1d(np.asarray(descriptor["a"], dtype=float))
        b = np.atleast_1d(np.asarray(descriptor["b"], dtype=float))
        seg = a + np.linspace(0, 1, 10_001)[:, None] * (b - a)
        return nearest_distances(p, seg) <= tol + float(np.max(np.abs(b - a))) / 10_000
    raise ValueError(f"unknown set descriptor kind {kind!r}")


# --- iteration ---------------------------------------------------------------

def refined_image(func: Callable, X: np.ndarray, r: float, max_points: int = MAX_POINTS):
    """Image of a chained cloud with no image gap wider than r.

    Returns (sources, images, capped) where ``sources`` contains the inserted
    chord midpoints, so that images[i] = func(sources[i]).
    """
    Y = func(X)
    capped = False
    while len(X) > 1:
        gy = np.max(np.abs(np.diff(Y, axis=0)), axis=1)
        cand = np.nonzero(gy > r)[0]
        if len(cand) == 0:
            break
        Xm = 0.5 * (X[cand] + X[cand + 1])
        # stop where the chord has no representable midpoint left
        ok = np.any(Xm != X[cand], axis=1) & np.any(Xm != X[cand + 1], axis=1)
        cand, Xm = cand[ok], Xm[ok]
        if len(cand) == 0:
            break
        if len(X) + len(cand) > max_points:
            capped = True
            break
        Ym = func(Xm)
        X = np.insert(X, cand + 1, Xm, axis=0)
        Y = np.insert(Y, cand + 1, Ym, axis=0)
    return X, Y, capped


def advance(model: ModelSpec, cloud: FiberCloud, steps: int = 1) -> FiberCloud:
    """The cloud phi(t + steps; t, cloud) with t = cloud.time."""
    c = cloud
    for _ in range(steps):
        t = c.time
        if c.chained:
            _, Y, capped = refined_image(lambda X: step(model, t, X), c.points, c.resolution)
            notes = c.notes + (("refinement capped",) if capped and "refinement capped" not in c.notes else ())
        else:
            Y, notes = step(model, t, c.points), c.notes
        c = FiberCloud(t + 1, Y, c.resolution, ITERATED, c.chained, c.allow_empty, notes)
    return c


def _source(A, tau):
    if isinstance(A, FiberCloud):
        return A.replace(time=tau)
    if isinstance(A, Mapping):
        return A[tau]
    return A(tau)


@dataclass
class LimitTrace:
    """Cauchy or distance trace: pairs (s, dist)."""

    values: list
    tol: float
    converged: bool

    @property
    def final(self) -> float:
        return self.values[-1][1] if self.values else math.nan


def _check_grid(s_grid):
    s_grid = [int(s) for s in s_grid]
    if not s_grid or any(b <= a for a, b in zip(s_grid, s_grid[1:])) or s_grid[0] < 0:
        raise ValueError("s_grid must be a nonempty increasing list of nonnegative integers")
    return s_grid


def pullback_limit_fiber(model: ModelSpec, source, tau: int, s_grid, tol: float):
    """Clouds phi(tau; tau - s, source(tau - s)) for s in s_grid with their Cauchy trace."""
    s_grid = _check_grid(s_grid)
    clouds = []
    for s in s_grid:
        clouds.append(advance(model, _source(source, tau - s), s))
    trace = [(s_grid[k + 1], hausdorff(clouds[k], clouds[k + 1])) for k in range(len(clouds) - 1)]
    converged = bool(trace) and trace[-1][1] < tol
    out = clouds[-1].replace(provenance=INTERSECTED)
    return out, LimitTrace(trace, tol, converged)


# 1-D interval bookkeeping for nested intersections

def _intervals(y: np.ndarray, delta: float):
    y = np.sort(y)
    lo, hi = y - delta, y + delta
    brk = np.nonzero(lo[1:] > hi[:-1])[0]
    starts = np.concatenate([[0], brk + 1])
    ends = np.concatenate([brk, [len(y) - 1]])
    return lo[starts], hi[ends]


def _intersect(a, b):
    (al, ar), (bl, br) = a, b
    i = j = 0
    out_l, out_r = [], []
    while i < len(al) and j < len(bl):
        l, r = max(al[i], bl[j]), min(ar[i], br[j])
        if l <= r:
            out_l.append(l)
            out_r.append(r)
        if ar[i] < br[j]:
            i += 1
        else:
            j += 1
    return np.array(out_l), np.array(out_r)


def _inside(y: np.ndarray, iv) -> np.ndarray:
    L, R = iv
    if len(L) == 0:
        return np.zeros(len(y), dtype=bool)
    idx = np.searchsorted(L, y, side="right") - 1
    ok = idx >= 0
    res = np.zeros(len(y), dtype=bool)
    res[ok] = y[ok] <= R[idx[ok]]
    return res


def forward_limit_fiber(model: ModelSpec, A, tau: int, s_grid, tol: float, mode: str = LIMSUP):
    """Approximate the forward limit fibre from A(tau).

    ``limsup``: the union of the iterates over the trailing window
    [s_grid[-2], s_grid[-1]] (closure of the tail union, one point per bin of
    half the resolution).  ``nested``: the points of the final iterate that
    lie within one resolution of every earlier iterate, i.e. the nested
    intersection over s of phi(tau + s; tau, A(tau)).  The trace compares
    consecutive window clouds (limsup) or filtered clouds at the grid
    points (nested) in both directions.
    """
    s_grid = _check_grid(s_grid)
    if mode not in (LIMSUP, NESTED):
        raise ValueError(f"mode must be {LIMSUP!r} or {NESTED!r}")
    c = _source(A, tau)
    if c.size == 0:
        raise EmptySetError(f"A({tau}) is empty")
    res = c.resolution
    s_max = s_grid[-1]
    marks = set(s_grid)
    snapshots = []
    if mode == NESTED:
        one_d = c.dimension == 1
        iv = _intervals(c.points[:, 0], res) if one_d else None
        history = [] if not one_d else None
        for s in range(0, s_max + 1):
            if s > 0:
                c = advance(model, c, 1)
            if one_d:
                iv = _intersect(iv, _intervals(c.points[:, 0], res))
            else:
                history.append(c.points)
            if s in marks:
                if one_d:
                    keep = c.points[_inside(c.points[:, 0], iv)]
                else:
                    mask = np.ones(c.size, dtype=bool)
                    for h in history:
                        mask &= nearest_distances(c.points, h) <= res
                    keep = c.points[mask]
                if len(keep) == 0:
                    raise EmptySetError(f"nested intersection became empty at s={s} (tau={tau})")
                snapshots.append((s, FiberCloud(tau + s, keep, res, INTERSECTED, c.chained)))
        out_points = snapshots[-1][1].points
        provenance = INTERSECTED
    else:
        window = None
        windows = []
        for s in range(0, s_max + 1):
            if s > 0:
                c = advance(model, c, 1)
            window = c.points if window is None else thin(np.vstack([window, c.points]), res / 2)
            if s in marks:
                windows.append((s, thin(window, res / 2)))
                window = c.points
        snapshots = [(s, FiberCloud(tau + s, w, res, CLOSURE)) for s, w in windows]
        # the final cloud collects [s_grid[-2], s_max]
        out_points = snapshots[-1][1].points
        provenance = CLOSURE
    trace = [(snapshots[k + 1][0], hausdorff(snapshots[k][1], snapshots[k + 1][1]))
             for k in range(len(snapshots) - 1)]
    converged = bool(trace) and trace[-1][1] < tol
    # the fibre belongs to time tau even though its points live at later times
    out = FiberCloud(tau, out_points, res, provenance, chained=False)
    return out, LimitTrace(trace, tol, converged)


@dataclass
class OmegaForward:
    minus: FiberCloud
    plus: FiberCloud
    fibers: dict
    traces: dict

    def __iter__(self):
        return iter((self.minus, self.plus))

    @property
    def converged(self) -> bool:
        return all(t.converged for t in self.traces.values())


def omega_from_fibers(fibers: Mapping, resolution: float | None = None):
    """omega^- (points in every fibre up to resolution) and omega^+ (merged cloud)."""
    if not fibers:
        raise ValueError("no fibres given")
    clouds = [fibers[t] for t in sorted(fibers)]
    res = resolution or max(c.resolution for c in clouds)
    merged = thin(np.vstack([c.points for c in clouds]), res / 2)
    plus = FiberCloud(0, merged, res, CLOSURE)
    mask = np.ones(plus.size, dtype=bool)
    for c in clouds:
        mask &= nearest_distances(plus.points, c) <= res
    minus = FiberCloud(0, plus.points[mask], res, INTERSECTED, allow_empty=True)
    return minus, plus


def omega_forward(model: ModelSpec, A, tau_range, s_grid, tol: float, mode: str = LIMSUP) -> OmegaForward:
    """Forward limit fibres over tau_range and the sets omega^- and omega^+."""
    tau_range = [int(t) for t in tau_range]
    if not tau_range:
        raise ValueError("empty tau_range")
    fibers, traces = {}, {}
    for tau in tau_range:
        fibers[tau], traces[tau] = forward_limit_fiber(model, A, tau, s_grid, tol, mode)
    minus, plus = omega_from_fibers(fibers)
    return OmegaForward(minus, plus, fibers, traces)


class FiberMap(dict):
    """tau -> FiberCloud with the pullback trace that produced it."""

    trace: LimitTrace | None = None

    @property
    def converged(self) -> bool:
        return self.trace is not None and self.trace.converged


def _absorbing_at(absorbing, t):
    if isinstance(absorbing, Mapping) and "kind" in absorbing:
        return absorbing
    if isinstance(absorbing, Mapping):
        return absorbing[t]
    if callable(absorbing):
        return absorbing(t)
    return absorbing


def check_positive_invariance(model: ModelSpec, absorbing, times, resolution: float, seed: int = 0,
                              tol: float = 1e-12):
    """Raise PreconditionError with a witness if F_t(A(t)) leaves A(t+1)."""
    for t in times:
        if not model.time_domain.stepping(t):
            continue
        src = sample_set(_absorbing_at(absorbing, t), resolution, seed, time=t)
        img = step(model, t, src.points)
        scale = max(1.0, float(np.max(np.abs(img), initial=0.0)))
        inside = descriptor_contains(_absorbing_at(absorbing, t + 1), img, tol * scale)
        if not np.all(inside):
            i = int(np.argmin(inside))
            raise PreconditionError(
                f"absorbing set is not positively invariant: F_{t} maps {src.points[i].tolist()} "
                f"to {img[i].tolist()} outside A({t + 1})",
                witness={"t": t, "point": src.points[i].tolist(), "image": img[i].tolist()})


def attractor_star_fibers(model: ModelSpec, absorbing, tau_range, s_max: int, tol: float,
                          resolution: float, seed: int = 0, s_grid=None) -> FiberMap:
    """Fibres of the maximal invariant set inside a positively invariant A.

    The fibre at the first time of ``tau_range`` is the pullback limit over
    s_grid (default: doubling up to s_max); later fibres follow from
    invariance, A*(t + 1) = F_t(A*(t)).
    """
    tau_range = sorted(int(t) for t in tau_range)
    if not tau_range:
        raise ValueError("empty tau_range")
    check_positive_invariance(model, absorbing, tau_range[:-1], resolution, seed)
    if s_grid is None:
        s_grid = []
        s = s_max
        while s >= 10 and len(s_grid) < 5:
            s_grid.append(s)
            s //= 2
        s_grid = sorted(s_grid) or [s_max]
    tau0 = tau_range[0]
    source = lambda t: sample_set(_absorbing_at(absorbing, t), resolution, seed, time=t)
    first, trace = pullback_limit_fiber(model, source, tau0, s_grid, tol)
    out = FiberMap()
    out.trace = trace
    c = first.replace(chained=first.dimension == 1)
    out[tau0] = c
    for t in range(tau0, tau_range[-1]):
        c = advance(model, c, 1)
        out[t + 1] = c.replace(provenance=INTERSECTED)
    return out


def omega_star(model: ModelSpec, attractor_fibers: Mapping, tau_tail, tol: float):
    """Accumulation cloud of the attractor fibres over a time tail.

    U_T is the union of A*(t) for t >= T in the tail; the trace compares
    U_T for consecutive checkpoints T and the cloud returned is U_T at the
    tail midpoint.
    """
    tail = sorted(int(t) for t in tau_tail)
    if len(tail) < 2:
        raise ValueError("omega_star needs a tail with at least two times")
    missing = [t for t in tail if t not in attractor_fibers]
    if missing:
        raise ValueError(f"attractor fibres missing at {missing[:5]}")
    res = max(attractor_fibers[t].resolution for t in tail)
    k = len(tail)
    checkpoints = sorted(set([tail[0], tail[k // 4], tail[k // 2], tail[(3 * k) // 4]]))
    unions = {}
    acc = None
    for t in reversed(tail):
        pts = attractor_fibers[t].points
        acc = pts if acc is None else thin(np.vstack([acc, pts]), res / 2)
        if t in checkpoints:
            unions[t] = thin(acc, res / 2)
    trace = [(checkpoints[i + 1], hausdorff(unions[checkpoints[i]], unions[checkpoints[i + 1]]))
             for i in range(len(checkpoints) - 1)]
    converged = bool(trace) and all(d < tol for _, d in trace[-1:])
    mid = tail[k // 2]
    return FiberCloud(mid, unions[mid], res, CLOSURE), LimitTrace(trace, tol, converged)


@dataclass
class InvarianceReport:
    rows: list  # (tau, positive distance, negative distance)
    tol: float

    @property
    def positive(self) -> bool:
        return all(p < self.tol for _, p, _ in self.rows)

    @property
    def negative(self) -> bool:
        return all(n < self.tol for _, _, n in self.rows)

    @property
    def invariant(self) -> bool:
        return self.positive and self.negative


def check_invariance(model: ModelSpec, fibers: Mapping, tol: float) -> InvarianceReport:
    rows = []
    for t in sorted(fibers):
        if t + 1 not in fibers or not model.time_domain.stepping(t):
            continue
        img = advance(model, fibers[t], 1)
        nxt = fibers[t + 1]
        rows.append((t, hausdorff_semidist(img, nxt), hausdorff_semidist(nxt, img)))
    return InvarianceReport(rows, tol)


@dataclass
class AsymptoticInvarianceReport:
    mode: str
    T: dict = field(default_factory=dict)  # positive: eps -> first T or None
    distances: dict = field(default_factory=dict)  # positive: tau -> sup distance
    witnesses: dict = field(default_factory=dict)  # negative: (T, eps) -> list
    missing: dict = field(default_factory=dict)  # negative: (T, eps) -> points without witness

    @property
    def succeeded(self) -> bool:
        if self.mode == "positive":
            return all(v is not None for v in self.T.values())
        return all(len(v) == 0 for v in self.missing.values())


def verify_asymptotic_invariance(model: ModelSpec, omega_plus: FiberCloud, mode: str, eps_list,
                                 tau_probe, horizon: int = 10, T_list=(3,), max_targets: int = 200):
    """Empirical asymptotic positive or negative invariance of omega^+.

    positive: for each probe tau, d(tau) = max over 1 <= s <= horizon of
    dist(phi(tau + s; tau, omega^+), omega^+); T(eps) is the first probe
    from which on every d < eps.  negative: for sampled u in omega^+ and
    each T, look for an observation time t among the probes and u* in
    omega^+ with |phi(t; t - T, u*) - u| < eps.
    """
    if omega_plus.size == 0:
        raise EmptySetError("omega_plus is empty")
    probes = sorted(int(t) for t in tau_probe)
    eps_list = [float(e) for e in eps_list]
    rep = AsymptoticInvarianceReport(mode)
    chained = omega_plus.dimension == 1
    base = omega_plus.replace(chained=chained)
    if mode == "positive":
        for tau in probes:
            c = base.replace(time=tau)
            worst = 0.0
            for _ in range(horizon):
                c = advance(model, c, 1)
                worst = max(worst, hausdorff_semidist(c, omega_plus))
            rep.distances[tau] = worst
        for eps in eps_list:
            rep.T[eps] = None
            for i, T in enumerate(probes):
                if all(rep.distances[t] < eps for t in probes[i:]):
                    rep.T[eps] = T
                    break
        return rep
    if mode != "negative":
        raise ValueError("mode must be 'positive' or 'negative'")
    pts = omega_plus.points
    stride = max(1, int(math.ceil(len(pts) / max_targets)))
    targets = pts[::stride]
    for T in T_list:
        best = np.full(len(targets), np.inf)
        best_t = np.zeros(len(targets), dtype=int)
        best_src = np.zeros_like(targets)
        for t in probes:
            start = t - T
            func = lambda X: evolve(model, start, t, X)
            if chained:
                src, img, _ = refined_image(func, pts, omega_plus.resolution)
            else:
                src, img = pts, func(pts)
            if img.shape[1] == 1:
                order = np.argsort(img[:, 0])
                ys = img[order, 0]
                x = targets[:, 0]
                j = np.clip(np.searchsorted(ys, x), 1, len(ys) - 1) if len(ys) > 1 else np.zeros(len(x), int)
                cand = np.stack([j - 1, j], axis=1) if len(ys) > 1 else np.stack([j, j], axis=1)
                dc = np.abs(ys[cand] - x[:, None])
                pick = cand[np.arange(len(x)), np.argmin(dc, axis=1)]
                d = np.min(dc, axis=1)
                idx = order[pick]
            else:
                d, idx = cKDTree(img).query(targets, p=np.inf)
            better = d < best
            best[better] = d[better]
            best_t[better] = t
            best_src[better] = src[idx[better]]
        for eps in eps_list:
            ok = best < eps
            rep.witnesses[(T, eps)] = [
                {"u": targets[i].tolist(), "t": int(best_t[i]), "u_star": best_src[i].tolist(),
                 "dist": float(best[i])} for i in np.nonzero(ok)[0]]
            rep.missing[(T, eps)] = [targets[i].tolist() for i in np.nonzero(~ok)[0]]
    return rep


@dataclass
class AttractionVerdict:
    trace: list
    tol: float
    attracting: bool


def verify_forward_attraction(model: ModelSpec, target_fibers: Mapping, A, tau: int, s_grid,
                              tol: float = 1e-3) -> AttractionVerdict:
    """Trace dist(phi(tau + s; tau, A(tau)), target(tau + s)).

    Attracting iff the final value is below tol and the last quartile of the
    trace does not increase by more than tol.
    """
    s_grid = _check_grid(s_grid)
    c = _source(A, tau)
    trace = []
    s_prev = 0
    for s in s_grid:
        c = advance(model, c, s - s_prev)
        s_prev = s
        if tau + s not in target_fibers:
            raise ValueError(f"target fibre missing at t={tau + s}")
        trace.append((s, hausdorff_semidist(c, target_fibers[tau + s])))
    vals = [d for _, d in trace]
    q = vals[len(vals) - max(2, len(vals) // 4):]
    monotone = all(b <= a + tol for a, b in zip(q, q[1:]))
    return AttractionVerdict(trace, tol, bool(vals[-1] < tol and monotone))


@dataclass
class AutonomyReport:
    traces: dict  # tau -> list of (s, value)
    slopes: dict  # tau -> fitted log-slope or None
    floor: float
    slope_threshold: float
    straightness: dict = field(default_factory=dict)  # tau -> late / early slope
    min_straightness: float = 0.85

    @property
    def final(self) -> float:
        return max(tr[-1][1] for tr in self.traces.values())

    @property
    def slope(self):
        vals = [v for v in self.slopes.values() if v is not None]
        return max(vals) if vals else None

    @property
    def exponential(self) -> bool:
        """Negative log-slope that does not flatten along the tail.

        Algebraic decay s^-n has a late-to-early slope ratio near 0.7 at
        every horizon; exponential decay keeps it near 1.
        """
        s = self.slope
        if s is None or not s < self.slope_threshold:
            return False
        return all(r is not None and r >= self.min_straightness for r in self.straightness.values())

    def first_below(self, level: float):
        """Largest over tau of the first s with trace value below level (None if never)."""
        out = 0
        for tr in self.traces.values():
            hit = next((s for s, v in tr if v < level), None)
            if hit is None:
                return None
            out = max(out, hit)
        return out


def _fit(pts):
    s = np.array([p[0] for p in pts], dtype=float)
    v = np.log(np.array([p[1] for p in pts]))
    return float(np.polyfit(s, v, 1)[0])


def _log_slope(tr, floor):
    """Log-linear slope of the tail above ``floor`` and the ratio of the
    slopes fitted to its later and earlier halves."""
    pts = [(s, v) for s, v in tr if v > floor]
    if len(pts) < 4:
        return None, None
    tail = pts[len(pts) // 2:]
    slope = _fit(tail)
    h = len(tail) // 2
    early, late = tail[:h + 1], tail[h:]
    if len(early) < 2 or len(late) < 2:
        return slope, None
    e = _fit(early)
    return slope, (_fit(late) / e if e < 0 else None)


def verify_asymptotic_autonomy(model: ModelSpec, limit_model: ModelSpec, A, tau_probe, horizon: int,
                               resolution: float = 0.1, seed: int = 0, floor: float = 1e-13,
                               slope_threshold: float = -1e-3) -> AutonomyReport:
    """Trace s -> max over sampled a in A of |phi(tau + s; tau, a) - F^s(a)|.

    The tail of each trace above ``floor`` is fitted log-linearly; the decay
    is called exponential when the worst slope is below ``slope_threshold``.
    """
    if not limit_model.autonomous:
        raise ValueError(f"limit model {limit_model.name!r} is not autonomous")
    traces, slopes, straight = {}, {}, {}
    for tau in tau_probe:
        tau = int(tau)
        src = A if isinstance(A, FiberCloud) else sample_set(A, resolution, seed, time=tau)
        x = src.points
        y = src.points
        tr = []
        for s in range(1, horizon + 1):
            x = step(model, tau + s - 1, x)
            y = step(limit_model, 0, y)
            tr.append((s, float(np.max(np.abs(x - y)))))
        traces[tau] = tr
        slopes[tau], straight[tau] = _log_slope(tr, floor)
    return AutonomyReport(traces, slopes, floor, slope_threshold, straight)


# --- reports -----------------------------------------------------------------

def _cloud_json(c: FiberCloud):
    return {"time": c.time, "resolution": c.resolution, "provenance": c.provenance,
            "points": c.points.tolist(), "notes": list(c.notes)}


def _interval_summary(c: FiberCloud):
    if c is None or c.dimension != 1 or c.size == 0:
        return None
    lo, hi = c.interval()
    return [lo, hi]


@dataclass
class LimitSetReport:
    model: str
    params: dict
    resolution: float
    tol: float
    omega_fibers: dict = field(default_factory=dict)
    omega_minus: FiberCloud | None = None
    omega_plus: FiberCloud | None = None
    omega_star: FiberCloud | None = None
    attractor_fibers: dict = field(default_factory=dict)
    distance_traces: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=lambda: [
        "the compact attracting set is not constructed explicitly; clouds stand in for closures"])

    def check_inclusions(self) -> dict:
        out = {}
        if self.omega_minus is not None and self.omega_plus is not None and self.omega_minus.size:
            out["omega_minus_in_plus"] = hausdorff_semidist(self.omega_minus, self.omega_plus) <= self.resolution
        if self.omega_star is not None and self.omega_plus is not None:
            out["omega_star_in_plus"] = hausdorff_semidist(self.omega_star, self.omega_plus) <= max(self.resolution, self.tol)
        return out

    def intervals(self) -> dict:
        out = {}
        for name in ("omega_minus", "omega_plus", "omega_star"):
            iv = _interval_summary(getattr(self, name))
            if iv is not None:
                out[name] = iv
        return out

    def to_dict(self, include_points: bool = True) -> dict:
        def clouds(m):
            return {str(k): _cloud_json(v) for k, v in sorted(m.items())}

        d = {
            "model": self.model,
            "params": self.params,
            "resolution": self.resolution,
            "tol": self.tol,
            "distance_traces": {k: [[int(s), float(v)] for s, v in tr] for k, tr in self.distance_traces.items()},
            "converged": dict(self.converged),
            "verdicts": dict(self.verdicts),
            "intervals": self.intervals(),
            "fiber_intervals": {str(k): _interval_summary(v) for k, v in sorted(self.omega_fibers.items())},
            "extra": self.extra,
            "notes": self.notes,
        }
        if include_points:
            for name in ("omega_minus", "omega_plus", "omega_star"):
                c = getattr(self, name)
                d[name] = None if c is None else _cloud_json(c)
            d["omega_fibers"] = clouds(self.omega_fibers)
            d["attractor_fibers"] = clouds(self.attractor_fibers)
        return d

    def write_json(self, path, include_points: bool = True):
        with open(path, "w") as fh:
            fh.write(dumps(self.to_dict(include_points)) + "\n")

    def write_csv(self, directory, nodes=None) -> list:
        """One CSV per cloud and per trace; returns the written paths."""
        os.makedirs(directory, exist_ok=True)
        written = []
        named = [(n, getattr(self, n)) for n in ("omega_minus", "omega_plus", "omega_star")]
        named += [(f"omega_fiber_{k}", v) for k, v in sorted(self.omega_fibers.items())]
        for name, c in named:
            if c is None:
                continue
            p = os.path.join(directory, f"{name}.csv")
            write_cloud_csv(c, p, nodes)
            written.append(p)
        for name, tr in sorted(self.distance_traces.items()):
            p = os.path.join(directory, f"trace_{name}.csv")
            write_trace_csv(tr, p)
            written.append(p)
        return written


def write_cloud_csv(c: FiberCloud, path, nodes=None):
    """``index,value`` rows for clouds; ``x,u`` columns for spatial states."""
    f = lambda v: format(float(v), ".17g")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if nodes is not None:
            m = c.size
            w.writerow(["x"] + (["u"] if m == 1 else [f"u_{j}" for j in range(m)]))
            for i, x in enumerate(nodes):
                w.writerow([f(x)] + [f(v) for v in c.points[:, i]])
        elif c.dimension == 1:
            w.writerow(["index", "value"])
            for i, v in enumerate(c.points[:, 0]):
                w.writerow([i, f(v)])
        else:
            w.writerow(["index"] + [f"value_{j}" for j in range(c.dimension)])
            for i, row in enumerate(c.points):
                w.writerow([i] + [f(v) for v in row])


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "dist"])
        for s, d in trace:
            w.writerow([int(s), format(float(d), ".17g")])
