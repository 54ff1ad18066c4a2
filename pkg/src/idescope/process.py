"""Nonautonomous difference equations u_{t+1} = F_t(u_t) and their process.

States are plain 1-D float arrays; batches of states are 2-D arrays with one
state per row.  Every right-hand side in this package is written for batches,
so ``model.rhs(t, U)`` with ``U.shape == (m, d)`` evaluates ``m`` states at once.
"""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, OrderingError

REAL = "real"
NONNEGATIVE = "nonnegative"
DOMAINS = (REAL, NONNEGATIVE)

# members per chunk in ensemble runs; fixed so results never depend on threads
ENSEMBLE_CHUNK = 64


@dataclass(frozen=True)
class DiscreteInterval:
    """Integers between ``start`` and ``end`` inclusive; ``None`` is unbounded."""

    start: int | None = None
    end: int | None = None

    def __post_init__(self):
        if self.start is not None and self.end is not None and self.start > self.end:
            raise ValueError(f"empty discrete interval [{self.start}, {self.end}]")

    def __contains__(self, t) -> bool:
        t = int(t)
        if self.start is not None and t < self.start:
            return False
        if self.end is not None and t > self.end:
            return False
        return True

    def stepping(self, t: int) -> bool:
        """Membership in I' = {t in I : t+1 in I}."""
        return t in self and (t + 1) in self

    @property
    def bounded_below(self) -> bool:
        return self.start is not None

    @property
    def bounded_above(self) -> bool:
        return self.end is not None


@dataclass(frozen=True)
class ModelSpec:
    """A right-hand side F_t together with its state space and metadata.

    ``rhs(t, u)`` must accept arrays of shape ``(..., dimension)`` and be a
    pure function of its arguments.  ``metadata`` holds analytic data such as
    Darbo constants (``"darbo"``: t -> float) or a semilinear decomposition.
    """

    name: str
    rhs: Callable[[int, np.ndarray], np.ndarray]
    dimension: int
    time_domain: DiscreteInterval = DiscreteInterval()
    domain: str = REAL
    period: int | None = None
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.period is not None and self.period < 1:
            raise ValueError("period must be a positive integer")

    @property
    def autonomous(self) -> bool:
        return self.period == 1


def check_state(model: ModelSpec, u, what="state") -> np.ndarray:
    """Validate ``u`` (a state or a batch of states) against the model domain."""
    arr = np.asarray(u, dtype=float)
    if arr.shape[-1:] != (model.dimension,):
        raise ValueError(
            f"{what} has trailing dimension {arr.shape[-1:]}, expected {model.dimension}"
        )
    bad = ~np.isfinite(arr)
    if model.domain == NONNEGATIVE:
        bad |= arr < 0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        entry = idx[-1]
        raise DomainError(
            f"{what} violates domain {model.domain!r} of model {model.name!r} "
            f"at entry {entry} (index {idx}): value {arr[idx]!r}",
            index=idx,
            value=float(arr[idx]),
        )
    return arr


def _check_time(model: ModelSpec, t: int):
    if not model.time_domain.stepping(t):
        raise OrderingError(f"time {t} is outside I' of model {model.name!r}")


def step(model: ModelSpec, t: int, u) -> np.ndarray:
    """One application of F_t, with domain checks on input and output."""
    _check_time(model, t)
    u = check_state(model, u, "input")
    return check_state(model, model.rhs(t, u), f"output of F_{t}")


def evolve(model: ModelSpec, tau: int, t: int, u) -> np.ndarray:
    """The general solution phi(t; tau, u) = F_{t-1} o ... o F_tau (u).

    Works on single states and on batches alike.
    """
    if tau > t:
        raise OrderingError(f"evolve needs tau <= t, got tau={tau}, t={t}")
    if tau not in model.time_domain or t not in model.time_domain:
        raise OrderingError(f"[{tau}, {t}] is not inside the time domain of {model.name!r}")
    x = check_state(model, u, "input")
    for r in range(tau, t):
        x = model.rhs(r, x)
    if t > tau:
        check_state(model, x, f"phi({t};{tau},.)")
    return x


def evolve_many(model: ModelSpec, tau: int, t: int, states, workers: int | None = None):
    """Evolve an ensemble (rows of ``states``), optionally on several threads.

    Chunks have a fixed size, so the output is bit-identical for every worker
    count.  The default worker count comes from ``IDESCOPE_THREADS``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if workers is None:
        workers = int(os.environ.get("IDESCOPE_THREADS", "1"))
    chunks = [states[i:i + ENSEMBLE_CHUNK] for i in range(0, len(states), ENSEMBLE_CHUNK)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [evolve(model, tau, t, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: evolve(model, tau, t, c), chunks))
    return np.concatenate(parts, axis=0) if parts else states.copy()


@dataclass
class Trajectory:
    """A forward solution; ``states[s]`` is phi(start_time + s; start_time, u)."""

    start_time: int
    states: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.states))

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"component_{i}" for i in range(d)])
            for t, row in zip(self.times, self.states):
                w.writerow([int(t)] + [format(float(v), ".17g") for v in row])


def orbit(model: ModelSpec, tau: int, horizon: int, u) -> Trajectory:
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if tau not in model.time_domain or (tau + horizon) not in model.time_domain:
        raise OrderingError(f"[{tau}, {tau + horizon}] leaves the time domain")
    x = check_state(model, u, "input")
    states = [x]
    for r in range(tau, tau + horizon):
        x = check_state(model, model.rhs(r, x), f"phi({r + 1};{tau},.)")
        states.append(x)
    return Trajectory(tau, np.array(states))


def verify_process_property(model: ModelSpec, tau: int, s: int, t: int, u) -> float:
    """sup-norm of phi(t; s, phi(s; tau, u)) - phi(t; tau, u)."""
    if not tau <= s <= t:
        raise OrderingError(f"need tau <= s <= t, got {tau}, {s}, {t}")
    lhs = evolve(model, s, t, evolve(model, tau, s, u))
    rhs = evolve(model, tau, t, u)
    return float(np.max(np.abs(lhs - rhs), initial=0.0))


def verify_periodicity(model: ModelSpec, theta: int, samples: Iterable[Sequence]) -> float:
    """max over (tau, t, u) of |phi(t+theta; tau+theta, u) - phi(t; tau, u)|."""
    worst = 0.0
    for tau, t, u in samples:
        a = evolve(model, tau + theta, t + theta, u)
        b = evolve(model, tau, t, u)
        worst = max(worst, float(np.max(np.abs(a - b), initial=0.0)))
    return worst
