"""Command-line runner: ``idescope run|compare|catalog``.

Exit codes: 0 success, 1 a verification or comparison failed, 2 invalid
configuration, 3 numerical non-convergence (a partial report is written),
4 domain violation.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import setdyn as sd
from .config import ConfigError, config_hash, load_config, validate_config
from .errors import (DivergenceError, DomainError, EmptySetError, MissingMetadataError, OrderingError,
                     PreconditionError)
from .models import CATALOG, catalog_defaults, catalog_instantiate
from .nystrom import IG_PROP, I0_PROP, absorbing_bound, fixed_point_iterate
from .pipelines import compare_with_table, omega_experiment
from .process import evolve, orbit, verify_periodicity, verify_process_property
from .semilinear import gronwall_bound
from .util import dumps, rng_for, sha256_file

EXIT_OK, EXIT_FAILED, EXIT_SCHEMA, EXIT_NONCONVERGED, EXIT_DOMAIN = 0, 1, 2, 3, 4
SPATIAL = ("spatial_bh", "spatial_ricker", "ricker_limit")


@dataclass
class RunManifest:
    config_hash: str
    version: str
    wall_time: float = 0.0
    converged: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    passed: bool = True
    exit_code: int = 0
    message: str = ""

    def to_dict(self):
        return {"config_hash": self.config_hash, "version": self.version, "wall_time": self.wall_time,
                "converged": self.converged, "outputs": self.outputs, "passed": self.passed,
                "exit_code": self.exit_code, "message": self.message}


class _Run:
    def __init__(self, cfg):
        self.cfg = cfg
        self.task = cfg["task"]
        self.seed = int(cfg.get("seed", 0))
        self.out = cfg.get("output", {}).get("dir", "out")
        self.include_points = cfg.get("output", {}).get("include_points", True)
        self.manifest = RunManifest(config_hash(cfg), __version__)
        os.makedirs(self.out, exist_ok=True)

    def path(self, name):
        return os.path.join(self.out, name)

    def record(self, path):
        self.manifest.outputs[os.path.basename(path)] = sha256_file(path)

    def write_report(self, data, name="report.json"):
        p = self.path(name)
        with open(p, "w") as fh:
            fh.write(dumps(data) + "\n")
        self.record(p)

    def write_limit_report(self, rep: sd.LimitSetReport, nodes=None):
        p = self.path("report.json")
        rep.write_json(p, self.include_points)
        self.record(p)
        for c in rep.write_csv(self.out, nodes):
            self.record(c)


def _model_from(cfg):
    m = cfg["model"]
    params = dict(m.get("params", {}))
    if m["name"] in SPATIAL:
        params.update(cfg.get("quadrature", {}))
    elif cfg.get("quadrature"):
        raise ConfigError(f"model {m['name']!r} takes no quadrature section")
    try:
        return catalog_instantiate(m["name"], params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _default_tau(model):
    return model.time_domain.start if model.time_domain.bounded_below else 0


def _source(model, task):
    src = task.get("source") or model.metadata.get("absorbing")
    if src is None:
        raise ConfigError(f"model {model.name!r} has no default set; give task.source")
    return src


def _nodes(model):
    q = model.metadata.get("quadrature")
    return None if q is None else q.nodes


def _task_simulate(run: _Run, model):
    t = run.task
    tau = t.get("tau", _default_tau(model))
    horizon = t.get("horizon", 50)
    u0 = np.asarray(t.get("u0", 1.0), dtype=float)
    u0 = np.full(model.dimension, float(u0)) if u0.ndim == 0 else u0
    if u0.shape != (model.dimension,):
        raise ConfigError(f"u0 has {u0.size} entries, model needs {model.dimension}")
    traj = orbit(model, tau, horizon, u0)
    p = run.path("trajectory.csv")
    traj.to_csv(p)
    run.record(p)
    run.write_report({"model": model.name, "params": model.params, "tau": tau, "horizon": horizon,
                      "final_state": traj.states[-1], "final_sup_norm": float(np.max(np.abs(traj.states[-1])))})
    return True


def _task_pullback(run: _Run, model):
    t = run.task
    tau = t.get("tau", 0)
    res = t.get("resolution", 1e-3)
    tol = t.get("tol", 1e-3)
    src = _source(model, t)
    cloud, trace = sd.pullback_limit_fiber(
        model, lambda s: sd.sample_set(src, res, run.seed, time=s), tau, t.get("s_grid", [25, 50, 100, 200]), tol)
    rep = sd.LimitSetReport(model.name, dict(model.params), res, tol)
    rep.attractor_fibers = {tau: cloud}
    rep.distance_traces["pullback"] = trace.values
    rep.converged["pullback"] = trace.converged
    run.write_limit_report(rep, _nodes(model))
    p = run.path(f"pullback_fiber_{tau}.csv")
    sd.write_cloud_csv(cloud, p, _nodes(model))
    run.record(p)
    run.manifest.converged.update(rep.converged)
    return True


def _task_forward(run: _Run, model):
    t = run.task
    tau = t.get("tau", _default_tau(model))
    res = t.get("resolution", 1e-3)
    tol = t.get("tol", 1e-3)
    src = _source(model, t)
    cloud, trace = sd.forward_limit_fiber(
        model, lambda s: sd.sample_set(src, res, run.seed, time=s), tau, t.get("s_grid", [50, 100, 150, 200]),
        tol, t.get("mode", sd.LIMSUP))
    rep = sd.LimitSetReport(model.name, dict(model.params), res, tol)
    rep.omega_fibers = {tau: cloud}
    rep.distance_traces["forward"] = trace.values
    rep.converged["forward"] = trace.converged
    run.write_limit_report(rep, _nodes(model))
    run.manifest.converged.update(rep.converged)
    return True


def _task_omega(run: _Run, model):
    t = run.task
    tr = t.get("tau_range", [-15, 5, 2])
    tau_range = list(range(tr[0], tr[1] + 1, tr[2] if len(tr) == 3 else 1))
    kw = dict(resolution=t.get("resolution", 2.5e-4), tol=t.get("tol", 1e-3), seed=run.seed,
              tau_range=tau_range, s_grid=tuple(t.get("s_grid", [50, 100, 150, 200])),
              mode=t.get("mode", sd.NESTED), attractor_range=tuple(t.get("attractor_range", [-20, 200])),
              attractor_s_max=t.get("attractor_s_max", 200), tail=tuple(t.get("tail", [100, 200])),
              attraction_tau=t.get("attraction_tau", -10), attraction_step=t.get("attraction_step", 10))
    rep = omega_experiment(model, source=t.get("source"), **kw)
    passed = rep.verdicts["dichotomy_consistent"]
    if model.name == "bh_piecewise":
        row, diffs, ok = compare_with_table(rep, model.params["alpha_minus"], model.params["alpha_plus"], rep.tol)
        rep.extra["expected"] = row.as_dict()
        rep.extra["endpoint_diffs"] = diffs
        rep.verdicts["matches_table"] = ok
        passed = passed and ok
    run.write_limit_report(rep, _nodes(model))
    run.manifest.converged.update(rep.converged)
    return passed


def _random_states(model, rng, count, scale):
    lo = 0.0 if model.domain == "nonnegative" else -scale
    return lo + (scale - lo) * rng.random((count, model.dimension))


def _task_verify(run: _Run, model):
    t = run.task
    check = t.get("check", "process_property")
    samples = t.get("samples", 100)
    rng = rng_for(run.seed, 0)
    lo_w, hi_w = t.get("time_window", [-20, 20])
    if model.time_domain.bounded_below:
        lo_w = max(lo_w, model.time_domain.start)
    absorbing = model.metadata.get("absorbing")
    scale = float(absorbing["hi"]) if absorbing and "hi" in absorbing else 5.0
    result = {"check": check, "model": model.name, "params": model.params}
    if check == "process_property":
        worst = 0.0
        for _ in range(samples):
            a, b, c = np.sort(rng.integers(lo_w, hi_w + 1, 3))
            u = _random_states(model, rng, 1, scale)[0]
            worst = max(worst, verify_process_property(model, int(a), int(b), int(c), u))
        result.update(max_error=worst, passed=worst == 0.0)
    elif check == "periodicity":
        theta = t.get("theta", model.period or 1)
        cases = []
        for _ in range(samples):
            a, b = np.sort(rng.integers(lo_w, hi_w + 1, 2))
            cases.append((int(a), int(b), _random_states(model, rng, 1, scale)[0]))
        worst = verify_periodicity(model, theta, cases)
        result.update(theta=theta, max_error=worst, passed=worst == 0.0)
    elif check == "dissipativity":
        if "bounds" not in model.metadata:
            raise MissingMetadataError(f"model {model.name!r} declares no hypothesis bounds")
        variant = I0_PROP if model.metadata["growth"].family == "zero" else IG_PROP
        bounds = model.metadata["bounds"]
        worst = -math.inf
        for tau in range(lo_w, hi_w):
            u = _random_states(model, rng, samples, scale)
            steps = 2 if variant == I0_PROP else 1
            img = evolve(model, tau, tau + steps, u)
            if variant == IG_PROP:
                r = absorbing_bound(bounds, tau + 1, IG_PROP)
            else:
                r = absorbing_bound(bounds, tau + steps, I0_PROP, t_range=range(lo_w, hi_w + steps))
            worst = max(worst, float(np.max(np.abs(img))) - r)
        result.update(variant=variant, max_excess=worst, passed=worst <= 1e-12)
    elif check == "gronwall":
        sl = model.metadata.get("semilinear", {}).get("params")
        if sl is None:
            raise MissingMetadataError(f"model {model.name!r} declares no semilinear parameters")
        violations = 0
        for _ in range(samples):
            a = int(rng.integers(lo_w, hi_w))
            b = a + int(rng.integers(0, 21))
            u = _random_states(model, rng, 1, scale)[0]
            norm = float(np.max(np.abs(evolve(model, a, b, u))))
            if norm > gronwall_bound(sl, a, b, float(np.max(np.abs(u)))) * (1 + 1e-12):
                violations += 1
        result.update(violations=violations, passed=violations == 0)
    elif check == "smallness":
        sm = model.metadata.get("smallness")
        if sm is None:
            raise MissingMetadataError(f"model {model.name!r} declares no smallness condition")
        result.update(holds=sm.holds, margin=sm.margin, general_holds=sm.general_holds,
                      general_margin=sm.general_margin, K=sm.K, passed=sm.holds)
    elif check == "fixed_point":
        fp = fixed_point_iterate(model, np.zeros(model.dimension), max_iter=t.get("max_iter", 10_000))
        result.update(u_star=fp.u, iterations=fp.iterations, ratios=fp.ratios, passed=fp.converged)
    run.write_report(result)
    return bool(result["passed"])


TASK_FUNCS = {"simulate": _task_simulate, "pullback": _task_pullback, "forward": _task_forward,
              "omega": _task_omega, "verify": _task_verify}


def run(cfg: dict) -> RunManifest:
    """Execute one validated config; the manifest carries the exit code."""
    validate_config(cfg)
    t0 = time.perf_counter()
    r = _Run(cfg)
    m = r.manifest
    try:
        model = _model_from(cfg)
        passed = TASK_FUNCS[cfg["task"]["kind"]](r, model)
        m.passed = bool(passed)
        if not all(m.converged.values()):
            m.exit_code, m.message = EXIT_NONCONVERGED, "a limit computation did not converge"
            r.write_report({"error": m.message, "converged": m.converged}, "partial_report.json")
        elif not passed:
            m.exit_code, m.message = EXIT_FAILED, "verification failed"
    except ConfigError as exc:
        m.exit_code, m.message, m.passed = EXIT_SCHEMA, str(exc), False
    except (MissingMetadataError, OrderingError) as exc:
        m.exit_code, m.message, m.passed = EXIT_SCHEMA, str(exc), False
    except DomainError as exc:
        m.exit_code, m.message, m.passed = EXIT_DOMAIN, str(exc), False
    except (PreconditionError, EmptySetError) as exc:
        m.exit_code, m.message, m.passed = EXIT_FAILED, str(exc), False
    except DivergenceError as exc:
        m.exit_code, m.message, m.passed = EXIT_NONCONVERGED, str(exc), False
        partial = exc.partial
        r.write_report({"error": str(exc), "partial": getattr(partial, "__dict__", partial)},
                       "partial_report.json")
    m.wall_time = time.perf_counter() - t0
    with open(r.path("manifest.json"), "w") as fh:
        fh.write(dumps(m.to_dict()) + "\n")
    return m


# --- golden comparison -------------------------------------------------------

def _flatten(obj, prefix=""):
    out = {}
    if isinstance(obj, dict):
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            out.update(_flatten(v, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = obj
    return out


@dataclass
class DiffSummary:
    failures: list
    missing: list
    compared: int

    @property
    def ok(self) -> bool:
        return not self.failures and not self.missing


def compare_golden(report_path, golden_path, tol: float) -> DiffSummary:
    """Compare every leaf of the golden file against the report."""
    with open(report_path) as fh:
        rep = _flatten(json.load(fh))
    with open(golden_path) as fh:
        gold = _flatten(json.load(fh))
    failures, missing = [], []
    for key, g in sorted(gold.items()):
        if key not in rep:
            missing.append(key)
            continue
        r = rep[key]
        if isinstance(g, (int, float)) and not isinstance(g, bool) and isinstance(r, (int, float)):
            diff = abs(float(r) - float(g))
            rel = diff / abs(g) if g else diff
            if not diff <= tol:
                failures.append({"field": key, "report": r, "golden": g, "abs": diff, "rel": rel})
        elif r != g:
            failures.append({"field": key, "report": r, "golden": g, "abs": None, "rel": None})
    return DiffSummary(failures, missing, len(gold))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="idescope", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run an experiment config (TOML or JSON)")
    p_run.add_argument("config")
    p_cmp = sub.add_parser("compare", help="compare a report against a golden file")
    p_cmp.add_argument("report")
    p_cmp.add_argument("golden")
    p_cmp.add_argument("--tol", type=float, default=1e-9)
    sub.add_parser("catalog", help="list catalog models and their default parameters")
    args = ap.parse_args(argv)

    if args.cmd == "catalog":
        listing = {name: {"description": desc, "defaults": catalog_defaults(name)}
                   for name, (_, desc) in sorted(CATALOG.items())}
        print(dumps(listing))
        return EXIT_OK
    if args.cmd == "compare":
        try:
            summary = compare_golden(args.report, args.golden, args.tol)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SCHEMA
        print(dumps({"compared": summary.compared, "failures": summary.failures, "missing": summary.missing}))
        return EXIT_OK if summary.ok else EXIT_FAILED
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    m = run(cfg)
    print(dumps(m.to_dict()))
    return m.exit_code


if __name__ == "__main__":
    sys.exit(main())
