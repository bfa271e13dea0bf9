"""Execute scenarios, write per-seed outputs and a manifest, replay manifests, emit plot data.

Output layout under ``out_dir``::

    <variant>/seed_XXXX/...   per-seed files
    <variant>/...             seed aggregates and summary.json
    manifest.json             written last

Floats are written with 17 significant digits, so a replay either matches byte for byte or
differs in substance. Wall-clock time is kept in the manifest only.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..analysis import verify_theorem1
from ..errors import ConfigError, FpkError
from ..fpk import solve_linear, solve_linear_paired
from ..measures import write_flow
from ..nonlinear import LyapunovSpec, class_membership, solve_nonlinear, stability_experiment, uniqueness_check
from ..rng import RNG_NAME
from ..transport import kantorovich
from . import scenario as sc

MANIFEST = "manifest.json"
PLOTDATA = "plotdata.csv"
DEFAULT_VARIANT = "default"


# ---------------------------------------------------------------- file helpers


def write_csv(path: Path, header: list[str], columns) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="", encoding="utf-8")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _seed_dir(vdir: Path, seed: int) -> Path:
    return vdir / f"seed_{seed:04d}"


@contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool.map


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    """Everything needed to re-execute a run and check its outputs.

    ``config`` is the full scenario (seeds resolved); ``outputs`` maps each output file,
    relative to the run directory, to its SHA-256.
    """

    scenario: str
    kind: str
    scenario_hash: str
    config: dict
    version: str
    rng: str
    seeds: list
    variants: list
    outputs: dict
    per_seed: dict
    wall_clock_s: float
    passed: bool
    summary: dict
    path: Path | None = field(default=None, compare=False)

    @property
    def out_dir(self) -> Path:
        return self.path.parent

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("path")
        return d

    def write(self, path: Path) -> None:
        write_json(path, self.to_dict())
        self.path = Path(path)

    @classmethod
    def load(cls, path) -> RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        d = json.loads(path.read_text(encoding="utf-8"))
        return cls(**d, path=path)


# ---------------------------------------------------------------- per-kind runners


class _Context:
    def __init__(self, data: dict, seeds: list[int], vdir: Path, mapper):
        self.data, self.seeds, self.vdir, self.map = data, seeds, vdir, mapper
        self.dim = sc.dimension(data)
        self.h = sc.build_cost(data["cost"])
        self.T = data.get("horizon")
        self.q = sc.build_diffusion(data["diffusion"]) if "diffusion" in data else None
        self.particles = int(data.get("solver", {}).get("particles", 1000))

    def cfg(self, seed: int):
        return sc.build_solver(self.data, seed)

    def init(self, key: str, seed: int):
        return sc.build_init(self.data[key], self.dim, seed, self.particles, "/" + key)


def _moments(flow):
    means = np.array([s.mean() for s in flow.slices])
    variances = np.array([np.diag(s.covariance()) for s in flow.slices])
    return means, variances


def _run_simulate(ctx: _Context) -> dict:
    b = sc.build_drift(ctx.data["drift"], ctx.dim)
    if b.measure_dependent:
        raise ConfigError("simulate needs a measure-independent drift; use kind 'fixed-point'", "/drift")

    def one(seed):
        flow = solve_linear(ctx.q, b, ctx.init("init", seed), ctx.T, ctx.cfg(seed))
        sd = _seed_dir(ctx.vdir, seed)
        write_flow(flow, sd / "flow")
        m, v = _moments(flow)
        header = ["t"] + [f"mean_{i + 1}" for i in range(ctx.dim)] + [f"var_{i + 1}" for i in range(ctx.dim)]
        write_csv(sd / "moments.csv", header, [flow.times, *m.T, *v.T])
        return m[-1].tolist(), v[-1].tolist()

    finals = list(ctx.map(one, ctx.seeds))
    return {"pass": True, "seeds": len(ctx.seeds), "final_mean": [f[0] for f in finals], "final_var": [f[1] for f in finals]}


def _run_distance(ctx: _Context) -> dict:
    seed = ctx.seeds[0]
    mu, sigma = ctx.init("init_mu", seed), ctx.init("init_sigma", seed)
    start = time.perf_counter()
    res = kantorovich(ctx.h, mu, sigma)
    runtime_ms = 1e3 * (time.perf_counter() - start)
    write_csv(ctx.vdir / "distance.csv", ["cost", "gap"], [[res.cost], [res.gap]])
    spec = ctx.data.get("distance", {})
    out = {"cost": res.cost, "gap": res.gap, "pass": True}
    if "expected" in spec:
        tol = float(spec.get("tolerance", 1e-10))
        out.update(expected=spec["expected"], tolerance=tol, **{"pass": abs(res.cost - spec["expected"]) <= tol})
    return out | {"_runtime_ms": runtime_ms}


def _run_verify_bound(ctx: _Context) -> dict:
    d = ctx.data
    b_mu = sc.build_drift(d["drift_mu"], ctx.dim, "/drift_mu")
    b_sigma = sc.build_drift(d["drift_sigma"], ctx.dim, "/drift_sigma")
    bound = d.get("bound", {})
    lam = float(bound.get("lambda", b_mu.lam))
    ot_particles = int(bound.get("ot_particles", 512))

    def one(seed):
        cfg = ctx.cfg(seed)
        return solve_linear_paired(ctx.q, b_mu, b_sigma, ctx.init("init_mu", seed), ctx.init("init_sigma", seed), ctx.T, cfg)

    runs = list(ctx.map(one, ctx.seeds))
    rep = verify_theorem1(ctx.h, runs, b_mu, b_sigma, ctx.q, lam, ot_particles=ot_particles, seed=ctx.seeds)
    ps = rep.per_seed
    for k, seed in enumerate(ctx.seeds):
        write_csv(
            _seed_dir(ctx.vdir, seed) / "bound.csv",
            ["t", "lhs", "I", "rhs", "margin"],
            [rep.times, ps["lhs"][k], ps["I"][k], ps["rhs"][k], ps["rhs"][k] - ps["lhs"][k]],
        )
    write_csv(
        ctx.vdir / "bound.csv",
        ["t", "lhs", "I", "rhs", "margin", "stderr"],
        [rep.times, rep.lhs, rep.mismatch_integral, rep.rhs, rep.margin, rep.mc_stderr],
    )
    lhs_se = ps["lhs"].std(axis=0, ddof=1) / math.sqrt(len(ctx.seeds)) if len(ctx.seeds) > 1 else np.zeros_like(rep.lhs)
    return {
        "pass": rep.passed,
        "min_margin": rep.min_margin,
        "seeds": rep.seeds,
        "flagged_times": rep.times[rep.flagged].tolist(),
        "_lhs": rep.lhs,
        "_lhs_stderr": lhs_se,
        "_times": rep.times,
    }


def _class_bound(spec, dim):
    coeffs = spec.get("class_bound")
    if coeffs is None:
        return None
    a = float(coeffs[0])
    b = float(coeffs[1]) if len(coeffs) > 1 else 0.0
    return LyapunovSpec.quadratic(lambda t: a + b * t, dim=dim)


def _run_fixed_point(ctx: _Context) -> dict:
    d = ctx.data
    b = sc.build_drift(d["drift"], ctx.dim)
    spec = d.get("fixed_point", {})
    tol = float(spec.get("tol", 0.01))
    max_iter = int(spec.get("max_iter", 15))
    ot_particles = int(spec.get("ot_particles", 1024))
    lya = _class_bound(spec, ctx.dim)

    def one(seed):
        trace = solve_nonlinear(
            ctx.q, b, ctx.init("init", seed), ctx.T, ctx.cfg(seed), tol, max_iter,
            h=ctx.h, min_horizon=spec.get("min_horizon"), ot_particles=ot_particles,
        )
        sd = _seed_dir(ctx.vdir, seed)
        info = trace.summary() | {"contraction_factors": trace.contraction_factors}
        if lya is not None:
            reps = [class_membership(it, lya) for it in trace.iterates]
            info["class_membership"] = [{"ok": r.ok, "worst_time": r.worst_time, "worst_value": r.worst_value} for r in reps]
        write_json(sd / "trace.json", info)
        write_flow(trace.final, sd / "flow")
        return trace

    traces = list(ctx.map(one, ctx.seeds))
    out = {
        "converged": all(t.converged for t in traces),
        "iterations": [t.iterations for t in traces],
        "tau": [t.tau for t in traces],
    }
    passed = out["converged"]
    if lya is not None:
        out["class_ok"] = all(class_membership(it, lya).ok for t in traces for it in t.iterates)
    if spec.get("uniqueness") and len(traces) >= 2:
        u = uniqueness_check(traces[0].final, traces[1].final, ctx.h, ot_particles, ctx.seeds[0])
        write_json(
            ctx.vdir / "uniqueness.json",
            {"seeds": ctx.seeds[:2], "costs": u.costs.tolist(), "combined_stderr": u.combined_stderr.tolist(), "sup_cost": u.sup_cost, "pass": u.passed},
        )
        out["uniqueness"] = u.passed
        passed = passed and u.passed
    return out | {"pass": passed}


def _run_stability(ctx: _Context) -> dict:
    d = ctx.data
    b = sc.build_drift(d["drift"], ctx.dim)
    spec = d.get("stability", {})
    gauge = sc.build_gauge(spec.get("gauge"))
    rep = stability_experiment(
        ctx.q, b,
        lambda s: ctx.init("init_mu", s),
        lambda s: ctx.init("init_sigma", s),
        ctx.T, ctx.cfg(ctx.seeds[0]), gauge,
        h=ctx.h, seeds=ctx.seeds,
        tol=float(spec.get("tol", 0.01)), max_iter=int(spec.get("max_iter", 15)),
        ot_particles=int(spec.get("ot_particles", 1024)), mapper=ctx.map,
    )
    for k, seed in enumerate(ctx.seeds):
        write_csv(_seed_dir(ctx.vdir, seed) / "measured.csv", ["t", "measured"], [rep.times, rep.per_seed[k]])
        write_json(_seed_dir(ctx.vdir, seed) / "traces.json", {"init_mu": rep.traces[k][0], "init_sigma": rep.traces[k][1]})
    write_csv(
        ctx.vdir / "stability.csv",
        ["t", "measured", "stderr", "envelope", "valid"],
        [rep.times, rep.measured, rep.stderr, rep.envelope, rep.valid.astype(float)],
    )
    return {
        "pass": rep.ok,
        "c0": rep.c0,
        "K": rep.K,
        "a": rep.a,
        "expires_at": rep.expires_at,
        "valid_until": rep.valid_until,
        "seeds": len(ctx.seeds),
    }


_RUNNERS = {
    "simulate": _run_simulate,
    "distance": _run_distance,
    "verify-bound": _run_verify_bound,
    "fixed-point": _run_fixed_point,
    "stability": _run_stability,
}


def _monotone(spec: dict, results: dict) -> dict:
    """Successive variants in ``order`` must not increase the seed-mean lhs beyond 3 combined stderr."""
    order = spec["order"]
    for name in order:
        if name not in results:
            raise ConfigError(f"unknown variant {name!r}", "/bound/monotone/order")
    worst, times = -math.inf, None
    for a, b in zip(order, order[1:]):
        ra, rb = results[a], results[b]
        slack = rb["_lhs"] - ra["_lhs"] - 3.0 * np.sqrt(ra["_lhs_stderr"] ** 2 + rb["_lhs_stderr"] ** 2)
        worst = max(worst, float(slack.max()))
        times = ra["_times"]
    return {"order": order, "series": spec.get("series", "lhs"), "worst_excess": worst, "pass": worst <= 0.0, "nodes": len(times)}


# ---------------------------------------------------------------- run / replay


def run(scenario: sc.Scenario, out_dir, *, threads: int = 1, seeds=None) -> RunManifest:
    """Execute every variant of ``scenario`` over its seeds; the manifest is written last."""
    if seeds is not None:
        scenario = scenario.with_seeds(seeds)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    old = out_dir / MANIFEST
    if old.exists():
        old.unlink()
    start = time.perf_counter()
    seeds = scenario.seeds
    variants = scenario.variants or [None]
    results = {}
    with _mapper(threads) as mapper:
        for v in variants:
            name = v or DEFAULT_VARIANT
            data = scenario.variant_data(v)
            vdir = out_dir / name
            try:
                ctx = _Context(data, seeds, vdir, mapper)
                res = _RUNNERS[scenario.kind](ctx)
            except FpkError as exc:
                exc.args = (f"[{scenario.name}/{name}] {exc}",)
                raise
            results[name] = res
            write_json(vdir / "summary.json", {k: _jsonable(x) for k, x in res.items() if not k.startswith("_")})
    summary = {k: {x: _jsonable(y) for x, y in r.items() if not x.startswith("_")} for k, r in results.items()}
    passed = all(r["pass"] for r in results.values())
    mono = scenario.data.get("bound", {}).get("monotone")
    if scenario.kind == "verify-bound" and mono:
        m = _monotone(mono, results)
        write_json(out_dir / "monotone.json", m)
        summary["monotone"] = m
        passed = passed and m["pass"]
    outputs, per_seed = {}, {str(s): [] for s in seeds}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name not in (MANIFEST, PLOTDATA):
            rel = p.relative_to(out_dir).as_posix()
            outputs[rel] = sha256_file(p)
            parts = rel.split("/")
            if len(parts) > 2 and parts[1].startswith("seed_"):
                per_seed[str(int(parts[1][5:]))].append(rel)
    wall = {k: r["_runtime_ms"] for k, r in results.items() if "_runtime_ms" in r}
    manifest = RunManifest(
        scenario.name,
        scenario.kind,
        scenario.hash(),
        scenario.data,
        __version__,
        RNG_NAME,
        seeds,
        [v or DEFAULT_VARIANT for v in variants],
        outputs,
        per_seed,
        time.perf_counter() - start,
        bool(passed),
        summary | ({"runtime_ms": wall} if wall else {}),
    )
    manifest.write(out_dir / MANIFEST)
    return manifest


@dataclass(frozen=True)
class ReplayReport:
    identical: bool
    mismatched: list
    missing: list
    extra: list
    manifest: RunManifest


def replay(manifest_path, out_dir=None, *, threads: int = 1) -> ReplayReport:
    """Re-execute the scenario recorded in a manifest and compare every output hash."""
    original = RunManifest.load(manifest_path)
    scenario = sc.Scenario(original.config)
    if out_dir is None:
        out_dir = original.out_dir.with_name(original.out_dir.name + "_replay")
    new = run(scenario, out_dir, threads=threads)
    mismatched = sorted(k for k in original.outputs if k in new.outputs and new.outputs[k] != original.outputs[k])
    missing = sorted(k for k in original.outputs if k not in new.outputs)
    extra = sorted(k for k in new.outputs if k not in original.outputs)
    return ReplayReport(not (mismatched or missing or extra), mismatched, missing, extra, new)


# ---------------------------------------------------------------- plot data


def _read_columns(path: Path) -> dict:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: [row[i] for row in body] for i, name in enumerate(header)}


def emit_plotdata(manifest: RunManifest) -> Path:
    """Write ``plotdata.csv`` (``scenario,seed,t,series,value``) next to the manifest.

    Aggregates use seed ``all``. Series names carry a ``variant/`` prefix when the scenario
    has variants. Fixed-point residuals use the iteration number in the ``t`` column.
    """
    root = manifest.out_dir
    for rel in manifest.outputs:
        if not (root / rel).is_file():
            raise FileNotFoundError(f"output {rel} listed in the manifest is missing")
    rows = []
    multi = manifest.variants != [DEFAULT_VARIANT]

    def add(variant, seed, t_values, series, values):
        label = f"{variant}/{series}" if multi else series
        for t, v in zip(t_values, values):
            rows.append([manifest.scenario, seed, t, label, v])

    for v in manifest.variants:
        vdir = root / v
        for seed in manifest.seeds:
            sd = _seed_dir(vdir, seed)
            if manifest.kind == "verify-bound":
                c = _read_columns(sd / "bound.csv")
                for s in ("lhs", "rhs", "margin", "I"):
                    add(v, seed, c["t"], s, c[s])
            elif manifest.kind == "fixed-point":
                tr = json.loads((sd / "trace.json").read_text(encoding="utf-8"))
                add(v, seed, range(1, len(tr["residuals"]) + 1), "residual", [repr(r) for r in tr["residuals"]])
            elif manifest.kind == "stability":
                c = _read_columns(sd / "measured.csv")
                add(v, seed, c["t"], "measured", c["measured"])
            elif manifest.kind == "simulate":
                c = _read_columns(sd / "moments.csv")
                for s in c:
                    if s != "t":
                        add(v, seed, c["t"], s, c[s])
        if manifest.kind == "verify-bound":
            c = _read_columns(vdir / "bound.csv")
            for s in ("lhs", "rhs", "margin", "I", "stderr"):
                add(v, "all", c["t"], s, c[s])
        elif manifest.kind == "stability":
            c = _read_columns(vdir / "stability.csv")
            for s in ("measured", "envelope", "stderr"):
                add(v, "all", c["t"], s, c[s])
        elif manifest.kind == "distance":
            c = _read_columns(vdir / "distance.csv")
            add(v, "all", ["0"], "cost", c["cost"])
    path = root / PLOTDATA
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "seed", "t", "series", "value"])
        w.writerows(rows)
    return path
