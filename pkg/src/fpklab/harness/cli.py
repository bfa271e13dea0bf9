"""Command line entry point ``fpklab``.

Exit codes: 0 pass, 1 fail (bound violated, divergence, replay mismatch), 2 configuration
error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from ..cost import CostFunction
from ..errors import ConfigError, FpkError, NumericalError
from ..measures import read_cloud
from ..transport import kantorovich
from . import runner
from . import scenario as sc

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

_KIND_COMMANDS = ("simulate", "verify-bound", "fixed-point", "stability")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, action="append", help="run only this seed (repeatable)")
    p.add_argument("--out-dir", type=Path, help="output directory (default runs/<scenario>)")
    p.add_argument("--threads", type=int, default=1, help="seeds run in parallel on this many threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpklab", description="FPK stability laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario of any kind")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    _common(p)
    for kind in _KIND_COMMANDS:
        p = sub.add_parser(kind, help=f"run a scenario of kind {kind!r}")
        p.add_argument("scenario", help="scenario file or bundled scenario name")
        _common(p)
    p = sub.add_parser("distance", help="C_h between two cloud CSVs, or a distance scenario")
    p.add_argument("inputs", nargs="+", help="SCENARIO, or MU.csv SIGMA.csv")
    p.add_argument("--cost", help='inline table, e.g. \'{ family = "capped_power", p = 2 }\'')
    _common(p)
    p = sub.add_parser("replay", help="re-run a manifest and compare outputs bit for bit")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("plotdata", help="write plotdata.csv for a finished run")
    p.add_argument("manifest", type=Path)
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def _parse_cost(text: str | None) -> CostFunction:
    if text is None:
        raise ConfigError("--cost is required with two CSV inputs", "/cost")
    try:
        block = sc.tomllib.loads(f"cost = {text}")["cost"]
    except sc.tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse --cost: {exc}", "/cost") from exc
    data = {"name": "cli", "kind": "distance", "cost": block, "seeds": [0], "init_mu": {"family": "dirac"}, "init_sigma": {"family": "dirac"}}
    sc.validate(data)
    return sc.build_cost(block)


def _distance_csv(args) -> int:
    mu, sigma = (Path(x) for x in args.inputs)
    h = _parse_cost(args.cost)
    try:
        a, b = read_cloud(mu), read_cloud(sigma)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc), "/inputs") from exc
    start = time.perf_counter()
    res = kantorovich(h, a, b)
    ms = 1e3 * (time.perf_counter() - start)
    print("cost,gap,runtime_ms")
    print(f"{res.cost!r},{res.gap!r},{ms:.3f}")
    return EXIT_PASS


def _run_scenario(args, expected_kind: str | None) -> int:
    scn = sc.load_scenario(args.scenario if expected_kind != "distance" else args.inputs[0])
    if expected_kind is not None and scn.kind != expected_kind:
        raise ConfigError(f"scenario kind is {scn.kind!r}, command expects {expected_kind!r}", "/kind")
    out = args.out_dir or Path("runs") / scn.name
    manifest = runner.run(scn, out, threads=args.threads, seeds=args.seed)
    if scn.kind == "distance":
        print("cost,gap,runtime_ms")
        for v, s in manifest.summary.items():
            if isinstance(s, dict) and "cost" in s:
                ms = manifest.summary.get("runtime_ms", {}).get(v, float("nan"))
                print(f"{s['cost']!r},{s['gap']!r},{ms:.3f}")
    print(json.dumps({"scenario": scn.name, "pass": manifest.passed, "manifest": str(manifest.path), "summary": manifest.summary}, indent=2, default=str))
    return EXIT_PASS if manifest.passed else EXIT_FAIL


def _dispatch(args) -> int:
    if args.command == "list":
        for name in sc.bundled_names():
            print(name)
        return EXIT_PASS
    if args.command == "replay":
        rep = runner.replay(args.manifest, args.out_dir, threads=args.threads)
        print(json.dumps({"identical": rep.identical, "mismatched": rep.mismatched, "missing": rep.missing, "extra": rep.extra}, indent=2))
        return EXIT_PASS if rep.identical else EXIT_FAIL
    if args.command == "plotdata":
        print(runner.emit_plotdata(runner.RunManifest.load(args.manifest)))
        return EXIT_PASS
    if args.command == "distance":
        if len(args.inputs) == 2:
            return _distance_csv(args)
        if len(args.inputs) != 1:
            raise ConfigError("distance takes a scenario or two CSV files", "/inputs")
        return _run_scenario(args, "distance")
    return _run_scenario(args, None if args.command == "run" else args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FpkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
