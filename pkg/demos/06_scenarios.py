"""Scenario files, run manifests, bit-for-bit replay and plot data.

The same steps are available from the shell:

    fpklab list
    fpklab simulate ou_simulate --out-dir runs/ou_simulate
    fpklab replay runs/ou_simulate/manifest.json
    fpklab plotdata runs/ou_simulate
"""

import csv
import tempfile
from pathlib import Path

from fpklab.harness import bundled_names, emit_plotdata, load_scenario, parse_scenario, replay, run
from fpklab.harness.scenario import bundled_path

print("bundled scenarios:", ", ".join(bundled_names()))

scn = load_scenario("ou_simulate")
print(f"\n{scn.name} ({scn.kind}), seeds {scn.seeds}, hash {scn.hash()[:12]}")
print(bundled_path(scn.name).read_text(encoding="utf-8"))

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "ou"
    manifest = run(scn, out)
    print(f"pass={manifest.passed}, rng={manifest.rng}, {len(manifest.outputs)} output files")
    for rel in sorted(manifest.outputs)[:4]:
        print("  ", rel, manifest.outputs[rel][:16])

    rep = replay(manifest.path)
    print(f"replay identical: {rep.identical}")

    rows = list(csv.reader(open(emit_plotdata(manifest), encoding="utf-8")))
    print(f"plotdata.csv: {len(rows) - 1} rows, header {rows[0]}")
    for r in rows[1:4]:
        print("  ", r)

# a mistake in a scenario is reported with the location of the offending value
text = scn.to_toml().replace("particles = 2000", "particles = -5")
try:
    parse_scenario(text)
except ValueError as exc:
    print(f"\n{type(exc).__name__}: {exc}")
