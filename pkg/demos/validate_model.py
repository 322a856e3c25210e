"""Walk a model spec through the standing-hypothesis validator.

Builds one good spec and one deliberately broken spec (a hazard curve that
dips negative), prints both reports, and shows the JSON round trip that the
CLI uses for --spec files.
"""

import json
import tempfile
from dataclasses import replace

import numpy as np

from impulse_qvi.fixtures import intervention_spec
from impulse_qvi.model import Curve, validate

spec = intervention_spec()
probes = np.linspace(0.1, 4.1, 201)

report = validate(spec, probes)
print("intervention fixture:")
for e in report.entries:
    status = "PASS" if e.passed else "FAIL"
    print(f"  {e.name:24s} {status}  value={e.value:.6g}  ({e.note})")
print(f"  -> {'PASSED' if report.passed else 'FAILED'}")

# break it: beta(t) crossing zero is not an intensity
bad = replace(spec, beta=Curve.table([0.0, 1.0, 2.0], [0.3, -0.05, 0.2]))
bad_report = validate(bad, probes)
print("\nnegative-hazard variant:")
for e in bad_report.entries:
    if not e.passed:
        print(f"  {e.name:24s} FAIL  value={e.value:.6g}  ({e.note})")
print(f"  -> {'PASSED' if bad_report.passed else 'FAILED'}")

# specs serialize to plain JSON; this is exactly what `--spec file.json` reads
with tempfile.NamedTemporaryFile("w+", suffix=".json", delete=False) as fh:
    json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
    path = fh.name
print(f"\nwrote the fixture as a spec file: {path}")
print("try: impulse-qvi validate --spec", path, "--out /tmp/validate_demo")
