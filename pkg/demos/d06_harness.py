"""
Experiment harness: ablation grid and matched-time comparison
=============================================================

The harness turns a JSON-like spec into run directories under
``output_dir``. This demo keeps every budget small so it finishes quickly
on digits; the same calls drive the CIFAR-10 runs.
"""

import tempfile

from hashcondense import harness
from hashcondense.harness import ExperimentSpec

out = tempfile.mkdtemp(prefix="hashcondense-demo-")
spec = ExperimentSpec.from_dict({
    "dataset": "digits", "ipc": 5, "arch": "tiny-conv", "code_bits": [16], "seeds": [0],
    "output_dir": out, "condense": {"iterations": 20}, "hashing": {"epochs": 40},
    "timing": {"methods": ["iem", "dm-plain"], "checkpoint_seconds": 1.0, "budget_seconds": 2.0},
})

table = harness.cmd_ablate(spec)
print(harness.format_ablation(table))
print("orderings:", table["orderings"])

res = harness.cmd_timing(spec)
for method, pts in res["series"].items():
    print(method, [(round(p["seconds"], 1), p["iteration"], round(100 * p["map"], 1)) for p in pts])

print(harness.cmd_report(out))
print("outputs in", out)
