#!/usr/bin/env python3
"""Smoke test for the pfedsop extension module.

Builds nothing itself: it locates the compiled cdylib under target/, stages
it as an importable module, and exercises the kernels plus a tiny end-to-end
run. Build first with:

    cargo build -p pfedsop-py --release
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def stage_module() -> None:
    candidates = [
        REPO / "target" / "release" / "libpfedsop.so",
        REPO / "target" / "debug" / "libpfedsop.so",
        REPO / "target" / "release" / "libpfedsop.dylib",
        REPO / "target" / "debug" / "libpfedsop.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("extension not built; run `cargo build -p pfedsop-py --release` first")
    stage = Path(tempfile.mkdtemp(prefix="pfedsop_py_"))
    shutil.copy2(built, stage / "pfedsop.so")
    sys.path.insert(0, str(stage))


stage_module()
import pfedsop  # noqa: E402


def approx(a: float, b: float, tol: float = 1e-9) -> bool:
    return abs(a - b) <= tol


# Angle geometry.
assert approx(pfedsop.cosine_similarity([2.0, 0.0], [4.0, 0.0]), 1.0)
assert approx(pfedsop.angle_from_similarity(0.0), math.pi / 2)

# Gompertz weight: lambda-independent fixed point at theta = 1.
for lam in (0.5, 1.0, 2.5, 5.0):
    assert approx(pfedsop.gompertz_weight(1.0, lam), 1.0 - math.exp(-1.0), 1e-12)

# Closed-form second-order step: collinear with its input.
step = pfedsop.fim_step([3.0, 4.0], 1.0)
assert approx(step[0], 3.0 / 26.0, 1e-12) and approx(step[1], 4.0 / 26.0, 1e-12)

# Blend endpoints.
assert pfedsop.personalized_update([4.0, 0.0], [0.0, 8.0], 0.25) == [3.0, 2.0]

# One personalization step on the scalar quadratic trace: 1 -> 0.5.
res = pfedsop.personalize_model([1.0], [1.0], [1.0], eta1=1.0, rho=1.0, lam=1.0)
assert approx(res.model[0], 0.5, 1e-12)
assert res.theta == 0.0 and 0.0 < res.beta < 1.0

# Tiny end-to-end run, twice: summaries must match exactly.
CONFIG = """
method = pfedsop
dataset.kind = synthetic
dataset.classes = 3
dataset.input_dim = 4
dataset.samples_per_class = 30
partition.alpha = 1.0
clients = 5
rounds = 4
participation_fraction = 0.4
batch_size = 8
"""
first = pfedsop.run_config(CONFIG)
second = pfedsop.run_config(CONFIG, threads=4)
assert len(first.summary) == 4
assert first.summary == second.summary
assert first.best_per_client == second.best_per_client
assert first.best_overall is not None and 0.0 <= first.best_overall <= 1.0

# Oracle suites must all pass.
for name, passed, detail in pfedsop.run_verification():
    assert passed, f"{name}: {detail}"

print("smoke test ok")
