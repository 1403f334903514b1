"""Acceptance gate: one test per criterion, run through the bench harness.

Each test asserts the criterion's thresholds and its runtime budget; the
measured values are collected and printed as one line per criterion at the
end of the pytest session.
"""

import json

import pytest

from rscd.bench import CRITERIA, run_criterion

ACCEPTANCE_LINES = []

NAMES = {
    1: "formation_reduction_chain",
    2: "oracle_equivalence",
    3: "gradient_fidelity",
    4: "flow_accuracy",
    5: "rectification_round_trip",
    6: "kernel_reductions",
    7: "calibration",
    8: "metrics",
    9: "striping",
    10: "determinism",
}


@pytest.mark.parametrize("number", sorted(CRITERIA), ids=[f"C{n:02d}_{NAMES[n]}" for n in sorted(CRITERIA)])
def test_criterion(number):
    res = run_criterion(number, {"record_timing": True})
    status = "PASS" if res["passed"] else "FAIL"
    ACCEPTANCE_LINES.append(
        f"criterion {number:2d} {NAMES[number]:<26} {status}  "
        f"({res['runtime_s']:.2f}s of {res['runtime_limit_s']:.0f}s)  {json.dumps(res['measured'])}")
    assert res["within_time"], f"runtime {res['runtime_s']:.1f}s over {res['runtime_limit_s']}s"
    assert res["passed"], json.dumps(res["measured"])
