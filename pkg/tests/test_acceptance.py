"""End-to-end acceptance run: all twelve criteria at their stated tolerances.

``verify all`` runs twice with the same seed.  Timing fields are disabled so
the two JSON reports can be compared byte for byte; the wall-clock budgets
are measured here instead.
"""
import json
import time

import pytest

from glevy.acceptance import RUNTIME_BUDGET_S
from glevy.cli import main
from glevy.config import RunConfig
from glevy.pide import prepare_terminal, solve_backward

SOLVE_BUDGET_S = 10.0


@pytest.fixture(scope="module")
def reports(tmp_path_factory):
    d = tmp_path_factory.mktemp("acceptance")
    runs = []
    for name in ("first.json", "second.json"):
        out = d / name
        t0 = time.perf_counter()
        code = main(["verify", "all", "--no-timing", "--out", str(out)])
        runs.append((code, out.read_bytes(), time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="module")
def solve_seconds():
    rc = RunConfig.load("builtin:quadratic")
    U, g, phi = rc.model(), rc.grid(), rc.terminal()
    t0 = time.perf_counter()
    solve_backward(U, prepare_terminal(phi, g), g, estimate_tol=True)
    return time.perf_counter() - t0


def test_all_criteria(reports, solve_seconds):
    (code, first, seconds), (_, second, _) = reports
    criteria = json.loads(first)["results"]["criteria"]
    assert [c["criterion"] for c in criteria] == list(range(1, 13))

    verdicts = {}
    for c in criteria:
        verdicts[c["criterion"]] = (c["passed"], c["title"])
    # timing checks are null in the byte-compared reports; apply them here
    verdicts[1] = (verdicts[1][0] and solve_seconds <= SOLVE_BUDGET_S, verdicts[1][1])
    deterministic = first == second
    verdicts[12] = (verdicts[12][0] and deterministic and seconds <= RUNTIME_BUDGET_S,
                    f"{verdicts[12][1]} (identical reports: {deterministic}, "
                    f"suite {seconds:.1f} s <= {RUNTIME_BUDGET_S:.0f} s)")

    print()
    for n in range(1, 13):
        ok, title = verdicts[n]
        print(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}")
    print(f"criterion  1 solve time {solve_seconds:.2f} s (budget {SOLVE_BUDGET_S:.0f} s)")

    failed = [n for n, (ok, _) in verdicts.items() if not ok]
    assert not failed, f"criteria failed: {failed}"
    assert code == 0
