"""Acceptance criteria 1-10 at their stated tolerances and time limits.

Each test prints one [PASS]/[FAIL] line (shown even under output capture).
Criteria 7 and 8 share one R sweep, 9 and 10 share one R = 64 solve; the
shared time is charged to each of them.
"""

import time

import pytest

from kummer_gluing import checks, solver
from kummer_gluing.errors import KummerError

SEED = 0


@pytest.fixture(scope="module")
def sweep_rows():
    t0 = time.perf_counter()
    rows = checks.r_sweep()
    return rows, time.perf_counter() - t0


@pytest.fixture(scope="module")
def solve_report():
    t0 = time.perf_counter()
    try:
        report = solver.solve(64.0)[2]
    except KummerError as exc:
        report = exc
    return report, time.perf_counter() - t0


def report_line(result, capsys):
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.measured
    assert result.within_time, f"{result.runtime:.1f}s over the {result.limit:g}s limit"


def test_criterion_01_eh_identity(capsys):
    report_line(checks.eh_identity(), capsys)


def test_criterion_02_tail_coefficients(capsys):
    report_line(checks.tail_coefficients(), capsys)


def test_criterion_03_flat_conformal(capsys):
    report_line(checks.flat_conformal(SEED), capsys)


def test_criterion_04_cylinder_round_trip(capsys):
    report_line(checks.cylinder_round_trip(SEED), capsys)


def test_criterion_05_kernel_census(capsys):
    report_line(checks.kernel_census(64), capsys)


def test_criterion_06_parametrix_defect(capsys):
    report_line(checks.parametrix_defect(seed=SEED), capsys)


def test_criterion_07_eta_scaling(sweep_rows, capsys):
    rows, shared = sweep_rows
    res = checks.eta_scaling(rows=rows)
    res.runtime += shared
    report_line(res, capsys)


def test_criterion_08_lambda_scaling(sweep_rows, capsys):
    rows, shared = sweep_rows
    res = checks.lambda_scaling(rows=rows)
    res.runtime += shared
    report_line(res, capsys)


def _with_report(fn, solve_report):
    report, shared = solve_report
    if isinstance(report, Exception):
        res = checks.CheckResult(0, fn.__name__, False, {"error": type(report).__name__})
    else:
        res = fn(64, report)
    res.runtime += shared
    return res


def test_criterion_09_end_to_end(solve_report, capsys):
    report_line(_with_report(checks.end_to_end, solve_report), capsys)


def test_criterion_10_frame_consistency(solve_report, capsys):
    report_line(_with_report(checks.frame_consistency, solve_report), capsys)
