import json
from pathlib import Path

import numpy as np
import pytest

from fusiongen import kernels

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def frozen():
    return json.loads(ORACLES.read_text())


@pytest.fixture(scope="session", params=sorted(kernels.available()))
def backend(request):
    return kernels.available()[request.param]


def numeric_grad(f, x, h=1e-5, signature=None):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place).

    With ``signature`` (a function returning the ReLU activity pattern), a
    coordinate whose perturbation flips any unit is marked ``nan``: the
    function is not differentiable across that step.
    """
    g = np.zeros_like(x)
    base = signature() if signature else None
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        sp = signature() if signature else None
        x[i] = old - h
        fm = f()
        sm = signature() if signature else None
        x[i] = old
        if signature and (not np.array_equal(sp, base) or not np.array_equal(sm, base)):
            g[i] = np.nan
        else:
            g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    ok = ~np.isnan(n)
    if not ok.any():
        return 0.0
    a, n = a[ok], n[ok]
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")
