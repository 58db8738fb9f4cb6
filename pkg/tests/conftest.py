import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrbug.lowrank import FactoredMatrix

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion id -> list of (label, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def random_factored(rng, m1, m2, r, scale=1.0):
    U, _ = np.linalg.qr(rng.standard_normal((m1, r)))
    V, _ = np.linalg.qr(rng.standard_normal((m2, r)))
    s = np.sort(rng.uniform(0.1, 1.0, r))[::-1] * scale
    return FactoredMatrix(U, s, V)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[cid]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}")
        for label, passed, detail in checks:
            tr.write_line(f"    [{'ok' if passed else 'FAILED'}] {label}: {detail}")
