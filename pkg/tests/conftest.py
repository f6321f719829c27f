import warnings

import pytest

from mfglauber import equilibrium as eq
from mfglauber.equilibrium import OutOfRegimeWarning


@pytest.fixture(scope="session")
def gcwp_critical():
    """beta_c and beta_s for the (q, r) pairs used across the suite."""
    out = {}
    for q, r in [(3, 2), (3, 3), (4, 2)]:
        out[(q, r)] = (eq.beta_c_gcwp(q, r), eq.beta_s(q, r))
    return out


@pytest.fixture(scope="session")
def beta_s_32():
    return eq.beta_s(3, 2)


@pytest.fixture(scope="session")
def bc_rapid_K():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutOfRegimeWarning)
        return 0.8 * eq.kc2(1.0)


@pytest.fixture(scope="session")
def k1_2():
    return eq.k1(2.0)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL",
                              props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit, verdict, detail in sorted(lines, key=lambda x: _crit_key(x[0])):
        terminalreporter.write_line(f"criterion {crit}: {verdict}  {detail}")


def _crit_key(c):
    head = "".join(ch for ch in c if ch.isdigit())
    return (int(head) if head else 0, c)
