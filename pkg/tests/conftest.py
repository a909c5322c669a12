import weakref

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gentlegrad.ledger import CopyLedger

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Every ledger built during a test is checked for per-phase conservation afterwards.
_LEDGERS: list = []
_ORIGINAL_INIT = CopyLedger.__init__


def _tracked_init(self, *args, **kwargs):
    _ORIGINAL_INIT(self, *args, **kwargs)
    _LEDGERS.append(weakref.ref(self))


CopyLedger.__init__ = _tracked_init

_ACCEPTANCE: list = []


@pytest.fixture(autouse=True)
def ledger_conservation():
    _LEDGERS.clear()
    yield
    for ref in _LEDGERS:
        ledger = ref()
        if ledger is not None:
            ledger.check_conservation()
    _LEDGERS.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__.endswith("test_acceptance") and rep.when == "call":
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        detail = dict(rep.user_properties).get("detail", "")
        _ACCEPTANCE.append((item.name, "PASS" if rep.passed else "FAIL", title, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, title, detail in sorted(_ACCEPTANCE):
        line = f"{status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
