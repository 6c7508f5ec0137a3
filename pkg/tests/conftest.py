import re

import numpy as np
import pytest

from emclt.models import build_model

_CRITERIA = []


@pytest.fixture
def smooth_model():
    return build_model("smooth-tanh", "sin-modulated")


@pytest.fixture
def holder_model():
    return build_model("holder-lacunary", "sin-modulated")


@pytest.fixture
def bm_model():
    return build_model("zero", "identity")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)", item.name)
    if m and (rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed")):
        detail = "; ".join(v for k, v in item.user_properties if k == "detail")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _CRITERIA.append((int(m.group(1)), item.name, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, status, detail in sorted(_CRITERIA):
        label = name.split("_", 3)[-1].replace("_", " ")
        terminalreporter.write_line(f"criterion {num:>2} {status}  {label}: {detail}")
