import numpy as np
import pytest
from hypothesis import settings

import convexflow.verify as verify
from convexflow.manifold import ModelManifold

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

NORTH = np.array([0.0, 0.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["flat", "sphere2", "poincare"])
def manifold(request):
    return {
        "flat": ModelManifold.flat(2),
        "sphere2": ModelManifold.sphere2(),
        "poincare": ModelManifold.poincare_disk(),
    }[request.param]


# -- suite-wide bookkeeping: acceptance lines and every max-principle verdict

ACCEPTANCE_LINES = []
MAX_PRINCIPLE_LOG = []

_check = verify.max_principle_check


def _recording_check(*args, **kwargs):
    out = _check(*args, **kwargs)
    MAX_PRINCIPLE_LOG.append(out.classification)
    return out


verify.max_principle_check = _recording_check


def counterexamples() -> int:
    return sum(c == verify.Classification.COUNTEREXAMPLE for c in MAX_PRINCIPLE_LOG)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
    terminalreporter.write_line(
        f"max-principle checks this session: {len(MAX_PRINCIPLE_LOG)}, COUNTEREXAMPLE: {counterexamples()}"
    )


def pytest_sessionfinish(session, exitstatus):
    if counterexamples():
        session.exitstatus = 1
