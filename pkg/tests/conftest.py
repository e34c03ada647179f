import sys

import pytest

from rotface import evaluation, model


@pytest.fixture(scope="session")
def template():
    return evaluation.make_template()


@pytest.fixture(scope="session")
def bundle(template):
    """Model trained on the standard synthetic patch set."""
    patches, angles = evaluation.synth_patches(42, 120, template)
    return model.train(patches, angles, metadata={"seed": 42})


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[key])
