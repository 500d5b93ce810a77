import numpy as np
import pytest

from zrplab.rates import identity_rate, validate_rate_function


@pytest.fixture(scope="session")
def id_rate():
    return identity_rate(200)


@pytest.fixture(scope="session")
def bent_rate():
    # increments 1, 1.4, 0.7, then affine tail with slope 1
    return validate_rate_function([0.0, 1.0, 2.4, 3.1], 0.5, 1.5, gamma_tail=1.0)


def pytest_addoption(parser):
    parser.addoption(
        "--skip-acceptance", action="store_true", default=False,
        help="skip the full-scale acceptance criteria",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-acceptance"):
        skip = pytest.mark.skip(reason="--skip-acceptance")
        for item in items:
            if "acceptance" in item.keywords:
                item.add_marker(skip)
