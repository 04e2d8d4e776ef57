import numpy as np
import pytest

import superproc as sp
from superproc.checks import reference_model, suite_oracle


@pytest.fixture(scope="session")
def oracle_certified():
    """Certification tier: the closed forms must pass before dependent tests run."""
    results = suite_oracle()
    failed = [r for r in results if not r.passed]
    assert not failed, f"oracle certification failed: {[r.name for r in failed]}"
    return True


@pytest.fixture(scope="session")
def feller():
    m = sp.feller_model()
    return m, sp.principal_triple(m), sp.FellerParams()


@pytest.fixture(scope="session")
def two_site():
    m, _ = reference_model("two_site")
    return m, sp.principal_triple(m)


@pytest.fixture(scope="session")
def three_site():
    m, _ = reference_model("three_site")
    return m, sp.principal_triple(m)


@pytest.fixture(scope="session")
def feller_yt(feller):
    m, tr, _ = feller
    return sp.yaglom_transform(m, tr)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
