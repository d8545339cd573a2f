import pytest

from urnflow.verify import VerificationSuite


@pytest.fixture(scope="session")
def suite() -> VerificationSuite:
    """One verification suite per session so expensive artifacts (hydro
    solutions, large ensembles) are computed once and shared."""
    return VerificationSuite(workers=1)
