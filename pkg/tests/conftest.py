import pytest


@pytest.hookimpl(tryfirst=True, hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose each phase's report so the acceptance banner fixture can see
    # whether the criterion passed
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)
