import os

import pytest


def pytest_collection_modifyitems(config, items):
    """Skip tests marked slow unless PUSHING_RUN_SLOW=1."""
    if os.getenv("PUSHING_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="long-running; set PUSHING_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
