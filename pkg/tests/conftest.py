import os

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SPNP_FULL_RESOLUTION") == "1":
        return
    skip = pytest.mark.skip(reason="full-resolution run; set "
                            "SPNP_FULL_RESOLUTION=1 to enable")
    for item in items:
        if "full_resolution" in item.keywords:
            item.add_marker(skip)
