import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _clear_caches():
    from treenas import harness
    yield
    harness._EVAL_CACHE.clear()
    harness._TREE_CACHE.clear()
