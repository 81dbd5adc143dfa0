"""Shared test fixtures.

The slow acceptance tests (full training run, ablation grid) churn through
gigabytes of short-lived arrays. With the tuned allocator those freed chunks
stay in the glibc heap, so without an explicit trim the suite's RSS keeps the
peak of the heaviest test and later test modules can push the process past
the machine's memory limit.
"""

import gc

import pytest

from posgar.util import release_memory


@pytest.fixture(autouse=True)
def _trim_after_slow_tests(request):
    yield
    if request.node.get_closest_marker("slow") is not None:
        gc.collect()
        release_memory()
