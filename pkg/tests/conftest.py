"""Pytest fixtures; shared helpers live in testutil.py."""

import pytest

from testutil import make_blob_source


@pytest.fixture
def blob_source():
    return make_blob_source()
