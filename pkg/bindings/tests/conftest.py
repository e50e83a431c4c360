"""Pytest fixtures; shared helpers live in bindings_testutil.py."""

import pytest

from gasaug import GasCloudPool, SeededRng, generate_cloud
from gasaug.io import save_pool

from bindings_testutil import make_blob_source


@pytest.fixture(scope="session")
def pool_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pool")
    pool = GasCloudPool()
    src = make_blob_source(seed=1, frame_id="src000")
    pool.add_source(src)
    for seed in range(3):
        pool.generated.append(generate_cloud(src, SeededRng(seed)))
    save_pool(pool, root)
    return root
