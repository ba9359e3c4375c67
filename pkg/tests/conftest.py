import numpy as np
import pytest

from segpaint import netarch, scenegen


@pytest.fixture(scope="session")
def tiny_net_cfg():
    """Smallest workable network, for tests that only need the contracts."""
    return netarch.NetConfig.desk(
        input_size=64, roi_grid=4, mask_size=16, paint_size=32,
        backbone_width=8, backbone_depth=1, generator_depth=3,
        generator_width=8, disc_width=8,
    )


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Small on-disk dataset shared across tests that need real samples."""
    root = tmp_path_factory.mktemp("tiny_data")
    cfg = scenegen.DatasetConfig(
        train_scenes=3, test_scenes=2, seed=11,
        scene=scenegen.SceneConfig(sprite_count=(3, 5)),
    )
    return scenegen.build_dataset(cfg, root)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
