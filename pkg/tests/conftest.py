import numpy as np
import pytest

from edgefield import synthgen
from edgefield.dataio import Dataset


def rng(seed=0):
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@pytest.fixture(scope="session")
def box_scene():
    return synthgen.build_scene("box")


@pytest.fixture(scope="session")
def small_dataset(box_scene):
    """In-memory 48x48 dataset for fast training-loop tests."""
    rig = synthgen.default_rig(n_train=3, n_test=2, size=48)
    cams = rig.cameras()
    images, depths, normals = [], [], []
    for cam in cams:
        rgb, depth, normal = synthgen.render_ground_truth(box_scene, cam)
        images.append(rgb)
        depths.append(depth)
        normals.append(normal)
    return Dataset(images=np.stack(images), depths=np.stack(depths),
                   normals=np.stack(normals), cameras=cams,
                   train_indices=[0, 1, 2], test_indices=[3, 4])


@pytest.fixture(scope="session")
def disk_dataset(tmp_path_factory, box_scene):
    """Small dataset written through the real serialization path."""
    out = tmp_path_factory.mktemp("data") / "boxset"
    ds = synthgen.generate_dataset(box_scene, str(out), n_train=3, n_test=2, size=48,
                                   rig=synthgen.default_rig(3, 2, size=48))
    return str(out), ds
