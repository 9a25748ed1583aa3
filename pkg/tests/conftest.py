"""Shared fixtures: small meshes, rigs and a generated input bundle"""

import numpy as np
import pytest

from carve.core_io.primitives import icosphere, open_cylinder, unit_cube
from carve.parallel import set_threads
from carve.pipeline.gt_bundle import BundleSpec, humanoid_mesh, make_gt_bundle
from carve.scene.scene_core import RigSpec, instantiate_rig


@pytest.fixture(autouse=True)
def _default_threads():
    set_threads(0)
    yield
    set_threads(0)


@pytest.fixture
def sphere():
    return icosphere(2, 0.3)


@pytest.fixture
def cube():
    return unit_cube()


@pytest.fixture
def tube():
    return open_cylinder(radius=0.2, height=1.0, segments=24, rings=6)


@pytest.fixture(scope="session")
def humanoid():
    return humanoid_mesh(32)


@pytest.fixture
def small_rig():
    return instantiate_rig(RigSpec(k_views=3, image_size=48))


@pytest.fixture(scope="session")
def tiny_bundle(tmp_path_factory):
    """Low-resolution bundle with short optimizations; returns the config path"""
    out = tmp_path_factory.mktemp("bundle")
    spec = BundleSpec(resolution=32, coarse_resolution=24, image_size=48, atlas_size=64, k_views=3)
    overrides = {
        "grid": {"resolution": 24},
        "fit": {"iters": 200, "samples": 3000},
        "sculpt": {"iters": 4},
        "texture": {"iters": 10},
    }
    return make_gt_bundle(out, spec, overrides)


def finite_difference(f, x, eps=1e-6):
    """Central differences of a scalar function over every entry of x"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f(x)
        flat[i] = old - eps
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2.0 * eps)
    return grad
