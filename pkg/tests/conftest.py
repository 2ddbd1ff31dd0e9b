import numpy as np
import pytest

from stereovo.geometry import PinholeIntrinsics, StereoRig


@pytest.fixture
def rig700() -> StereoRig:
    """The hand-calculation rig: fx=fy=700, pp=(600,180), B=0.5 m."""
    return StereoRig(PinholeIntrinsics(fx=700.0, fy=700.0, cx=600.0, cy=180.0), baseline=0.5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
