import numpy as np
import pytest

from sonotrace.anatomy import SegmentationVolume, TissueProperties


def sphere_labels(n=64, radius=20.0, label=1, center=None):
    c = (n / 2.0) if center is None else center
    idx = np.arange(n) + 0.5
    d2 = (idx[:, None, None] - c) ** 2 + (idx[None, :, None] - c) ** 2 + (idx[None, None, :] - c) ** 2
    return np.where(d2 <= radius ** 2, label, 0).astype(np.uint8)


@pytest.fixture(scope="session")
def sphere_seg():
    return SegmentationVolume(sphere_labels(), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def water():
    return TissueProperties(z=1.48e6, alpha=0.0, c=1480.0, name="water")


@pytest.fixture(scope="session")
def soft():
    return TissueProperties(z=1.63e6, alpha=0.5, mu0=0.5, sigma0=0.1, mu1=0.5, name="soft")
