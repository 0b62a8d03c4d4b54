from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from semmap.transforms import RigidTransform3


def random_transform(rng: np.random.Generator, max_angle=np.pi, max_trans=5.0) -> RigidTransform3:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    t = rng.uniform(-max_trans, max_trans, size=3)
    return RigidTransform3.from_rotvec(axis * angle, t)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
