import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from ddplab.grid import CostMap, distance_field


def make_map(cost, resolution=0.05, origin=None):
    """CostMap from a 2D array; origin defaults to a centered map."""
    cost = np.asarray(cost, dtype=np.float64)
    h, w = cost.shape
    if origin is None:
        origin = (-w * resolution / 2.0, -h * resolution / 2.0)
    return CostMap(w, h, resolution, origin, cost.copy())


@pytest.fixture
def empty_map():
    return make_map(np.zeros((200, 200)))


@pytest.fixture
def empty_field(empty_map):
    return distance_field(empty_map)
