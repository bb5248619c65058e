import numpy as np
import pytest

from probelight.rng import SeededRng
from probelight.schedule import make_schedule


@pytest.fixture(scope="session")
def sched():
    return make_schedule("scaled-linear", T=1000, n_steps=30)


@pytest.fixture()
def rng():
    return SeededRng(1234)


def random_image(seed: int, shape=(3, 16, 16), lo=0.0, hi=1.0) -> np.ndarray:
    r = np.random.RandomState(seed)
    return (lo + (hi - lo) * r.rand(*shape)).astype(np.float32)


def random_ball_placement(seed: int, size: int):
    from probelight.inpaint import BallPlacement
    r = np.random.RandomState(seed)
    d = int(r.randint(2, size + 1))
    rad = d / 2.0
    cy = float(r.uniform(rad, size - rad))
    cx = float(r.uniform(rad, size - rad))
    return BallPlacement(diameter_px=d, image_size=(size, size), center=(cy, cx))
