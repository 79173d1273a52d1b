import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance verdicts and diagnostics, shown after the run regardless of capture
REPORT = []


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("acceptance")
        for line in REPORT:
            terminalreporter.write_line(line)


def smooth_images(count, side, channels=3, seed=0):
    """Random low-frequency images in [0, 255]: sums of a few Gaussian blobs and a gradient."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / side
    out = []
    for _ in range(count):
        img = np.zeros((side, side, channels))
        for c in range(channels):
            g = rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy
            for _ in range(3):
                cy, cx, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.3)
                g = g + rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
            img[:, :, c] = g
        img += rng.normal(0, 0.05, img.shape)
        img = (img - img.min()) / (np.ptp(img) + 1e-9) * 255
        out.append(img)
    return out


@pytest.fixture(scope="session")
def small_model():
    """A compact 64x64 model trained on natural crops; shared by many tests."""
    import natural
    from mgbvq import small_config, train_model

    return train_model(list(natural.train_crops(64)[::2]), small_config(N=6))


@pytest.fixture(scope="session")
def test_images_64():
    import natural

    return list(natural.test_crops(64))
