"""Shared fixtures: paths, synthetic datasets, and slow-but-obvious oracles."""

import numpy as np
import pytest

from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"
MICRO_BACKBONE = FIXTURES / "micro_backbone.onnx"


@pytest.fixture(scope="session")
def micro_backbone_path():
    return MICRO_BACKBONE


@pytest.fixture(scope="session")
def micro_backbone():
    from hemoclass.backbone import load_backbone

    return load_backbone(MICRO_BACKBONE)


def make_blobs(rng, centers, counts, scale=0.5):
    """Gaussian clusters with integer labels, shuffled."""
    xs, ys = [], []
    for label, (center, count) in enumerate(zip(centers, counts)):
        xs.append(rng.normal(loc=center, scale=scale,
                             size=(count, len(center))))
        ys.append(np.full(count, label))
    x = np.vstack(xs)
    y = np.concatenate(ys)
    order = rng.permutation(len(y))
    return x[order], y[order]


@pytest.fixture
def blob_data():
    rng = np.random.default_rng(99)
    return make_blobs(rng, centers=[(-4.0, 0.0), (4.0, 0.0), (0.0, 4.0)],
                      counts=[40, 40, 40])
