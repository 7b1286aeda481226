import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from wscod.data import make_fixture_corpus  # noqa: E402

DATA_DIR = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """The bundled 8-image synthetic corpus (session-wide, read-only)."""
    root = tmp_path_factory.mktemp("corpus") / "fixtures"
    manifest = make_fixture_corpus(root, n_images=8, size=64, seed=0)
    return root, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_scribble_points(rng, n, size=16):
    """n distinct (row, col, entropy) triples on a size x size grid."""
    coords = rng.choice(size * size, size=n, replace=False)
    return [
        (int(c // size), int(c % size), float(rng.uniform(0, 3)))
        for c in coords
    ]
