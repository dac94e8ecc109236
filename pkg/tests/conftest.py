"""
Fixtures compartidas de la suite
"""

import numpy as np
import pytest

from src import filters
from src.core import LABEL, DisplacementField, Volume
from src.phantom import PhantomSpec, generate_pair
from src.volume_io import OUTPUT_DIR_ENV


@pytest.fixture(autouse=True)
def _no_output_dir(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def smooth_volume():
    """Fábrica de volúmenes aleatorios suaves normalizados a [0, 1]"""

    def make(dims=(16, 16, 16), seed=0, sigma=2.0):
        data = filters.smooth(np.random.default_rng(seed).standard_normal(dims), sigma)
        return Volume((data - data.min()) / (data.max() - data.min()))

    return make


@pytest.fixture
def smooth_field():
    """Fábrica de campos aleatorios suaves con |componente| <= amplitude"""

    def make(dims=(16, 16, 16), seed=0, amplitude=1.2, sigma=2.5):
        raw = np.random.default_rng(seed).standard_normal(tuple(dims) + (3,))
        vectors = filters.smooth(raw, sigma)
        return DisplacementField(amplitude * vectors / np.abs(vectors).max())

    return make


@pytest.fixture
def ramp_1d():
    """Volumen que solo varía a lo largo del eje i, estrictamente creciente"""

    def make(dims=(16, 12, 10)):
        i = np.arange(dims[0], dtype=np.float64)
        profile = 0.5 + 0.4 * np.tanh((i - dims[0] / 2.0) / 3.0)
        return Volume(np.broadcast_to(profile[:, None, None], dims))

    return make


@pytest.fixture
def sphere_pair():
    spec = PhantomSpec(dims=(24, 24, 24), shape="sphere")
    return generate_pair(spec)


@pytest.fixture
def label_cube():
    """Fábrica de volúmenes de etiquetas con un cubo en `corner` de lado `size`"""

    def make(dims=(8, 8, 8), corner=(2, 2, 2), size=2, structure_id=1):
        data = np.zeros(dims)
        i, j, k = corner
        data[i:i + size, j:j + size, k:k + size] = structure_id
        return Volume(data, kind=LABEL)

    return make
