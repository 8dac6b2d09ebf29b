import numpy as np
import pytest

from nlflow.grid import GridSpec, ScalarField, SetMask
from nlflow.shapes import SplitMix64


def splitmix_field(spec: GridSpec, seed: int, lo: float = -1.0, hi: float = 1.0) -> ScalarField:
    rng = SplitMix64(seed)
    vals = rng.uniform(spec.dims) * (hi - lo) + lo
    return ScalarField(spec, vals)


def splitmix_mask(spec: GridSpec, seed: int, fill: float = 0.4) -> SetMask:
    rng = SplitMix64(seed)
    return SetMask(spec, rng.uniform(spec.dims) < fill)


def lipschitz1_field(spec: GridSpec, seed: int, n_cones: int = 6) -> ScalarField:
    """Exactly 1-Lipschitz field: a minimum of shifted distance cones."""
    rng = np.random.default_rng(seed)
    coords = spec.cell_centers()
    extent = [n * spec.dx / 2.0 for n in spec.dims]
    vals = None
    for _ in range(n_cones):
        center = [rng.uniform(-e, e) for e in extent]
        shift = rng.uniform(-0.5 * min(extent), 0.5 * min(extent))
        cone = np.sqrt(sum((c - o) ** 2 for c, o in zip(coords, center))) + shift
        vals = cone if vals is None else np.minimum(vals, cone)
    vals = vals - float(np.median(vals))
    return ScalarField(spec, vals)


def quantize_levels(field: ScalarField, n_levels: int, seed: int = 0) -> ScalarField:
    """Snap a field to at most n_levels distinct values."""
    rng = np.random.default_rng(seed)
    levels = np.sort(rng.uniform(field.values.min(), field.values.max(), n_levels))
    idx = np.argmin(np.abs(field.values[..., None] - levels), axis=-1)
    return ScalarField(field.spec, levels[idx])


def interior_blob(spec: GridSpec, seed: int, margin: int, fill: float = 0.5) -> SetMask:
    """Random mask confined to the cells at least ``margin`` from the boundary."""
    rng = SplitMix64(seed)
    m = np.zeros(spec.dims, dtype=bool)
    inner = tuple(slice(margin, n - margin) for n in spec.dims)
    shape = tuple(n - 2 * margin for n in spec.dims)
    m[inner] = rng.uniform(shape) < fill
    return SetMask(spec, m)


@pytest.fixture
def spec16():
    return GridSpec((16, 16), 1.0, 3)


@pytest.fixture
def spec16_fine():
    return GridSpec((16, 16), 0.5, 3)
