"""Built-in initial shapes and the seeded generator behind them.

Shape descriptors are small strings like ``disk:R=8`` or ``blob:seed=7``;
random shapes draw from a splitmix-style 64-bit generator so fixtures
reproduce bit-for-bit across platforms and languages.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainTooSmallError
from .grid import GridSpec, ScalarField, SetMask

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    """Splitmix 64-bit generator; uniform() yields floats in [0, 1)."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def uniform(self, shape=None):
        if shape is None:
            return self.next_u64() / 2.0 ** 64
        n = int(np.prod(shape))
        out = np.empty(n)
        for i in range(n):
            out[i] = self.next_u64() / 2.0 ** 64
        return out.reshape(shape)


def _parse_descriptor(descriptor: str):
    if ":" in descriptor:
        name, _, rest = descriptor.partition(":")
        params = {}
        for item in rest.split(","):
            if not item:
                continue
            key, _, val = item.partition("=")
            if not _:
                raise ConfigError("malformed shape parameter %r" % item)
            params[key.strip()] = val.strip()
        return name.strip(), params
    return descriptor.strip(), {}


def _fits(mask: np.ndarray, spec: GridSpec, guard_cells: int):
    w = spec.halo + guard_cells
    if w == 0:
        return True
    band = np.zeros(spec.dims, dtype=bool)
    for ax in range(spec.ndim):
        n = spec.dims[ax]
        sl = [slice(None)] * spec.ndim
        sl[ax] = slice(0, min(w, n))
        band[tuple(sl)] = True
        sl[ax] = slice(max(0, n - w), n)
        band[tuple(sl)] = True
    return not bool((mask & band).any())


def builtin_shapes(spec: GridSpec, descriptor: str, guard_cells: int = 0):
    """Construct a named mask or field; deterministic given the seed.

    Masks must clear the halo plus ``guard_cells`` band or the call fails.
    """
    name, params = _parse_descriptor(descriptor)
    coords = spec.cell_centers()
    # anchor shapes on the cell nearest the grid center so lattice areas
    # track the continuum ones on even-sized grids
    anchor = [float(c[tuple((n - 1) // 2 for n in spec.dims)]) for c in coords]

    def radial(center=None):
        if center is None:
            center = anchor
        return np.sqrt(sum((c - o) ** 2 for c, o in zip(coords, center)))

    if name in ("disk", "ball"):
        radius = float(params.get("R", 8.0 * spec.dx))
        mask = radial() <= radius
    elif name == "square":
        side = float(params.get("L", 8.0 * spec.dx))
        mask = np.ones(spec.dims, dtype=bool)
        for c, o in zip(coords, anchor):
            mask &= np.abs(c - o) <= side / 2.0
    elif name == "annulus":
        r0 = float(params.get("R0", 4.0 * spec.dx))
        r1 = float(params.get("R1", 8.0 * spec.dx))
        rr = radial()
        mask = (rr >= r0) & (rr <= r1)
    elif name == "two-disks":
        radius = float(params.get("R", 5.0 * spec.dx))
        sep = float(params.get("sep", 4.0 * radius))
        c1 = list(anchor)
        c2 = list(anchor)
        c1[0] -= sep / 2.0
        c2[0] += sep / 2.0
        mask = (radial(c1) <= radius) | (radial(c2) <= radius)
    elif name == "cone":
        radius = float(params.get("R", 8.0 * spec.dx))
        return ScalarField(spec, radial() - radius)
    elif name == "blob":
        seed = int(params.get("seed", 0))
        n_bumps = int(params.get("n", 5))
        base = float(params.get("R", 6.0 * spec.dx))
        rng = SplitMix64(seed)
        mask = np.zeros(spec.dims, dtype=bool)
        spread = base * 0.9
        for _ in range(n_bumps):
            center = [o + (rng.uniform() * 2.0 - 1.0) * spread for o in anchor]
            radius = base * (0.4 + 0.6 * rng.uniform())
            mask |= radial(center) <= radius
    else:
        raise ConfigError("unknown shape %r" % name)
    if not _fits(mask, spec, guard_cells):
        raise DomainTooSmallError("shape %r violates the guard band" % descriptor)
    return SetMask(spec, mask)
