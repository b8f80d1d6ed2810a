"""Chain geometry and the fixed-magnetization computational basis.

Bit convention: bit ``i`` of a configuration set means site ``i`` is in
``|1>``, i.e. spin up with Sz = +1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from math import comb

import numpy as np

from . import _kernels

MAX_SITES = 26


class InvalidGeometryError(ValueError):
    pass


class Boundary(str, Enum):
    OPEN = "open"
    PERIODIC = "periodic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"obc": cls.OPEN, "open": cls.OPEN, "pbc": cls.PERIODIC, "periodic": cls.PERIODIC}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown boundary {value!r}") from None

    @property
    def short(self):
        return "obc" if self is Boundary.OPEN else "pbc"


@dataclass(frozen=True)
class ChainModel:
    n_sites: int
    boundary: Boundary
    j1: float
    j2: float
    j1_bonds: tuple[tuple[int, int], ...]
    j2_bonds: tuple[tuple[int, int], ...]

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def bonds(self):
        """(i, j, coupling) for every bond, J1 bonds first."""
        return [(i, j, self.j1) for i, j in self.j1_bonds] + [(i, j, self.j2) for i, j in self.j2_bonds]


def _bond_list(n, distance, periodic):
    if periodic:
        return tuple((i, (i + distance) % n) for i in range(n))
    return tuple((i, i + distance) for i in range(n - distance))


def build_chain(n_sites: int, boundary="open", j1: float = 1.0, j2: float = 0.0) -> ChainModel:
    """Build the J1-J2 chain.

    Periodic chains need ``n_sites >= 6`` so that every next-nearest bond is
    distinct; open chains accept ``n_sites = 2`` as a single-bond toy model.
    """
    boundary = Boundary.parse(boundary)
    n = int(n_sites)
    min_n = 6 if boundary is Boundary.PERIODIC else 2
    if n != n_sites or n % 2 or not (min_n <= n <= MAX_SITES):
        raise InvalidGeometryError(
            f"n_sites must be even and in [{min_n}, {MAX_SITES}] for {boundary.value} chains, got {n_sites}"
        )
    periodic = boundary is Boundary.PERIODIC
    return ChainModel(
        n_sites=n,
        boundary=boundary,
        j1=float(j1),
        j2=float(j2),
        j1_bonds=_bond_list(n, 1, periodic),
        j2_bonds=_bond_list(n, 2, periodic),
    )


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """All configurations with ``n_up`` set bits, in ascending order."""

    n_sites: int
    n_up: int
    configs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.configs.setflags(write=False)

    def __len__(self):
        return self.configs.shape[0]

    @property
    def dim(self) -> int:
        return self.configs.shape[0]

    def index_of(self, config: int):
        return index_of(self, config)

    @cached_property
    def bits(self) -> np.ndarray:
        """(dim, n_sites) 0/1 occupation matrix."""
        b = ((self.configs[:, None] >> np.arange(self.n_sites)) & 1).astype(np.int8)
        b.setflags(write=False)
        return b

    def spins(self) -> np.ndarray:
        """(dim, n_sites) array of s_j = +1 (bit set) / -1."""
        return 2 * self.bits.astype(np.int64) - 1

    def same_as(self, other) -> bool:
        return self is other or (
            self.n_sites == other.n_sites and self.n_up == other.n_up and self.dim == other.dim
        )


def enumerate_sector(n_sites: int, n_up: int) -> SectorBasis:
    if not (0 <= n_up <= n_sites):
        raise ValueError(f"n_up={n_up} out of range for {n_sites} sites")
    if n_sites > MAX_SITES + 4:
        raise ValueError(f"n_sites={n_sites} too large")
    configs = np.asarray(_kernels.impl.sector_configs(n_sites, n_up), dtype=np.int64)
    assert configs.shape[0] == comb(n_sites, n_up)
    return SectorBasis(n_sites=n_sites, n_up=n_up, configs=configs)


def half_filling(model_or_n) -> SectorBasis:
    n = model_or_n.n_sites if isinstance(model_or_n, ChainModel) else int(model_or_n)
    return enumerate_sector(n, n // 2)


def index_of(basis: SectorBasis, config: int):
    """Ordinal of ``config`` in ``basis`` or ``None`` when absent."""
    config = int(config)
    if config < 0 or config >> basis.n_sites:
        return None
    k = int(np.searchsorted(basis.configs, config))
    if k < basis.dim and basis.configs[k] == config:
        return k
    return None


def config_string(config: int, n_sites: int) -> str:
    """Bit string with site 0 rightmost, e.g. ``0101`` has sites 0 and 2 up."""
    return format(int(config), f"0{n_sites}b")
