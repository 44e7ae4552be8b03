"""Occupancy configurations on the discrete torus."""

from dataclasses import dataclass, field

import numpy as np

MODELS = ("exclusion", "zero_range")


@dataclass
class Configuration:
    """Per-site occupancy of a torus of side ``N`` in ``dim`` dimensions.

    ``occupancy`` is stored flat in row-major order (length ``N**dim``);
    exclusion uses ``int8`` values in {0, 1}, zero-range ``int64`` counts.
    """

    model: str
    occupancy: np.ndarray
    N: int
    dim: int = 1
    total_particles: int = field(init=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        occ = np.asarray(self.occupancy)
        if occ.size != self.N ** self.dim:
            raise ValueError(f"occupancy has {occ.size} sites, expected {self.N ** self.dim}")
        occ = occ.reshape(-1)
        if self.model == "exclusion":
            if np.any((occ != 0) & (occ != 1)):
                raise ValueError("exclusion occupancies must be 0 or 1")
            occ = np.ascontiguousarray(occ, dtype=np.int8)
        else:
            if np.any(occ < 0):
                raise ValueError("occupancies must be nonnegative")
            occ = np.ascontiguousarray(occ, dtype=np.int64)
        self.occupancy = occ
        self.total_particles = int(occ.sum(dtype=np.int64))

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.dim

    @property
    def n_sites(self) -> int:
        return self.N ** self.dim

    def grid(self) -> np.ndarray:
        """Occupancy as an array of shape ``(N,) * dim`` (a view)."""
        return self.occupancy.reshape(self.shape)

    def positions(self) -> np.ndarray:
        """Flat indices of occupied sites (exclusion only)."""
        if self.model != "exclusion":
            raise ValueError("positions are defined for exclusion configurations")
        return np.flatnonzero(self.occupancy).astype(np.int64)

    def copy(self) -> "Configuration":
        return Configuration(self.model, self.occupancy.copy(), self.N, self.dim)

    def check(self) -> None:
        """Re-validate invariants; raises ``AssertionError`` on corruption."""
        occ = self.occupancy
        assert int(occ.sum(dtype=np.int64)) == self.total_particles, "particle count changed"
        assert occ.min(initial=0) >= 0, "negative occupancy"
        if self.model == "exclusion":
            assert occ.max(initial=0) <= 1, "exclusion site holds more than one particle"
