"""Cartesian particle grids and evaluation lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def is_dyadic(h: float) -> bool:
    """True when h = 2^-L for some integer L (exact node coordinates)."""
    if not (h > 0):
        return False
    mantissa, _ = math.frexp(h)
    return mantissa == 0.5


@dataclass(frozen=True)
class GridSpec:
    """Uniform particle grid: index box k in [lo, hi]^2 with nodes x = h k."""

    h: float
    lo: tuple[int, int]
    hi: tuple[int, int]

    @classmethod
    def unit_box(cls, h: float, margin: int = 0) -> "GridSpec":
        """Grid covering [0,1]^2, extended by `margin` node rows per side.

        The margin keeps every particle whose support can reach the unit
        box inside the index set, so the represented density is complete
        on [0,1]^2 even for data that does not vanish at the box edge.
        """
        if not is_dyadic(h):
            raise ConfigError(f"mesh size h={h!r} must be a power of two")
        n = round(1.0 / h)
        return cls(h, (-margin, -margin), (n + margin, n + margin))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.hi[0] - self.lo[0] + 1, self.hi[1] - self.lo[1] + 1)

    @property
    def n_nodes(self) -> int:
        s = self.shape
        return s[0] * s[1]

    def node_indices(self, margin: int = 0) -> np.ndarray:
        """Integer index pairs of the box enlarged by `margin`, row-major."""
        k1 = np.arange(self.lo[0] - margin, self.hi[0] + margin + 1)
        k2 = np.arange(self.lo[1] - margin, self.hi[1] + margin + 1)
        g1, g2 = np.meshgrid(k1, k2, indexing="ij")
        return np.stack([g1.ravel(), g2.ravel()], axis=-1)

    def node_points(self, margin: int = 0) -> np.ndarray:
        """Node coordinates h*k of the (enlarged) box, row-major (P, 2)."""
        return self.h * self.node_indices(margin).astype(float)

    def padded_shape(self, margin: int) -> tuple[int, int]:
        s = self.shape
        return (s[0] + 2 * margin, s[1] + 2 * margin)


@dataclass(frozen=True)
class EvalGrid:
    """Closed M x M evaluation lattice over [0,1]^2."""

    m: int = 256

    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m)

    def points(self) -> np.ndarray:
        ax = self.axis()
        g1, g2 = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([g1.ravel(), g2.ravel()], axis=-1)

    def quadrature(self, values: np.ndarray) -> float:
        """Trapezoidal integral of a sampled field over [0,1]^2."""
        f = np.asarray(values, dtype=float).reshape(self.m, self.m)
        wx = np.ones(self.m)
        wx[0] = wx[-1] = 0.5
        delta = 1.0 / (self.m - 1)
        return float(wx @ f @ wx) * delta * delta
